"""Domain modules: telemetry, preprocessing, prior, clustering, network, baseline and metrics."""
