"""
Tools package for celltriage.

Contains the pydantic schemas and the pipeline operations behind the
CLI subcommands. Kept import-free so utils modules can use the schemas
without pulling in the pipeline.
"""
