"""
Tests for the numpy MLP classifier.

Tests:
1. Hidden layer widths
2. Analytic gradients against central finite differences
3. Softmax and loss values
4. Training: separability, best state, determinism, input errors
5. Classification threshold and persistence
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

import utils.mlp as mlp_module
from tools.schemas import DEFAULT_L1_LAMBDA, MlpConfig
from utils.mlp import (
    MlpModel,
    TrainingDivergedError,
    classify,
    forward,
    init_model,
    layer_widths,
    load_model,
    loss,
    loss_and_gradients,
    problematic_scores,
    save_model,
    softmax,
    train,
)
from utils.telemetry import CellLabel


def _toy(seed=0, n=20, d=4):
    """Two well separated classes, alternating labels."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.uniform(0, 0.2, size=(n, d))
    X[y == 0, 0] += 1.0
    X[y == 1, 1] += 1.0
    return X, y


def _numeric_gradient(m, X, y, l1, layer, which, h=1e-6):
    params = [np.array(a) for a in (m.weights if which == "W" else m.biases)]
    grad = np.zeros_like(params[layer])
    for idx in np.ndindex(params[layer].shape):
        values = []
        for step in (h, -h):
            shifted = [p.copy() for p in params]
            shifted[layer][idx] += step
            probe = MlpModel(
                input_dim=m.input_dim,
                widths=m.widths,
                weights=tuple(shifted) if which == "W" else m.weights,
                biases=tuple(shifted) if which == "b" else m.biases,
            )
            values.append(loss_and_gradients(probe, X, y, l1)[0])
        grad[idx] = (values[0] - values[1]) / (2 * h)
    return grad


class TestLayerWidths:
    """Hidden layer sizing."""

    @pytest.mark.parametrize("units,layers,decreasing,halving,expected", [
        (100, 4, True, False, [100, 25, 3, 1]),
        (100, 4, True, True, [100, 50, 25, 12]),
        (100, 4, False, False, [100, 100, 100, 100]),
        (250, 3, True, False, [250, 62, 7]),
        (500, 1, True, False, [500]),
        (100, 0, True, False, []),
    ])
    def test_examples(self, units, layers, decreasing, halving, expected):
        cfg = MlpConfig(units_per_layer=units, hidden_layers=layers, decreasing_units=decreasing, halving=halving)
        assert layer_widths(cfg) == expected

    def test_init_shapes(self):
        m = init_model(MlpConfig(units_per_layer=10, hidden_layers=3, decreasing_units=False), input_dim=7)
        assert [W.shape for W in m.weights] == [(7, 10), (10, 10), (10, 10), (10, 2)]
        assert all((b == 0).all() for b in m.biases)

    def test_init_needs_input_dim(self):
        with pytest.raises(ValueError):
            init_model(MlpConfig())

    @pytest.mark.parametrize("enabled,given,expected", [
        (False, 0.0, 0.0),
        (True, 0.0, DEFAULT_L1_LAMBDA),
        (True, 5e-3, 5e-3),
        (False, 5e-3, 5e-3),
    ])
    def test_l1_switch(self, enabled, given, expected):
        cfg = MlpConfig(l1_regularization=enabled, l1_lambda=given)
        assert cfg.l1_lambda == expected
        assert MlpConfig.model_validate(cfg.model_dump()).l1_lambda == expected


class TestGradients:
    """Backpropagation against central differences."""

    @pytest.mark.parametrize("layers", [0, 1, 2, 3, 4])
    @pytest.mark.parametrize("decreasing", [True, False])
    def test_matches_finite_differences(self, layers, decreasing):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.uniform(0, 1, size=(5, 4))
            y = np.array([0, 1, 0, 1, 1])
            cfg = MlpConfig(units_per_layer=8, hidden_layers=layers, decreasing_units=decreasing, seed=seed)
            m = init_model(cfg, input_dim=4)
            # nonzero biases keep pre-activations off the ReLU kink behind dead units
            m = MlpModel(
                input_dim=4,
                widths=m.widths,
                weights=m.weights,
                biases=tuple(rng.normal(0, 0.1, size=b.shape) for b in m.biases),
            )
            _, grad_w, grad_b = loss_and_gradients(m, X, y, 0.0)
            for layer in range(len(m.weights)):
                for which, analytic in (("W", grad_w[layer]), ("b", grad_b[layer])):
                    numeric = _numeric_gradient(m, X, y, 0.0, layer, which)
                    np.testing.assert_allclose(
                        analytic, numeric, rtol=1e-4, atol=1e-7,
                        err_msg=f"seed {seed}, L={layers}, layer {layer} {which}",
                    )

    def test_l1_term(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, size=(6, 3))
        y = np.array([1, 0, 1, 0, 0, 1])
        m = init_model(MlpConfig(units_per_layer=5, hidden_layers=1, seed=3), input_dim=3)
        _, grad_w, _ = loss_and_gradients(m, X, y, 1e-2)
        numeric = _numeric_gradient(m, X, y, 1e-2, layer=1, which="W")
        np.testing.assert_allclose(grad_w[1], numeric, rtol=1e-4, atol=1e-7)


class TestSoftmaxAndLoss:
    """Numerics of the output layer."""

    def test_softmax_large_logits(self):
        p = softmax(np.array([1e4, 0.0]))
        assert np.all(np.isfinite(p))
        assert p == pytest.approx([1.0, 0.0])

    def test_softmax_rows(self):
        p = softmax(np.array([[1.0, 2.0], [-3.0, 3.0]]))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    @pytest.mark.parametrize("probs,label,expected", [
        ([0.5, 0.5], CellLabel.NORMAL, 0.25),
        ([1.0, 0.0], CellLabel.NORMAL, 0.0),
        ([0.0, 1.0], CellLabel.NORMAL, 1.0),
        ([0.2, 0.8], CellLabel.PROBLEMATIC, 0.04),
    ])
    def test_loss_values(self, probs, label, expected):
        assert loss(np.array(probs), label) == pytest.approx(expected)

    def test_l1_needs_model(self):
        with pytest.raises(ValueError):
            loss(np.array([0.5, 0.5]), 0, l1_lambda=0.1)

    def test_l1_added(self):
        m = init_model(MlpConfig(hidden_layers=0), input_dim=3)
        expected = 0.25 + 0.1 * np.abs(m.weights[-1]).sum()
        assert loss(np.array([0.5, 0.5]), 1, m, 0.1) == pytest.approx(expected)


class TestTrain:
    """Gradient descent with best-state tracking."""

    def test_separable_toy(self):
        X, y = _toy()
        cfg = MlpConfig(units_per_layer=8, hidden_layers=1, learning_rate=2.0, max_epochs=500, batch_size=None)
        m = train(cfg, X, y)
        predicted = (problematic_scores(m, X) > 0.5).astype(int)
        assert (predicted == y).all()
        assert m.best_loss < m.loss_history[0]

    def test_best_state_is_minimum(self):
        X, y = _toy(seed=1)
        cfg = MlpConfig(units_per_layer=6, hidden_layers=2, learning_rate=0.5, max_epochs=40, batch_size=None)
        m = train(cfg, X, y)
        assert len(m.loss_history) == 41
        assert m.best_loss == min(m.loss_history)
        recomputed = loss_and_gradients(m, X, y, 0.0)[0]
        assert recomputed == pytest.approx(m.best_loss, rel=1e-12)

    def test_deterministic(self):
        X, y = _toy(seed=2)
        cfg = MlpConfig(units_per_layer=6, hidden_layers=1, learning_rate=0.5, max_epochs=20, batch_size=5, seed=4)
        a, b = train(cfg, X, y), train(cfg, X, y)
        for Wa, Wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(Wa, Wb)
        assert a.loss_history == b.loss_history

    def test_per_sample_updates_by_default(self):
        X, y = _toy(seed=5)
        cfg = MlpConfig(units_per_layer=8, learning_rate=0.5, max_epochs=200)
        assert cfg.batch_size == 1 and cfg.hidden_layers == 1
        a, b = train(cfg, X, y), train(cfg, X, y)
        assert a.loss_history == b.loss_history
        assert a.best_loss < a.loss_history[0]
        assert ((problematic_scores(a, X) > 0.5).astype(int) == y).all()

    def test_per_sample_differs_from_full_batch(self):
        X, y = _toy(seed=6)
        sgd = train(MlpConfig(units_per_layer=6, learning_rate=0.1, max_epochs=5, seed=1), X, y)
        full = train(MlpConfig(units_per_layer=6, learning_rate=0.1, max_epochs=5, seed=1, batch_size=None), X, y)
        assert sgd.loss_history[0] == full.loss_history[0]
        assert sgd.loss_history[1:] != full.loss_history[1:]

    def test_single_class(self):
        X, _ = _toy()
        with pytest.raises(ValueError, match="single class"):
            train(MlpConfig(hidden_layers=1, units_per_layer=4), X, np.zeros(len(X), dtype=int))

    def test_too_few_examples(self):
        with pytest.raises(ValueError):
            train(MlpConfig(hidden_layers=0), np.ones((1, 3)), [1])

    def test_input_dim_mismatch(self):
        X, y = _toy()
        with pytest.raises(ValueError, match="input_dim"):
            train(MlpConfig(hidden_layers=0, input_dim=99), X, y)

    def test_divergence_reported(self, monkeypatch):
        X, y = _toy()
        monkeypatch.setattr(mlp_module, "_batch_loss", lambda *args: float("nan"))
        with pytest.raises(TrainingDivergedError) as exc:
            train(MlpConfig(hidden_layers=0, max_epochs=3, batch_size=None), X, y)
        assert exc.value.epoch == 1


class TestClassify:
    """Threshold rule and persistence."""

    def _zero_model(self):
        return MlpModel(input_dim=3, widths=(), weights=(np.zeros((3, 2)),), biases=(np.zeros(2),))

    def test_tie_is_normal(self):
        label, score = classify(self._zero_model(), np.array([0.1, 0.2, 0.3]))
        assert score == 0.5
        assert label == CellLabel.NORMAL

    def test_above_threshold(self):
        m = MlpModel(input_dim=1, widths=(), weights=(np.zeros((1, 2)),), biases=(np.array([0.0, 1.0]),))
        label, score = classify(m, np.array([0.0]))
        assert label == CellLabel.PROBLEMATIC and score > 0.5

    def test_forward_shapes(self):
        m = self._zero_model()
        assert forward(m, np.zeros(3)).shape == (2,)
        assert forward(m, np.zeros((4, 3))).shape == (4, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="Dimension mismatch"):
            forward(self._zero_model(), np.zeros(4))

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValueError):
            MlpModel(input_dim=3, widths=(), weights=(np.zeros((2, 2)),), biases=(np.zeros(2),))

    def test_save_load(self, tmp_path):
        X, y = _toy(seed=5)
        cfg = MlpConfig(units_per_layer=5, hidden_layers=2, learning_rate=0.5, max_epochs=10, batch_size=None)
        m = train(cfg, X, y)
        save_model(m, tmp_path / "mlp.npz", tmp_path / "mlp.json", cfg)
        loaded = load_model(tmp_path / "mlp.npz", tmp_path / "mlp.json")
        assert loaded.widths == m.widths and loaded.best_epoch == m.best_epoch
        np.testing.assert_array_equal(problematic_scores(loaded, X), problematic_scores(m, X))
