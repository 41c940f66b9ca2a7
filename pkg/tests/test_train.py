import numpy as np
import pytest
from sklearn.base import clone

from helpers import gradient_check, small_config
from polylut.config import NetworkConfig, get_preset, validate_config
from polylut.datasets import synthetic_blobs, synthetic_rings
from polylut.netsim import eval_netlist
from polylut.network import forward, forward_codes
from polylut.quantize import QuantSpec
from polylut.tablegen import compile_network
from polylut.train import (
    PolyLUTClassifier,
    TrainHyper,
    TrainingError,
    _Model,
    ablation_grid,
    loss_and_grad,
    train,
)


@pytest.fixture(scope="module")
def blobs():
    return synthetic_blobs(600, 6, 3, seed=0)


@pytest.mark.parametrize(
    "kw",
    [dict(), dict(adder=1, degree=1), dict(adder=3, degree=3, layer_widths=(5, 1)), dict(fanin=3, layer_widths=(6, 4, 2))],
)
def test_gradients_match_finite_differences(kw):
    assert gradient_check(small_config(**kw)) < 1e-4


def test_loss_gradients():
    rng = np.random.default_rng(0)
    for k in (1, 4):
        s = rng.normal(size=(5, k))
        y = rng.integers(0, max(k, 2), 5)
        loss, g = loss_and_grad(s, y)
        h = 1e-6
        for i in range(5):
            for j in range(k):
                e = np.zeros_like(s)
                e[i, j] = h
                fd = (loss_and_grad(s + e, y)[0] - loss_and_grad(s - e, y)[0]) / (2 * h)
                assert abs(fd - g[i, j]) < 1e-7


def test_straight_through_blocks_clipped_values():
    cfg = validate_config(small_config())
    model = _Model(cfg, 0)
    X = np.random.default_rng(0).uniform(0, 1, size=(32, 6))
    model.forward(X, fake_quant=True, train=True, calibrate="set")
    model.layers[0].sub_scale = 1e-9  # every sub-neuron saturates
    scores = model.forward(X, fake_quant=True, train=True)
    assert model.layers[0].cache["sub_mask"].sum() == 0
    grads = model.backward(loss_and_grad(scores, np.zeros(32, dtype=int))[1])
    assert np.all(grads[0] == 0)
    assert np.any(grads[-1] != 0)  # the output shift still learns


def test_ste_passes_gradient_inside_range():
    model = _Model(validate_config(small_config()), 0)
    X = np.random.default_rng(0).uniform(0, 1, size=(32, 6))
    model.forward(X, fake_quant=True, train=True, calibrate="set")
    mask = model.layers[0].cache["sub_mask"]
    assert 0 < mask.mean() <= 1


def test_export_folds_per_neuron_sub_scales():
    cfg = validate_config(small_config(layer_widths=(6, 3)))
    model = _Model(cfg, 0)
    rng = np.random.default_rng(0)
    model.layers[0].W[:3] *= 20  # neurons with very different pre-activation ranges
    X = rng.uniform(0, 1, size=(400, 6))
    model.forward(X, fake_quant=True, train=True, calibrate="set")
    for _ in range(50):
        model.forward(X, fake_quant=True, train=True, calibrate="ema", hyper=TrainHyper())
    scales = model.layers[0].sub_scales()
    assert scales[:3].min() > 5 * scales[3:].max()
    inside = model.forward(X, fake_quant=True, train=False)
    net = model.to_network(np.zeros(6), np.ones(6), {})
    assert net.layers[0].sub_spec.scale == scales.max()
    # rescaled arithmetic may flip a rounding tie, nothing more
    assert np.mean(np.all(np.isclose(forward(net, X), inside), axis=1)) > 0.99


def test_training_is_deterministic(blobs):
    hyper = TrainHyper(epochs=3, batch_size=64, seed=4)
    a = train(small_config(), blobs, hyper)
    b = train(small_config(), blobs, hyper)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert la.out_spec == lb.out_spec
    c = train(small_config(), blobs, TrainHyper(epochs=3, batch_size=64, seed=5))
    assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)


def test_training_learns(blobs):
    net = train(small_config(beta=3), blobs, TrainHyper(epochs=15, batch_size=64))
    hist = net.metadata["loss_history"]
    assert hist[-1] < hist[0]
    assert net.metadata["test_accuracy"] > 0.8


def test_zero_epochs_returns_initialized_network(blobs):
    net = train(small_config(), blobs, TrainHyper(epochs=0))
    assert net.metadata["loss_history"] == []
    assert net.metadata["test_accuracy"] < 0.7


def test_trained_network_compiles_and_matches(blobs):
    net = train(small_config(), blobs, TrainHyper(epochs=2, batch_size=64))
    X = np.random.default_rng(0).integers(0, 4, size=(500, 6))
    assert np.array_equal(eval_netlist(compile_network(net), X), forward_codes(net, X))
    assert net.layers[1].in_spec == net.layers[0].out_spec


def test_one_bit_signed_output_trains():
    data = synthetic_rings(400, 4, seed=0)
    cfg = NetworkConfig(4, (6, 1), beta=2, fanin=2, degree=2, adder=2, output_beta=1)
    net = train(cfg, data, TrainHyper(epochs=2, batch_size=64))
    assert net.layers[-1].out_spec == QuantSpec(1, True, net.layers[-1].out_spec.scale)
    assert np.isfinite(net.layers[-1].out_spec.scale)


def test_shape_mismatches(blobs):
    with pytest.raises(ValueError, match="features"):
        train(small_config(input_width=5), blobs, TrainHyper(epochs=1))
    with pytest.raises(ValueError, match="classes"):
        train(small_config(layer_widths=(5, 4, 1)), blobs, TrainHyper(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(blobs):
    with pytest.raises(TrainingError, match="non-finite"):
        train(small_config(), blobs, TrainHyper(epochs=50, learning_rate=1e200, weight_decay=0.0))


def test_ablation_grid():
    base = get_preset("jsc-m-lite")
    points = ablation_grid(base)
    labels = [p.label for p in points]
    assert labels == ["PolyLUT", "PolyLUT-Deeper(D=2)", "PolyLUT-Wider(W=2)", "PolyLUT-Add(A=2)", "PolyLUT-Add(A=3)"]
    assert points[1].config.layer_widths == (64, 64, 32, 32, 5)
    assert points[2].config.layer_widths == (128, 64, 5)
    assert points[4].config.adder == 3
    assert len(ablation_grid(base, depth_factors=(1,), width_factors=(1,), adders=(1,))) == 1


class TestClassifier:
    def test_fit_predict_string_labels(self):
        d = synthetic_blobs(400, 6, 3, seed=1)
        labels = np.array(["a", "b", "c"])[d.y]
        clf = PolyLUTClassifier(hidden_layer_sizes=(8,), beta=3, fanin=2, degree=2, adder=2, epochs=10, batch_size=64)
        clf.fit(d.X, labels)
        assert set(clf.predict(d.X)) <= {"a", "b", "c"}
        assert clf.score(d.X, labels) > 0.7
        p = clf.predict_proba(d.X[:5])
        np.testing.assert_allclose(p.sum(1), 1.0)
        assert clf.n_features_in_ == 6

    def test_binary_uses_one_logit(self):
        d = synthetic_rings(300, 4, seed=0)
        clf = PolyLUTClassifier(hidden_layer_sizes=(6,), fanin=2, epochs=2).fit(d.X, d.y)
        assert clf.network_.n_outputs == 1
        assert clf.decision_function(d.X[:3]).shape == (3,)
        assert clf.predict_proba(d.X[:3]).shape == (3, 2)
        nl = clf.to_netlist()
        assert nl.output_width == 1

    def test_params_roundtrip(self):
        clf = PolyLUTClassifier(beta=3, adder=2)
        params = clf.get_params()
        assert params["beta"] == 3 and params["adder"] == 2
        assert clone(clf).get_params() == params

    def test_input_validation(self):
        clf = PolyLUTClassifier(hidden_layer_sizes=(4,), fanin=2, epochs=1)
        with pytest.raises(ValueError):
            clf.fit(np.array([[np.nan, 1.0]] * 4), [0, 1, 0, 1])
        with pytest.raises(ValueError, match="two classes"):
            clf.fit(np.zeros((4, 2)), [1, 1, 1, 1])
        clf.fit(np.random.default_rng(0).normal(size=(20, 3)), [0, 1] * 10)
        with pytest.raises(ValueError):
            clf.predict(np.zeros((2, 4)))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            PolyLUTClassifier().predict(np.zeros((1, 2)))

    def test_fake_quant_scores(self):
        d = synthetic_blobs(200, 4, 2, seed=0)
        clf = PolyLUTClassifier(hidden_layer_sizes=(4,), fanin=2, epochs=2).fit(d.X, d.y)
        np.testing.assert_array_equal(clf.decision_function(d.X), forward(clf.network_, d.X)[:, 0])
