import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invariantlab import autodiff as ad
from invariantlab import datagen
from invariantlab import predictors as pred

ARCH = pred.Architecture((3, 8, 2))


def _data(n=20, seed=0, d=3, classes=2):
    rng = np.random.default_rng(seed)
    return datagen.EnvironmentDataset(
        "e", rng.standard_normal((n, d)), rng.integers(0, classes, n))


def test_architecture_validation():
    with pytest.raises(ValueError):
        pred.Architecture((3,))
    with pytest.raises(ValueError):
        pred.Architecture((3, 2), activation="sigmoid")
    assert ARCH.n_classes == 2 and ARCH.input_dim == 3


def test_init_is_deterministic_and_bounded():
    p1 = pred.init_predictor(ARCH, 7)
    p2 = pred.init_predictor(ARCH, 7)
    assert np.array_equal(p1.params.values, p2.params.values)
    W0 = p1.params.view("W0")
    assert np.all(np.abs(W0) <= 1.0 / np.sqrt(3))
    assert not np.array_equal(
        p1.params.values, pred.init_predictor(ARCH, 8).params.values)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_predictions_lie_on_the_simplex(seed):
    rng = np.random.default_rng(seed)
    p = pred.init_predictor(ARCH, seed)
    Q = pred.predict_batch(p, 10.0 * rng.standard_normal((6, 3)))
    assert np.all(Q >= 0.0)
    assert np.allclose(Q.sum(axis=1), 1.0)


def test_graph_forward_matches_numpy_forward():
    p = pred.init_predictor(ARCH, 3)
    X = np.random.default_rng(1).standard_normal((5, 3))
    params = {n: ad.Node(a) for n, a in
              p.params.layout.unflatten(p.params.values).items()}
    logp = pred.log_probs_graph(p.arch, params, X)
    assert np.allclose(np.exp(logp.value), pred.predict_batch(p, X),
                       atol=1e-12)


def test_input_dimension_checked():
    p = pred.init_predictor(ARCH, 0)
    with pytest.raises(ad.DimensionError):
        pred.logits_batch(p, np.ones((4, 5)))


def test_cross_entropy_exact_endpoints():
    spec = pred.LossSpec(bound=20.0)
    assert pred.cross_entropy(np.array([0.0, 1.0]), 1, spec) == 0.0
    assert pred.cross_entropy(np.array([1.0, 0.0]), 1, spec) == 20.0
    q = np.array([0.25, 0.75])
    assert pred.cross_entropy(q, 1, spec) == pytest.approx(-np.log(0.75))
    with pytest.raises(ValueError):
        pred.cross_entropy(q, 2, spec)


def test_cross_entropy_clamped_by_bound():
    spec = pred.LossSpec(bound=0.1)
    assert pred.cross_entropy(np.array([0.5, 0.5]), 0, spec) == \
        pytest.approx(0.1)


def test_empirical_risk_matches_per_example_mean():
    spec = pred.LossSpec()
    p = pred.init_predictor(ARCH, 0)
    data = _data()
    per = [pred.cross_entropy(pred.predict(p, data.X[i]), int(data.y[i]),
                              spec) for i in range(len(data))]
    assert pred.empirical_risk(p, data, spec) == pytest.approx(
        float(np.mean(per)), abs=1e-12)


def test_graph_loss_matches_numpy_loss():
    spec = pred.LossSpec()
    p = pred.init_predictor(ARCH, 2)
    data = _data(seed=5)
    params = {n: ad.Node(a) for n, a in
              p.params.layout.unflatten(p.params.values).items()}
    logp = pred.log_probs_graph(p.arch, params, data.X)
    node = pred.cross_entropy_graph(logp, data.y, spec)
    assert float(node.value) == pytest.approx(
        pred.empirical_risk(p, data, spec), abs=1e-10)


def test_accuracy_on_constant_labels():
    p = pred.init_predictor(ARCH, 0)
    data = _data(seed=3)
    q = pred.predict_batch(p, data.X)
    expected = float(np.mean(q.argmax(axis=1) == data.y))
    assert pred.accuracy(p, data) == expected


def test_save_load_round_trip_is_exact():
    p = pred.init_predictor(pred.Architecture((4, 7, 3), "relu"), 11)
    q = pred.load_text(pred.save_text(p))
    assert q.arch == p.arch
    assert np.array_equal(q.params.values, p.params.values)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        pred.LossSpec(bound=0.0)
