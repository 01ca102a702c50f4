import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batterylife.features import SchemaMismatch
from batterylife.models import (ModelConfig, SingularSystem, TrainedModel, Tree, build_tree, fit,
                                fit_gradient_boosting, fit_linear, fit_random_forest,
                                fit_regression_tree, load_model, model_from_json, model_to_json,
                                predict, save_model)


def train_rmse(model, X, y):
    return float(np.sqrt(np.mean((predict(model, X) - y) ** 2)))


def test_linear_exact():
    x = np.linspace(-2, 5, 40)[:, None]
    m = fit_linear(x, 3 * x[:, 0] + 1, ModelConfig(kind="linear", ridge=1e-12))
    assert m.coef[0] == pytest.approx(3, abs=1e-6)
    assert m.intercept == pytest.approx(1, abs=1e-6)


def test_linear_constant_target(rng):
    X = rng.normal(size=(30, 2))
    m = fit_linear(X, np.full(30, 7.5), ModelConfig(kind="linear"))
    assert np.allclose(m.coef, 0, atol=1e-9)
    assert m.intercept == pytest.approx(7.5)


def test_linear_collinear(rng):
    x = rng.normal(size=(50, 1))
    X = np.hstack([x, x])
    m = fit_linear(X, 2 * x[:, 0], ModelConfig(kind="linear", ridge=1e-6))
    assert np.isfinite(m.coef).all()
    with pytest.raises(SingularSystem):
        fit_linear(X, 2 * x[:, 0], ModelConfig(kind="linear", ridge=0.0))


def test_stump_on_step():
    x = np.linspace(-1, 1, 41)[:, None]
    y = np.where(x[:, 0] < 0, -2.0, 5.0)
    m = fit_regression_tree(x, y, ModelConfig(kind="tree", max_depth=1, min_samples_leaf=1))
    t = m.trees[0]
    assert (t.feature >= 0).sum() == 1
    assert np.array_equal(predict(m, x), y)


def brute_force_stump(X, y, min_leaf):
    best = (-np.inf, None, None)
    sse0 = ((y - y.mean()) ** 2).sum()
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, j] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            if sse0 - sse > best[0] + 1e-9:
                best = (sse0 - sse, j, thr)
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(6, 40), st.integers(1, 4), st.integers(1, 3))
def test_best_split_matches_brute_force(seed, n, d, min_leaf):
    r = np.random.default_rng(seed)
    X = r.integers(0, 6, size=(n, d)).astype(float)
    y = r.normal(size=n)
    tree = build_tree(X, y, max_depth=1, min_samples_leaf=min_leaf)
    gain, j, thr = brute_force_stump(X, y, min_leaf)
    if j is None or gain <= 1e-12 * ((y - y.mean()) ** 2).sum():
        assert tree.feature[0] == -1
        return
    assert tree.feature[0] == j
    assert tree.threshold[0] == pytest.approx(thr)


def test_constant_target_single_leaf(rng):
    X = rng.normal(size=(20, 3))
    t = build_tree(X, np.full(20, 4.0))
    assert t.n_leaves == 1 and t.value[0] == 4.0


def test_too_few_rows_single_leaf(rng):
    X = rng.normal(size=(9, 2))
    y = rng.normal(size=9)
    t = build_tree(X, y, min_samples_leaf=5)
    assert t.n_leaves == 1 and t.value[0] == pytest.approx(y.mean())


def test_min_leaf_respected(rng):
    X = rng.normal(size=(200, 3))
    y = X[:, 0] ** 2 + rng.normal(scale=0.1, size=200)
    t = build_tree(X, y, min_samples_leaf=7)
    counts = np.bincount(t.apply(X), minlength=t.feature.size)
    assert counts[t.feature == -1].min() >= 7


def test_forest_reduces_to_tree(rng):
    X = rng.normal(size=(60, 3))
    y = X[:, 1] * 2 + rng.normal(size=60)
    one = fit_random_forest(X, y, ModelConfig(kind="forest", n_estimators=1, bootstrap=False))
    tree = fit_regression_tree(X, y, ModelConfig(kind="tree"))
    assert np.array_equal(predict(one, X), predict(tree, X))
    many = fit_random_forest(X, y, ModelConfig(kind="forest", n_estimators=4, bootstrap=False))
    assert np.allclose(predict(many, X), predict(tree, X))


def test_forest_constant_and_seed(rng):
    X = rng.normal(size=(40, 4))
    m = fit_random_forest(X, np.full(40, 2.0), ModelConfig(kind="forest", n_estimators=5))
    assert np.allclose(predict(m, X), 2.0)
    y = rng.normal(size=40)
    cfg = ModelConfig(kind="forest", n_estimators=5, feature_fraction=0.5, seed=11)
    a, b = fit_random_forest(X, y, cfg), fit_random_forest(X, y, cfg)
    assert model_to_json(a) == model_to_json(b)


def test_boost_one_stage(rng):
    X = rng.normal(size=(80, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    cfg = ModelConfig(kind="boost", n_estimators=1, learning_rate=1.0, max_depth=30, min_samples_leaf=1)
    m = fit_gradient_boosting(X, y, cfg)
    tree = build_tree(X, y - y.mean(), 30, 1)
    assert np.allclose(predict(m, X), y.mean() + tree.predict(X))
    single = fit_regression_tree(X, y, ModelConfig(kind="tree", max_depth=30, min_samples_leaf=1))
    assert train_rmse(m, X, y) <= train_rmse(single, X, y) + 1e-12


def test_boost_beats_linear_on_square():
    x = np.linspace(-1, 1, 201)[:, None]
    y = x[:, 0] ** 2
    boost = fit(x, y, ModelConfig(kind="boost"))
    lin = fit(x, y, ModelConfig(kind="linear"))
    assert train_rmse(boost, x, y) < train_rmse(lin, x, y)


def test_boost2_large_penalty(rng):
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50) * 10
    m = fit(X, y, ModelConfig(kind="boost2", l2_reg=1e12))
    assert np.abs(np.concatenate([t.value for t in m.trees])).max() < 1e-6
    assert np.allclose(predict(m, X), y.mean(), atol=1e-4)


def test_boost_subsample_deterministic(rng):
    X = rng.normal(size=(100, 3))
    y = X[:, 0] * X[:, 1]
    cfg = ModelConfig(kind="boost", n_estimators=20, subsample=0.5, seed=4)
    a, b = fit(X, y, cfg), fit(X, y, cfg)
    assert np.array_equal(predict(a, X), predict(b, X))
    c = fit(X, y, ModelConfig(kind="boost", n_estimators=20, subsample=0.5, seed=5))
    assert not np.array_equal(predict(a, X), predict(c, X))


def test_memorization():
    X = np.arange(10, dtype=float)[:, None]
    y = (X[:, 0] * 7) % 5
    m = fit(X, y, ModelConfig(kind="tree", min_samples_leaf=1))
    assert np.array_equal(predict(m, X), y)


def test_empty_and_mismatched_input(rng):
    m = fit(rng.normal(size=(20, 3)), rng.normal(size=20), ModelConfig(kind="tree"), fingerprint="f")
    assert predict(m, np.zeros((0, 3))).size == 0
    with pytest.raises(SchemaMismatch):
        predict(m, np.zeros((2, 4)))
    with pytest.raises(SchemaMismatch):
        predict(m, np.zeros((2, 3)), fingerprint="g")


@pytest.mark.parametrize("kind", ["linear", "tree", "forest", "boost", "boost2"])
def test_save_load_round_trip(kind, tmp_path, rng):
    X = rng.normal(size=(60, 4))
    y = X[:, 0] + X[:, 1] ** 2
    m = fit(X, y, ModelConfig(kind=kind, n_estimators=5), fingerprint="abc")
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.kind == kind and back.fingerprint == "abc"
    assert np.array_equal(predict(back, X), predict(m, X))
    assert model_to_json(model_from_json(model_to_json(m))) == model_to_json(m)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kind="svm")
    with pytest.raises(ValueError):
        ModelConfig(subsample=0.0)
    assert ModelConfig(kind="boost").depth == 3
    assert ModelConfig(kind="forest").depth is None


def test_tree_dict_round_trip():
    t = Tree(np.array([0, -1, -1]), np.array([0.5, 0.0, 0.0]), np.array([1, -1, -1]),
             np.array([2, -1, -1]), np.array([0.0, -1.0, 1.0]))
    back = Tree.from_dict(t.to_dict())
    X = np.array([[0.2], [0.5], [0.9]])
    assert back.predict(X).tolist() == [-1.0, -1.0, 1.0]
    assert isinstance(TrainedModel("tree", ModelConfig(kind="tree"), 1, trees=[t]).predict(X), np.ndarray)
