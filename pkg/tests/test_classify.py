import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import f1_score
from sklearn.svm import SVC

from bitetransfer.classify import (LabeledDataset, ModelConfig, compute_metrics, evaluate, finetune, load_model,
                                   metrics_from_confusion, save_model, train_model)
from bitetransfer.classify.mlp import gradient_check, init_params
from bitetransfer.classify.svm import rbf_kernel, smo, train_svm
from bitetransfer.errors import ConfigurationError, InsufficientDataError, LayoutMismatchError
from bitetransfer.features import feature_layout

LAYOUT = feature_layout()


def blobs(rng, per_class=20, sep=5.0, noise=1.0):
    """Four well separated Gaussian classes in the full feature layout."""
    centers = rng.normal(size=(4, LAYOUT.size))
    centers *= sep / np.linalg.norm(centers[:, None] - centers[None], axis=-1)[np.triu_indices(4, 1)].min()
    y = np.repeat(np.arange(4), per_class)
    X = centers[y] + rng.normal(0, noise * 0.05, (len(y), LAYOUT.size))
    return LabeledDataset(X, y, np.zeros(len(y), int))


def test_smo_separable_toy_is_perfect(rng):
    X = np.vstack([rng.normal(-5, 1, (30, 2)), rng.normal(5, 1, (30, 2))])
    y = np.r_[np.ones(30), -np.ones(30)]
    K = X @ X.T
    res = smo(K, y, C=10.0)
    f = K @ (res.alpha * y) + res.bias
    assert np.all(np.sign(f) == y)
    assert abs(res.alpha @ y) < 1e-9 and np.all(res.alpha >= 0) and np.all(res.alpha <= 10.0 + 1e-12)


@pytest.mark.parametrize("C", [0.1, 1.0, 10.0])
def test_smo_matches_sklearn_svc(rng, C):
    X = rng.normal(size=(80, 3))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] ** 2 + rng.normal(0, 0.4, 80) > 0.3, 1.0, -1.0)
    K = rbf_kernel(X, X, 0.5)
    res = smo(K, y, C, tol=1e-6)
    ref = SVC(C=C, kernel="precomputed", tol=1e-6).fit(K, y)
    ours = K @ (res.alpha * y) + res.bias
    np.testing.assert_allclose(ours, ref.decision_function(K), atol=1e-3)


def test_svm_duplicate_invariance(rng):
    d = blobs(rng, 10, sep=2.0, noise=8.0)
    probe = blobs(np.random.default_rng(9), 25, sep=2.0, noise=8.0).X
    a = train_svm(d.X, d.y, LAYOUT, tol=1e-6)
    b = train_svm(np.vstack([d.X, d.X]), np.r_[d.y, d.y], LAYOUT, tol=1e-6)
    np.testing.assert_array_equal(a.predict_batch(probe)[0], b.predict_batch(probe)[0])


def test_svm_vanishing_c(rng):
    d = blobs(rng, 10)
    m = train_svm(d.X, d.y, LAYOUT, C=1e-6)
    # every dual variable sits at its bound, so all decision values collapse to about the bias
    D = m.decision_pairs(d.X)
    assert np.ptp(D, axis=0).max() < 1e-4


def test_svm_separable_and_serialization(rng, tmp_path):
    d = blobs(rng)
    m = train_model(d, ModelConfig(kind="svm"))
    assert evaluate(m, d).macro_f1 == 1.0
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.decision_pairs(d.X), m.decision_pairs(d.X))
    lab, score = m.predict(d.X[0])
    assert lab == d.y[0]
    assert m.predict(d.X[0])[0] == lab and np.array_equal(m.predict(d.X[0])[1], score)


def test_svm_scale_invariance(rng):
    d = blobs(rng, 12, sep=2.0, noise=8.0)
    probe = blobs(np.random.default_rng(3), 20, sep=2.0, noise=8.0).X
    a = train_svm(d.X, d.y, LAYOUT)
    b = train_svm(d.X * 37.0, d.y, LAYOUT)
    np.testing.assert_array_equal(a.predict_batch(probe)[0], b.predict_batch(probe * 37.0)[0])


def test_svm_relabel_symmetry(rng):
    d = blobs(rng, 12, sep=2.0, noise=8.0)
    perm = np.array([2, 0, 3, 1])
    a = train_svm(d.X, d.y, LAYOUT)
    b = train_svm(d.X, perm[d.y], LAYOUT)
    np.testing.assert_array_equal(perm[a.predict_batch(d.X)[0]], b.predict_batch(d.X)[0])


def test_svm_requires_all_classes(rng):
    d = blobs(rng, 5)
    with pytest.raises(InsufficientDataError):
        train_svm(d.X[d.y < 3], d.y[d.y < 3], LAYOUT)


def test_mlp_gradient_check(rng):
    params = init_params([12, 16, 8, 4], rng)
    X = rng.normal(size=(30, 12))
    y = rng.integers(0, 4, 30)
    assert gradient_check(params, X, y, n_coords=20) < 1e-4


def test_mlp_determinism_and_zero_epochs(rng):
    d = blobs(rng)
    cfg = ModelConfig(kind="mlp", epochs=30, seed=4)
    a, b = train_model(d, cfg), train_model(d, cfg)
    for (Wa, ba), (Wb, bb) in zip(a.params, b.params):
        np.testing.assert_array_equal(Wa, Wb)
        np.testing.assert_array_equal(ba, bb)
    fresh = train_model(d, ModelConfig(kind="mlp", epochs=0))
    assert np.abs(fresh.predict_proba(d.X) - 0.25).max() < 0.4
    trained = train_model(d, ModelConfig(kind="mlp", epochs=100))
    assert evaluate(trained, d).macro_f1 == 1.0


def test_mlp_serialization(rng, tmp_path):
    d = blobs(rng)
    m = train_model(d, ModelConfig(kind="mlp", epochs=5))
    save_model(m, tmp_path / "m.json")
    np.testing.assert_array_equal(load_model(tmp_path / "m.json").predict_proba(d.X), m.predict_proba(d.X))


def test_metrics_perfect_and_sum():
    y = np.array([0, 1, 2, 3, 3])
    m = compute_metrics(y, y)
    assert m.macro_f1 == 1.0 and np.array_equal(m.confusion, np.diag([1, 1, 1, 2]))
    assert m.n == 5


@given(st.integers(0, 2**32 - 1))
def test_metrics_match_sklearn(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 4, 60)
    p = np.where(rng.random(60) < 0.6, y, rng.integers(0, 4, 60))
    ours = compute_metrics(y, p)
    ref = f1_score(y, p, labels=[0, 1, 2, 3], average=None, zero_division=0)
    np.testing.assert_allclose(ours.f1, ref, atol=1e-12)
    assert ours.confusion.sum() == 60


def test_shuffled_labels_give_chance_f1():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(4), 100)
        vals.append(compute_metrics(y, rng.permutation(y)).macro_f1)
    assert abs(np.mean(vals) - 0.25) < 0.05


def test_hand_built_confusion():
    cm = np.array([[8, 2, 0, 0],
                   [1, 6, 3, 0],
                   [0, 0, 10, 0],
                   [0, 0, 5, 5]])
    # precision: 8/9, 6/8, 10/18, 5/5; recall: 8/10, 6/10, 10/10, 5/10
    p = np.array([8 / 9, 6 / 8, 10 / 18, 1.0])
    r = np.array([0.8, 0.6, 1.0, 0.5])
    expect = np.mean(2 * p * r / (p + r))
    assert np.isclose(metrics_from_confusion(cm).macro_f1, expect, rtol=1e-12)


def test_finetune_zero_samples_is_identity(rng):
    d = blobs(rng)
    m = train_model(d)
    assert finetune(m, d.subset(np.array([], int))) is m


def test_finetune_on_test_set_does_not_hurt(rng):
    train = blobs(rng, 15, sep=1.5, noise=10.0)
    test = blobs(np.random.default_rng(77), 15, sep=1.5, noise=10.0)
    m = train_model(train)
    before = evaluate(m, test).macro_f1
    after = evaluate(finetune(m, test), test).macro_f1
    assert after >= before


def test_layout_mismatch_and_config_errors(rng):
    d = blobs(rng)
    m = train_model(d)
    with pytest.raises(LayoutMismatchError):
        m.predict_batch(d.X[:, :10])
    with pytest.raises(ConfigurationError):
        ModelConfig(kind="forest").validate()


def test_dataset_roundtrip(rng, tmp_path):
    d = blobs(rng, 3)
    d.provenance = {"seed": 1}
    d.save(tmp_path / "ds")
    back = LabeledDataset.load(tmp_path / "ds")
    np.testing.assert_array_equal(back.X, d.X)
    assert back.provenance == {"seed": 1} and back.layout.names == d.layout.names
    with pytest.raises(ConfigurationError):
        LabeledDataset.load(tmp_path / "missing")
