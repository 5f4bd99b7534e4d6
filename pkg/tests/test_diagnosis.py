import numpy as np
import pytest

from hypnopipe import diagnosis as dg
from hypnopipe.errors import DimensionMismatch, SingleClass, TooFewSamples


def blobs(rng, n_per=50, d=2, sep=4.0):
    X = np.vstack([rng.normal(-sep / 2, 1.0, (n_per, d)),
                   rng.normal(sep / 2, 1.0, (n_per, d))])
    y = np.array([-1.0] * n_per + [1.0] * n_per)
    return X, y


# ------------------------------------------------------------------- rfe

def test_rfe_finds_informative_features(rng):
    n = 120
    y = np.where(rng.random(n) > 0.5, 1.0, -1.0)
    X = rng.standard_normal((n, 52))
    X[:, 3] += 2.0 * y
    X[:, 17] += 2.0 * y
    sel = dg.rfe(X, y, target_count=5, seed=0)
    assert sel.frequency[3] == 1.0
    assert sel.frequency[17] == 1.0
    assert 3 in sel.selected and 17 in sel.selected


def test_rfe_selected_set_matches_cutoff(rng):
    X, y = blobs(rng, n_per=30, d=10)
    sel = dg.rfe(X, y, target_count=4, seed=1)
    assert set(sel.selected) == {i for i, f in enumerate(sel.frequency)
                                 if f >= dg.RFE_CUTOFF}


def test_rfe_duplicate_columns_one_survives(rng):
    n = 80
    y = np.where(rng.random(n) > 0.5, 1.0, -1.0)
    X = rng.standard_normal((n, 10))
    X[:, 0] += 2.0 * y
    X[:, 1] = X[:, 0]
    sel = dg.rfe(X, y, target_count=3, seed=0)
    assert sel.frequency[0] + sel.frequency[1] > 0


def test_rfe_preconditions(rng):
    X, y = blobs(rng, n_per=5)
    with pytest.raises(TooFewSamples):
        dg.rfe(X, y)
    X2, _ = blobs(rng, n_per=20)
    with pytest.raises(SingleClass):
        dg.rfe(X2, np.ones(40))


# -------------------------------------------------------------------- gp

def test_gp_separates_blobs(rng):
    X, y = blobs(rng)
    model = dg.gp_fit(X, y)
    scores, var = dg.gp_predict(model, X)
    assert ((scores > 0) == (y > 0)).mean() >= 0.98
    assert np.all(np.abs(scores) < 1.0)
    assert np.all(var >= 0)


def test_gp_label_flip_antisymmetry(rng):
    X, y = blobs(rng, n_per=30)
    grid = rng.standard_normal((20, 2)) * 3
    a, _ = dg.gp_predict(dg.gp_fit(X, y), grid)
    b, _ = dg.gp_predict(dg.gp_fit(X, -y), grid)
    assert np.max(np.abs(a + b)) < 1e-6


def test_gp_conflicting_duplicate_reduces_confidence(rng):
    X, y = blobs(rng, n_per=20)
    base, _ = dg.gp_predict(dg.gp_fit(X, y), X[0][None, :])
    X2 = np.vstack([X, X[0]])
    y2 = np.append(y, -y[0])
    conflicted, _ = dg.gp_predict(dg.gp_fit(X2, y2), X[0][None, :])
    assert abs(conflicted) < abs(base)
    assert np.sign(conflicted) == np.sign(base)


def test_gp_far_point_returns_prior(rng):
    X, y = blobs(rng, n_per=20)
    model = dg.gp_fit(X, y)
    far = np.full((1, 2), 1e6)
    s, var = dg.gp_predict(model, far)
    from scipy.special import ndtr
    prior_var = model.signal_std ** 2 + model.noise
    prior_score = 2 * ndtr(model.mean_const / np.sqrt(1 + prior_var)) - 1
    assert abs(s - prior_score) < 1e-6
    assert abs(var - prior_var) < 1e-6


def test_gp_affine_feature_rescaling_invariance(rng):
    X, y = blobs(rng, n_per=30)
    test = rng.standard_normal((10, 2))
    a, _ = dg.gp_predict(dg.gp_fit(X, y), test)
    X2 = X.copy()
    X2[:, 0] = 100.0 * X2[:, 0] - 7.0
    test2 = test.copy()
    test2[:, 0] = 100.0 * test2[:, 0] - 7.0
    b, _ = dg.gp_predict(dg.gp_fit(X2, y), test2)
    assert np.max(np.abs(np.asarray(a) - np.asarray(b))) < 1e-6


def test_gp_boundary_point_near_zero(rng):
    X, y = blobs(rng)
    model = dg.gp_fit(X, y)
    s, _ = dg.gp_predict(model, np.zeros((1, 2)))
    assert abs(s) < 0.05


def test_gp_dimension_mismatch(rng):
    X, y = blobs(rng, n_per=20)
    model = dg.gp_fit(X, y)
    with pytest.raises(DimensionMismatch):
        dg.gp_predict(model, np.zeros((1, 3)))


def test_gp_archive_round_trip(tmp_path, rng):
    X, y = blobs(rng, n_per=25)
    model = dg.gp_fit(X, y)
    model.save(str(tmp_path))
    back = dg.GPModel.load(str(tmp_path / "gp.gp.json"))
    a, _ = dg.gp_predict(model, X)
    b, _ = dg.gp_predict(back, X)
    assert np.max(np.abs(a - b)) < 1e-4


# ------------------------------------------------------------ thresholds

def test_threshold_constants():
    assert dg.THRESHOLD_NO_HLA == -0.03
    assert dg.THRESHOLD_WITH_HLA == -0.53
    assert dg.RFE_CUTOFF == 0.40
    assert dg.RFE_TARGET_COUNT == 38


def test_ensemble_diagnose_threshold_edges():
    assert dg.ensemble_diagnose([1.0, 1.0]).label is True
    assert dg.ensemble_diagnose([-0.02]).label is True
    assert dg.ensemble_diagnose([-0.04]).label is False


def test_hla_gate_rules():
    rep = dg.ensemble_diagnose([0.9])
    assert dg.apply_hla(rep, False).label is False
    assert dg.apply_hla(dg.ensemble_diagnose([-0.40]), True).label is True
    assert dg.apply_hla(dg.ensemble_diagnose([-0.60]), True).label is False


def test_hla_negative_is_absorbing(rng):
    for s in rng.uniform(-1, 1, 1000):
        rep = dg.apply_hla(dg.ensemble_diagnose([float(s)]), False)
        assert rep.label is False
        assert rep.hla_used is True


# --------------------------------------------------------------- evaluate

def test_roc_perfect_separation():
    out = dg.evaluate([-0.9, -0.5, 0.5, 0.9], [False, False, True, True])
    assert out["auc"] == 1.0


def test_roc_constant_scores_chance_level():
    out = dg.evaluate([0.1] * 50, [i % 2 == 0 for i in range(50)])
    assert abs(out["auc"] - 0.5) < 1e-12


def test_roc_known_counts():
    # threshold 0: predictions (+,+,-,-,+,-) against truth (+,-,+,-,+,-)
    scores = [0.5, 0.5, -0.5, -0.5, 0.5, -0.5]
    truth = [True, False, True, False, True, False]
    out = dg.evaluate(scores, truth, threshold=0.0)
    assert out["sensitivity"] == 2 / 3
    assert out["specificity"] == 2 / 3
    lo, hi = out["sensitivity_ci"]
    assert lo < 2 / 3 < hi


def test_roc_monotone(rng):
    scores = rng.uniform(-1, 1, 200)
    truth = rng.random(200) > 0.4
    roc = dg.evaluate(scores, truth)["roc"]
    assert np.all(np.diff(roc[:, 0]) >= 0)
    assert np.all(np.diff(roc[:, 1]) >= 0)


def test_evaluate_requires_both_classes():
    with pytest.raises(SingleClass):
        dg.evaluate([0.1, 0.2], [True, True])


# ----------------------------------------------------------- standardizer

def test_standardizer_drops_constant_columns(rng):
    X = rng.standard_normal((20, 3))
    X[:, 1] = 5.0
    std = dg.Standardizer.fit(X)
    Z = std.apply(X)
    assert Z.shape == (20, 2)
    assert np.allclose(Z.mean(axis=0), 0.0, atol=1e-12)
