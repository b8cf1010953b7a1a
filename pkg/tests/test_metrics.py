import math

import numpy as np
import pytest
from scipy.stats import norm

from beliefflow.metrics import MetricReport, heldout_loglik, mmtv, wasserstein
from beliefflow.preference import PreferenceDataset, RankingObservation


def test_wasserstein_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(200, 3))
    assert wasserstein(a, a.copy()) == 0.0


def test_wasserstein_singletons():
    assert wasserstein(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]])) == pytest.approx(1.0)


def test_wasserstein_gaussian_mean_shift():
    # analytic W2 between equal-covariance normals is the mean distance
    rng = np.random.default_rng(1)
    vals = []
    for rep in range(3):
        a = rng.standard_normal((512, 2))
        b = rng.standard_normal((512, 2)) + np.array([2.0, 0.0])
        vals.append(wasserstein(a, b))
    assert np.mean(vals) == pytest.approx(2.0, abs=0.15)


def test_wasserstein_symmetry_and_scale():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(300, 2))
    b = rng.normal(1.0, 2.0, size=(300, 2))
    assert wasserstein(a, b) == pytest.approx(wasserstein(b, a), rel=1e-12)
    assert wasserstein(2 * a, 2 * b) == pytest.approx(2 * wasserstein(a, b), rel=1e-9)


def test_wasserstein_triangle_sanity():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(256, 2))
    b = rng.normal(2.0, 1.0, size=(256, 2))
    c = rng.normal(-1.0, 1.5, size=(256, 2))
    assert wasserstein(a, c) <= wasserstein(a, b) + wasserstein(b, c) + 1e-9


def test_wasserstein_size_mismatch_errors():
    with pytest.raises(ValueError):
        wasserstein(np.zeros((10, 2)), np.zeros((11, 2)))


def test_wasserstein_resampling_determinism():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(2000, 2))
    b = rng.normal(0.5, 1.0, size=(2000, 2))
    assert wasserstein(a, b, pair_size=256, resamples=3, seed=7) == \
        wasserstein(a, b, pair_size=256, resamples=3, seed=7)


def test_mmtv_trivial_cases():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(5000, 2))
    assert mmtv(a, a.copy()) == 0.0
    b = a + 100.0  # disjoint supports in every dimension
    assert mmtv(a, b) == pytest.approx(1.0)


def test_mmtv_normal_shift_analytic():
    rng = np.random.default_rng(6)
    a = rng.normal(0.0, 1.0, size=(100_000, 1))
    b = rng.normal(1.0, 1.0, size=(100_000, 1))
    analytic = 2 * norm.cdf(0.5) - 1
    assert mmtv(a, b) == pytest.approx(analytic, abs=0.01)


def test_mmtv_symmetry_and_range():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4000, 3))
    b = rng.normal(0.3, 1.4, size=(4000, 3))
    v = mmtv(a, b)
    assert v == pytest.approx(mmtv(b, a), rel=1e-12)
    assert 0.0 <= v <= 1.0


class _FixedValueModel:
    """Log-density lookup table keyed by exact point identity."""

    def __init__(self, table=None, constant=None):
        self.table = table
        self.constant = constant

    def log_density(self, x):
        if self.constant is not None:
            return np.full(len(x), self.constant)
        out = np.empty(len(x))
        for i, row in enumerate(x):
            out[i] = self.table[tuple(row)]
        return out


def _ranking_dataset(rng, n=20, k=4, d=2):
    obs = []
    for _ in range(n):
        pts = rng.normal(size=(k, d))
        obs.append(RankingObservation(pts, tuple(rng.permutation(k).tolist())))
    return PreferenceDataset(obs)


def test_heldout_loglik_constant_model_is_uniform_over_rankings():
    rng = np.random.default_rng(8)
    ds = _ranking_dataset(rng, n=30, k=4)
    model = _FixedValueModel(constant=-1.3)
    assert heldout_loglik(model, ds, s=1.0) == pytest.approx(math.log(1 / math.factorial(4)),
                                                             rel=1e-12)


def test_heldout_loglik_perfect_separation_approaches_zero():
    rng = np.random.default_rng(9)
    obs = []
    for _ in range(10):
        pts = rng.normal(size=(3, 2))
        perm = tuple(rng.permutation(3).tolist())
        obs.append(RankingObservation(pts, perm))
    table = {}
    for o in obs:
        for rank, idx in enumerate(o.ranking):
            table[tuple(o.points[idx])] = -60.0 * rank  # huge ordered gaps
    model = _FixedValueModel(table=table)
    ds = PreferenceDataset(obs)
    assert heldout_loglik(model, ds, s=1.0) == pytest.approx(0.0, abs=1e-10)


def test_heldout_loglik_pairwise_gap_zero():
    rng = np.random.default_rng(10)
    ds = _ranking_dataset(rng, n=15, k=2)
    model = _FixedValueModel(constant=2.2)
    assert heldout_loglik(model, ds, s=3.0) == pytest.approx(math.log(0.5), rel=1e-12)


def test_metric_report_validation(tmp_path):
    report = MetricReport(loglik=-1.0, wasserstein=0.5, mmtv=0.2, metadata={"m": 512})
    report.save_json(tmp_path / "m.json")
    assert (tmp_path / "m.json").exists()
    with pytest.raises(ValueError):
        MetricReport(loglik=0.0, wasserstein=-0.1, mmtv=0.2)
    with pytest.raises(ValueError):
        MetricReport(loglik=0.0, wasserstein=0.1, mmtv=1.2)
