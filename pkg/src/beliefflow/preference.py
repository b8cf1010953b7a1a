"""Preferential likelihoods, the functional prior, and the FS-MAP objective.

The winning probability of an alternative in a k-wise choice under a
random-utility expert with Exp(s) noise is

    P(x wins | C) = sum_{l=0}^{k-1} b_l * exp(-s (l+1) max{f*_C - f(x), 0}) / (l+1),

where b_l is the l-th elementary symmetric sum of
c_j = -exp(-s (f(x) - f(x_j))) over the non-winners and f*_C their maximum.
Evaluated literally the b_l explode for large utility gaps, so all
exponentials here are taken after subtracting the choice-set maximum m*:
with u_j = exp(s (f_j - m*)) in (0, 1] the identity

    log P = s (f(x) - m*) + log( sum_l e_l({-u_j}) / (l+1) )

holds exactly and every symmetric sum stays bounded by C(k-1, l).

Ranking likelihoods multiply winner probabilities while removing the
chosen alternative from the choice set, stage by stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "DATASET_FORMAT",
    "LikelihoodDiagnostics",
    "ComparisonObservation",
    "RankingObservation",
    "PreferenceDataset",
    "ObjectiveConfig",
    "elementary_symmetric_sums",
    "comparison_log_likelihood",
    "ranking_log_likelihood",
    "comparison_log_likelihood_batch",
    "ranking_log_likelihood_batch",
    "log_functional_prior",
    "fs_map_objective",
    "objective_terms",
]

DATASET_FORMAT = "prefflow-v1"

# Probabilities are floored here when cancellation drives them to zero;
# every floor event is counted in LikelihoodDiagnostics.
PROB_FLOOR = 1e-300


@dataclass
class LikelihoodDiagnostics:
    """Counters for numerically pathological likelihood evaluations."""

    underflow_floors: int = 0

    def as_dict(self) -> dict:
        return {"underflow_floors": self.underflow_floors}


def elementary_symmetric_sums(values) -> np.ndarray:
    """e_0..e_m of a value multiset, by the polynomial-coefficient recurrence.

    e_0 = 1 and e_l is the sum of all products of l distinct entries.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("expected a flat sequence of values")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite input to elementary_symmetric_sums")
    sums = np.zeros(values.size + 1)
    sums[0] = 1.0
    for t, v in enumerate(values):
        sums[1 : t + 2] += v * sums[0 : t + 1]
    return sums


def _esums_update(sums: list, column):
    """One column step of the symmetric-sum recurrence (array or Node)."""
    new = [sums[0]]
    for l in range(1, len(sums) + 1):
        term = column * sums[l - 1]
        new.append(term if l == len(sums) else sums[l] + term)
    return new


def _winner_stage_log_prob(f_stage, s: float, diagnostics: LikelihoodDiagnostics | None):
    """Log winning probability of column 0 of `f_stage` (B, m+1).

    Works on plain arrays and on autodiff nodes alike.
    """
    n_alts = f_stage.shape[1]
    m_star = ad.amax(f_stage, axis=1)
    gap = f_stage[:, 0] - m_star
    if n_alts == 1:
        return gap * 0.0  # a single alternative always wins
    u = ad.exp(s * (f_stage[:, 1:] - ad.reshape(m_star, (-1, 1))))
    sums = [np.ones(f_stage.shape[0])]
    for t in range(n_alts - 1):
        sums = _esums_update(sums, -u[:, t])
    total = sums[0]
    for l in range(1, len(sums)):
        total = total + sums[l] * (1.0 / (l + 1.0))
    floored = ad.maximum(total, PROB_FLOOR)
    if diagnostics is not None:
        low = np.asarray(ad.value_of(total)) <= PROB_FLOOR
        if low.any():
            diagnostics.underflow_floors += int(low.sum())
    return s * gap + ad.log(floored)


def comparison_log_likelihood_batch(f_values, winners, s: float, diagnostics=None):
    """Log winning probabilities for a batch of k-wise comparisons.

    f_values: (B, k) utilities per choice set; winners: (B,) indices.
    """
    n_obs, k = f_values.shape
    winners = np.asarray(winners, dtype=np.intp)
    k_range = np.tile(np.arange(k), (n_obs, 1))
    losers = k_range[k_range != winners[:, None]].reshape(n_obs, k - 1)
    order = np.concatenate([winners[:, None], losers], axis=1)
    rows = np.arange(n_obs)[:, None]
    return _winner_stage_log_prob(f_values[rows, order], s, diagnostics)


def ranking_log_likelihood_batch(f_values, rankings, s: float, diagnostics=None):
    """Log likelihoods for a batch of k-wise rankings.

    Each ranking factorizes over stages: the stage winner is scored against
    the not-yet-chosen alternatives, which are then shrunk by one.
    """
    n_obs, k = f_values.shape
    rankings = np.asarray(rankings, dtype=np.intp)
    rows = np.arange(n_obs)[:, None]
    ordered = f_values[rows, rankings]  # most preferred first
    total = None
    for stage in range(k - 1):
        stage_lp = _winner_stage_log_prob(ordered[:, stage:], s, diagnostics)
        total = stage_lp if total is None else total + stage_lp
    return total


def comparison_log_likelihood(f_values, winner: int, s: float, diagnostics=None) -> float:
    """Log of the winning probability of `winner` among the k alternatives."""
    f_values = np.asarray(f_values, dtype=np.float64)
    _validate_scalar_inputs(f_values, s)
    if not 0 <= winner < f_values.size:
        raise ValueError("winner index out of range")
    out = comparison_log_likelihood_batch(f_values[None, :], [winner], s, diagnostics)
    return float(out[0])


def ranking_log_likelihood(f_values, permutation, s: float, diagnostics=None) -> float:
    """Log likelihood of a full ranking (most preferred first)."""
    f_values = np.asarray(f_values, dtype=np.float64)
    _validate_scalar_inputs(f_values, s)
    permutation = np.asarray(permutation, dtype=np.intp)
    if sorted(permutation.tolist()) != list(range(f_values.size)):
        raise ValueError("not a valid permutation of the choice set")
    out = ranking_log_likelihood_batch(f_values[None, :], permutation[None, :], s, diagnostics)
    return float(out[0])


def _validate_scalar_inputs(f_values, s):
    if f_values.ndim != 1 or f_values.size < 2:
        raise ValueError("a choice set needs at least two alternatives")
    if not np.all(np.isfinite(f_values)):
        raise ValueError("non-finite utility values")
    if s <= 0:
        raise ValueError("precision s must be positive")


def log_functional_prior(f_at_winners) -> float:
    """Log of the functional prior at winner points: sum of their f-values.

    The uninformative bounded hyper-prior is an additive constant and is
    dropped; it never contributes to gradients.
    """
    f_at_winners = np.asarray(f_at_winners, dtype=np.float64)
    return float(f_at_winners.sum())


# ---------------------------------------------------------------------------
# Observations and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonObservation:
    """A k-wise comparison: the choice set and the chosen alternative."""

    points: np.ndarray  # (k, d)
    winner: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError("choice set must be (k >= 2, d)")
        if not 0 <= self.winner < self.points.shape[0]:
            raise ValueError("winner index out of range")

    @property
    def winner_point(self) -> np.ndarray:
        return self.points[self.winner]


@dataclass(frozen=True)
class RankingObservation:
    """A k-wise ranking: the choice set and a permutation, best first."""

    points: np.ndarray  # (k, d)
    ranking: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "ranking", tuple(int(i) for i in self.ranking))
        k = self.points.shape[0]
        if self.points.ndim != 2 or k < 2:
            raise ValueError("choice set must be (k >= 2, d)")
        if sorted(self.ranking) != list(range(k)):
            raise ValueError("not a valid permutation of the choice set")

    @property
    def winner(self) -> int:
        return self.ranking[0]

    @property
    def winner_point(self) -> np.ndarray:
        return self.points[self.winner]


class PreferenceDataset:
    """A homogeneous collection of comparison or ranking observations."""

    def __init__(self, observations: Sequence):
        observations = list(observations)
        if not observations:
            raise ValueError("dataset must contain at least one observation")
        kinds = {type(o) for o in observations}
        if len(kinds) != 1 or kinds.pop() not in (ComparisonObservation, RankingObservation):
            raise ValueError("observations must be all comparisons or all rankings")
        k = observations[0].points.shape[0]
        d = observations[0].points.shape[1]
        for o in observations:
            if o.points.shape != (k, d):
                raise ValueError("all observations must share k and dimension")
        self.observations = observations
        self.kind = "ranking" if isinstance(observations[0], RankingObservation) else "comparison"

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def k(self) -> int:
        return self.observations[0].points.shape[0]

    @property
    def dim(self) -> int:
        return self.observations[0].points.shape[1]

    @property
    def points_tensor(self) -> np.ndarray:
        """All choice sets stacked, shape (n, k, d)."""
        return np.stack([o.points for o in self.observations])

    @property
    def winner_indices(self) -> np.ndarray:
        return np.array([o.winner for o in self.observations], dtype=np.intp)

    @property
    def rankings(self) -> np.ndarray:
        if self.kind != "ranking":
            raise ValueError("comparison datasets carry no rankings")
        return np.array([o.ranking for o in self.observations], dtype=np.intp)

    def winners(self) -> np.ndarray:
        """The winner set X_> : one point per observation, shape (n, d)."""
        return np.stack([o.winner_point for o in self.observations])

    def design(self) -> np.ndarray:
        """The full design X: every presented point, shape (n*k, d)."""
        return self.points_tensor.reshape(-1, self.dim)

    def subset(self, indices) -> "PreferenceDataset":
        return PreferenceDataset([self.observations[i] for i in indices])

    # -- persistence ----------------------------------------------------
    def to_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": DATASET_FORMAT, "dim": self.dim, "k": self.k}) + "\n")
            for o in self.observations:
                row: dict = {"points": o.points.tolist()}
                if isinstance(o, RankingObservation):
                    row["ranking"] = list(o.ranking)
                else:
                    row["winner"] = o.winner
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "PreferenceDataset":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != DATASET_FORMAT:
                raise ValueError(f"unsupported dataset format in {path}")
            observations = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                points = np.asarray(row["points"], dtype=np.float64)
                if "ranking" in row:
                    observations.append(RankingObservation(points, tuple(row["ranking"])))
                else:
                    observations.append(ComparisonObservation(points, int(row["winner"])))
        ds = cls(observations)
        if ds.dim != header["dim"] or ds.k != header["k"]:
            raise ValueError(f"dataset header disagrees with observations in {path}")
        return ds


@dataclass(frozen=True)
class ObjectiveConfig:
    """Settings of the training objective.

    s_lik is the precision assumed in the likelihood (default 1, regardless
    of the precision that generated the data). Disabling the prior leaves
    the pure maximum-likelihood objective.
    """

    s_lik: float = 1.0
    include_prior: bool = True

    def __post_init__(self):
        if self.s_lik <= 0:
            raise ValueError("s_lik must be positive")


def _dataset_log_posterior(model, dataset: PreferenceDataset, config: ObjectiveConfig,
                           indices: np.ndarray, params_node, diagnostics=None):
    """Unnormalized log posterior of the observations at `indices`."""
    pts = dataset.points_tensor[indices]
    n_obs, k, d = pts.shape
    f_flat = model.log_density_node(params_node, pts.reshape(n_obs * k, d))
    f_sets = ad.reshape(f_flat, (n_obs, k))
    if dataset.kind == "ranking":
        loglik = ranking_log_likelihood_batch(f_sets, dataset.rankings[indices], config.s_lik, diagnostics)
    else:
        loglik = comparison_log_likelihood_batch(f_sets, dataset.winner_indices[indices], config.s_lik, diagnostics)
    total = ad.asum(loglik)
    if config.include_prior:
        rows = np.arange(n_obs)
        total = total + ad.asum(f_sets[rows, dataset.winner_indices[indices]])
    return total


def fs_map_objective(model, dataset: PreferenceDataset, config: ObjectiveConfig,
                     diagnostics: LikelihoodDiagnostics | None = None) -> ad.DifferentiableScalar:
    """The full-dataset FS-MAP objective as a differentiable scalar.

    Maximization target: sum of per-observation preferential log-likelihoods
    at the model's log-density values, plus the functional prior (the sum of
    log densities over winner points).
    """
    indices = np.arange(len(dataset))

    def objective(params_node):
        return _dataset_log_posterior(model, dataset, config, indices, params_node, diagnostics)

    return objective


def minibatch_objective(model, dataset: PreferenceDataset, config: ObjectiveConfig,
                        indices, diagnostics: LikelihoodDiagnostics | None = None) -> ad.DifferentiableScalar:
    """FS-MAP objective restricted to a mini-batch of observation indices.

    The prior term covers the winners of the mini-batch only, exactly as in
    the stochastic training loop's per-step posterior evaluation.
    """
    indices = np.asarray(indices, dtype=np.intp)

    def objective(params_node):
        return _dataset_log_posterior(model, dataset, config, indices, params_node, diagnostics)

    return objective


def objective_terms(model, dataset: PreferenceDataset, config: ObjectiveConfig) -> dict:
    """Term-by-term decomposition of the objective at the model's parameters."""
    pts = dataset.points_tensor
    n_obs, k, d = pts.shape
    f_sets = model.log_density(pts.reshape(n_obs * k, d)).reshape(n_obs, k)
    if dataset.kind == "ranking":
        loglik = ranking_log_likelihood_batch(f_sets, dataset.rankings, config.s_lik)
    else:
        loglik = comparison_log_likelihood_batch(f_sets, dataset.winner_indices, config.s_lik)
    rows = np.arange(n_obs)
    prior = log_functional_prior(f_sets[rows, dataset.winner_indices])
    total = float(loglik.sum()) + (prior if config.include_prior else 0.0)
    return {
        "log_likelihood": float(loglik.sum()),
        "log_prior": prior if config.include_prior else 0.0,
        "objective": total,
    }
