"""Simulated random-utility expert, candidate sampling, winner analytics.

The expert ranks a choice set by realized utility f(x) + W(x) with
independent W ~ Exp(s).  Candidate alternatives come from a sampler
(uniform over the box, a diagonal Gaussian, or their mixture), restricted
to the domain box by joint rejection; its density accounts for the
truncation so winner-distribution formulas stay exact.

The limiting winner density for infinitely large choice sets is

    p(x) = exp(s f(x)) lambda(x) / integral exp(s f(x')) lambda(x') dx',

a tempered belief tilted by the candidate density.  For finite k the
winner density is estimated on a grid by Monte Carlo over choice sets,
reusing the same symmetric-sum form as the comparison likelihood.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp, ndtr

from .flows import BoxDomain
from .preference import RankingObservation

__all__ = [
    "RumExpert",
    "CandidateSampler",
    "ChoiceSet",
    "sample_choice_set",
    "respond_ranking",
    "respond_comparison",
    "limit_winner_log_density",
    "kwise_winner_masses_grid",
    "write_grid_csv",
]


@dataclass(frozen=True)
class RumExpert:
    """Decision maker with deterministic utility plus Exp(s) noise.

    `precision` is the rate s of the noise, the reciprocal of its standard
    deviation: larger s means a less noisy expert.
    """

    utility: Callable[[np.ndarray], np.ndarray]
    precision: float

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError("precision must be positive")

    def utilities(self, points: np.ndarray) -> np.ndarray:
        f = np.asarray(self.utility(np.atleast_2d(points)), dtype=np.float64)
        if not np.all(np.isfinite(f)):
            raise ValueError("expert utility is non-finite on given points")
        return f


@dataclass(frozen=True)
class ChoiceSet:
    """k alternatives presented to the expert."""

    points: np.ndarray  # (k, d)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 2:
            raise ValueError("a choice set needs k >= 2 alternatives")
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]


class CandidateSampler:
    """The distribution generating choice-set alternatives.

    A mixture of a uniform density over the domain box (weight 1-w) and a
    diagonal Gaussian (weight w), truncated to the box by joint rejection.
    w = 0 is pure uniform, w = 1 pure Gaussian.
    """

    def __init__(self, domain: BoxDomain, weight: float = 0.0,
                 gaussian_mean=None, gaussian_sd=None):
        if not 0.0 <= weight <= 1.0:
            raise ValueError("mixture weight must be in [0, 1]")
        self.domain = domain
        self.weight = float(weight)
        if weight > 0.0:
            if gaussian_mean is None or gaussian_sd is None:
                raise ValueError("gaussian component needs mean and sd")
            self.gaussian_mean = np.asarray(gaussian_mean, dtype=np.float64)
            self.gaussian_sd = np.asarray(gaussian_sd, dtype=np.float64) * np.ones(domain.dim)
            if self.gaussian_mean.shape != (domain.dim,):
                raise ValueError("gaussian mean dimension mismatch")
            if np.any(self.gaussian_sd <= 0):
                raise ValueError("gaussian sd must be positive")
            lo = (domain.lower - self.gaussian_mean) / self.gaussian_sd
            hi = (domain.upper - self.gaussian_mean) / self.gaussian_sd
            self._gauss_box_mass = float(np.prod(ndtr(hi) - ndtr(lo)))
        else:
            self.gaussian_mean = None
            self.gaussian_sd = None
            self._gauss_box_mass = 0.0
        # mass of the untruncated mixture inside the box
        self._box_mass = self.weight * self._gauss_box_mass + (1.0 - self.weight)

    @classmethod
    def uniform(cls, domain: BoxDomain) -> "CandidateSampler":
        return cls(domain, weight=0.0)

    @classmethod
    def gaussian(cls, domain: BoxDomain, mean, sd) -> "CandidateSampler":
        return cls(domain, weight=1.0, gaussian_mean=mean, gaussian_sd=sd)

    @classmethod
    def mixture(cls, domain: BoxDomain, mean, sd, weight: float = 1.0 / 3.0) -> "CandidateSampler":
        return cls(domain, weight=weight, gaussian_mean=mean, gaussian_sd=sd)

    def log_density(self, x) -> np.ndarray:
        """Normalized log-density of accepted draws; -inf outside the box."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.full(x.shape[0], -np.inf)
        inside = self.domain.contains(x)
        if not inside.any():
            return out
        xi = x[inside]
        uni = -math.log(self.domain.volume)
        if self.weight == 0.0:
            mix = np.full(xi.shape[0], uni)
        else:
            z = (xi - self.gaussian_mean) / self.gaussian_sd
            gauss = (-0.5 * (z**2).sum(axis=1)
                     - 0.5 * xi.shape[1] * math.log(2.0 * math.pi)
                     - np.log(self.gaussian_sd).sum())
            if self.weight == 1.0:
                mix = gauss
            else:
                stacked = np.stack([gauss + math.log(self.weight),
                                    np.full(xi.shape[0], uni + math.log(1.0 - self.weight))])
                mix = logsumexp(stacked, axis=0)
        out[inside] = mix - math.log(self._box_mass)
        return out

    def _propose(self, n: int, rng: np.random.Generator):
        labels = (rng.uniform(size=n) < self.weight) if 0.0 < self.weight else np.zeros(n, dtype=bool)
        if self.weight >= 1.0:
            labels = np.ones(n, dtype=bool)
        pts = self.domain.uniform(n, rng)
        if labels.any():
            g = self.gaussian_mean + self.gaussian_sd * rng.standard_normal((int(labels.sum()), self.domain.dim))
            pts[labels] = g
        return pts, labels

    def sample_labeled(self, n: int, rng: np.random.Generator):
        """Draws plus their mixture-component labels (True = gaussian)."""
        pts, labels = self._propose(n, rng)
        inside = self.domain.contains(pts)
        while not inside.all():
            bad = np.where(~inside)[0]
            pts[bad], labels[bad] = self._propose(bad.size, rng)
            inside = self.domain.contains(pts)
        return pts, labels

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_labeled(n, rng)[0]


def sample_choice_set(sampler: CandidateSampler, k: int, seed: int) -> ChoiceSet:
    """k i.i.d. alternatives from the candidate distribution."""
    if k < 2:
        raise ValueError("need k >= 2")
    rng = np.random.default_rng(seed)
    return ChoiceSet(sampler.sample(k, rng))


def _ranking_for(expert: RumExpert, points: np.ndarray, rng: np.random.Generator):
    f = expert.utilities(points)
    noise = rng.exponential(scale=1.0 / expert.precision, size=f.shape)
    # descending realized utility; stable sort breaks ties by index
    return np.argsort(-(f + noise), kind="stable")


def respond_ranking(expert: RumExpert, choice_set: ChoiceSet, seed: int) -> RankingObservation:
    """The expert's ranking of the choice set, most preferred first."""
    rng = np.random.default_rng(seed)
    order = _ranking_for(expert, choice_set.points, rng)
    return RankingObservation(choice_set.points, tuple(int(i) for i in order))


def respond_comparison(expert: RumExpert, choice_set: ChoiceSet, seed: int) -> int:
    """Index of the alternative the expert picks (the k-wise winner)."""
    rng = np.random.default_rng(seed)
    return int(_ranking_for(expert, choice_set.points, rng)[0])


def limit_winner_log_density(expert: RumExpert, sampler: CandidateSampler, x,
                             seed: int = 0, grid_per_axis: int = 512,
                             importance_draws: int = 100_000) -> np.ndarray:
    """Log of the k -> infinity winner density at points x.

    The normalizing integral is estimated by grid quadrature for
    dimensions <= 2 and by importance sampling with the candidate
    distribution as proposal otherwise.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dom = sampler.domain
    s = expert.precision
    if dom.dim <= 2:
        axes = [np.linspace(dom.lower[i], dom.upper[i], grid_per_axis + 1)[:-1]
                + 0.5 * (dom.upper[i] - dom.lower[i]) / grid_per_axis
                for i in range(dom.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        cell = np.prod((dom.upper - dom.lower) / grid_per_axis)
        log_terms = s * expert.utilities(pts) + sampler.log_density(pts) + math.log(cell)
        log_norm = float(logsumexp(log_terms))
    else:
        rng = np.random.default_rng(seed)
        draws = sampler.sample(importance_draws, rng)
        log_norm = float(logsumexp(s * expert.utilities(draws)) - math.log(importance_draws))
    if not math.isfinite(log_norm):
        raise ArithmeticError("normalizing integral of the limit winner density is degenerate")
    return s * expert.utilities(x) + sampler.log_density(x) - log_norm


def kwise_winner_masses_grid(expert: RumExpert, sampler: CandidateSampler, k: int,
                             grid: np.ndarray, mc_draws: int = 10_000,
                             seed: int = 0) -> np.ndarray:
    """Monte-Carlo estimate of the k-wise winner distribution on a grid.

    Returns per-grid-point probability masses (they sum to one); divide by
    the cell volume for densities.  For each grid point x the winning
    probability against a random choice set is averaged over `mc_draws`
    sampled competitor sets, exploiting that the symmetric sums of the
    competitors' exponentiated utilities do not depend on x.
    """
    if k < 2:
        raise ValueError("need k >= 2")
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    rng = np.random.default_rng(seed)
    s = expert.precision

    competitors = sampler.sample(mc_draws * (k - 1), rng).reshape(mc_draws, k - 1, -1)
    f_comp = expert.utilities(competitors.reshape(mc_draws * (k - 1), -1)).reshape(mc_draws, k - 1)
    m_comp = f_comp.max(axis=1)  # (mc,)
    u = np.exp(s * (f_comp - m_comp[:, None]))  # in (0, 1]

    # symmetric sums e_l(u) per draw, l = 0..k-1
    esums = np.zeros((k, mc_draws))
    esums[0] = 1.0
    for j in range(k - 1):
        esums[1 : j + 2] += u[:, j] * esums[0 : j + 1]

    f_grid = expert.utilities(grid)
    lam_grid = np.exp(sampler.log_density(grid))
    inv_l = 1.0 / (np.arange(k) + 1.0)

    win_prob = np.empty(grid.shape[0])
    for i, fx in enumerate(f_grid):
        t = m_comp - fx
        m_big = np.maximum(t, 0.0)
        acc = np.zeros(mc_draws)
        for l in range(k):
            acc += ((-1.0) ** l) * esums[l] * np.exp(s * (l * t - (l + 1) * m_big)) * inv_l[l]
        win_prob[i] = acc.mean()
    masses = lam_grid * np.maximum(win_prob, 0.0)
    total = masses.sum()
    if not (math.isfinite(total) and total > 0):
        raise ArithmeticError("winner-density estimate degenerated to zero mass")
    return masses / total


def write_grid_csv(path, grid: np.ndarray, values: np.ndarray, value_name: str = "density") -> None:
    """Write grid coordinates plus a value column as CSV."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(grid.shape[1])] + [value_name])
        for row, v in zip(grid.tolist(), np.asarray(values).tolist()):
            writer.writerow(row + [v])
