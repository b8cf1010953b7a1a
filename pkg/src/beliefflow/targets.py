"""Synthetic ground-truth belief densities and their samplers.

Log-densities are implemented exactly as specified (unnormalized), so they
can serve both as simulated-expert utilities and as references when
scoring estimates.  Samplers draw from the normalized densities and always
return points inside the domain box, resampling any draw that falls
outside (never clipping).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .flows import BoxDomain

__all__ = ["TargetDensity", "TARGET_NAMES", "make_target", "write_samples_csv"]


@dataclass(frozen=True)
class TargetDensity:
    """A named target: unnormalized log-density plus an exact sampler."""

    name: str
    domain: BoxDomain
    sampler_kind: str  # exact | rejection | ancestral
    _log_density: Callable
    _sample: Callable
    mean: np.ndarray

    @property
    def dim(self) -> int:
        return self.domain.dim

    def log_density(self, x) -> np.ndarray:
        """Unnormalized log-density, vectorized over rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"{self.name} expects dimension {self.dim}")
        return self._log_density(x)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """n i.i.d. draws from the normalized density, inside the domain."""
        if n < 1:
            raise ValueError("need n >= 1")
        rng = np.random.default_rng(seed)
        out = self._sample(n, rng)
        inside = self.domain.contains(out)
        guard = 0
        while not inside.all():  # replace the rare out-of-box draws
            bad = np.where(~inside)[0]
            out[bad] = self._sample(bad.size, rng)
            inside = self.domain.contains(out)
            guard += 1
            if guard > 10_000:
                raise RuntimeError(f"{self.name}: sampler cannot stay inside the domain")
        return out


def _onemoon() -> TargetDensity:
    domain = BoxDomain(np.array([-4.0, -3.0]), np.array([4.0, 3.0]))

    def log_density(x):
        radial = (np.linalg.norm(x, axis=1) - 2.0) / 0.2
        offset = (x[:, 0] + 2.0) / 0.3
        return -0.5 * radial**2 - 0.5 * offset**2

    def sample(n, rng):
        # Rejection from uniform with envelope constant 1 (the density's max).
        out = np.empty((n, 2))
        filled = 0
        attempts = 0
        batch = max(8192, n)
        while filled < n:
            attempts += 1
            if attempts > 10_000:
                rate = filled / (attempts * batch)
                raise RuntimeError(
                    f"Onemoon2D rejection sampler exceeded its retry budget "
                    f"(acceptance rate {rate:.2e})"
                )
            proposals = domain.uniform(batch, rng)
            accept = rng.uniform(size=batch) < np.exp(log_density(proposals))
            got = proposals[accept]
            take = min(n - filled, got.shape[0])
            out[filled : filled + take] = got[:take]
            filled += take
        return out

    # The moon has no closed-form mean; integrate on a fine grid once.
    xs = np.linspace(-4, 4, 801)
    ys = np.linspace(-3, 3, 601)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    w = np.exp(log_density(pts))
    mean = (pts * w[:, None]).sum(axis=0) / w.sum()

    return TargetDensity("Onemoon2D", domain, "rejection", log_density, sample, mean)


def _gaussian6d() -> TargetDensity:
    d = 6
    mu = 2.0 * np.array([(-1.0) ** i for i in range(1, d + 1)])
    sigma = np.full((d, d), 0.4)
    np.fill_diagonal(sigma, 0.6)
    chol = np.linalg.cholesky(sigma)
    factor = cho_factor(sigma, lower=True)
    domain = BoxDomain.cube(d, -6.0, 6.0)

    def log_density(x):
        delta = x - mu
        return -0.5 * np.einsum("ij,ij->i", delta, cho_solve(factor, delta.T).T)

    def sample(n, rng):
        return mu + rng.standard_normal((n, d)) @ chol.T

    return TargetDensity("Gaussian6D", domain, "exact", log_density, sample, mu)


def _mvn_logpdf_factory(mu, sigma):
    d = mu.size
    chol = np.linalg.cholesky(sigma)
    factor = cho_factor(sigma, lower=True)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    const = -0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet

    def logpdf(x):
        delta = x - mu
        return const - 0.5 * np.einsum("ij,ij->i", delta, cho_solve(factor, delta.T).T)

    return logpdf, chol


def _twogaussians(d: int) -> TargetDensity:
    rho, var = 0.9, 1.0
    mu = 3.0 * np.ones(d)
    sigma1 = var * ((1.0 - rho) * np.eye(d) + rho * np.ones((d, d)))
    signs = np.array([(-1.0) ** i for i in range(d)])
    sigma2 = sigma1 * np.outer(signs, signs)  # flips off-diagonals to (-1)^|i-j| rho
    logpdf1, chol1 = _mvn_logpdf_factory(mu, sigma1)
    logpdf2, chol2 = _mvn_logpdf_factory(mu, sigma2)
    domain = BoxDomain.cube(d, -3.0, 9.0)

    def log_density(x):
        a = np.log(0.5) + logpdf1(x)
        b = np.log(0.5) + logpdf2(x)
        hi = np.maximum(a, b)
        return hi + np.log(np.exp(a - hi) + np.exp(b - hi))

    def sample(n, rng):
        z = rng.standard_normal((n, d))
        pick = rng.uniform(size=n) < 0.5
        out = np.where(pick[:, None], z @ chol1.T, z @ chol2.T)
        return mu + out

    return TargetDensity(f"Twogaussians{d}D", domain, "exact", log_density, sample, mu)


def _funnel10d() -> TargetDensity:
    d, a, b = 10, 3.0, 0.25
    lower = np.full(d, -20.0)
    upper = np.full(d, 22.0)
    lower[0], upper[0] = -25.0, 5.0
    domain = BoxDomain(lower, upper)

    def log_density(x):
        x0 = x[:, 0]
        rest = x[:, 1:]
        scale = np.exp(2.0 * b * x0)
        penal = np.log(2.0 * np.pi * scale)[:, None] + (rest - 1.0) ** 2 / scale[:, None]
        return -((x0 - 1.0) ** 2) / a**2 - penal.sum(axis=1)

    # Integrating the non-funnel coordinates out leaves a Gaussian in x0;
    # completing the square gives its mean and variance below (validated
    # against an MCMC oracle in the test suite).
    m0 = 1.0 - a**2 * (d - 1) * b / 2.0
    var0 = a**2 / 2.0

    def sample(n, rng):
        x0 = m0 + np.sqrt(var0) * rng.standard_normal(n)
        cond_sd = np.sqrt(np.exp(2.0 * b * x0) / 2.0)
        rest = 1.0 + cond_sd[:, None] * rng.standard_normal((n, d - 1))
        return np.column_stack([x0, rest])

    mean = np.ones(d)
    mean[0] = m0
    return TargetDensity("Funnel10D", domain, "ancestral", log_density, sample, mean)


_FACTORIES = {
    "Onemoon2D": _onemoon,
    "Gaussian6D": _gaussian6d,
    "Twogaussians10D": lambda: _twogaussians(10),
    "Twogaussians20D": lambda: _twogaussians(20),
    "Funnel10D": _funnel10d,
}

TARGET_NAMES = tuple(_FACTORIES)


def make_target(name: str) -> TargetDensity:
    """Construct a target by name (see TARGET_NAMES)."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown target {name!r}; choose from {TARGET_NAMES}") from None
    return factory()


def write_samples_csv(target: TargetDensity, n: int, seed: int, path) -> None:
    """Dump target samples as CSV with header x0..x{d-1}."""
    samples = target.sample(n, seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(target.dim)])
        writer.writerows(samples.tolist())
