"""End-to-end experiment harness: simulate an expert, fit, evaluate.

A replicate generates a ranking dataset from the simulated expert
(utility = target log-density, Exp(s_true) noise, candidates from a
uniform/Gaussian mixture), trains the requested density model with the
FS-MAP objective, and scores held-out likelihood, Wasserstein distance and
MMTV against fresh target samples.  Replicates are deterministic given
their seed; crashed replicates are recorded and excluded from aggregates.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .flows import BoxDomain, FlowConfig, FlowModel
from .metrics import heldout_loglik, mmtv, wasserstein
from .preference import ObjectiveConfig, PreferenceDataset, RankingObservation
from .rum import CandidateSampler
from .targets import TargetDensity, make_target
from .training import TrainConfig, TrainingAborted, train

__all__ = [
    "ExperimentSpec",
    "FactorizedNormalModel",
    "candidate_sampler_for",
    "generate_dataset",
    "build_model",
    "run_replicate",
    "run_experiment",
    "run_ablation",
    "density_grid",
    "export_density_grid",
    "marginal_histograms",
    "export_marginals",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("target", "model", "n", "k", "s_true", "s_lik", "w", "seed",
                  "loglik", "wasserstein", "mmtv")


def subseed(seed: int, stream: int) -> int:
    """Deterministic derived seed for an independent random stream."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one experiment."""

    target: str
    n: int
    k: int = 5
    s_true: float = 1.0
    s_lik: float = 1.0
    lambda_weight: float = 1.0 / 3.0
    model: str = "flow"  # | "factorized-normal"
    prior: bool = True
    flow: FlowConfig | None = None  # None = default architecture for the dimension
    train: TrainConfig = TrainConfig(iterations=12_000)
    seeds: tuple = (1, 2, 3, 4, 5)
    heldout_n: int = 200
    metric_samples: int = 5000
    wasserstein_pair_size: int = 512
    wasserstein_resamples: int = 4

    def __post_init__(self):
        if self.n < 1 or self.k < 2:
            raise ValueError("need n >= 1 and k >= 2")
        if self.model not in ("flow", "factorized-normal"):
            raise ValueError("model must be 'flow' or 'factorized-normal'")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("replicate seeds must be distinct")

    def as_dict(self) -> dict:
        d = {
            "target": self.target, "n": self.n, "k": self.k,
            "s_true": self.s_true, "s_lik": self.s_lik,
            "lambda_weight": self.lambda_weight, "model": self.model,
            "prior": self.prior,
            "flow": self.flow.as_dict() if self.flow else None,
            "train": self.train.as_dict(),
            "seeds": list(self.seeds), "heldout_n": self.heldout_n,
            "metric_samples": self.metric_samples,
            "wasserstein_pair_size": self.wasserstein_pair_size,
            "wasserstein_resamples": self.wasserstein_resamples,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if d.get("flow"):
            d["flow"] = FlowConfig.from_dict(d["flow"])
        d["train"] = TrainConfig(**d["train"])
        d["seeds"] = tuple(d["seeds"])
        return cls(**d)


class FactorizedNormalModel:
    """Per-dimension normal baseline, trained with the same objective.

    Parameterized by means and log standard deviations; only the density
    family differs from the flow.
    """

    def __init__(self, domain: BoxDomain):
        self.domain = domain
        d = domain.dim
        segments = {"mean": slice(0, d), "log_sd": slice(d, 2 * d)}
        values = np.concatenate([domain.center, np.log(domain.halfwidth / 2.0)])
        self.params = ad.ParamVector(values, segments)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def with_params(self, values) -> "FactorizedNormalModel":
        clone = FactorizedNormalModel.__new__(FactorizedNormalModel)
        clone.domain = self.domain
        clone.params = self.params.with_values(np.asarray(values, dtype=np.float64))
        return clone

    def _core(self, p, x):
        d = self.dim
        if isinstance(p, ad.Node):
            mean, log_sd = p[slice(0, d)], p[slice(d, 2 * d)]
        else:
            mean, log_sd = p[:d], p[d:]
        z = (x - mean) * ad.exp(-log_sd)
        return (-0.5 * d * np.log(2.0 * np.pi)
                - ad.asum(log_sd) - 0.5 * ad.asum(z * z, axis=1))

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._core(self.params.values, x)

    def log_density_node(self, params_node, x):
        return self._core(params_node, np.atleast_2d(x))

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        mean = self.params.segment("mean")
        sd = np.exp(self.params.segment("log_sd"))
        return mean + sd * rng.standard_normal((n, self.dim))


def candidate_sampler_for(target: TargetDensity, weight: float) -> CandidateSampler:
    """The mixture candidate distribution used in the simulations.

    The Gaussian component sits on the target mean with a diagonal sd of
    one sixth of the box halfwidth, so +-3 sd spans half the box.
    """
    if weight == 0.0:
        return CandidateSampler.uniform(target.domain)
    sd = target.domain.halfwidth / 6.0
    return CandidateSampler(target.domain, weight=weight,
                            gaussian_mean=target.mean, gaussian_sd=sd)


def generate_dataset(target: TargetDensity, sampler: CandidateSampler, k: int, n: int,
                     s_true: float, seed: int, path=None) -> PreferenceDataset:
    """n k-wise rankings from the simulated expert; optionally persisted."""
    rng = np.random.default_rng(seed)
    pts = sampler.sample(n * k, rng).reshape(n, k, target.dim)
    f = target.log_density(pts.reshape(n * k, target.dim)).reshape(n, k)
    noise = rng.exponential(scale=1.0 / s_true, size=(n, k))
    orders = np.argsort(-(f + noise), axis=1, kind="stable")
    observations = [RankingObservation(pts[i], tuple(int(j) for j in orders[i])) for i in range(n)]
    dataset = PreferenceDataset(observations)
    if path is not None:
        try:
            dataset.to_jsonl(path)
        except OSError as err:
            raise OSError(f"failed to write dataset to {path}: {err}") from err
    return dataset


def build_model(spec: ExperimentSpec, target: TargetDensity, seed: int):
    if spec.model == "factorized-normal":
        return FactorizedNormalModel(target.domain)
    config = spec.flow or FlowConfig.default_for_dim(target.dim)
    return FlowModel(target.domain, config, seed=seed)


def run_replicate(spec: ExperimentSpec, seed: int, out_dir=None) -> dict:
    """One seeded replicate; returns a metrics row (or a crash record)."""
    target = make_target(spec.target)
    sampler = candidate_sampler_for(target, spec.lambda_weight)
    out_dir = Path(out_dir) if out_dir is not None else None

    data_path = out_dir / f"data_seed{seed}.jsonl" if out_dir else None
    dataset = generate_dataset(target, sampler, spec.k, spec.n, spec.s_true,
                               subseed(seed, 0), path=data_path)
    model = build_model(spec, target, seed=subseed(seed, 1))
    objcfg = ObjectiveConfig(s_lik=spec.s_lik, include_prior=spec.prior)
    traincfg = replace(spec.train, seed=subseed(seed, 2))

    row = {
        "target": spec.target, "model": spec.model, "n": spec.n, "k": spec.k,
        "s_true": spec.s_true, "s_lik": spec.s_lik, "w": spec.lambda_weight,
        "seed": seed,
    }
    try:
        trained, report = train(model, dataset, objcfg, traincfg)
    except TrainingAborted as err:
        row.update({"status": "crashed", "error": str(err)})
        return row

    if out_dir:
        if hasattr(trained, "save_checkpoint"):
            trained.save_checkpoint(out_dir / f"model_seed{seed}.json")
        report.save_json(out_dir / f"train_report_seed{seed}.json")

    heldout = generate_dataset(target, sampler, spec.k, spec.heldout_n, spec.s_true,
                               subseed(seed, 3))
    m = spec.metric_samples
    model_samples = trained.sample(m, subseed(seed, 4))
    target_samples = target.sample(m, subseed(seed, 5))
    row.update({
        "status": "ok",
        "loglik": heldout_loglik(trained, heldout, spec.s_lik),
        "wasserstein": wasserstein(model_samples, target_samples,
                                   pair_size=spec.wasserstein_pair_size,
                                   resamples=spec.wasserstein_resamples,
                                   seed=subseed(seed, 6)),
        "mmtv": mmtv(model_samples, target_samples),
        "diagnostics": report.diagnostics,
    })
    return row


def _replicate_worker(payload):
    spec_dict, seed, out_dir = payload
    return run_replicate(ExperimentSpec.from_dict(spec_dict), seed, out_dir)


def _aggregate(rows: list) -> dict:
    ok = [r for r in rows if r.get("status") == "ok"]
    agg = {"replicates": len(rows), "completed": len(ok),
           "crashed_seeds": [r["seed"] for r in rows if r.get("status") != "ok"]}
    for key in ("loglik", "wasserstein", "mmtv"):
        if ok:
            vals = np.array([r[key] for r in ok])
            agg[key] = {"mean": float(vals.mean()),
                        "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                        "median": float(np.median(vals))}
        else:
            agg[key] = None
    return agg


def run_experiment(spec: ExperimentSpec, out_dir=None, workers: int = 1) -> dict:
    """All replicates of a spec plus their aggregate (mean, sd, median).

    Writes metrics.csv (completed replicates, one row per seed, in seed
    order), spec.json and aggregate.json when out_dir is given.  Replicates
    can run in parallel worker processes; results are assembled in seed
    order either way.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "spec.json").write_text(json.dumps(spec.as_dict(), indent=2), encoding="utf-8")

    payloads = [(spec.as_dict(), seed, str(out_dir) if out_dir else None) for seed in spec.seeds]
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replicate_worker, payloads))
    else:
        rows = [run_replicate(spec, seed, out_dir) for seed in spec.seeds]

    result = {"spec": spec.as_dict(), "rows": rows, "aggregate": _aggregate(rows)}
    if out_dir:
        write_metrics_csv(out_dir / "metrics.csv", rows)
        (out_dir / "aggregate.json").write_text(json.dumps(result["aggregate"], indent=2),
                                                encoding="utf-8")
    return result


def write_metrics_csv(path, rows: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            if r.get("status") != "ok":
                continue
            writer.writerow([r[c] for c in METRIC_COLUMNS])


ABLATION_FIELDS = {"k": "k", "n": "n", "s": "s_true", "w": "lambda_weight"}


def run_ablation(base_spec: ExperimentSpec, param: str, values, out_dir=None,
                 workers: int = 1) -> dict:
    """Grid of experiments over one axis (k, n, s or w).

    Returns per-cell results and writes an ablation.csv keyed by the cell
    value with aggregate metric columns.
    """
    if param not in ABLATION_FIELDS:
        raise ValueError(f"ablation parameter must be one of {tuple(ABLATION_FIELDS)}")
    field_name = ABLATION_FIELDS[param]
    out_dir = Path(out_dir) if out_dir is not None else None
    cells = []
    for value in values:
        cell_spec = replace(base_spec, **{field_name: type(getattr(base_spec, field_name))(value)})
        cell_dir = out_dir / f"{param}={value}" if out_dir else None
        cells.append({"param": param, "value": value,
                      "result": run_experiment(cell_spec, cell_dir, workers=workers)})
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([param, "completed", "loglik_mean", "loglik_sd",
                             "wasserstein_mean", "wasserstein_sd", "wasserstein_median",
                             "mmtv_mean", "mmtv_sd"])
            for cell in cells:
                agg = cell["result"]["aggregate"]
                writer.writerow([
                    cell["value"], agg["completed"],
                    agg["loglik"]["mean"], agg["loglik"]["sd"],
                    agg["wasserstein"]["mean"], agg["wasserstein"]["sd"],
                    agg["wasserstein"]["median"],
                    agg["mmtv"]["mean"], agg["mmtv"]["sd"],
                ])
    return {"param": param, "cells": cells}


def density_grid(model, axes=(0, 1), resolution: int = 64) -> dict:
    """Density values on a 2-d grid over the domain box.

    For models of more than two dimensions the remaining coordinates are
    held at the box center (an exact density slice, not a marginal).
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    i, j = axes
    dom = model.domain
    xs = np.linspace(dom.lower[i], dom.upper[i], resolution)
    ys = np.linspace(dom.lower[j], dom.upper[j], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.tile(dom.center, (resolution * resolution, 1))
    pts[:, i] = gx.ravel()
    pts[:, j] = gy.ravel()
    values = np.exp(model.log_density(pts))
    return {
        "axes": [int(i), int(j)],
        "x": xs.tolist(),
        "y": ys.tolist(),
        "density": values.reshape(resolution, resolution).tolist(),
    }


def export_density_grid(model, path, axes=(0, 1), resolution: int = 64) -> None:
    """CSV export of the 2-d density grid (coordinates plus density)."""
    grid = density_grid(model, axes=axes, resolution=resolution)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    i, j = grid["axes"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}", f"x{j}", "density"])
        for a, xv in enumerate(grid["x"]):
            for b, yv in enumerate(grid["y"]):
                writer.writerow([xv, yv, grid["density"][a][b]])


def marginal_histograms(model, resolution: int = 64, n_samples: int = 4096,
                        seed: int = 0) -> dict:
    """Per-dimension marginal densities estimated from model samples."""
    samples = model.sample(n_samples, seed)
    dom = model.domain
    out = {"dims": [], "resolution": resolution}
    for i in range(dom.dim):
        counts, edges = np.histogram(samples[:, i], bins=resolution,
                                     range=(dom.lower[i], dom.upper[i]))
        width = edges[1] - edges[0]
        density = counts / (n_samples * width)
        out["dims"].append({
            "dim": i,
            "centers": (0.5 * (edges[:-1] + edges[1:])).tolist(),
            "density": density.tolist(),
        })
    return out


def export_marginals(model, path, resolution: int = 64, n_samples: int = 4096,
                     seed: int = 0) -> None:
    """CSV export of all 1-d marginal histograms."""
    data = marginal_histograms(model, resolution, n_samples, seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "center", "density"])
        for block in data["dims"]:
            for c, d in zip(block["centers"], block["density"]):
                writer.writerow([block["dim"], c, d])
