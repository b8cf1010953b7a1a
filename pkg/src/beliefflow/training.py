"""Stochastic-gradient ascent on the FS-MAP objective.

Each step draws a mini-batch of observations, evaluates the unnormalized
log posterior (preferential log-likelihood plus the functional prior over
the mini-batch winners, exactly as in the per-step posterior evaluation),
and takes an Adamax or Adam ascent step.  Runs are deterministic given the
seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .preference import LikelihoodDiagnostics, ObjectiveConfig, PreferenceDataset, minibatch_objective

__all__ = ["TrainConfig", "TrainReport", "TrainingAborted", "train"]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int = 4
    learning_rate: float = 3e-4
    weight_decay: float = 1e-6
    optimizer: str = "adamax"
    seed: int = 0
    nan_guard: bool = True
    trace_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        if self.optimizer not in ("adamax", "adam"):
            raise ValueError("optimizer must be 'adamax' or 'adam'")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainReport:
    """Objective trace (thinned), diagnostics, and a parameter checksum."""

    trace_steps: list = field(default_factory=list)
    trace_values: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    final_checksum: str = ""
    iterations: int = 0

    def as_dict(self) -> dict:
        return {
            "trace_steps": list(self.trace_steps),
            "trace_values": list(self.trace_values),
            "diagnostics": dict(self.diagnostics),
            "final_checksum": self.final_checksum,
            "iterations": self.iterations,
        }

    def save_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict()), encoding="utf-8")


class TrainingAborted(RuntimeError):
    """Raised by the nan-guard before parameters can turn non-finite."""

    def __init__(self, step: int, reason: str, diagnostics: dict):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason
        self.diagnostics = diagnostics


def train(model, dataset: PreferenceDataset, objcfg: ObjectiveConfig, cfg: TrainConfig,
          checkpoint_dir=None, progress=None):
    """Run the ascent loop; returns (trained model, report).

    `model` is any density model exposing ``params``, ``with_params`` and
    ``log_density_node``; the flow and the factorized-normal baseline go
    through this exact code path.  `progress`, if given, is called as
    ``progress(step, iterations)`` every trace interval.
    """
    if cfg.batch_size > len(dataset):
        raise ValueError("batch size exceeds dataset size")
    rng = np.random.default_rng(cfg.seed)
    params = model.params.values.copy()
    m1 = np.zeros_like(params)
    m2 = np.zeros_like(params)
    diagnostics = LikelihoodDiagnostics()
    report = TrainReport(iterations=cfg.iterations)
    n = len(dataset)

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    for step in range(cfg.iterations):
        idx = rng.choice(n, size=cfg.batch_size, replace=False)
        objective = minibatch_objective(model, dataset, objcfg, idx, diagnostics)
        try:
            value, grad = ad.value_and_grad(objective, model.params.with_values(params))
        except ad.NonFiniteValueError as err:
            if cfg.nan_guard:
                raise TrainingAborted(step, str(err), diagnostics.as_dict()) from err
            raise
        if cfg.nan_guard and not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingAborted(step, "non-finite objective or gradient", diagnostics.as_dict())

        # minimize the negated objective
        g = -grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * params
        t = step + 1
        if cfg.optimizer == "adamax":
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g
            m2 = np.maximum(cfg.beta2 * m2, np.abs(g))
            params = params - (cfg.learning_rate / (1.0 - cfg.beta1**t)) * m1 / (m2 + cfg.eps)
        else:
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g
            m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g * g
            mhat = m1 / (1.0 - cfg.beta1**t)
            vhat = m2 / (1.0 - cfg.beta2**t)
            params = params - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)

        if step % cfg.trace_every == 0 or step == cfg.iterations - 1:
            report.trace_steps.append(step)
            report.trace_values.append(float(value))
            if progress is not None:
                progress(step, cfg.iterations)
        if checkpoint_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            model.with_params(params).save_checkpoint(checkpoint_dir / "checkpoint.json")

    trained = model.with_params(params)
    report.diagnostics = diagnostics.as_dict()
    report.final_checksum = trained.params.checksum()
    if checkpoint_dir is not None:
        trained.save_checkpoint(checkpoint_dir / "checkpoint.json")
    return trained, report
