"""Session persistence: one directory per session, atomic writes.

Layout under the data root:

    sessions/<id>/config.json      session configuration
    sessions/<id>/data.jsonl       preference dataset (shared JSONL format)
    sessions/<id>/queries.json     pending (not yet answered) choice sets
    sessions/<id>/checkpoints/current.json   last trained flow

All writes go through a temp-file-plus-rename so a crash never leaves a
torn file behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..preference import DATASET_FORMAT, PreferenceDataset, RankingObservation

__all__ = ["SessionConfig", "SessionStorage", "atomic_write_text"]


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)


@dataclass(frozen=True)
class SessionConfig:
    id: str
    dim: int
    names: tuple
    lower: tuple
    upper: tuple
    k: int
    lambda_weight: float
    s_lik: float

    def as_dict(self) -> dict:
        return {
            "id": self.id, "dim": self.dim, "names": list(self.names),
            "lower": list(self.lower), "upper": list(self.upper), "k": self.k,
            "lambda_weight": self.lambda_weight, "s_lik": self.s_lik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        return cls(
            id=d["id"], dim=int(d["dim"]), names=tuple(d["names"]),
            lower=tuple(d["lower"]), upper=tuple(d["upper"]), k=int(d["k"]),
            lambda_weight=float(d["lambda_weight"]), s_lik=float(d["s_lik"]),
        )


class SessionStorage:
    """Files of one session."""

    def __init__(self, root: Path, session_id: str):
        self.dir = Path(root) / "sessions" / session_id
        self.config_path = self.dir / "config.json"
        self.data_path = self.dir / "data.jsonl"
        self.queries_path = self.dir / "queries.json"
        self.checkpoint_dir = self.dir / "checkpoints"
        self.checkpoint_path = self.checkpoint_dir / "current.json"

    def exists(self) -> bool:
        return self.config_path.exists()

    # -- config -----------------------------------------------------------
    def write_config(self, config: SessionConfig) -> None:
        atomic_write_text(self.config_path, json.dumps(config.as_dict(), indent=2))

    def read_config(self) -> SessionConfig:
        return SessionConfig.from_dict(json.loads(self.config_path.read_text(encoding="utf-8")))

    # -- dataset ------------------------------------------------------------
    def write_observations(self, config: SessionConfig, observations: list) -> None:
        lines = [json.dumps({"format": DATASET_FORMAT, "dim": config.dim, "k": config.k})]
        for obs in observations:
            lines.append(json.dumps({"points": obs.points.tolist(), "ranking": list(obs.ranking)}))
        atomic_write_text(self.data_path, "\n".join(lines) + "\n")

    def read_observations(self) -> list:
        if not self.data_path.exists():
            return []
        with self.data_path.open("r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != DATASET_FORMAT:
                raise ValueError(f"unsupported dataset format in {self.data_path}")
            out = []
            for line in fh:
                line = line.strip()
                if line:
                    row = json.loads(line)
                    out.append(RankingObservation(np.asarray(row["points"]), tuple(row["ranking"])))
        return out

    # -- pending queries ---------------------------------------------------
    def write_queries(self, pending: dict, answered: set) -> None:
        payload = {
            "pending": {qid: points.tolist() for qid, points in pending.items()},
            "answered": sorted(answered),
        }
        atomic_write_text(self.queries_path, json.dumps(payload))

    def read_queries(self) -> tuple[dict, set]:
        if not self.queries_path.exists():
            return {}, set()
        raw = json.loads(self.queries_path.read_text(encoding="utf-8"))
        pending = {qid: np.asarray(points, dtype=np.float64)
                   for qid, points in raw.get("pending", {}).items()}
        return pending, set(raw.get("answered", []))

    def dataset(self) -> PreferenceDataset | None:
        obs = self.read_observations()
        return PreferenceDataset(obs) if obs else None
