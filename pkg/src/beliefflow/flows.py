"""Invertible flow models with closed-form log-density and exact sampling.

A model is a fixed affine whitening map (domain box onto [-B, B]^d)
followed by a stack of coupling layers with alternating masks.  Couplings
are either affine (scale/shift, scale bounded through a tanh cap) or
monotone rational-quadratic splines that equal the identity outside the
tail bound.  Conditioner networks are tanh MLPs whose final layer is
zero-initialized, so a freshly built model is exactly the identity map and
its log-density equals the base (standard normal) log-density.

The same transform code runs on plain numpy arrays (sampling, evaluation)
and on autodiff nodes (training), via the dispatching primitives in
:mod:`beliefflow.autodiff`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

__all__ = ["BoxDomain", "FlowConfig", "FlowModel", "CHECKPOINT_FORMAT"]

CHECKPOINT_FORMAT = "flow-checkpoint-v1"

_MIN_BIN = 1e-3
_MIN_DERIVATIVE = 1e-3
# softplus(x + _DERIV_SHIFT) + _MIN_DERIVATIVE == 1 at x == 0 (identity init)
_DERIV_SHIFT = float(np.log(np.expm1(1.0 - _MIN_DERIVATIVE)))


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box, the compact domain the density lives on."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-d and of equal length")
        if not np.all(lower < upper):
            raise ValueError("domain requires lower < upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def as_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxDomain":
        return cls(np.asarray(data["lower"]), np.asarray(data["upper"]))

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "BoxDomain":
        return cls(np.full(dim, lo), np.full(dim, hi))


@dataclass(frozen=True)
class FlowConfig:
    """Architecture of a flow model.

    kind "affine" is the RealNVP-style coupling used for 2-d problems,
    "spline" the rational-quadratic coupling for higher dimensions.
    `hidden` are the conditioner's hidden-layer widths.
    """

    kind: str = "affine"
    num_layers: int = 8
    hidden: tuple = (32, 32, 32, 32)
    scale_cap: float = 4.0
    bins: int = 8
    tail_bound: float = 5.0

    def __post_init__(self):
        if self.kind not in ("affine", "spline"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.num_layers < 1:
            raise ValueError("need at least one coupling layer")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def default_for_dim(cls, dim: int) -> "FlowConfig":
        if dim <= 2:
            return cls(kind="affine", num_layers=8, hidden=(32, 32, 32, 32))
        return cls(kind="spline", num_layers=8, hidden=(128, 128))

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_layers": self.num_layers,
            "hidden": list(self.hidden),
            "scale_cap": self.scale_cap,
            "bins": self.bins,
            "tail_bound": self.tail_bound,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlowConfig":
        return cls(
            kind=data["kind"],
            num_layers=int(data["num_layers"]),
            hidden=tuple(data["hidden"]),
            scale_cap=float(data["scale_cap"]),
            bins=int(data["bins"]),
            tail_bound=float(data["tail_bound"]),
        )


class _Layer:
    """Static structure of one coupling layer (no parameters)."""

    def __init__(self, mask: np.ndarray, widths: list):
        self.mask = mask  # True = pass-through coordinate
        self.in_idx = np.where(mask)[0]
        self.out_idx = np.where(~mask)[0]
        self.widths = widths  # conditioner layer widths, input to output
        d = mask.size
        self.keep = mask.astype(np.float64)
        # scatter matrix: (n_out, d) placing transformed coords back
        scatter = np.zeros((self.out_idx.size, d))
        scatter[np.arange(self.out_idx.size), self.out_idx] = 1.0
        self.scatter = scatter


def _alternating_mask(dim: int, parity: int) -> np.ndarray:
    if dim == 1:
        # Single coordinate: transform it unconditionally each layer.
        return np.zeros(1, dtype=bool)
    return (np.arange(dim) + parity) % 2 == 0


class FlowModel:
    """Coupling-based normalizing flow over a box domain.

    Immutable after construction; parameter updates go through
    :meth:`with_params`, which returns a new model sharing the structure.
    """

    def __init__(self, domain: BoxDomain, config: FlowConfig | None = None, seed: int = 0):
        self.domain = domain
        self.config = config or FlowConfig.default_for_dim(domain.dim)
        d = domain.dim
        cfg = self.config

        self._layers = []
        shapes: dict[str, tuple] = {}
        for l in range(cfg.num_layers):
            mask = _alternating_mask(d, l % 2)
            n_in = int(mask.sum())
            n_out = d - n_in
            if cfg.kind == "affine":
                out_width = 2 * n_out
            else:
                out_width = n_out * (3 * cfg.bins - 1)
            widths = [n_in, *cfg.hidden, out_width]
            layer = _Layer(mask, widths)
            self._layers.append(layer)
            for i in range(len(widths) - 1):
                shapes[f"l{l}.W{i}"] = (widths[i], widths[i + 1])
                shapes[f"l{l}.b{i}"] = (widths[i + 1],)
        self._shapes = shapes

        segments: dict[str, slice] = {}
        cursor = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            segments[name] = slice(cursor, cursor + size)
            cursor += size

        rng = np.random.default_rng(seed)
        values = np.zeros(cursor)
        for l in range(cfg.num_layers):
            widths = self._layers[l].widths
            n_mats = len(widths) - 1
            for i in range(n_mats - 1):  # final layer stays zero: identity init
                fan_in = max(widths[i], 1)
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shapes[f"l{l}.W{i}"])
                values[segments[f"l{l}.W{i}"]] = w.ravel()
        self.params = ad.ParamVector(values, segments)

        # whitening: box -> [-B, B]^d, a fixed affine map
        self._whiten_scale = cfg.tail_bound / domain.halfwidth
        self._whiten_center = domain.center
        self._whiten_logdet = float(np.log(self._whiten_scale).sum())

        k = cfg.bins
        self._cum = (np.tril(np.ones((k + 1, k)), -1)).T  # (k, k+1): row i has 1s after col i
        self._deriv_place = np.zeros((k - 1, k + 1))
        self._deriv_place[np.arange(k - 1), np.arange(1, k)] = 1.0
        self._deriv_bound = np.zeros(k + 1)
        self._deriv_bound[0] = 1.0
        self._deriv_bound[-1] = 1.0

    # -- parameters ------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.domain.dim

    def with_params(self, values: np.ndarray) -> "FlowModel":
        clone = copy.copy(self)
        clone.params = self.params.with_values(np.asarray(values, dtype=np.float64))
        return clone

    def _segments(self, p):
        segs = self.params.segments
        shapes = self._shapes
        if isinstance(p, ad.Node):
            return {name: ad.reshape(p[segs[name]], shapes[name]) for name in segs}
        return {name: p[segs[name]].reshape(shapes[name]) for name in segs}

    # -- conditioner -------------------------------------------------------
    def _conditioner(self, tensors, l: int, x_in):
        widths = self._layers[l].widths
        h = x_in
        n_mats = len(widths) - 1
        for i in range(n_mats):
            h = ad.matmul(h, tensors[f"l{l}.W{i}"]) + tensors[f"l{l}.b{i}"]
            if i < n_mats - 1:
                h = ad.tanh(h)
        return h

    # -- coupling transforms ------------------------------------------------
    def _affine_split(self, tensors, l: int, cond_in):
        layer = self._layers[l]
        n_out = layer.out_idx.size
        raw = self._conditioner(tensors, l, cond_in)
        scale = self.config.scale_cap * ad.tanh(raw[:, :n_out])
        shift = raw[:, n_out:]
        return scale, shift

    def _couple_inverse(self, tensors, l: int, h):
        layer = self._layers[l]
        x_in = h[:, layer.in_idx]
        x_out = h[:, layer.out_idx]
        if self.config.kind == "affine":
            scale, shift = self._affine_split(tensors, l, x_in)
            z_out = (x_out - shift) * ad.exp(-scale)
            ld = -ad.asum(scale, axis=1)
        else:
            z_out, ld = self._spline(tensors, l, x_in, x_out, inverse=True)
        new_h = h * layer.keep + ad.matmul(z_out, layer.scatter)
        return new_h, ld

    def _couple_forward(self, tensors, l: int, h):
        layer = self._layers[l]
        z_in = h[:, layer.in_idx]
        z_out = h[:, layer.out_idx]
        if self.config.kind == "affine":
            scale, shift = self._affine_split(tensors, l, z_in)
            x_out = z_out * ad.exp(scale) + shift
        else:
            x_out, _ = self._spline(tensors, l, z_in, z_out, inverse=False)
        return h * layer.keep + ad.matmul(x_out, layer.scatter)

    def _spline(self, tensors, l: int, cond_in, coords, inverse: bool):
        """Monotone rational-quadratic spline on [-B, B], identity outside."""
        cfg = self.config
        k, bound = cfg.bins, cfg.tail_bound
        layer = self._layers[l]
        n_out = layer.out_idx.size
        n_rows = ad.value_of(coords).shape[0] * n_out

        raw = self._conditioner(tensors, l, cond_in)
        raw = ad.reshape(raw, (n_rows, 3 * k - 1))
        x = ad.reshape(coords, (n_rows,))
        xv = ad.value_of(x)
        inside = np.abs(xv) < bound
        xs = ad.where(inside, x, 0.0)

        def normalized_knots(block):
            m = ad.amax(block, axis=1, keepdims=True)
            e = ad.exp(block - m)
            probs = e / ad.asum(e, axis=1, keepdims=True)
            lengths = _MIN_BIN + (1.0 - _MIN_BIN * k) * probs
            knots = -bound + 2.0 * bound * ad.matmul(lengths, self._cum)
            return lengths * (2.0 * bound), knots

        widths, knots_x = normalized_knots(raw[:, :k])
        heights, knots_y = normalized_knots(raw[:, k : 2 * k])
        inner = _MIN_DERIVATIVE + ad.softplus(raw[:, 2 * k :] + _DERIV_SHIFT)
        derivs = ad.matmul(inner, self._deriv_place) + self._deriv_bound

        ref = knots_y if inverse else knots_x
        idx = np.clip((ad.value_of(xs)[:, None] >= ad.value_of(ref)).sum(axis=1) - 1, 0, k - 1)
        rows = np.arange(n_rows)

        wk = widths[rows, idx]
        hk = heights[rows, idx]
        xlo = knots_x[rows, idx]
        ylo = knots_y[rows, idx]
        d0 = derivs[rows, idx]
        d1 = derivs[rows, idx + 1]
        sk = hk / wk
        dsum = d0 + d1 - 2.0 * sk

        if inverse:
            yr = xs - ylo
            a = hk * (sk - d0) + yr * dsum
            b = hk * d0 - yr * dsum
            c = -sk * yr
            disc = ad.maximum(b * b - 4.0 * a * c, 1e-300)
            xi = (2.0 * c) / (-b - ad.sqrt(disc))
            out = xi * wk + xlo
        else:
            xi = (xs - xlo) / wk
            xi1 = 1.0 - xi
            num = hk * (sk * xi * xi + d0 * xi * xi1)
            out = ylo + num / (sk + dsum * xi * xi1)

        xi1 = 1.0 - xi
        denom = sk + dsum * xi * xi1
        deriv_num = sk * sk * (d1 * xi * xi + 2.0 * sk * xi * xi1 + d0 * xi1 * xi1)
        ld_fwd = ad.log(deriv_num) - 2.0 * ad.log(denom)

        out = ad.where(inside, out, x)
        ld = ad.where(inside, -ld_fwd if inverse else ld_fwd, 0.0)
        out = ad.reshape(out, (-1, n_out))
        ld = ad.asum(ad.reshape(ld, (-1, n_out)), axis=1)
        return out, ld

    # -- public operations ---------------------------------------------------
    def _inverse_core(self, p, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input point")
        tensors = self._segments(p)
        h = (x - self._whiten_center) * self._whiten_scale
        logdet = np.full(x.shape[0], self._whiten_logdet)
        for l in reversed(range(self.config.num_layers)):
            h, ld = self._couple_inverse(tensors, l, h)
            logdet = logdet + ld
        return h, logdet

    def inverse_with_logdet(self, x: np.ndarray):
        """Map data to latent space; also the log |det J| of that inverse map."""
        z, logdet = self._inverse_core(self.params.values, x)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(logdet))):
            raise ArithmeticError("flow inverse produced non-finite values")
        return z, logdet

    def forward(self, z: np.ndarray) -> np.ndarray:
        """Push latent points through the generative direction."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite input point")
        tensors = self._segments(self.params.values)
        h = z
        for l in range(self.config.num_layers):
            h = self._couple_forward(tensors, l, h)
        x = h / self._whiten_scale + self._whiten_center
        if not np.all(np.isfinite(x)):
            raise ArithmeticError("flow forward produced non-finite values")
        return x

    def _log_density_core(self, p, x):
        z, logdet = self._inverse_core(p, x)
        d = self.dim
        quad = ad.asum(z * z, axis=1)
        return -0.5 * d * np.log(2.0 * np.pi) - 0.5 * quad + logdet

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log-density at x: base log-density of the inverse image plus the
        accumulated inverse log-determinant."""
        out = self._log_density_core(self.params.values, x)
        if not np.all(np.isfinite(out)):
            raise ArithmeticError("flow log-density is non-finite")
        return out

    def log_density_node(self, params_node, x: np.ndarray):
        """Differentiable log-density of constant points `x`."""
        return self._log_density_core(params_node, x)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """n i.i.d. draws: base samples pushed through the forward map."""
        if n < 1:
            raise ValueError("need n >= 1")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.forward(z)

    # -- persistence -----------------------------------------------------
    def to_checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "domain": self.domain.as_dict(),
            "config": self.config.as_dict(),
            "params": self.params.values.tolist(),
        }

    def save_checkpoint(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_checkpoint()), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, data: dict) -> "FlowModel":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("unsupported checkpoint format")
        model = cls(BoxDomain.from_dict(data["domain"]), FlowConfig.from_dict(data["config"]))
        values = np.asarray(data["params"], dtype=np.float64)
        if values.size != model.params.size:
            raise ValueError("checkpoint parameter count mismatch")
        return model.with_params(values)

    @classmethod
    def load_checkpoint(cls, path) -> "FlowModel":
        return cls.from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))
