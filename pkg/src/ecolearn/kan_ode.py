"""Kolmogorov-Arnold network vector fields.

Every edge ``i -> o`` of a layer carries a univariate function

    phi(x) = sum_k c_k B_k(x) + s * tanh(x)

where ``B_k`` are uniform cubic B-splines on ``[-I, I]`` split into ``G``
intervals (``G + 3`` basis functions) and ``s`` is a trainable residual scale.
A node sums the edge functions of its inputs.  Spline inputs outside
``[-I, I]`` are clamped to the boundary; the tanh branch sees the raw input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError
from .integrator import RK4, TimeGrid, Trajectory, integrate
from .models import StateVector
from .neural_ode import Normalization, TrainConfig, TrainResult, train_field

DEGREE = 3


@dataclass(frozen=True)
class KanSpec:
    layer_widths: tuple
    grid_intervals: int = 6
    interval: float = 3.0
    base_activation: bool = True
    normalization: Normalization | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f"bad layer widths {widths}")
        if widths[0] != widths[-1]:
            raise ConfigError(f"input and output width must both equal the state dimension: {widths}")
        if int(self.grid_intervals) < 4:
            raise ConfigError(f"need at least 4 grid intervals, got {self.grid_intervals}")
        if not self.interval > 0:
            raise ConfigError("spline interval half-width must be positive")

    @classmethod
    def default(cls, m: int, hidden: int = 5, **kw) -> "KanSpec":
        return cls((m, hidden, m), **kw)

    @classmethod
    def closest_to(cls, m: int, target: int, hidden: int = 5, **kw) -> "KanSpec":
        """Spec whose parameter count is nearest ``target`` (ties go to the finer grid)."""
        best = None
        for g in range(4, 64):
            spec = cls((m, hidden, m), grid_intervals=g, **kw)
            key = (abs(spec.param_count() - target), -g)
            if best is None or key < best[0]:
                best = (key, spec)
        return best[1]

    @property
    def dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_basis(self) -> int:
        return self.grid_intervals + DEGREE

    def edges(self) -> int:
        return sum(a * b for a, b in zip(self.layer_widths, self.layer_widths[1:]))

    def layout(self) -> list:
        out = []
        for i, (a, b) in enumerate(zip(self.layer_widths, self.layer_widths[1:])):
            out.append((f"C{i}", (a, b, self.n_basis)))
            if self.base_activation:
                out.append((f"S{i}", (a, b)))
        return out

    def param_count(self) -> int:
        per_edge = self.n_basis + (1 if self.base_activation else 0)
        return self.edges() * per_edge

    def to_dict(self) -> dict:
        return {"type": "kan", "layer_widths": list(self.layer_widths),
                "grid_intervals": self.grid_intervals, "interval": self.interval,
                "degree": DEGREE, "base_activation": self.base_activation,
                "normalization": None if self.normalization is None else self.normalization.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "KanSpec":
        norm = d.get("normalization")
        return cls(tuple(d["layer_widths"]), d.get("grid_intervals", 6), d.get("interval", 3.0),
                   d.get("base_activation", True), None if norm is None else Normalization(**norm))


@dataclass
class SplineEdge:
    """One edge function, for direct evaluation and inspection."""

    control_points: np.ndarray
    base_scale: float = 0.0
    interval: float = 3.0

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.size < 4 + DEGREE:
            raise ConfigError("need at least 4 grid intervals")
        if not np.all(np.isfinite(self.control_points)):
            raise ConfigError("control points must be finite")

    @property
    def grid_intervals(self) -> int:
        return self.control_points.size - DEGREE


def greville_abscissae(grid_intervals: int, interval: float = 3.0) -> np.ndarray:
    """Knot averages of the uniform cubic basis; coefficients ``f(xi)`` reproduce linear ``f``."""
    h = 2.0 * interval / grid_intervals
    return -interval + (np.arange(grid_intervals + DEGREE) - 1) * h


def bspline_basis(x, grid_intervals: int, interval: float = 3.0):
    """Uniform cubic B-spline basis values and input derivatives.

    Returns ``(B, dB)`` of shape ``x.shape + (G + 3,)``.  Inputs are clamped
    to ``[-I, I]``; the derivative is zero where clamping is active.
    """
    x = np.asarray(x, dtype=np.float64)
    g = grid_intervals
    h = 2.0 * interval / g
    inside = (x >= -interval) & (x <= interval)
    s = (np.clip(x, -interval, interval) + interval) / h
    span = np.clip(np.floor(s), 0, g - 1).astype(np.int64)
    u = s - span
    u2, u3 = u * u, u * u * u
    local = np.stack([(1 - u) ** 3, 3 * u3 - 6 * u2 + 4, -3 * u3 + 3 * u2 + 3 * u + 1, u3], axis=-1) / 6.0
    dlocal = np.stack([-3 * (1 - u) ** 2, 9 * u2 - 12 * u, -9 * u2 + 6 * u + 3, 3 * u2], axis=-1) / (6.0 * h)
    dlocal = dlocal * inside[..., None]
    n = x.size
    B = np.zeros((n, g + DEGREE))
    dB = np.zeros((n, g + DEGREE))
    rows = np.arange(n)[:, None]
    cols = span.reshape(-1, 1) + np.arange(4)
    B[rows, cols] = local.reshape(n, 4)
    dB[rows, cols] = dlocal.reshape(n, 4)
    shape = x.shape + (g + DEGREE,)
    return B.reshape(shape), dB.reshape(shape)


def spline_eval(edge: SplineEdge, x):
    B, _ = bspline_basis(x, edge.grid_intervals, edge.interval)
    return B @ edge.control_points + edge.base_scale * np.tanh(x)


def init_params(spec: KanSpec, seed=0) -> ad.ParamVector:
    rng = np.random.default_rng(seed)
    segs = {}
    for name, shape in spec.layout():
        fan_in = shape[0]
        if name.startswith("C"):
            segs[name] = rng.normal(0.0, 0.1 / np.sqrt(fan_in), size=shape)
        else:
            segs[name] = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)
    return ad.ParamVector.from_segments(segs)


def _check_layout(spec, theta):
    if [(n, tuple(s)) for n, s in theta.layout] != [(n, tuple(s)) for n, s in spec.layout()]:
        raise ConfigError("parameter layout does not match the KAN spec")


def _forward_np(spec: KanSpec, segs: dict, y: np.ndarray) -> np.ndarray:
    norm = spec.normalization
    h = y if norm is None else (y - np.asarray(norm.shift)) / np.asarray(norm.scale)
    for i in range(len(spec.layer_widths) - 1):
        B, _ = bspline_basis(h, spec.grid_intervals, spec.interval)
        out = np.einsum("...ik,iok->...o", B, segs[f"C{i}"])
        if spec.base_activation:
            out = out + np.tanh(h) @ segs[f"S{i}"]
        h = out
    return h if norm is None else h * np.asarray(norm.out_scale)


def kan_forward(spec: KanSpec, theta: ad.ParamVector, y):
    _check_layout(spec, theta)
    if isinstance(y, StateVector):
        if len(y) != spec.dim:
            raise DimensionError(f"network expects {spec.dim} inputs, got {len(y)}")
        return StateVector(_forward_np(spec, theta.segments(), y.as_array()), y.labels)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != spec.dim:
        raise DimensionError(f"network expects {spec.dim} inputs, got shape {y.shape}")
    return _forward_np(spec, theta.segments(), y)


def vector_field(spec: KanSpec, theta: ad.ParamVector):
    _check_layout(spec, theta)
    segs = theta.segments()
    return lambda y: _forward_np(spec, segs, y)


def tape_field(spec: KanSpec, params: dict):
    norm = spec.normalization
    nl = len(spec.layer_widths) - 1
    g, I = spec.grid_intervals, spec.interval
    basis = lambda v: bspline_basis(v, g, I)
    shift = None if norm is None else np.asarray(norm.shift)
    inv = None if norm is None else 1.0 / np.asarray(norm.scale)
    out_scale = None if norm is None else np.asarray(norm.out_scale)

    # (in, out, basis) -> (in * basis, out) so each layer is one matmul
    coef = [params[f"C{i}"].transpose(0, 2, 1).reshape(-1, spec.layer_widths[i + 1]) for i in range(nl)]

    def f(y):
        # y is a tape Var during rollouts and a plain array when fitting rates
        single = np.ndim(y.value if isinstance(y, ad.Var) else y) == 1
        h = y.reshape(1, -1) if single else y
        if norm is not None:
            h = (h - shift) * inv
        for i in range(nl):
            if isinstance(h, ad.Var):
                B, th = ad.spline_basis(h, basis), ad.tanh(h)
            else:
                B, th = basis(h)[0], np.tanh(h)
            a, k = B.shape[1], B.shape[2]
            out = B.reshape(B.shape[0], a * k) @ coef[i]
            if spec.base_activation:
                out = out + th @ params[f"S{i}"]
            h = out
        if norm is not None:
            h = h * out_scale
        return h.reshape(-1) if single else h

    return f


def train_kan(data: Trajectory, spec: KanSpec, cfg: TrainConfig | None = None) -> TrainResult:
    """Same training contract as :func:`ecolearn.neural_ode.train_node`."""
    cfg = cfg or TrainConfig()
    if len(data) < 2:
        raise DataError("training needs at least two samples")
    if data.states.shape[1] != spec.dim:
        raise DimensionError(f"data has {data.states.shape[1]} components, network {spec.dim}")
    if cfg.normalize and spec.normalization is None:
        spec = replace(spec, normalization=Normalization.from_data(data.states, data.grid.tau))
    return train_field(data, spec, lambda p: tape_field(spec, p), init_params(spec, cfg.seed), cfg)


def predict(spec: KanSpec, theta: ad.ParamVector, y0, grid: TimeGrid, labels=None, tableau=RK4) -> Trajectory:
    y0v = y0.as_array() if isinstance(y0, StateVector) else np.asarray(y0, dtype=np.float64)
    if y0v.shape != (spec.dim,):
        raise DimensionError(f"initial state has shape {y0v.shape}, network expects ({spec.dim},)")
    if labels is None:
        labels = y0.labels if isinstance(y0, StateVector) else tuple(f"y{i}" for i in range(spec.dim))
    states = integrate(vector_field(spec, theta), y0v, grid, tableau)
    return Trajectory(grid, states, labels, {"method": "kanode", "params": len(theta)})
