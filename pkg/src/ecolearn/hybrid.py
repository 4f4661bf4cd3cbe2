"""Partial learning of reaction-diffusion systems.

The diffusion operator ``L`` is known and frozen; only the local reaction
term is learned, as one MLP shared by every node:

    dy/dt = L y + f_theta(y)        (f_theta acts on each node's M-vector)

Training minimizes the rollout error over windows of the training split,
each started from the observed field at the window start.  By default a
single window spans the whole split; short overlapping windows are available
through ``window_length``/``stride``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import neural_ode as node
from .errors import ConfigError, DataError, DimensionError
from .integrator import RK4, TimeGrid, integrate
from .neural_ode import MlpSpec, Normalization, TrainConfig, TrainResult
from .spatial import DiffusionOperator, Field, FieldSeries

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class HybridSpec:
    diffusion: DiffusionOperator
    reaction_net: MlpSpec
    window_length: int | None = None  # None: one window over the whole training split
    stride: int = 5

    def __post_init__(self):
        if self.reaction_net.dim != self.diffusion.components:
            raise DimensionError(
                f"reaction net has {self.reaction_net.dim} inputs, operator {self.diffusion.components} components"
            )
        if self.window_length is not None and int(self.window_length) < 2:
            raise ConfigError(f"window length must be >= 2, got {self.window_length}")
        if int(self.stride) < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def components(self) -> int:
        return self.diffusion.components

    @property
    def n_nodes(self) -> int:
        return self.diffusion.grid.n_nodes

    def to_dict(self) -> dict:
        g = self.diffusion.grid
        return {"type": "hybrid", "reaction_net": self.reaction_net.to_dict(),
                "grid": {"extent": list(g.extent), "shape": list(g.shape)},
                "kappa": self.diffusion.kappa.tolist(),
                "window_length": self.window_length, "stride": self.stride}


def compute_normalization(data) -> tuple:
    """Per-component mean and population std pooled over time and nodes.

    ``data`` is a FieldSeries, a sequence of Fields or an array ``(T, M, N)``.
    """
    values = _series_values(data)
    pooled = np.swapaxes(values, 1, 2).reshape(-1, values.shape[1])
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), STD_FLOOR)
    return mean, std


def normalize(values, mean, std):
    return (values - mean[:, None]) / std[:, None]


def denormalize(values, mean, std):
    return values * std[:, None] + mean[:, None]


def _series_values(data) -> np.ndarray:
    if isinstance(data, FieldSeries):
        return data.values
    if isinstance(data, np.ndarray):
        values = data
    else:
        seq = list(data)
        if not seq:
            raise DataError("need at least one field")
        values = np.stack([f.values if isinstance(f, Field) else np.asarray(f) for f in seq])
    if values.ndim == 2:
        values = values[None]
    if values.ndim != 3 or values.shape[0] < 1:
        raise DataError(f"expected fields of shape (T, M, N), got {values.shape}")
    return np.asarray(values, dtype=np.float64)


def default_config(**overrides) -> TrainConfig:
    """Training settings used for the reaction-diffusion experiments.

    Both stages run full-batch L-BFGS: the warm start on reaction-rate
    estimates, then the rollout over the training split.
    """
    kw = dict(warm_start=4000, warm_optimizer="lbfgs", iterations=100, optimizer="lbfgs")
    kw.update(overrides)
    return TrainConfig(**kw)


def default_spec(op: DiffusionOperator, train_values=None, tau: float | None = None,
                 widths=None, window_length: int | None = None, stride: int = 5) -> HybridSpec:
    """NODE2-shaped reaction net, normalized from the training fields when given."""
    m = op.components
    net = MlpSpec((m, *node.NODE2_HIDDEN, m)) if widths is None else MlpSpec(tuple(widths))
    if train_values is not None:
        net = replace(net, normalization=hybrid_normalization(op, _series_values(train_values), tau))
    return HybridSpec(op, net, window_length, stride)


def hybrid_normalization(op: DiffusionOperator, values: np.ndarray, tau) -> Normalization:
    """Input shift/scale from :func:`compute_normalization`; output scale from reaction rates."""
    mean, std = compute_normalization(values)
    if tau is None or values.shape[0] < 3:
        return Normalization(tuple(mean), tuple(std), tuple(std))
    rates = _reaction_rates(op, values, tau, 0, 0)
    out = np.maximum(rates.std(axis=0), STD_FLOOR)
    return Normalization(tuple(mean), tuple(std), tuple(out))


def _reaction_rates(op, values, tau, window, order):
    """Nodewise reaction samples ``dy/dt - L y`` as ``(T * N, M)``."""
    m = values.shape[1]
    dY = node.rate_targets(values, tau, window, order)
    r = dY - op.apply_array(values)
    return np.swapaxes(r, 1, 2).reshape(-1, m)


def _nodewise_np(spec: HybridSpec, theta, values):
    v = np.swapaxes(values, -1, -2)  # (..., N, M)
    out = node.mlp_forward(spec.reaction_net, theta, v)
    return np.swapaxes(out, -1, -2)


def reaction(spec: HybridSpec, theta, field: Field) -> Field:
    """Network part only, evaluated at every node."""
    return Field(field.grid, _nodewise_np(spec, theta, field.values))


def hybrid_rhs(spec: HybridSpec, theta, field: Field) -> Field:
    vals = field.values if isinstance(field, Field) else np.asarray(field, dtype=np.float64)
    if vals.shape[-2:] != (spec.components, spec.n_nodes):
        raise DimensionError(f"field shape {vals.shape} vs ({spec.components}, {spec.n_nodes})")
    out = spec.diffusion.apply_array(vals) + _nodewise_np(spec, theta, vals)
    return Field(field.grid, out) if isinstance(field, Field) else out


def vector_field(spec: HybridSpec, theta):
    segs_field = node.vector_field(spec.reaction_net, theta)
    op = spec.diffusion

    def g(y):
        return op.apply_array(y) + np.swapaxes(segs_field(np.swapaxes(y, -1, -2)), -1, -2)

    return g


def tape_field(spec: HybridSpec, params: dict):
    """``L y + f(y)`` on tape values of shape ``(K, M, N)``; ``L`` stays a constant."""
    op = spec.diffusion
    net = node.tape_field(spec.reaction_net, params)
    m, n = spec.components, spec.n_nodes

    def g(y):
        if isinstance(y, ad.Var):
            k = y.value.shape[0]
            lin = ad.fixed_linear(y, op.apply_array, op.apply_transpose_array, "diffusion")
        else:
            k = y.shape[0]
            lin = op.apply_array(y)
        r = net(y.transpose(0, 2, 1).reshape(k * n, m))
        return r.reshape(k, n, m).transpose(0, 2, 1) + lin

    return g


def window_starts(n_samples: int, length: int | None, stride: int) -> np.ndarray:
    if length is None:
        return np.zeros(1, dtype=np.int64)
    if n_samples < length:
        raise DataError(f"training split has {n_samples} fields, window needs {length}")
    return np.arange(0, n_samples - length + 1, stride)


def window_loss(field_fn, values: np.ndarray, tau: float, length: int | None, stride: int, tableau=RK4):
    """Mean over windows ``[s, s + W)`` of the single-rollout loss on that window."""
    starts = window_starts(values.shape[0], length, stride)
    length = values.shape[0] if length is None else length
    targets = np.stack([values[starts + j] for j in range(length)])  # (W, K, M, N)
    loss = node.rollout_loss(field_fn, targets[0], targets, tau, tableau)
    return loss * (1.0 / len(starts))


def train_hybrid(data, spec: HybridSpec, cfg: TrainConfig | None = None, tau: float | None = None,
                 theta0=None) -> TrainResult:
    """Fit the shared reaction net on the training fields.

    ``data`` is a FieldSeries (its time grid supplies ``tau``) or an array
    ``(T, M, N)`` together with ``tau``.
    """
    cfg = cfg or default_config()
    values = _series_values(data)
    if tau is None:
        if not isinstance(data, FieldSeries):
            raise ConfigError("tau is required when training on raw arrays")
        tau = data.time.tau
    if values.shape[1:] != (spec.components, spec.n_nodes):
        raise DimensionError(f"data shape {values.shape[1:]} vs ({spec.components}, {spec.n_nodes})")
    window_starts(values.shape[0], spec.window_length, spec.stride)
    if cfg.normalize and spec.reaction_net.normalization is None:
        spec = replace(spec, reaction_net=replace(spec.reaction_net,
                                                  normalization=hybrid_normalization(spec.diffusion, values, tau)))
    net = spec.reaction_net
    theta = node.init_params(net, cfg.seed) if theta0 is None else theta0
    warm_history = []
    if cfg.warm_start > 0 and values.shape[0] >= 3:
        states = np.swapaxes(values, 1, 2).reshape(-1, spec.components)
        rates = _reaction_rates(spec.diffusion, values, tau, cfg.smooth_window, cfg.smooth_order)
        scale = net.normalization.out_scale if net.normalization is not None else np.maximum(rates.std(axis=0), 1e-8)
        theta, _, warm_history, _ = node.fit(
            lambda p: node.rate_loss(node.tape_field(net, p), states, rates, scale), theta, cfg.warm_stage())

    def loss_fn(params):
        return window_loss(tape_field(spec, params), values, tau, spec.window_length, spec.stride, cfg.tableau)

    theta, best, history, rejected = node.fit(loss_fn, theta, cfg)
    return TrainResult(spec, theta, best, history, rejected, warm_history)


def predict_hybrid(spec: HybridSpec, theta, ic: Field, grid: TimeGrid, tableau=RK4) -> FieldSeries:
    if ic.values.shape != (spec.components, spec.n_nodes):
        raise DimensionError(f"initial field {ic.values.shape} vs ({spec.components}, {spec.n_nodes})")
    values = integrate(vector_field(spec, theta), ic.values, grid, tableau)
    return FieldSeries(ic.grid, grid, values)
