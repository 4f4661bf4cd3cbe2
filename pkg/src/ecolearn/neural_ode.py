"""MLP vector fields trained through an unrolled RK4 solver (Neural ODEs).

A network ``NN(y; theta)`` replaces the right-hand side of ``dy/dt = f(y)``.
The predicted trajectory is the RK4 rollout of that field from the first
observation, and the loss is the mean squared state error over the observed
samples.  Gradients come from :mod:`ecolearn.autodiff` (discretize, then
optimize); parameters are updated with Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import savgol_filter

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError, NumericalBlowup
from .integrator import RK4, RkTableau, TimeGrid, Trajectory, integrate, rk_step_tape
from .models import StateVector

log = logging.getLogger(__name__)

NODE1_HIDDEN = (64,)
NODE2_HIDDEN = (64, 128, 128, 64)


@dataclass(frozen=True)
class Normalization:
    """Fixed affine wrapper ``f(y) = out_scale * net((y - shift) / scale)``."""

    shift: tuple
    scale: tuple
    out_scale: tuple

    def __post_init__(self):
        for name in ("shift", "scale", "out_scale"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.shift) == len(self.scale) == len(self.out_scale)):
            raise DimensionError("normalization vectors differ in length")
        if min(self.scale) <= 0 or min(self.out_scale) <= 0:
            raise ConfigError("normalization scales must be positive")

    @classmethod
    def identity(cls, m: int) -> "Normalization":
        return cls((0.0,) * m, (1.0,) * m, (1.0,) * m)

    @classmethod
    def from_data(cls, states: np.ndarray, tau: float, floor: float = 1e-8) -> "Normalization":
        """Per-component mean/std of the states and std of their finite-difference rates.

        ``states`` has time on axis 0 and components on the last axis; any
        axes in between (spatial nodes) are pooled.
        """
        states = np.asarray(states, dtype=np.float64)
        flat = states.reshape(-1, states.shape[-1])
        mean = flat.mean(axis=0)
        std = np.maximum(flat.std(axis=0), floor)
        if states.shape[0] >= 2 and tau > 0:
            rates = np.gradient(states, tau, axis=0).reshape(-1, states.shape[-1])
            rate = np.maximum(rates.std(axis=0), floor)
        else:
            rate = np.ones_like(mean)
        return cls(tuple(mean), tuple(std), tuple(rate))

    def to_dict(self) -> dict:
        return {"shift": list(self.shift), "scale": list(self.scale), "out_scale": list(self.out_scale)}


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "tanh"
    normalization: Normalization | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ConfigError(f"need at least one hidden layer, got widths {widths}")
        if widths[0] != widths[-1]:
            raise ConfigError(f"input and output width must both equal the state dimension: {widths}")
        if min(widths) < 1:
            raise ConfigError(f"layer widths must be positive: {widths}")
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.normalization is not None and len(self.normalization.shift) != widths[0]:
            raise DimensionError("normalization length differs from state dimension")

    @classmethod
    def node1(cls, m: int) -> "MlpSpec":
        return cls((m, *NODE1_HIDDEN, m))

    @classmethod
    def node2(cls, m: int) -> "MlpSpec":
        return cls((m, *NODE2_HIDDEN, m))

    @property
    def dim(self) -> int:
        return self.layer_widths[0]

    def layout(self) -> list:
        out = []
        for i, (a, b) in enumerate(zip(self.layer_widths, self.layer_widths[1:])):
            out += [(f"W{i}", (a, b)), (f"b{i}", (b,))]
        return out

    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_widths, self.layer_widths[1:]))

    def to_dict(self) -> dict:
        return {"type": "mlp", "layer_widths": list(self.layer_widths), "activation": self.activation,
                "normalization": None if self.normalization is None else self.normalization.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "MlpSpec":
        norm = d.get("normalization")
        return cls(tuple(d["layer_widths"]), d.get("activation", "tanh"),
                   None if norm is None else Normalization(**norm))


def init_params(spec: MlpSpec, seed=0) -> ad.ParamVector:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    segs = {}
    for name, shape in spec.layout():
        if name.startswith("W"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            segs[name] = rng.uniform(-limit, limit, size=shape)
        else:
            segs[name] = np.zeros(shape)
    return ad.ParamVector.from_segments(segs)


def _check_layout(spec, theta: ad.ParamVector):
    if [(n, tuple(s)) for n, s in theta.layout] != [(n, tuple(s)) for n, s in spec.layout()]:
        raise ConfigError("parameter layout does not match the network spec")


def _forward_np(spec: MlpSpec, segs: dict, y: np.ndarray) -> np.ndarray:
    nl = len(spec.layer_widths) - 1
    norm = spec.normalization
    h = y if norm is None else (y - np.asarray(norm.shift)) / np.asarray(norm.scale)
    for i in range(nl):
        h = h @ segs[f"W{i}"] + segs[f"b{i}"]
        if i < nl - 1:
            h = np.tanh(h)
    return h if norm is None else h * np.asarray(norm.out_scale)


def mlp_forward(spec: MlpSpec, theta: ad.ParamVector, y):
    """Evaluate the network on a StateVector or on an array ``(..., M)``."""
    _check_layout(spec, theta)
    if isinstance(y, StateVector):
        if len(y) != spec.dim:
            raise DimensionError(f"network expects {spec.dim} inputs, got {len(y)}")
        return StateVector(_forward_np(spec, theta.segments(), y.as_array()), y.labels)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != spec.dim:
        raise DimensionError(f"network expects {spec.dim} inputs, got shape {y.shape}")
    return _forward_np(spec, theta.segments(), y)


def vector_field(spec: MlpSpec, theta: ad.ParamVector) -> Callable:
    _check_layout(spec, theta)
    segs = theta.segments()
    return lambda y: _forward_np(spec, segs, y)


def tape_field(spec: MlpSpec, params: dict) -> Callable:
    """Vector field on the tape.

    The input/output normalization is folded into the first and last layer
    once per tape, so each evaluation is a plain MLP.
    """
    nl = len(spec.layer_widths) - 1
    Ws = [params[f"W{i}"] for i in range(nl)]
    bs = [params[f"b{i}"] for i in range(nl)]
    norm = spec.normalization
    if norm is not None:
        inv = 1.0 / np.asarray(norm.scale)
        shift = np.asarray(norm.shift) * inv
        out = np.asarray(norm.out_scale)
        W0 = Ws[0] * inv[:, None]
        bs[0] = bs[0] - shift @ Ws[0]
        Ws[0] = W0
        Ws[-1] = Ws[-1] * out[None, :]
        bs[-1] = bs[-1] * out

    def f(h):
        for i in range(nl):
            h = ad.affine(h, Ws[i], bs[i])
            if i < nl - 1:
                h = ad.tanh(h)
        return h

    return f


# ---------------------------------------------------------------------------
# training


OPTIMIZERS = ("adam", "lbfgs")


@dataclass
class TrainConfig:
    """Optimizer settings for the two training stages.

    Warm start (``warm_start`` iterations, skipped when 0): the network is fit
    to rate estimates of the training data, obtained with a Savitzky-Golay
    filter of ``smooth_window`` points and polynomial order ``smooth_order``
    (``smooth_window=0`` means plain second-order differences).  It only
    chooses the starting point of the rollout stage.

    Rollout stage (``iterations``): minimizes the trajectory loss through the
    RK4 solver.  Adam uses ``lr`` with an optional linear ramp over the first
    ``ramp`` steps and geometric decay to ``decay * lr``; L-BFGS ignores the
    learning-rate settings.
    """

    iterations: int = 500
    lr: float = 3e-4
    optimizer: str = "adam"
    decay: float = 1.0
    ramp: int = 0
    seed: int = 0
    normalize: bool = True
    tableau: RkTableau = RK4
    log_every: int = 0
    warm_start: int = 2000
    warm_lr: float = 0.01
    warm_decay: float = 1.0
    warm_optimizer: str = "adam"
    smooth_window: int = 7
    smooth_order: int = 6

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if int(self.warm_start) < 0:
            raise ConfigError(f"warm_start must be >= 0, got {self.warm_start}")
        if not self.lr > 0 or not self.warm_lr > 0:
            raise ConfigError(f"learning rates must be positive, got {self.lr}, {self.warm_lr}")
        if not (0 < self.decay <= 1 and 0 < self.warm_decay <= 1):
            raise ConfigError("decay factors must lie in (0, 1]")
        if int(self.ramp) < 0:
            raise ConfigError(f"ramp must be >= 0, got {self.ramp}")
        for opt in (self.optimizer, self.warm_optimizer):
            if opt not in OPTIMIZERS:
                raise ConfigError(f"unknown optimizer {opt!r}; choose from {OPTIMIZERS}")
        w, o = int(self.smooth_window), int(self.smooth_order)
        if w != 0 and (w < 5 or w % 2 == 0 or not 2 <= o < w):
            raise ConfigError(f"need smooth_window = 0 or odd >= 5 with 2 <= order < window, got {w}, {o}")

    def warm_stage(self) -> "TrainConfig":
        return replace(self, iterations=self.warm_start, lr=self.warm_lr, decay=self.warm_decay,
                       optimizer=self.warm_optimizer, ramp=0, warm_start=0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "tableau"}
        d["tableau"] = self.tableau.name
        return d


@dataclass
class TrainResult:
    spec: object
    theta: ad.ParamVector
    best_loss: float
    history: list = field(default_factory=list)  # (iteration, loss, grad_norm)
    rejected: int = 0
    warm_history: list = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        finite = [h[1] for h in self.history if np.isfinite(h[1])]
        return finite[0] if finite else float("inf")

    def write_log(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "grad_norm"])
            for it, loss, gn in self.history:
                w.writerow([it, f"{loss:.17g}", f"{gn:.17g}"])


def rollout_loss(field_fn: Callable, y0, targets: np.ndarray, tau: float, tableau=RK4):
    """Tape program: mean over all samples of ``||y_pred^n - y^n||^2``.

    ``targets[0]`` is the observation the rollout starts from (its error is
    zero by construction but it still counts in the mean).
    """
    n = targets.shape[0]
    y = y0
    preds = []
    for _ in range(1, n):
        y = rk_step_tape(field_fn, y, tau, tableau)
        preds.append(y)
    diff = ad.stack(preds) - targets[1:]
    return ad.vsum(ad.square(diff)) * (1.0 / n)


def fit(loss_fn: Callable[[dict], ad.Var], theta0: ad.ParamVector, cfg: TrainConfig):
    """Minimize ``loss_fn`` from ``theta0`` with the optimizer named in ``cfg``."""
    if cfg.optimizer == "lbfgs":
        return fit_lbfgs(loss_fn, theta0, cfg)
    return fit_adam(loss_fn, theta0, cfg)


def fit_lbfgs(loss_fn, theta0: ad.ParamVector, cfg: TrainConfig):
    """Full-batch L-BFGS (scipy) with the same return contract as :func:`fit_adam`.

    Non-finite evaluations are reported to the line search as ``inf`` so it
    backtracks; the best finite evaluation seen is returned.
    """
    best = {"loss": float("inf"), "theta": theta0}
    history, rejected = [], [0]
    last = {}

    def fg(x):
        theta = theta0.with_values(x)
        try:
            loss, g = ad.value_and_grad(loss_fn, theta)
        except NumericalBlowup:
            rejected[0] += 1
            return float("inf"), np.zeros_like(x)
        if loss < best["loss"]:
            best["loss"], best["theta"] = loss, theta
        last["loss"], last["gnorm"] = loss, float(np.linalg.norm(g.values))
        return loss, g.values

    def callback(xk):
        it = len(history)
        history.append((it, last.get("loss", float("nan")), last.get("gnorm", float("nan"))))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %4d  loss %.6e  |g| %.3e", it, history[-1][1], history[-1][2])

    n = int(cfg.iterations)
    loss0, _ = fg(theta0.values.copy())
    if not np.isfinite(loss0):
        raise NumericalBlowup("initial loss is not finite")
    history.append((0, loss0, last["gnorm"]))
    minimize(fg, theta0.values.copy(), jac=True, method="L-BFGS-B", callback=callback,
             options={"maxiter": n, "maxfun": 2 * n + 10, "maxcor": 20, "gtol": 0.0, "ftol": 0.0})
    return best["theta"], best["loss"], history, rejected[0]


def fit_adam(loss_fn: Callable[[dict], ad.Var], theta0: ad.ParamVector, cfg: TrainConfig):
    """Adam loop shared by all learners.

    Returns ``(best_theta, best_loss, history, rejected)``.  An iterate whose
    loss or gradient is non-finite is rejected: parameters and moments roll
    back to the previous iterate and the learning rate is halved.
    """
    theta, state, lr = theta0, ad.AdamState.zeros(len(theta0)), cfg.lr
    n_iter = int(cfg.iterations)
    step_decay = cfg.decay ** (1.0 / max(n_iter - 1, 1))
    prev = None
    best_theta, best_loss = theta0, float("inf")
    history, rejected = [], 0
    for it in range(int(cfg.iterations)):
        try:
            loss, g = ad.value_and_grad(loss_fn, theta)
        except NumericalBlowup:
            rejected += 1
            history.append((it, float("inf"), float("nan")))
            if prev is None:
                raise
            theta, state = prev
            lr *= 0.5
            log.debug("iteration %d diverged; lr -> %g", it, lr)
            continue
        gnorm = float(np.linalg.norm(g.values))
        history.append((it, loss, gnorm))
        if loss < best_loss:
            best_loss, best_theta = loss, theta
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %4d  loss %.6e  |g| %.3e", it, loss, gnorm)
        prev = (theta, state)
        scale = min(1.0, (it + 1) / cfg.ramp) if cfg.ramp else 1.0
        theta, state = ad.adam_step(theta, g, state, lr * scale)
        lr *= step_decay
    return best_theta, best_loss, history, rejected


def rate_targets(states: np.ndarray, tau: float, window: int = 7, order: int = 6) -> np.ndarray:
    """Time derivatives of ``states`` (time on axis 0) from a local polynomial fit.

    ``order = window - 1`` interpolates (a high-order difference, for clean
    data); a low order with a wide window smooths noisy data.
    """
    states = np.asarray(states, dtype=np.float64)
    n = states.shape[0]
    if window and n >= window:
        return savgol_filter(states, window, order, deriv=1, delta=tau, axis=0, mode="interp")
    if n >= 3:
        return np.gradient(states, tau, axis=0, edge_order=2)
    return np.gradient(states, tau, axis=0)


def rate_loss(field_fn: Callable, states: np.ndarray, rates: np.ndarray, scale):
    """Tape program: mean squared mismatch of ``field(states)`` and ``rates``, scaled per component."""
    inv = 1.0 / np.asarray(scale, dtype=np.float64)
    return ad.vsum(ad.square((field_fn(states) - rates) * inv)) * (1.0 / states.shape[0])


def train_field(data: Trajectory, spec, make_field: Callable, theta0: ad.ParamVector,
                cfg: TrainConfig) -> TrainResult:
    """Warm start on rates (optional), then rollout training from ``data.states[0]``."""
    targets = data.states
    y0, tau = targets[0], data.grid.tau
    theta = theta0
    warm_history = []
    if cfg.warm_start > 0 and len(data) >= 3:
        rates = rate_targets(targets, tau, cfg.smooth_window, cfg.smooth_order)
        norm = getattr(spec, "normalization", None)
        scale = norm.out_scale if norm is not None else np.maximum(rates.std(axis=0), 1e-8)
        theta, _, warm_history, _ = fit(lambda p: rate_loss(make_field(p), targets, rates, scale),
                                        theta, cfg.warm_stage())

    def loss_fn(params):
        return rollout_loss(make_field(params), y0, targets, tau, cfg.tableau)

    theta, best, history, rejected = fit(loss_fn, theta, cfg)
    return TrainResult(spec, theta, best, history, rejected, warm_history)


def train_node(data: Trajectory, spec: MlpSpec, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit an MLP vector field to ``data`` by rollout from ``data.states[0]``."""
    cfg = cfg or TrainConfig()
    if len(data) < 2:
        raise DataError("training needs at least two samples")
    if data.states.shape[1] != spec.dim:
        raise DimensionError(f"data has {data.states.shape[1]} components, network {spec.dim}")
    if cfg.normalize and spec.normalization is None:
        spec = replace(spec, normalization=Normalization.from_data(data.states, data.grid.tau))
    return train_field(data, spec, lambda p: tape_field(spec, p), init_params(spec, cfg.seed), cfg)


def predict(spec: MlpSpec, theta: ad.ParamVector, y0, grid: TimeGrid,
            labels: Sequence[str] | None = None, tableau=RK4) -> Trajectory:
    y0v = y0.as_array() if isinstance(y0, StateVector) else np.asarray(y0, dtype=np.float64)
    if y0v.shape != (spec.dim,):
        raise DimensionError(f"initial state has shape {y0v.shape}, network expects ({spec.dim},)")
    if labels is None:
        labels = y0.labels if isinstance(y0, StateVector) else tuple(f"y{i}" for i in range(spec.dim))
    states = integrate(vector_field(spec, theta), y0v, grid, tableau)
    return Trajectory(grid, states, labels, {"method": "node", "params": len(theta)})
