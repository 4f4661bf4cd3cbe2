"""Explicit Runge-Kutta stepping, trajectory generation, noise and splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError, NumericalBlowup
from .models import ModelSpec, StateVector, vector_field


@dataclass(frozen=True)
class RkTableau:
    """Explicit Butcher tableau (``a`` strictly lower triangular)."""

    a: tuple
    b: tuple
    name: str = "custom"

    def __post_init__(self):
        try:
            a = np.asarray(self.a, dtype=np.float64)
            b = np.asarray(self.b, dtype=np.float64).ravel()
        except ValueError:
            raise ConfigError("tableau coefficients must form a square array a and a vector b") from None
        s = b.size
        if a.shape != (s, s):
            raise ConfigError(f"tableau a must be {s}x{s}, got {a.shape}")
        if np.any(np.triu(a) != 0):
            raise ConfigError("explicit tableau needs a strictly lower-triangular a")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1, got {b.sum()}")
        object.__setattr__(self, "a", tuple(map(tuple, a)))
        object.__setattr__(self, "b", tuple(b))

    @property
    def stages(self) -> int:
        return len(self.b)


RK4 = RkTableau(
    a=((0, 0, 0, 0), (0.5, 0, 0, 0), (0, 0.5, 0, 0), (0, 0, 1.0, 0)),
    b=(1 / 6, 1 / 3, 1 / 3, 1 / 6),
    name="rk4",
)
EULER = RkTableau(a=((0.0,),), b=(1.0,), name="euler")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps`` samples covering ``[t0, t_max]`` inclusively."""

    t0: float
    t_max: float
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        if self.n_steps >= 2 and not self.t_max > self.t0:
            raise ConfigError(f"t_max ({self.t_max}) must exceed t0 ({self.t0})")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def tau(self) -> float:
        if self.n_steps == 1:
            return 0.0
        return (self.t_max - self.t0) / (self.n_steps - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.n_steps)

    def head(self, n: int) -> "TimeGrid":
        """Grid of the first ``n`` samples (same step)."""
        n = int(n)
        if not 1 <= n <= self.n_steps:
            raise ConfigError(f"cannot take {n} of {self.n_steps} samples")
        return TimeGrid(self.t0, self.t0 + (n - 1) * self.tau, n)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (n_steps, M)
    labels: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.labels = tuple(self.labels)
        if self.states.ndim != 2 or self.states.shape[0] != self.grid.n_steps:
            raise DimensionError(
                f"states shape {self.states.shape} does not match {self.grid.n_steps} time points"
            )
        if self.states.shape[1] != len(self.labels):
            raise DimensionError(f"{self.states.shape[1]} components but {len(self.labels)} labels")

    def __len__(self):
        return self.grid.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def state(self, n: int) -> StateVector:
        return StateVector(self.states[n], self.labels)

    def to_csv(self, path) -> None:
        """``t,<labels...>`` rows plus a sibling ``.json`` with grid and provenance."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.labels])
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}", *(f"{x:.17g}" for x in row)])
        meta = {"grid": {"t0": self.grid.t0, "t_max": self.grid.t_max, "n_steps": self.grid.n_steps},
                "labels": list(self.labels), "provenance": self.provenance}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=str))

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64)
        if header[0] != "t":
            raise DataError(f"{path}: first column must be 't'")
        meta_path = path.with_suffix(".json")
        provenance = {}
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            g = meta["grid"]
            grid = TimeGrid(g["t0"], g["t_max"], g["n_steps"])
            provenance = meta.get("provenance", {})
        else:
            t = body[:, 0]
            grid = TimeGrid(float(t[0]), float(t[-1]), len(t))
        return cls(grid, body[:, 1:], tuple(header[1:]), provenance)


def rk_step(f: Callable, y, tau: float, tableau: RkTableau = RK4):
    """One explicit RK step ``y + tau * sum_i b_i k_i``.

    ``y`` is an array (any shape ``f`` accepts) or a StateVector.
    """
    if not tau > 0:
        raise ConfigError(f"time step must be positive, got {tau}")
    if isinstance(y, StateVector):
        out = rk_step(lambda v: np.asarray(_unwrap(f(StateVector(v, y.labels)))), y.as_array(), tau, tableau)
        return StateVector(out, y.labels)
    y = np.asarray(y, dtype=np.float64)
    ks = []
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(tableau.stages):
            yi = y
            for j in range(i):
                aij = tableau.a[i][j]
                if aij:
                    yi = yi + (tau * aij) * ks[j]
            k = np.asarray(f(yi), dtype=np.float64)
            if not np.all(np.isfinite(k)):
                raise NumericalBlowup(f"non-finite value in RK stage {i}", stage=i)
            ks.append(k)
        out = y
        for bi, k in zip(tableau.b, ks):
            if bi:
                out = out + (tau * bi) * k
    if not np.all(np.isfinite(out)):
        raise NumericalBlowup("non-finite value in RK update", stage=tableau.stages)
    return out


def _unwrap(v):
    return v.as_array() if isinstance(v, StateVector) else v


def integrate(f: Callable, y0, grid: TimeGrid, tableau: RkTableau = RK4) -> np.ndarray:
    """Array rollout: returns ``(n_steps, *y0.shape)`` with ``out[0] = y0``."""
    y = np.asarray(y0, dtype=np.float64)
    out = np.empty((grid.n_steps, *y.shape))
    out[0] = y
    tau = grid.tau
    for n in range(1, grid.n_steps):
        try:
            y = rk_step(f, y, tau, tableau)
        except NumericalBlowup as exc:
            raise NumericalBlowup(f"blow-up at step {n}: {exc}", step=n, stage=exc.stage) from None
        out[n] = y
    return out


def rk_step_tape(f: Callable, y, tau: float, tableau: RkTableau = RK4):
    """RK step on the autodiff tape; ``f`` maps a Var to a Var."""
    ks = []
    for i in range(tableau.stages):
        coeffs = [tau * tableau.a[i][j] for j in range(i) if tableau.a[i][j]]
        terms = [ks[j] for j in range(i) if tableau.a[i][j]]
        yi = ad.lincomb([1.0, *coeffs], [y, *terms]) if terms else y
        ks.append(f(yi))
    used = [(tau * bi, k) for bi, k in zip(tableau.b, ks) if bi]
    return ad.lincomb([1.0] + [c for c, _ in used], [y] + [k for _, k in used])


def simulate(model: ModelSpec, grid: TimeGrid, tableau: RkTableau = RK4) -> Trajectory:
    states = integrate(vector_field(model), model.initial_state.as_array(), grid, tableau)
    prov = {"model": model.kind.value, "noise_sigma": 0.0, "seed": None, "kind": "clean",
            "scheme": tableau.name}
    return Trajectory(grid, states, model.labels, prov)


def add_noise(traj: Trajectory, noise_sigma: float, seed=None) -> Trajectory:
    """Add i.i.d. N(0, noise_sigma^2) to every entry (all time points)."""
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    prov = dict(traj.provenance, noise_sigma=float(noise_sigma), seed=seed)
    if noise_sigma == 0:
        return replace(traj, states=traj.states.copy(), provenance=prov)
    rng = np.random.default_rng(seed)
    noised = traj.states + rng.normal(0.0, noise_sigma, size=traj.states.shape)
    prov["kind"] = "noised"
    return replace(traj, states=noised, provenance=prov)


def train_size(n_steps: int, proportion: float) -> int:
    if not 0 < proportion <= 1:
        raise ConfigError(f"training proportion must lie in (0, 1], got {proportion}")
    return max(1, int(round(proportion * n_steps)))


def split(traj: Trajectory, proportion: float):
    """``(train, full)`` where train holds the first ``round(p * N_t)`` samples."""
    n = train_size(len(traj), proportion)
    train = Trajectory(traj.grid.head(n), traj.states[:n].copy(), traj.labels,
                       dict(traj.provenance, proportion=proportion))
    return train, traj
