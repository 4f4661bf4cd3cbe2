"""Finite-difference diffusion with zero-flux boundaries and reaction-diffusion stepping.

Layout conventions
------------------
A field with ``M`` components on ``N`` nodes is stored as an ``(M, N)`` array.
The full state vector is component-major: all nodes of component 0, then
component 1, and so on.  In 2-D the node index is ``j * N_x + i`` where ``i``
runs along x1 and ``j`` along x2 (row-major with x1 fastest).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, GridError, NumericalBlowup
from .integrator import RK4, TimeGrid, integrate
from .models import ModelSpec, vector_field


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on ``[0, extent]`` per axis (both ends included)."""

    extent: tuple
    shape: tuple

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(extent) != len(shape) or len(shape) not in (1, 2):
            raise GridError(f"grid must be 1-D or 2-D, got extent {extent} and shape {shape}")
        for n in shape:
            # a single node along one axis of a 2-D grid is allowed (degenerate axis)
            if n < 3 and not (len(shape) == 2 and n == 1):
                raise GridError(f"each axis needs at least 3 nodes, got {shape}")
        if any(e <= 0 for e in extent):
            raise GridError(f"domain lengths must be positive, got {extent}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def line(cls, length: float, n: int) -> "Grid":
        return cls((length,), (n,))

    @classmethod
    def rect(cls, lx: float, ly: float, nx: int, ny: int) -> "Grid":
        return cls((lx, ly), (nx, ny))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple:
        return tuple(e / (n - 1) if n > 1 else 0.0 for e, n in zip(self.extent, self.shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return np.linspace(0.0, self.extent[axis], n) if n > 1 else np.zeros(1)

    def coords(self) -> np.ndarray:
        """Node coordinates ``(N, dim)`` in storage order."""
        if self.dim == 1:
            return self.axis_coords(0)[:, None]
        x1 = self.axis_coords(0)
        x2 = self.axis_coords(1)
        X1, X2 = np.meshgrid(x1, x2, indexing="xy")  # rows follow x2
        return np.column_stack([X1.ravel(), X2.ravel()])


def _axis_edges(kappa_nodes: np.ndarray, dx: float, nodes: np.ndarray):
    """Edges ``(a, b, w_a, w_b)`` of one grid line with node indices ``nodes``.

    Row ``a`` receives ``+w_a (y_b - y_a)`` and row ``b`` receives
    ``-w_b (y_b - y_a)``.  The weight doubles at the two end nodes (ghost-node
    Neumann rows).
    """
    n = kappa_nodes.size
    if n < 2:
        return (np.zeros(0, np.int64),) * 2 + (np.zeros(0),) * 2
    k_half = 0.5 * (kappa_nodes[:-1] + kappa_nodes[1:])  # interface i+1/2
    if np.any(k_half < 0):
        raise GridError("diffusion coefficients must be non-negative")
    c = k_half / (dx * dx)
    wa, wb = c.copy(), c.copy()
    wa[0] *= 2.0
    wb[-1] *= 2.0
    return nodes[:-1], nodes[1:], wa, wb


def _flux_factors(n: int, edges) -> tuple:
    """``(P, D)`` with ``L = P @ D``; ``D`` takes edge differences, ``P`` spreads fluxes."""
    a, b, wa, wb = (np.concatenate(parts) for parts in zip(*edges))
    e = np.arange(a.size)
    D = sp.csr_matrix((np.concatenate([-np.ones(a.size), np.ones(a.size)]),
                       (np.concatenate([e, e]), np.concatenate([a, b]))), shape=(a.size, n))
    P = sp.csr_matrix((np.concatenate([wa, -wb]), (np.concatenate([a, b]), np.concatenate([e, e]))),
                      shape=(n, a.size))
    return P, D


@dataclass
class DiffusionOperator:
    """Block-diagonal discrete Laplacian, one block per component.

    Each block is stored as ``P @ D`` (edge differences, then weighted
    fluxes) so that constant fields map to exactly zero.
    """

    grid: Grid
    kappa: np.ndarray  # (M, N) nodal diffusion coefficients
    factors: list  # M pairs (P, D)

    @property
    def components(self) -> int:
        return len(self.factors)

    @property
    def blocks(self) -> list:
        return [sp.csr_matrix(P @ D) for P, D in self.factors]

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.block_diag(self.blocks, format="csr")

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        """``L y`` for arrays ``(..., M, N)``."""
        out = np.empty_like(values)
        for c, (P, D) in enumerate(self.factors):
            v = values[..., c, :]
            out[..., c, :] = (P @ (D @ v.reshape(-1, v.shape[-1]).T)).T.reshape(v.shape)
        return out

    def apply_transpose_array(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        for c, (P, D) in enumerate(self.factors):
            v = values[..., c, :]
            out[..., c, :] = (D.T @ (P.T @ v.reshape(-1, v.shape[-1]).T)).T.reshape(v.shape)
        return out


def assemble_laplacian(grid: Grid, kappa, components: int | None = None) -> DiffusionOperator:
    """Assemble ``L`` for ``grid``.

    ``kappa`` may be a scalar, one value per component, or nodal values with
    shape ``(N,)`` or ``(M, N)``.  Interface coefficients are arithmetic means
    of the adjacent nodal values.
    """
    n = grid.n_nodes
    k = np.asarray(kappa, dtype=np.float64)
    m = components
    if k.ndim == 0:
        m = m or 1
        k = np.full((m, n), float(k))
    elif k.ndim == 1 and k.size == n and (m is None or m != n):
        m = m or 1
        k = np.tile(k, (m, 1))
    elif k.ndim == 1:
        m = m or k.size
        if k.size != m:
            raise DimensionError(f"{k.size} diffusion coefficients for {m} components")
        k = np.repeat(k[:, None], n, axis=1)
    elif k.shape[1] != n or (m is not None and k.shape[0] != m):
        raise DimensionError(f"kappa shape {k.shape} does not match ({m}, {n})")
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise GridError("diffusion coefficients must be finite and >= 0")
    return DiffusionOperator(grid, k, [_component_operator(grid, kc) for kc in k])


def _component_operator(grid: Grid, kc: np.ndarray) -> tuple:
    n = grid.n_nodes
    if grid.dim == 1:
        return _flux_factors(n, [_axis_edges(kc, grid.spacing[0], np.arange(n))])
    nx, ny = grid.shape
    dx1, dx2 = grid.spacing
    K = kc.reshape(ny, nx)  # rows follow x2
    idx = np.arange(n).reshape(ny, nx)
    edges = [_axis_edges(K[j, :], dx1, idx[j, :]) for j in range(ny)]
    edges += [_axis_edges(K[:, i], dx2, idx[:, i]) for i in range(nx)]
    return _flux_factors(n, edges)


@dataclass
class Field:
    grid: Grid
    values: np.ndarray  # (M, N)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_nodes:
            raise DimensionError(f"field shape {self.values.shape} does not fit {self.grid.n_nodes} nodes")

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path, labels: Sequence[str] | None = None) -> None:
        labels = labels or [f"c{i}" for i in range(self.components)]
        axes = ["x1", "x2"][: self.grid.dim]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*axes, *labels])
            for xy, col in zip(self.grid.coords(), self.values.T):
                w.writerow([*(f"{v:.17g}" for v in xy), *(f"{v:.17g}" for v in col)])


def save_binary(path, values: np.ndarray, grid: Grid, labels=None, **extra) -> None:
    """Flat little-endian float64 dump plus a JSON shape descriptor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values, dtype="<f8")
    values.tofile(path.with_suffix(".bin"))
    meta = {"dtype": "float64", "shape": list(values.shape), "order": "C",
            "grid": {"extent": list(grid.extent), "shape": list(grid.shape)},
            "labels": list(labels) if labels is not None else None, **extra}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_binary(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    values = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(meta["shape"])
    return values, Grid(tuple(meta["grid"]["extent"]), tuple(meta["grid"]["shape"])), meta


@dataclass
class FieldSeries:
    """Fields on a time grid: ``values`` has shape ``(n_steps, M, N)``."""

    grid: Grid
    time: TimeGrid
    values: np.ndarray
    labels: tuple = ()

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, n) -> Field:
        return Field(self.grid, self.values[n])

    def head(self, n: int) -> "FieldSeries":
        return FieldSeries(self.grid, self.time.head(n), self.values[:n].copy(), self.labels)

    def save(self, path) -> None:
        save_binary(path, self.values, self.grid, self.labels,
                    time={"t0": self.time.t0, "t_max": self.time.t_max, "n_steps": self.time.n_steps})

    @classmethod
    def load(cls, path) -> "FieldSeries":
        values, grid, meta = load_binary(path)
        t = meta["time"]
        return cls(grid, TimeGrid(t["t0"], t["t_max"], t["n_steps"]), values, tuple(meta.get("labels") or ()))


def apply(op: DiffusionOperator, field: Field) -> Field:
    if field.values.shape != (op.components, op.grid.n_nodes):
        raise DimensionError(
            f"field shape {field.values.shape} vs operator ({op.components}, {op.grid.n_nodes})"
        )
    return Field(field.grid, op.apply_array(field.values))


def reaction_diffusion_field(model: ModelSpec | None, op: DiffusionOperator):
    """``g(y) = L y + f(y)`` on arrays ``(..., M, N)``; ``f`` acts at each node."""
    f = vector_field(model) if model is not None else None

    def g(y):
        out = op.apply_array(y)
        if f is not None:
            out = out + np.swapaxes(f(np.swapaxes(y, -1, -2)), -1, -2)
        return out

    return g


def simulate_rd(model: ModelSpec | None, op: DiffusionOperator, ic: Field, grid: TimeGrid,
                tableau=RK4) -> FieldSeries:
    """RK4 rollout of the semi-discrete system; ``model=None`` gives pure diffusion."""
    if model is not None and model.dim != ic.components:
        raise DimensionError(f"{model.kind.value} has {model.dim} components, field has {ic.components}")
    if ic.values.shape != (op.components, op.grid.n_nodes):
        raise DimensionError("initial field does not match the operator")
    try:
        values = integrate(reaction_diffusion_field(model, op), ic.values, grid, tableau)
    except NumericalBlowup:
        raise
    labels = model.labels if model is not None else ()
    return FieldSeries(ic.grid, grid, values, labels)


def default_initial_field(model: ModelSpec, grid: Grid, amplitude: float = 0.2,
                          width_fraction: float = 0.25) -> Field:
    """ODE initial state times ``1 + amplitude * bump``, bump centred mid-domain.

    The bump is a Gaussian whose standard deviation is ``width_fraction`` of
    the (first-axis) domain length.
    """
    x = grid.coords()
    centre = np.array([e / 2 for e in grid.extent])
    width = width_fraction * grid.extent[0]
    bump = np.exp(-np.sum((x - centre) ** 2, axis=1) / (2.0 * width ** 2))
    base = model.initial_state.as_array()
    return Field(grid, base[:, None] * (1.0 + amplitude * bump[None, :]))
