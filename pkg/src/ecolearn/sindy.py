"""Sparse identification of nonlinear dynamics.

Polynomial candidate library, finite-difference derivatives, optional 1-D
total-variation denoising, sequentially thresholded (ridge) least squares and
plain-text rendering of the identified equations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionError, SolveError
from .integrator import RK4, TimeGrid, Trajectory, integrate


@dataclass(frozen=True)
class FunctionLibrary:
    """Monomials of total degree <= ``degree`` in graded lexicographic order."""

    labels: tuple
    degree: int
    exponents: tuple  # one exponent tuple per term

    @property
    def names(self) -> list:
        return [_term_name(e, self.labels) for e in self.exponents]

    def __len__(self):
        return len(self.exponents)

    def evaluate(self, Y) -> np.ndarray:
        """Library matrix ``Theta(Y)`` of shape ``(N, terms)``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if Y.shape[-1] != len(self.labels):
            raise DimensionError(f"library over {len(self.labels)} components, data has {Y.shape[-1]}")
        cols = []
        for e in self.exponents:
            c = np.ones(Y.shape[:-1])
            for k, p in enumerate(e):
                if p:
                    c = c * Y[..., k] ** p
            cols.append(c)
        return np.stack(cols, axis=-1)


def _term_name(exps, labels) -> str:
    parts = []
    for lab, p in zip(labels, exps):
        if p == 1:
            parts.append(lab)
        elif p > 1:
            parts.append(f"{lab}^{p}")
    return " ".join(parts) if parts else "1"


def build_library(labels: Sequence[str], degree: int = 2) -> FunctionLibrary:
    if degree < 1:
        raise ConfigError(f"library degree must be >= 1, got {degree}")
    labels = tuple(labels)
    m = len(labels)
    exps = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(m), d):
            e = [0] * m
            for k in combo:
                e[k] += 1
            exps.append(tuple(e))
    return FunctionLibrary(labels, degree, tuple(exps))


@dataclass
class SparseModel:
    library: FunctionLibrary
    xi: np.ndarray  # (terms, components)
    threshold: float
    ridge_lambda: float = 0.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        if self.xi.shape != (len(self.library), len(self.library.labels)):
            raise DimensionError(
                f"xi shape {self.xi.shape} != ({len(self.library)}, {len(self.library.labels)})"
            )

    def rhs(self, y) -> np.ndarray:
        return self.library.evaluate(y) @ self.xi

    def coefficient(self, component: str, term: str) -> float:
        j = self.library.labels.index(component)
        return float(self.xi[self.library.names.index(term), j])

    def to_dict(self) -> dict:
        return {"labels": list(self.library.labels), "degree": self.library.degree,
                "terms": self.library.names, "xi": self.xi.tolist(),
                "threshold": self.threshold, "ridge_lambda": self.ridge_lambda}

    @classmethod
    def from_dict(cls, d) -> "SparseModel":
        lib = build_library(d["labels"], d["degree"])
        if lib.names != list(d["terms"]):
            raise ConfigError("term list does not match the rebuilt library")
        return cls(lib, np.array(d["xi"]), d["threshold"], d.get("ridge_lambda", 0.0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SparseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_derivatives(traj: Trajectory) -> np.ndarray:
    """Second-order finite differences (central inside, one-sided at the ends)."""
    if len(traj) < 3:
        raise DataError(f"need at least 3 samples for derivatives, got {len(traj)}")
    return np.gradient(traj.states, traj.grid.tau, axis=0, edge_order=2)


def tv_denoise(series, weight: float, tol: float = 1e-8, max_iter: int = 200_000) -> np.ndarray:
    """1-D total-variation denoising, column by column.

    Minimizes ``0.5 * ||x - y||^2 + weight * sum |x[i+1] - x[i]|`` by FISTA on
    the box-constrained dual, stopping once the duality gap is ``<= tol``.
    """
    if weight < 0:
        raise ConfigError(f"TV weight must be >= 0, got {weight}")
    y = np.asarray(series, dtype=np.float64)
    if y.ndim == 2:
        return np.stack([tv_denoise(y[:, j], weight, tol, max_iter) for j in range(y.shape[1])], axis=1)
    if weight == 0 or y.size < 2:
        return y.copy()
    # constant solution once weight dominates every partial sum of the residual
    csum = np.cumsum(y - y.mean())[:-1]
    if weight >= np.max(np.abs(csum)):
        return np.full_like(y, y.mean())

    def dt(p):  # D^T p with (Dx)_i = x[i+1] - x[i]
        out = np.zeros(p.size + 1)
        out[:-1] -= p
        out[1:] += p
        return out

    def gap(p):
        x = y - dt(p)
        primal = 0.5 * np.sum((x - y) ** 2) + weight * np.sum(np.abs(np.diff(x)))
        dual = 0.5 * np.sum(y ** 2) - 0.5 * np.sum(x ** 2)
        return primal - dual, x

    p = np.zeros(y.size - 1)
    z, t = p.copy(), 1.0
    step = 0.25  # 1 / ||D D^T||
    for it in range(max_iter):
        x = y - dt(z)
        p_new = np.clip(z + step * np.diff(x), -weight, weight)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
        if it % 50 == 0:
            g, x = gap(p)
            if g <= tol:
                return x
    g, x = gap(p)
    return x


def stlsq(theta_matrix, dY, threshold: float = 0.001, ridge_lambda: float = 0.0,
          max_iter: int = 20, names: Sequence[str] | None = None) -> np.ndarray:
    """Sequentially thresholded least squares, one component (column) at a time.

    Coefficients with ``|c| < threshold`` are zeroed and the remaining terms
    refit until the active set stops changing (at most ``max_iter`` rounds).
    Returns ``xi`` with shape ``(terms, components)``.
    """
    A = np.asarray(theta_matrix, dtype=np.float64)
    B = np.asarray(dY, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"{A.shape[0]} library rows but {B.shape[0]} targets")
    if ridge_lambda < 0 or threshold < 0:
        raise ConfigError("threshold and ridge_lambda must be >= 0")
    n_terms = A.shape[1]
    xi = np.zeros((n_terms, B.shape[1]))
    for j in range(B.shape[1]):
        label = names[j] if names is not None else str(j)
        active = np.ones(n_terms, dtype=bool)
        coef = np.zeros(n_terms)
        for _ in range(max_iter):
            coef = np.zeros(n_terms)
            if active.any():
                coef[active] = _ridge_solve(A[:, active], B[:, j], ridge_lambda, label)
            new_active = np.abs(coef) >= threshold
            if np.array_equal(new_active, active):
                break
            active = new_active
        coef[np.abs(coef) < threshold] = 0.0
        xi[:, j] = coef
    return xi


def _ridge_solve(A, b, lam, label):
    if lam > 0:
        return np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ b)
    sol, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        raise SolveError(
            f"rank-deficient library for component {label!r} "
            f"(rank {rank} < {A.shape[1]} terms); use ridge_lambda > 0"
        )
    return sol


def fit_sindy(traj: Trajectory, degree: int = 2, threshold: float = 0.001,
              ridge_lambda: float = 0.0, tv_weight: float = 0.0, derivatives=None) -> SparseModel:
    """Library + derivatives + STLSQ on one trajectory.

    ``derivatives`` overrides the finite-difference estimate (e.g. exact rates).
    """
    states = traj.states
    if tv_weight > 0:
        states = tv_denoise(states, tv_weight)
        traj = Trajectory(traj.grid, states, traj.labels, traj.provenance)
    dY = estimate_derivatives(traj) if derivatives is None else np.asarray(derivatives)
    lib = build_library(traj.labels, degree)
    xi = stlsq(lib.evaluate(states), dY, threshold, ridge_lambda, names=traj.labels)
    return SparseModel(lib, xi, threshold, ridge_lambda)


def simulate_identified(model: SparseModel, y0, grid: TimeGrid, tableau=RK4) -> Trajectory:
    y0 = np.asarray(getattr(y0, "values", y0), dtype=np.float64)
    states = integrate(model.rhs, y0, grid, tableau)
    return Trajectory(grid, states, model.library.labels, {"method": "sindy"})


def render(model: SparseModel, decimals: int = 3) -> str:
    """One ``<label>' = ...`` line per component; zero terms are omitted."""
    names = model.library.names
    lines = []
    for j, lab in enumerate(model.library.labels):
        parts = []
        for c, name in zip(model.xi[:, j], names):
            if c == 0:
                continue
            mag = f"{abs(c):.{decimals}f}"
            body = mag if name == "1" else f"{mag} {name}"
            if not parts:
                parts.append(f"-{body}" if c < 0 else body)
            else:
                parts.append(f"{'-' if c < 0 else '+'} {body}")
        lines.append(f"{lab}' = " + (" ".join(parts) if parts else "0"))
    return "\n".join(lines)
