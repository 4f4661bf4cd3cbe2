"""Relative l2 errors in percent: pointwise, training window and full horizon.

Multi-axis states (spatial fields of shape ``(M, N)``) are flattened into one
vector per time step before taking norms.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MetricError

RESULT_COLUMNS = ["run_id", "model", "method", "proportion", "noise", "seed", "e_train", "e_full", "status"]


def _values(x) -> np.ndarray:
    for attr in ("states", "values"):
        if hasattr(x, attr):
            return np.asarray(getattr(x, attr), dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def pointwise_error(pred, ref) -> float:
    """``100 * ||pred - ref|| / ||ref||`` for one time step."""
    p = _values(pred).ravel()
    r = _values(ref).ravel()
    if p.shape != r.shape:
        raise DimensionError(f"prediction has {p.size} entries, reference {r.size}")
    den = np.linalg.norm(r)
    if den == 0:
        raise MetricError("reference has zero norm")
    return float(np.linalg.norm(p - r) / den * 100.0)


def aggregate_error(pred, ref, upto: int | None = None) -> float:
    """Stacked relative error over time steps ``0 .. upto-1`` (all steps if ``None``)."""
    p = _values(pred)
    r = _values(ref)
    if p.shape != r.shape:
        raise DimensionError(f"trajectory shapes differ: {p.shape} vs {r.shape}")
    n = r.shape[0] if upto is None else int(upto)
    if not 1 <= n <= r.shape[0]:
        raise MetricError(f"index range {n} outside 1..{r.shape[0]}")
    d = (p[:n] - r[:n]).ravel()
    ref_flat = r[:n].ravel()
    den = np.linalg.norm(ref_flat)
    if den == 0:
        raise MetricError("reference has zero norm over the requested range")
    return float(np.linalg.norm(d) / den * 100.0)


def quartile_indices(n_steps: int) -> list:
    """Time indices annotated with pointwise errors: 0, 1/4, 1/2, 3/4 and the end."""
    return sorted({int(round(q * (n_steps - 1))) for q in (0, 0.25, 0.5, 0.75, 1.0)})


@dataclass
class ErrorReport:
    e_train: float
    e_full: float
    pointwise: dict = field(default_factory=dict)  # time index -> percent
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.e_train, self.e_full, *self.pointwise.values()]
        if any(v < 0 for v in vals if np.isfinite(v)):
            raise MetricError("errors must be non-negative")

    def row(self) -> dict:
        m = self.meta
        return {"run_id": m.get("run_id", ""), "model": m.get("model", ""), "method": m.get("method", ""),
                "proportion": m.get("proportion", ""), "noise": m.get("noise", ""), "seed": m.get("seed", ""),
                "e_train": f"{self.e_train:.6g}", "e_full": f"{self.e_full:.6g}",
                "status": m.get("status", "ok")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pointwise"] = {str(k): v for k, v in self.pointwise.items()}
        return d


def evaluate(pred, ref, n_train: int, meta: dict | None = None, indices=None) -> ErrorReport:
    """All metrics of a full-horizon prediction against the clean reference."""
    r = _values(ref)
    idx = quartile_indices(r.shape[0]) if indices is None else list(indices)
    p = _values(pred)
    pw = {}
    for i in idx:
        try:
            pw[i] = pointwise_error(p[i], r[i])
        except MetricError:  # e.g. an all-zero reference state
            pw[i] = float("nan")
    return ErrorReport(aggregate_error(p, r, n_train), aggregate_error(p, r), pw, dict(meta or {}))


def append_result(path, row: dict) -> None:
    """Append one row to a results CSV, writing the header for a new file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({k: row.get(k, "") for k in RESULT_COLUMNS})


def read_results(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
