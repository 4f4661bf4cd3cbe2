"""Array-level reverse-mode automatic differentiation.

Every primitive applied to a :class:`Var` is appended to its :class:`Tape`
together with a vector-Jacobian product closure.  ``Tape.backward`` walks the
record in reverse order and accumulates adjoints.  Values are numpy arrays
(float64), so one tape node stands for a whole matrix product or elementwise
map rather than a single scalar operation.

Plain numpy arrays and Python scalars mixed into an expression are treated as
constants and never recorded.

Training code works with a flat :class:`ParamVector`; :func:`value_and_grad`
splits it into named leaves, runs the user's loss program on a fresh tape and
flattens the adjoints back into the same layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalBlowup

__all__ = [
    "Tape",
    "Var",
    "ParamVector",
    "AdamState",
    "value_and_grad",
    "grad",
    "adam_step",
    "tanh",
    "square",
    "vsum",
    "affine",
    "lincomb",
    "stack",
    "einsum",
    "fixed_linear",
    "spline_basis",
]


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Linear record of primitive operations; evaluation order is record order."""

    def __init__(self):
        self.ops: list[str] = []
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[Callable | None] = []

    def __len__(self):
        return len(self.values)

    def leaf(self, value) -> "Var":
        return self._record("leaf", np.asarray(value, dtype=np.float64), (), None)

    def _record(self, op, value, parents, vjp) -> "Var":
        self.ops.append(op)
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        return Var(self, len(self.values) - 1, value)

    def backward(self, out: "Var") -> list:
        """Adjoints of the scalar ``out`` with respect to every recorded node.

        Entries are ``None`` for nodes ``out`` does not depend on.
        """
        if out.tape is not self:
            raise ValueError("output belongs to a different tape")
        adj: list = [None] * len(self.values)
        adj[out.index] = np.ones_like(out.value)
        for i in range(out.index, -1, -1):
            g = adj[i]
            vjp = self.vjps[i]
            if g is None or vjp is None:
                continue
            for p, gp in zip(self.parents[i], vjp(g)):
                if gp is None:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        return adj


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "index", "value")
    # make numpy defer to the reflected operators (ndarray + Var -> Var.__radd__)
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, other, sign=-1.0)

    def __rsub__(self, other):
        return _add(-self, other)

    def __neg__(self):
        return lincomb([-1.0], [self])

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return _mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def reshape(self, *shape):
        old = self.value.shape
        return self.tape._record(
            "reshape", self.value.reshape(*shape), (self.index,), lambda g: (g.reshape(old),)
        )

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.value.ndim)))
        inv = tuple(np.argsort(axes))
        return self.tape._record(
            "transpose",
            self.value.transpose(axes),
            (self.index,),
            lambda g: (g.transpose(inv),),
        )


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _add(a, b, sign=1.0):
    tape = _tape_of(a, b)
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    value = av + bv if sign > 0 else av - bv
    parents, shapes = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        shapes.append((av.shape, 1.0))
    if isinstance(b, Var):
        parents.append(b.index)
        shapes.append((bv.shape, sign))

    def vjp(g):
        return tuple(_unbroadcast(g if s > 0 else -g, shp) for shp, s in shapes)

    return tape._record("add", value, tuple(parents), vjp)


def _mul(a, b):
    tape = _tape_of(a, b)
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        grads.append(lambda g: _unbroadcast(g * bv, av.shape))
    if isinstance(b, Var):
        parents.append(b.index)
        grads.append(lambda g: _unbroadcast(g * av, bv.shape))
    return tape._record("mul", av * bv, tuple(parents), lambda g: tuple(f(g) for f in grads))


def _matmul(a, b):
    """``a @ b`` for row vectors / batches ``a`` (..., n) and a matrix ``b`` (n, m)."""
    tape = _tape_of(a, b)
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    if bv.ndim != 2:
        raise ValueError("right operand of matmul must be 2-D")
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        grads.append(lambda g: g @ bv.T)
    if isinstance(b, Var):
        parents.append(b.index)
        grads.append(lambda g: np.outer(av, g) if av.ndim == 1 else _matmul_weight_grad(av, g))
    return tape._record("matvec", av @ bv, tuple(parents), lambda g: tuple(f(g) for f in grads))


def _matmul_weight_grad(x, g):
    # x: (..., n), g: (..., m) -> (n, m) summed over leading axes
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return x.tape._record("tanh", t, (x.index,), lambda g: (g * (1.0 - t * t),))


def square(x: Var) -> Var:
    xv = x.value
    return x.tape._record("square", xv * xv, (x.index,), lambda g: (2.0 * xv * g,))


def vsum(x: Var) -> Var:
    """Sum of all entries (scalar result)."""
    shape = x.value.shape
    return x.tape._record(
        "sum", np.asarray(x.value.sum()), (x.index,), lambda g: (np.broadcast_to(g, shape),)
    )


def affine(x, W: Var, b: Var) -> Var:
    """Fused ``x @ W + b`` for a batch of row vectors ``x`` (Var or constant)."""
    xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    value = xv @ W.value + b.value
    Wv = W.value
    if isinstance(x, Var):
        parents = (x.index, W.index, b.index)

        def vjp(g):
            gb = g if g.ndim == 1 else g.reshape(-1, g.shape[-1]).sum(axis=0)
            gW = np.outer(xv, g) if xv.ndim == 1 else _matmul_weight_grad(xv, g)
            return g @ Wv.T, gW, gb
    else:
        parents = (W.index, b.index)

        def vjp(g):
            gb = g if g.ndim == 1 else g.reshape(-1, g.shape[-1]).sum(axis=0)
            gW = np.outer(xv, g) if xv.ndim == 1 else _matmul_weight_grad(xv, g)
            return gW, gb

    return W.tape._record("affine", value, parents, vjp)


def lincomb(coeffs: Sequence[float], xs: Sequence, const=None) -> Var:
    """``sum(c_i * x_i) (+ const)`` with scalar coefficients, as one node.

    Operands that are not Vars are folded into the constant part.
    """
    tape = _tape_of(*xs)
    value = np.zeros(()) if const is None else np.asarray(const, dtype=np.float64)
    parents, used = [], []
    for c, x in zip(coeffs, xs):
        if isinstance(x, Var):
            value = value + c * x.value
            parents.append(x.index)
            used.append((c, x.value.shape))
        else:
            value = value + c * np.asarray(x, dtype=np.float64)

    def vjp(g):
        return tuple(_unbroadcast(c * g, shp) for c, shp in used)

    return tape._record("lincomb", value, tuple(parents), vjp)


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    tape = _tape_of(*xs)
    value = np.stack([x.value for x in xs], axis=axis)
    n = len(xs)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return tape._record("stack", value, tuple(x.index for x in xs), vjp)


def einsum(subscripts: str, a, b) -> Var:
    """Two-operand einsum; gradients by re-contracting with swapped subscripts."""
    tape = _tape_of(a, b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    value = np.einsum(subscripts, av, bv, optimize=True)
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        grads.append(lambda g: np.einsum(f"{out},{sb}->{sa}", g, bv, optimize=True))
    if isinstance(b, Var):
        parents.append(b.index)
        grads.append(lambda g: np.einsum(f"{out},{sa}->{sb}", g, av, optimize=True))
    return tape._record("einsum", value, tuple(parents), lambda g: tuple(f(g) for f in grads))


def fixed_linear(x: Var, forward: Callable, adjoint: Callable, name="linear") -> Var:
    """Apply a frozen linear map. ``adjoint`` must be the transpose of ``forward``."""
    return x.tape._record(name, forward(x.value), (x.index,), lambda g: (adjoint(g),))


def spline_basis(x: Var, basis_fn: Callable) -> Var:
    """Spline basis evaluation node.

    ``basis_fn(xv)`` returns ``(B, dB)`` with shape ``xv.shape + (K,)``; ``dB``
    is the derivative of each basis value with respect to its input.
    """
    B, dB = basis_fn(x.value)
    return x.tape._record("spline_basis", B, (x.index,), lambda g: ((g * dB).sum(axis=-1),))


# ---------------------------------------------------------------------------
# flat parameter vectors


@dataclass
class ParamVector:
    """Flat float64 parameter vector with named, shaped segments.

    ``layout`` is an ordered list of ``(name, shape)``; segments are laid out
    contiguously in that order and partition the vector.
    """

    values: np.ndarray
    layout: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.layout = [(str(n), tuple(int(s) for s in shp)) for n, shp in self.layout]
        total = sum(int(np.prod(shp)) for _, shp in self.layout)
        if total != self.values.size:
            raise ConfigError(
                f"layout covers {total} entries but vector has {self.values.size}"
            )
        names = [n for n, _ in self.layout]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate segment names in layout")

    def __len__(self):
        return self.values.size

    def offsets(self):
        out, start = {}, 0
        for name, shp in self.layout:
            size = int(np.prod(shp))
            out[name] = (start, start + size, shp)
            start += size
        return out

    def segments(self) -> dict:
        """Reshaped views of every segment, keyed by name."""
        return {n: self.values[a:b].reshape(shp) for n, (a, b, shp) in self.offsets().items()}

    def segment(self, name):
        a, b, shp = self.offsets()[name]
        return self.values[a:b].reshape(shp)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), list(self.layout))

    def copy(self) -> "ParamVector":
        return self.with_values(self.values.copy())

    @classmethod
    def from_segments(cls, segments: dict) -> "ParamVector":
        layout = [(n, np.shape(v)) for n, v in segments.items()]
        flat = np.concatenate([np.ravel(v) for v in segments.values()]) if segments else np.zeros(0)
        return cls(flat, layout)

    def save(self, path) -> None:
        """Write ``<path>.bin`` (little-endian float64) and ``<path>.json`` (layout)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.values.astype("<f8").tofile(path.with_suffix(".bin"))
        meta = {"dtype": "float64", "size": int(self.values.size),
                "layout": [{"name": n, "shape": list(s)} for n, s in self.layout]}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "ParamVector":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        values = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        return cls(values, [(d["name"], tuple(d["shape"])) for d in meta["layout"]])


def value_and_grad(loss_fn: Callable[[dict], Var], theta: ParamVector):
    """Evaluate ``loss_fn`` on named leaves of ``theta`` and differentiate it.

    ``loss_fn`` receives a dict ``name -> Var`` and must return a scalar Var.
    Returns ``(loss_value, gradient ParamVector)``.
    """
    tape = Tape()
    leaves = {n: tape.leaf(v) for n, v in theta.segments().items()}
    with np.errstate(over="ignore", invalid="ignore"):
        loss = loss_fn(leaves)
        value = float(loss.value)
        if not np.isfinite(value):
            raise NumericalBlowup(f"non-finite loss {value}")
        adj = tape.backward(loss)
    flat = np.zeros_like(theta.values)
    for (name, (a, b, _)) in theta.offsets().items():
        g = adj[leaves[name].index]
        if g is not None:
            flat[a:b] = np.ravel(g)
    if not np.all(np.isfinite(flat)):
        raise NumericalBlowup("non-finite gradient")
    return value, theta.with_values(flat)


def grad(loss_fn: Callable[[dict], Var], theta: ParamVector) -> ParamVector:
    return value_and_grad(loss_fn, theta)[1]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta: ParamVector, g: ParamVector, state: AdamState | None = None,
              lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_theta, new_state)``."""
    if len(theta) != len(g):
        raise ConfigError(f"parameter size {len(theta)} != gradient size {len(g)}")
    if state is None:
        state = AdamState.zeros(len(theta))
    b1, b2 = betas
    gv = g.values
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * gv
    v = b2 * state.v + (1.0 - b2) * gv * gv
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    new = theta.values - lr * mhat / (np.sqrt(vhat) + eps)
    return theta.with_values(new), AdamState(m, v, t)
