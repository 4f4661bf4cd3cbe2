"""Eco-epidemiological ODE systems: SIR, SIS, Lotka-Volterra and LVSIS.

Component order is fixed per model and everything downstream indexes by
position:

    SIR    (u_s, u_i, u_r)
    SIS    (u_s, u_i)
    LV     (u, v)            prey, predator
    LVSIS  (u_s, u_i, v_s, v_i)

:func:`rhs` is a pure map; it never clips negative populations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Union

import numpy as np

from .errors import ConfigError, DimensionError


class ModelKind(str, Enum):
    SIR = "SIR"
    SIS = "SIS"
    LV = "LV"
    LVSIS = "LVSIS"


LABELS = {
    ModelKind.SIR: ("u_s", "u_i", "u_r"),
    ModelKind.SIS: ("u_s", "u_i"),
    ModelKind.LV: ("u", "v"),
    ModelKind.LVSIS: ("u_s", "u_i", "v_s", "v_i"),
}

# horizon used for each canonical dataset
DEFAULT_T_MAX = {
    ModelKind.SIR: 60.0,
    ModelKind.SIS: 60.0,
    ModelKind.LV: 180.0,
    ModelKind.LVSIS: 1971.0,
}


class _NonNegative:
    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{type(self).__name__}.{f.name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SirParams(_NonNegative):
    sigma: float  # infection rate
    omega: float  # recovery rate


@dataclass(frozen=True)
class SisParams(_NonNegative):
    sigma: float
    omega: float


@dataclass(frozen=True)
class LvParams(_NonNegative):
    alpha: float  # prey birth
    beta: float  # predation
    delta: float  # predator reproduction
    gamma: float  # predator death
    eta: float  # quadratic prey mortality


@dataclass(frozen=True)
class LvsisParams(_NonNegative):
    """Rates of the coupled predator-prey / SIS system.

    ``beta_xy``: predation on prey class x by predator class y.
    ``delta_xy``: reproduction of predator class x from prey class y.
    ``sigma_*``: transmission, ``omega_*``: recovery.
    """

    alpha_s: float
    alpha_i: float
    beta_ss: float
    beta_si: float
    beta_is: float
    beta_ii: float
    gamma_us: float
    gamma_ui: float
    gamma_vs: float
    gamma_vi: float
    delta_ss: float
    delta_si: float
    delta_is: float
    delta_ii: float
    sigma_s_i: float
    sigma_s_vi: float
    sigma_vs_i: float
    sigma_vs_vi: float
    omega_i: float
    omega_vi: float


Params = Union[SirParams, SisParams, LvParams, LvsisParams]

_PARAM_TYPES = {
    ModelKind.SIR: SirParams,
    ModelKind.SIS: SisParams,
    ModelKind.LV: LvParams,
    ModelKind.LVSIS: LvsisParams,
}


@dataclass(frozen=True)
class StateVector:
    values: tuple
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if len(self.values) != len(self.labels):
            raise DimensionError(f"{len(self.values)} values for {len(self.labels)} labels")
        if len(set(self.labels)) != len(self.labels):
            raise DimensionError(f"duplicate component labels {self.labels}")

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    params: Params
    initial_state: StateVector

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not isinstance(self.params, _PARAM_TYPES[self.kind]):
            raise ConfigError(f"{self.kind.value} needs {_PARAM_TYPES[self.kind].__name__}")
        if len(self.initial_state) != self.dim:
            raise DimensionError(
                f"{self.kind.value} has {self.dim} components, initial state has {len(self.initial_state)}"
            )

    @property
    def dim(self) -> int:
        return len(LABELS[self.kind])

    @property
    def labels(self) -> tuple:
        return LABELS[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": asdict(self.params),
            "initial_state": list(self.initial_state.values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kind = ModelKind(d["kind"])
        try:
            params = _PARAM_TYPES[kind](**d["params"])
        except TypeError as exc:
            raise ConfigError(f"bad {kind.value} parameters: {exc}") from None
        return cls(kind, params, StateVector(d["initial_state"], LABELS[kind]))


def _sir(p: SirParams, y):
    us, ui = y[..., 0], y[..., 1]
    inf = p.sigma * us * ui
    rec = p.omega * ui
    return np.stack([-inf, inf - rec, rec], axis=-1)


def _sis(p: SisParams, y):
    us, ui = y[..., 0], y[..., 1]
    inf = p.sigma * us * ui
    rec = p.omega * ui
    return np.stack([-inf + rec, inf - rec], axis=-1)


def _lv(p: LvParams, y):
    u, v = y[..., 0], y[..., 1]
    du = p.alpha * u - p.beta * u * v - p.eta * u * u
    dv = p.delta * u * v - p.gamma * v
    return np.stack([du, dv], axis=-1)


def _lvsis(p: LvsisParams, y):
    us, ui, vs, vi = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    dus = (p.alpha_s * us + p.alpha_i * ui
           - p.beta_ss * us * vs - p.beta_si * us * vi
           - p.gamma_us * us * us
           - p.sigma_s_i * us * ui - p.sigma_s_vi * us * vi
           + p.omega_i * ui)
    dui = (-p.beta_is * ui * vs - p.beta_ii * ui * vi
           - p.gamma_ui * ui * ui
           + p.sigma_s_i * us * ui + p.sigma_s_vi * us * vi
           - p.omega_i * ui)
    dvs = (-p.gamma_vs * vs + p.delta_ss * vs * us + p.delta_si * vs * ui
           - p.sigma_vs_i * vs * ui - p.sigma_vs_vi * vs * vi
           + p.omega_vi * vi)
    dvi = (-p.gamma_vi * vi + p.delta_is * vi * us + p.delta_ii * vi * ui
           + p.sigma_vs_i * vs * ui + p.sigma_vs_vi * vs * vi
           - p.omega_vi * vi)
    return np.stack([dus, dui, dvs, dvi], axis=-1)


_RHS = {
    ModelKind.SIR: _sir,
    ModelKind.SIS: _sis,
    ModelKind.LV: _lv,
    ModelKind.LVSIS: _lvsis,
}


def rhs(model: ModelSpec, y):
    """Evaluate ``f(y)`` for ``model``.

    ``y`` may be a :class:`StateVector` (returns one) or an array whose last
    axis holds the components (returns an array of the same shape).
    """
    if isinstance(y, StateVector):
        if len(y) != model.dim:
            raise DimensionError(f"{model.kind.value} expects {model.dim} components, got {len(y)}")
        return StateVector(_RHS[model.kind](model.params, y.as_array()), model.labels)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != model.dim:
        raise DimensionError(f"{model.kind.value} expects last axis {model.dim}, got shape {y.shape}")
    return _RHS[model.kind](model.params, y)


def vector_field(model: ModelSpec):
    """Array-in/array-out closure over :func:`rhs` (no per-call validation)."""
    f, p = _RHS[model.kind], model.params
    return lambda y: f(p, y)


# LVSIS parameter sets.  "table" reproduces the expanded original equations
# printed next to the identified SINDy models (gamma_u = 0.01, delta_ii = 0.041);
# "text" is the parameter list given in prose (gamma_u = 0.02, delta_ii = 0.04).
_LVSIS_COMMON = dict(
    alpha_s=0.04, alpha_i=0.02,
    beta_ss=0.02, beta_si=0.02, beta_is=0.02, beta_ii=0.02,
    gamma_vs=0.01, gamma_vi=0.01,
    delta_ss=0.04, delta_si=0.04, delta_is=0.04,
    sigma_s_i=0.01, sigma_s_vi=0.01, sigma_vs_i=0.01, sigma_vs_vi=0.01,
    omega_i=0.01, omega_vi=0.01,
)
LVSIS_VARIANTS = {
    "table": LvsisParams(**_LVSIS_COMMON, gamma_us=0.01, gamma_ui=0.01, delta_ii=0.041),
    "text": LvsisParams(**_LVSIS_COMMON, gamma_us=0.02, gamma_ui=0.02, delta_ii=0.04),
}


def default_model(kind, variant: str = "table") -> ModelSpec:
    """Canonical parameters and initial condition for ``kind``.

    ``variant`` only matters for LVSIS (see ``LVSIS_VARIANTS``).
    """
    kind = ModelKind(kind)
    if kind is ModelKind.SIR:
        return ModelSpec(kind, SirParams(0.5, 0.1), StateVector((0.99, 0.01, 0.0), LABELS[kind]))
    if kind is ModelKind.SIS:
        # no canonical SIS dataset; reuse the SIR rates and seed
        return ModelSpec(kind, SisParams(0.5, 0.1), StateVector((0.99, 0.01), LABELS[kind]))
    if kind is ModelKind.LV:
        return ModelSpec(kind, LvParams(0.5, 0.8, 0.4, 0.3, 0.05), StateVector((0.5, 0.5), LABELS[kind]))
    if variant not in LVSIS_VARIANTS:
        raise ConfigError(f"unknown LVSIS variant {variant!r}; choose from {sorted(LVSIS_VARIANTS)}")
    return ModelSpec(kind, LVSIS_VARIANTS[variant], StateVector((0.7, 0.3, 0.6, 0.4), LABELS[kind]))
