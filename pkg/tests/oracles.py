"""Hand-expanded generating coefficients and oracle datasets shared by the tests."""

import numpy as np

from ecolearn.integrator import TimeGrid, simulate
from ecolearn.models import DEFAULT_T_MAX, ModelKind, ModelSpec, StateVector, default_model, rhs


def expected_terms(model: ModelSpec) -> dict:
    """``{component: {term name: coefficient}}`` read off the model equations."""
    p = model.params
    if model.kind is ModelKind.SIR:
        return {"u_s": {"u_s u_i": -p.sigma},
                "u_i": {"u_s u_i": p.sigma, "u_i": -p.omega},
                "u_r": {"u_i": p.omega}}
    if model.kind is ModelKind.LV:
        return {"u": {"u": p.alpha, "u v": -p.beta, "u^2": -p.eta},
                "v": {"u v": p.delta, "v": -p.gamma}}
    if model.kind is ModelKind.LVSIS:
        return {
            "u_s": {"u_s": p.alpha_s, "u_i": p.alpha_i + p.omega_i, "u_s v_s": -p.beta_ss,
                    "u_s v_i": -(p.beta_si + p.sigma_s_vi), "u_s^2": -p.gamma_us, "u_s u_i": -p.sigma_s_i},
            "u_i": {"u_i v_s": -p.beta_is, "u_i v_i": -p.beta_ii, "u_i^2": -p.gamma_ui,
                    "u_s u_i": p.sigma_s_i, "u_s v_i": p.sigma_s_vi, "u_i": -p.omega_i},
            "v_s": {"v_s": -p.gamma_vs, "u_s v_s": p.delta_ss, "u_i v_s": p.delta_si - p.sigma_vs_i,
                    "v_s v_i": -p.sigma_vs_vi, "v_i": p.omega_vi},
            "v_i": {"v_i": -(p.gamma_vi + p.omega_vi), "u_s v_i": p.delta_is, "u_i v_i": p.delta_ii,
                    "u_i v_s": p.sigma_vs_i, "v_s v_i": p.sigma_vs_vi},
        }
    raise ValueError(model.kind)


def expected_xi(model: ModelSpec, names: list) -> np.ndarray:
    terms = expected_terms(model)
    xi = np.zeros((len(names), model.dim))
    for j, lab in enumerate(model.labels):
        for name, c in terms[lab].items():
            xi[names.index(name), j] = c
    return xi


def oracle_dataset(kind: str):
    """States and exact rates on the canonical grid.

    SIR trajectories conserve ``u_s + u_i + u_r``, which makes the constant
    column of the library collinear with the linear ones; three initial
    conditions with different totals restore full rank.
    """
    model = default_model(kind)
    grid = TimeGrid(0.0, DEFAULT_T_MAX[model.kind], 300)
    ics = [model.initial_state.values]
    if model.kind is ModelKind.SIR:
        ics += [(0.6, 0.05, 0.1), (0.3, 0.2, 0.4)]
    states = []
    for ic in ics:
        m = ModelSpec(model.kind, model.params, StateVector(ic, model.labels))
        states.append(simulate(m, grid).states)
    Y = np.concatenate(states)
    return model, Y, rhs(model, Y)
