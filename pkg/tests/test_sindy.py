import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecolearn.errors import ConfigError, DataError, SolveError
from ecolearn.integrator import TimeGrid, Trajectory, simulate, split
from ecolearn.metrics import aggregate_error
from ecolearn.models import default_model
from ecolearn.sindy import (SparseModel, build_library, estimate_derivatives, fit_sindy, render,
                            simulate_identified, stlsq, tv_denoise)

from oracles import expected_xi, oracle_dataset


@pytest.mark.parametrize("m,n", [(2, 6), (3, 10), (4, 15)])
def test_library_size(m, n):
    assert len(build_library([f"x{i}" for i in range(m)], 2)) == n


def test_library_names_and_order():
    lib = build_library(["u", "v"], 2)
    assert lib.names == ["1", "u", "v", "u^2", "u v", "v^2"]
    assert build_library(["u", "v"], 2).names == lib.names
    with pytest.raises(ConfigError):
        build_library(["u"], 0)
    np.testing.assert_array_equal(lib.evaluate([[2.0, 3.0]]), [[1, 2, 3, 4, 6, 9]])


def _traj(values, tau):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    grid = TimeGrid(0.0, tau * (len(values) - 1), len(values))
    return Trajectory(grid, values, tuple(f"y{i}" for i in range(values.shape[1])))


def test_derivative_examples():
    t = np.arange(20) * 0.1
    np.testing.assert_array_equal(estimate_derivatives(_traj(np.full(20, 3.0), 0.1)), 0.0)
    np.testing.assert_allclose(estimate_derivatives(_traj(2.5 * t, 0.1))[:, 0], 2.5, atol=1e-12)
    d = estimate_derivatives(_traj(t * t, 0.1))[:, 0]
    np.testing.assert_allclose(d[1:-1], 2 * t[1:-1], atol=1e-12)
    np.testing.assert_allclose(d[[0, -1]], 2 * t[[0, -1]], atol=1e-12)
    with pytest.raises(DataError):
        estimate_derivatives(_traj([1.0, 2.0], 0.1))


def test_stlsq_linear_oracle():
    u = np.linspace(0.1, 2.0, 40)
    A = np.column_stack([np.ones_like(u), u, u * u])
    xi = stlsq(A, 2 * u, 0.001)
    np.testing.assert_allclose(xi[:, 0], [0, 2, 0], atol=1e-10)
    assert xi[0, 0] == 0 and xi[2, 0] == 0


def test_stlsq_high_threshold_kills_all():
    u = np.linspace(0.1, 2.0, 40)
    A = np.column_stack([np.ones_like(u), u])
    assert np.all(stlsq(A, 0.5 + 0.3 * u, 1.0) == 0)


def test_stlsq_rank_deficiency():
    u = np.linspace(0, 1, 10)
    A = np.column_stack([u, 2 * u])
    with pytest.raises(SolveError, match="comp"):
        stlsq(A, u, 0.001, 0.0, names=["comp"])
    assert np.all(np.isfinite(stlsq(A, u, 0.001, 1e-6)))


def test_stlsq_threshold_tie_kept():
    u = np.linspace(0.1, 1, 10)
    A = np.column_stack([u, u * u])
    xi = stlsq(A, 0.5 * u + 0.25 * u * u, 0.25)
    assert xi[1, 0] == pytest.approx(0.25)


@pytest.mark.parametrize("kind", ["SIR", "LV", "LVSIS"])
def test_oracle_recovery(kind):
    model, Y, dY = oracle_dataset(kind)
    lib = build_library(model.labels, 2)
    xi = stlsq(lib.evaluate(Y), dY, 0.001)
    exp = expected_xi(model, lib.names)
    assert np.abs(xi - exp).max() <= 1e-8
    assert np.all(xi[exp == 0] == 0)


def test_thresholding_idempotent_and_scaling():
    model, Y, dY = oracle_dataset("LV")
    lib = build_library(model.labels, 2)
    A = lib.evaluate(Y)
    noisy = dY + 1e-3 * np.sin(np.arange(dY.size)).reshape(dY.shape)
    xi = stlsq(A, noisy, 0.001)
    np.testing.assert_allclose(stlsq(A, A @ xi, 0.001), xi, atol=1e-10)
    c = 3.0
    np.testing.assert_allclose(stlsq(A, c * noisy, c * 0.001), c * xi, rtol=1e-9, atol=1e-12)


def test_lv_finite_difference_fit():
    ref = simulate(default_model("LV"), TimeGrid(0, 180, 300))
    train, _ = split(ref, 2 / 3)
    sm = fit_sindy(train)
    assert sm.coefficient("u", "u") == pytest.approx(0.472, abs=0.05)
    assert sm.coefficient("u", "u v") == pytest.approx(-0.769, abs=0.05)
    nz = sm.xi[sm.xi != 0]
    assert np.all(np.abs(nz) >= 0.001)
    pred = simulate_identified(sm, ref.states[0], ref.grid)
    assert aggregate_error(pred.states, ref.states) <= 3.0


def test_zero_model_is_constant_and_renders():
    lib = build_library(["u", "v"], 2)
    sm = SparseModel(lib, np.zeros((6, 2)), 0.001)
    out = simulate_identified(sm, [0.3, 0.4], TimeGrid(0, 1, 5))
    assert np.all(out.states == [0.3, 0.4])
    assert render(sm) == "u' = 0\nv' = 0"
    xi = np.zeros((6, 2))
    xi[4, 0] = 0.5
    xi[2, 1] = -0.25
    xi[0, 1] = 0.1
    assert render(SparseModel(lib, xi, 0.001)) == "u' = 0.500 u v\nv' = 0.100 - 0.250 v"


def test_model_json_roundtrip(tmp_path):
    ref = simulate(default_model("LV"), TimeGrid(0, 180, 300))
    sm = fit_sindy(ref)
    sm.save(tmp_path / "m.json")
    back = SparseModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.xi, sm.xi)
    assert back.library.names == sm.library.names


def test_tv_limits():
    y = np.sin(np.linspace(0, 3, 50))
    assert np.array_equal(tv_denoise(y, 0.0), y)
    np.testing.assert_allclose(tv_denoise(y, 1e6), y.mean())
    with pytest.raises(ConfigError):
        tv_denoise(y, -1.0)


def test_tv_step_signal(rng):
    clean = np.where(np.arange(100) < 40, 0.0, 1.0)
    y = clean + 0.05 * rng.normal(size=100)
    x = tv_denoise(y, 0.5)
    jump = int(np.argmax(np.abs(np.diff(x))))
    assert jump == 39
    assert abs(np.median(x[:40]) - 0.0) < 0.05 and abs(np.median(x[40:]) - 1.0) < 0.05


def test_tv_optimality(rng):
    y = rng.normal(size=30)
    w = 0.3
    x = tv_denoise(y, w, tol=1e-10)
    obj = lambda z: 0.5 * np.sum((z - y) ** 2) + w * np.sum(np.abs(np.diff(z)))
    for _ in range(50):
        assert obj(x) <= obj(x + 1e-3 * rng.normal(size=30)) + 1e-9


def test_tv_columns(rng):
    Y = rng.normal(size=(20, 3))
    out = tv_denoise(Y, 0.2)
    np.testing.assert_allclose(out[:, 1], tv_denoise(Y[:, 1], 0.2))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_stlsq_recovers_affine_law(a, b):
    u = np.linspace(-1, 1, 25)
    A = np.column_stack([np.ones_like(u), u, u * u])
    xi = stlsq(A, a + b * u, 0.001)[:, 0]
    for got, want in zip(xi, (a, b, 0.0)):
        if abs(want) >= 0.0011:
            assert got == pytest.approx(want, abs=1e-9)
        elif abs(want) < 0.0009:
            assert got == 0.0
