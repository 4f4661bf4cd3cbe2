import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from ecolearn.errors import DimensionError, GridError
from ecolearn.integrator import TimeGrid, simulate
from ecolearn.models import ModelSpec, default_model
from ecolearn.spatial import (Field, FieldSeries, Grid, apply, assemble_laplacian, default_initial_field,
                              load_binary, save_binary, simulate_rd)


def test_three_node_stencil():
    op = assemble_laplacian(Grid.line(2.0, 3), 1.0)
    np.testing.assert_array_equal(op.matrix.toarray(), [[-2, 2, 0], [1, -2, 1], [0, 2, -2]])


def test_grid_spacing_and_validation():
    g = Grid.line(10.0, 10)
    assert g.spacing == (10 / 9,)
    assert Grid.rect(10, 5, 7, 6).spacing == (10 / 6, 1.0)
    with pytest.raises(GridError):
        Grid.line(1.0, 2)
    with pytest.raises(GridError):
        Grid.rect(1.0, 1.0, 2, 5)
    with pytest.raises(GridError):
        Grid.line(-1.0, 5)


def test_node_ordering_is_row_major():
    g = Grid.rect(2.0, 2.0, 3, 3)
    np.testing.assert_allclose(g.coords()[:4], [[0, 0], [1, 0], [2, 0], [0, 1]])
    A = assemble_laplacian(g, 1.0).matrix.toarray()
    assert A[4, 3] == A[4, 5] == A[4, 1] == A[4, 7] == 1.0


def test_2d_is_kronecker_sum():
    g = Grid.rect(2.0, 2.0, 3, 3)
    l1 = assemble_laplacian(Grid.line(2.0, 3), 1.0).matrix
    eye = sp.identity(3)
    kron = sp.kron(eye, l1) + sp.kron(l1, eye)
    np.testing.assert_array_equal(assemble_laplacian(g, 1.0).matrix.toarray(), kron.toarray())


def test_anisotropic_kronecker_sum():
    g = Grid.rect(4.0, 3.0, 5, 4)
    lx = assemble_laplacian(Grid.line(4.0, 5), 0.3).matrix
    ly = assemble_laplacian(Grid.line(3.0, 4), 0.3).matrix
    kron = sp.kron(sp.identity(4), lx) + sp.kron(ly, sp.identity(5))
    np.testing.assert_allclose(assemble_laplacian(g, 0.3).matrix.toarray(), kron.toarray(), atol=1e-15)


def test_degenerate_axis_matches_1d():
    one = assemble_laplacian(Grid.line(5.0, 6), 0.7).matrix.toarray()
    two = assemble_laplacian(Grid.rect(5.0, 1.0, 6, 1), 0.7).matrix.toarray()
    np.testing.assert_array_equal(one, two)


@pytest.mark.parametrize("grid", [Grid.line(10, 10), Grid.line(3, 3), Grid.rect(10, 10, 7, 7), Grid.rect(4, 9, 3, 8)])
def test_zero_row_sums(grid, rng):
    kappa = rng.uniform(0.1, 2.0, size=(2, grid.n_nodes))
    for k in (1e-5, 1.0, kappa):
        op = assemble_laplacian(grid, k, 2)
        assert np.abs(np.asarray(op.matrix.sum(axis=1))).max() <= 1e-15 * np.abs(op.matrix).max()


def test_exact_zero_row_sums(rng):
    import math

    for g in (Grid.rect(10, 10, 7, 7), Grid.line(10, 10), Grid.rect(3, 7, 5, 4)):
        op = assemble_laplacian(g, 1e-5, 4)
        assert np.all(op.apply_array(np.ones((4, g.n_nodes))) == 0)
        if len(set(g.spacing)) == 1:
            # equal spacings: the stored diagonal is an exact sum of its neighbours
            A = op.matrix.tocsr()
            assert all(math.fsum(A.getrow(i).data) == 0.0 for i in range(A.shape[0]))
        var = assemble_laplacian(g, rng.uniform(0.1, 3.0, size=g.n_nodes), 2)
        assert np.all(var.apply_array(np.full((2, g.n_nodes), 0.37)) == 0)


def test_symmetric_negative_semidefinite_constant_kappa(rng):
    # the factor-2 boundary rows break plain symmetry; the operator is
    # symmetric in the trapezoidal inner product (weights 1/2 at boundary nodes)
    op = assemble_laplacian(Grid.line(10, 10), 0.5)
    A = op.matrix.toarray()
    w = np.ones(10)
    w[[0, -1]] = 0.5
    W = np.diag(w)
    np.testing.assert_allclose(W @ A, (W @ A).T, atol=1e-15)
    for _ in range(20):
        u = rng.normal(size=10)
        assert u @ W @ A @ u <= 1e-12 * (u @ u)
    assert np.all(A - np.diag(np.diag(A)) >= 0)


def test_interface_arithmetic_mean():
    k = np.array([1.0, 3.0, 5.0])
    A = assemble_laplacian(Grid.line(2.0, 3), k).matrix.toarray()
    np.testing.assert_allclose(A, [[-4, 4, 0], [2, -6, 4], [0, 8, -8]])


def test_kappa_shapes():
    g = Grid.line(10, 5)
    assert assemble_laplacian(g, [1.0, 2.0]).components == 2
    assert assemble_laplacian(g, np.ones(5), 3).components == 3
    assert assemble_laplacian(g, np.ones((2, 5))).components == 2
    with pytest.raises(DimensionError):
        assemble_laplacian(g, np.ones((2, 4)))
    with pytest.raises(GridError):
        assemble_laplacian(g, -1.0)


def test_apply_properties(rng):
    g = Grid.rect(3, 3, 4, 5)
    op = assemble_laplacian(g, [0.2, 1.3])
    const = Field(g, np.tile([[0.4], [2.0]], (1, g.n_nodes)))
    assert np.all(apply(op, const).values == 0)
    u, v = rng.normal(size=(2, 2, g.n_nodes))
    lhs = apply(op, Field(g, 2.5 * u - 0.7 * v)).values
    rhs_ = 2.5 * apply(op, Field(g, u)).values - 0.7 * apply(op, Field(g, v)).values
    np.testing.assert_allclose(lhs, rhs_, atol=1e-14)
    e = np.zeros((2, g.n_nodes))
    e[1, 6] = 1.0
    np.testing.assert_array_equal(apply(op, Field(g, e)).values[1], op.blocks[1].toarray()[:, 6])
    with pytest.raises(DimensionError):
        apply(op, Field(g, np.zeros((3, g.n_nodes))))


def test_transpose_apply(rng):
    op = assemble_laplacian(Grid.rect(3, 3, 4, 5), 0.4, 2)
    u, v = rng.normal(size=(2, 2, 20))
    assert np.sum(op.apply_array(u) * v) == pytest.approx(np.sum(u * op.apply_transpose_array(v)), rel=1e-12)


@pytest.mark.parametrize("grid", [Grid.line(10, 10), Grid.rect(10, 10, 7, 7)])
def test_pure_diffusion_conserves_mass(grid, rng):
    op = assemble_laplacian(grid, 0.05, 2)
    ic = Field(grid, rng.uniform(0.5, 1.5, size=(2, grid.n_nodes)))
    out = simulate_rd(None, op, ic, TimeGrid(0, 20, 200)).values
    # trapezoidal weights make the discrete mass exactly invariant
    w = np.ones(grid.shape[0])
    w[[0, -1]] = 0.5
    if grid.dim == 2:
        wy = np.ones(grid.shape[1])
        wy[[0, -1]] = 0.5
        w = np.outer(wy, w).ravel()
    mass = out @ w
    assert np.abs(mass / mass[0] - 1).max() <= 1e-10


def test_zero_diffusion_decouples_nodes():
    m = default_model("LV")
    g = Grid.line(10, 5)
    op = assemble_laplacian(g, 0.0, 2)
    ic = default_initial_field(m, g)
    tg = TimeGrid(0, 30, 100)
    out = simulate_rd(m, op, ic, tg)
    for j in range(g.n_nodes):
        mj = ModelSpec(m.kind, m.params, m.initial_state.__class__(ic.values[:, j], m.labels))
        np.testing.assert_array_equal(out.values[:, :, j], simulate(mj, tg).states)


def test_lvsis_exchange_totals_with_diffusion():
    m = default_model("LVSIS")
    g = Grid.line(10, 10)
    op = assemble_laplacian(g, 1e-5, 4)
    out = simulate_rd(m, op, default_initial_field(m, g), TimeGrid(0, 1971, 300))
    assert np.all(np.isfinite(out.values)) and out.values.min() > 0
    assert out.labels == m.labels


def test_default_initial_field_is_positive_bump():
    m = default_model("LVSIS")
    g = Grid.line(10, 11)
    f = default_initial_field(m, g)
    base = m.initial_state.as_array()
    assert np.all(f.values >= base[:, None])
    np.testing.assert_allclose(f.values[:, 5], 1.2 * base)


def test_simulate_rd_dimension_checks():
    m = default_model("LV")
    g = Grid.line(10, 5)
    with pytest.raises(DimensionError):
        simulate_rd(m, assemble_laplacian(g, 1.0, 3), Field(g, np.ones((3, 5))), TimeGrid(0, 1, 3))


def test_field_validation():
    with pytest.raises(DimensionError):
        Field(Grid.line(1, 4), np.zeros((2, 5)))


def test_exports(tmp_path):
    m = default_model("LV")
    g = Grid.rect(2, 2, 3, 4)
    series = simulate_rd(m, assemble_laplacian(g, 0.01, 2), default_initial_field(m, g), TimeGrid(0, 1, 5))
    series.save(tmp_path / "series")
    back = FieldSeries.load(tmp_path / "series")
    np.testing.assert_array_equal(back.values, series.values)
    assert back.grid == g and back.time == series.time and back.labels == m.labels
    series[2].to_csv(tmp_path / "snap.csv", list(m.labels))
    lines = (tmp_path / "snap.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,u,v" and len(lines) == 1 + g.n_nodes
    save_binary(tmp_path / "f", series.values[0], g)
    vals, g2, meta = load_binary(tmp_path / "f")
    assert meta["shape"] == [2, 12] and g2 == g
    assert len(series.head(3)) == 3


@given(st.integers(3, 9), st.integers(1, 6), st.floats(0.01, 10.0))
def test_row_sums_property(nx, ny, kappa):
    if ny == 2:
        ny = 3
    op = assemble_laplacian(Grid.rect(1.0, 1.0, nx, ny), kappa)
    A = op.matrix
    assert np.abs(np.asarray(A.sum(axis=1))).max() <= 1e-12 * abs(A).max()
