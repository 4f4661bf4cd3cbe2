import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecolearn import autodiff as ad
from ecolearn import neural_ode as node
from ecolearn.errors import ConfigError, DataError, DimensionError, NumericalBlowup
from ecolearn.integrator import TimeGrid, Trajectory, rk_step_tape, simulate
from ecolearn.models import StateVector, default_model
from ecolearn.neural_ode import MlpSpec, Normalization, TrainConfig


def test_parameter_counts():
    assert MlpSpec.node2(3).param_count() == 33539
    assert MlpSpec.node1(3).param_count() == 451
    assert MlpSpec.node1(2).param_count() == 2 * 64 + 64 + 64 * 2 + 2 == 322
    assert MlpSpec.node1(4).param_count() == 4 * 64 + 64 + 64 * 4 + 4 == 580
    spec = MlpSpec.node2(2)
    assert len(node.init_params(spec, 0)) == spec.param_count()


def test_spec_validation():
    with pytest.raises(ConfigError):
        MlpSpec((2, 3))
    with pytest.raises(ConfigError):
        MlpSpec((2, 4, 3))


def test_zero_theta_gives_zero_output():
    spec = MlpSpec((3, 8, 3))
    theta = node.init_params(spec, 0)
    theta = theta.with_values(np.zeros(len(theta)))
    out = node.mlp_forward(spec, theta, StateVector((0.2, 0.3, 0.5), ("a", "b", "c")))
    assert out.values == (0.0, 0.0, 0.0)


def test_input_independent_net():
    spec = MlpSpec((2, 1, 2))
    segs = {"W0": np.zeros((2, 1)), "b0": np.array([0.4]), "W1": np.array([[1.5, -2.0]]), "b1": np.zeros(2)}
    theta = ad.ParamVector.from_segments(segs)
    out = node.mlp_forward(spec, theta, np.array([[3.0, -1.0], [0.0, 7.0]]))
    np.testing.assert_allclose(out, np.tile([1.5 * np.tanh(0.4), -2.0 * np.tanh(0.4)], (2, 1)), atol=1e-15)


def test_layout_mismatch():
    theta = node.init_params(MlpSpec((2, 4, 2)), 0)
    with pytest.raises(ConfigError):
        node.mlp_forward(MlpSpec((2, 5, 2)), theta, np.zeros(2))
    with pytest.raises(DimensionError):
        node.mlp_forward(MlpSpec((2, 4, 2)), theta, np.zeros(3))


def test_glorot_init_bounds():
    spec = MlpSpec((2, 64, 2))
    segs = node.init_params(spec, 3).segments()
    lim = np.sqrt(6 / 66)
    assert np.abs(segs["W0"]).max() <= lim and np.all(segs["b0"] == 0)
    assert np.array_equal(node.init_params(spec, 3).values, node.init_params(spec, 3).values)


def test_normalized_tape_matches_numpy(rng):
    spec = MlpSpec((2, 6, 2), normalization=Normalization((0.3, 0.4), (0.2, 0.1), (0.05, 0.02)))
    theta = node.init_params(spec, 1)
    y = rng.uniform(0, 1, size=(7, 2))
    tape = ad.Tape()
    params = {k: tape.leaf(v) for k, v in theta.segments().items()}
    np.testing.assert_allclose(node.tape_field(spec, params)(y).value, node.mlp_forward(spec, theta, y),
                               rtol=1e-13, atol=1e-16)


def test_normalization_from_data():
    traj = simulate(default_model("LV"), TimeGrid(0, 180, 300))
    norm = Normalization.from_data(traj.states, traj.grid.tau)
    np.testing.assert_allclose(norm.shift, traj.states.mean(axis=0))
    assert all(s > 0 for s in norm.scale + norm.out_scale)


def test_rollout_gradient_matches_fd():
    spec = MlpSpec((2, 4, 2))
    theta = node.init_params(spec, 7)
    data = simulate(default_model("LV"), TimeGrid(0, 2.4, 5))

    def loss(p):
        return node.rollout_loss(node.tape_field(spec, p), data.states[0], data.states, data.grid.tau)

    _, g = ad.value_and_grad(loss, theta)
    h = 1e-5
    for i in range(len(theta)):
        e = np.zeros(len(theta))
        e[i] = h
        fp = ad.value_and_grad(loss, theta.with_values(theta.values + e))[0]
        fm = ad.value_and_grad(loss, theta.with_values(theta.values - e))[0]
        fd = (fp - fm) / (2 * h)
        assert abs(g.values[i] - fd) <= 1e-5 * abs(fd) + 1e-8


def test_rollout_loss_value():
    # identity field: rollout is exp(t) up to RK4 error
    tau = 0.1
    targets = np.exp(tau * np.arange(4))[:, None]
    tape = ad.Tape()
    y0 = tape.leaf(targets[0])
    loss = node.rollout_loss(lambda v: v, y0, targets, tau)
    amp = 1 + tau + tau ** 2 / 2 + tau ** 3 / 6 + tau ** 4 / 24
    pred = amp ** np.arange(4)
    assert loss.value == pytest.approx(np.sum((pred - targets[:, 0]) ** 2) / 4, rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(iterations=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ConfigError):
        TrainConfig(smooth_window=4)
    warm = TrainConfig().warm_stage()
    assert warm.iterations == 2000 and warm.warm_start == 0


def test_train_rejects_short_data():
    g = TimeGrid(0, 0, 1)
    with pytest.raises(DataError):
        node.train_node(Trajectory(g, np.zeros((1, 2)), ("u", "v")), MlpSpec.node1(2))


def test_constant_trajectory_learns_zero_field():
    g = TimeGrid(0, 10, 30)
    data = Trajectory(g, np.tile([0.4, 0.7], (30, 1)), ("u", "v"))
    cfg = TrainConfig(iterations=500, lr=0.01, warm_start=0, normalize=False)
    res = node.train_node(data, MlpSpec((2, 16, 2)), cfg)
    assert res.best_loss <= 1e-6


def test_training_is_deterministic_and_improves():
    data = simulate(default_model("LV"), TimeGrid(0, 30, 40))
    cfg = TrainConfig(iterations=30, warm_start=50)
    a = node.train_node(data, MlpSpec((2, 16, 2)), cfg)
    b = node.train_node(data, MlpSpec((2, 16, 2)), cfg)
    assert np.array_equal(a.theta.values, b.theta.values)
    assert a.warm_history[-1][1] <= 0.5 * a.warm_history[0][1]
    assert a.best_loss <= a.initial_loss
    p1 = node.predict(a.spec, a.theta, data.state(0), data.grid)
    p2 = node.predict(b.spec, b.theta, data.state(0), data.grid)
    assert np.array_equal(p1.states, p2.states) and p1.labels == ("u", "v")


def test_lbfgs_option():
    data = simulate(default_model("LV"), TimeGrid(0, 30, 40))
    res = node.train_node(data, MlpSpec((2, 8, 2)), TrainConfig(iterations=20, optimizer="lbfgs", warm_start=20,
                                                                 warm_optimizer="lbfgs"))
    assert np.isfinite(res.best_loss) and res.best_loss <= res.initial_loss


def test_blowup_rolls_back():
    calls = {"n": 0}

    def loss(p):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericalBlowup("synthetic")
        return ad.vsum(ad.square(p["w"]))

    theta = ad.ParamVector.from_segments({"w": np.array([1.0, -1.0])})
    best, best_loss, hist, rejected = node.fit_adam(loss, theta, TrainConfig(iterations=10, lr=0.1, warm_start=0))
    assert rejected == 1 and np.isinf(hist[2][1]) and best_loss < 2.0


def test_predict_edge_cases():
    spec = MlpSpec((2, 4, 2))
    theta = node.init_params(spec, 0)
    zero = theta.with_values(np.zeros(len(theta)))
    out = node.predict(spec, zero, [0.2, 0.3], TimeGrid(0, 5, 11))
    assert np.all(out.states == [0.2, 0.3])
    assert node.predict(spec, theta, [0.2, 0.3], TimeGrid(0, 0, 1)).states.shape == (1, 2)
    with pytest.raises(DimensionError):
        node.predict(spec, theta, [0.2, 0.3, 0.1], TimeGrid(0, 5, 11))


def test_rate_targets_exact_on_polynomials():
    t = np.linspace(0, 3, 40)
    y = np.column_stack([t ** 3 - t, 2 * t])
    r = node.rate_targets(y, t[1] - t[0], 7, 6)
    np.testing.assert_allclose(r, np.column_stack([3 * t ** 2 - 1, 2 + 0 * t]), atol=1e-9)


def test_log_written(tmp_path):
    data = simulate(default_model("LV"), TimeGrid(0, 10, 10))
    res = node.train_node(data, MlpSpec((2, 4, 2)), TrainConfig(iterations=3, warm_start=0))
    res.write_log(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "iteration,loss,grad_norm"


@given(st.integers(0, 1000))
def test_batched_forward_matches_single(seed):
    spec = MlpSpec((2, 3, 2))
    theta = node.init_params(spec, seed)
    Y = np.random.default_rng(seed).uniform(-1, 1, size=(4, 2))
    batch = node.mlp_forward(spec, theta, Y)
    for k in range(4):
        np.testing.assert_allclose(batch[k], node.mlp_forward(spec, theta, Y[k]), atol=1e-15)
