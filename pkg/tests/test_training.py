import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psnn import diff_engine as ad
from psnn import integrators as integ
from psnn.network import GradientNet, activation_from_name, init_network, pade, quadratic_net, taylor
from psnn.presets import EXPERIMENTS
from psnn.systems import HamiltonianSystem, builtin
from psnn.training import (
    AdamState,
    Dataset,
    DataGenerationError,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    generate_dataset,
    loss,
    loss_and_gradient,
    loss_gradient,
    parse_region,
    predict_pair,
    train,
)

ZERO_SYSTEM = HamiltonianSystem("zero", 1, lambda y: 0.0 * y[..., 0], lambda y: 0.0 * y)


def tiny_net(kind="pade", seed=0, d=1, l=3, S=2):  # noqa: E741
    net = init_network(d, l, S, activation_from_name(kind), seed)
    rng = np.random.default_rng(seed + 1)
    return GradientNet(net.d, net.l, net.S, net.activation, net.A, net.B, net.b,
                       0.3 * rng.normal(size=net.act_params.shape))


def zero_net(d=1):
    net = init_network(d, 2, 1, pade(), 0)
    return net.with_params(np.zeros(net.n_params))


# --- data


def test_zero_field_dataset_is_identity():
    ds = generate_dataset(ZERO_SYSTEM, (-1, 1), 1, 0.01, 0.01, seed=3)
    np.testing.assert_array_equal(ds.y1, ds.y0)


def test_dataset_is_deterministic_and_in_region():
    sys = builtin("galactic")
    region = [(-1, 1), (0, 2), (-2, -1), (3, 4)]
    a = generate_dataset(sys, region, 20, 0.02, 0.01, seed=5)
    b = generate_dataset(sys, region, 20, 0.02, 0.01, seed=5)
    np.testing.assert_array_equal(a.y0, b.y0)
    np.testing.assert_array_equal(a.y1, b.y1)
    lo, hi = np.array(region).T
    assert np.all((a.y0 >= lo) & (a.y0 < hi))
    assert a.meta == {"system_name": "galactic", "region": [list(map(float, r)) for r in region],
                      "N": 20, "T": 0.02, "h_gen": 0.01, "seed": 5}


def test_pair_energy_error_is_third_order():
    # the midpoint rule conserves quadratic invariants only; for the pendulum the
    # per-pair energy error is O(h^3)
    sys = builtin("pendulum")
    ds = generate_dataset(sys, (-2, 2), 15, 0.01, 0.01, seed=0)
    coarse = np.abs(sys.H(ds.y1) - sys.H(ds.y0))
    assert np.max(coarse) < 1e-6
    fine = generate_dataset(sys, (-2, 2), 15, 0.005, 0.005, seed=0)
    ratio = np.max(coarse) / np.max(np.abs(sys.H(fine.y1) - sys.H(fine.y0)))
    assert 6 < ratio < 10
    quad = builtin("harmonic")
    ds = generate_dataset(quad, (-2, 2), 15, 0.01, 0.01, seed=0)
    assert np.max(np.abs(quad.H(ds.y1) - quad.H(ds.y0))) < 1e-10


def test_dataset_validation():
    sys = builtin("pendulum")
    with pytest.raises(ValueError, match="divide"):
        generate_dataset(sys, (-2, 2), 5, 0.01, 0.003, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(sys, (2, -2), 5, 0.01, 0.01, seed=0)
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros((0, 2)), 0.01)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def test_region_broadcast():
    np.testing.assert_array_equal(parse_region((-2, 2), 4), [[-2, 2]] * 4)
    with pytest.raises(ValueError):
        parse_region([(-1, 1)] * 3, 4)


def test_generation_failure_names_sample():
    stiff = HamiltonianSystem("stiff", 1, lambda y: 0.0 * y[..., 0], lambda y: 500.0 * y)
    with pytest.raises(DataGenerationError) as info:
        generate_dataset(stiff, (-1, 1), 3, 0.01, 0.01, seed=0)
    assert info.value.sample == 0


# --- prediction and loss


def test_zero_net_predicts_identity():
    y0 = np.array([[0.3, -0.2], [1.0, 2.0]])
    np.testing.assert_array_equal(predict_pair(zero_net(), y0, 0.01, 3), y0)


def test_one_step_prediction():
    net = tiny_net()
    y0 = np.array([0.4, 0.1])
    field = lambda y: -np.array([[0, 1], [-1, 0]]) @ net(y)  # noqa: E731
    np.testing.assert_allclose(predict_pair(net, y0, 0.05, 1), integ.ps_rk_step(field, y0, 0.05), rtol=1e-15)
    with pytest.raises(ValueError):
        predict_pair(net, y0, 0.05, 0)


def test_hardwired_true_gradient_matches_true_system_step():
    sys = builtin("pendulum")
    y0 = np.array([0.5, 1.2])
    np.testing.assert_array_equal(predict_pair(sys, y0, 0.01, 1), integ.ps_rk_step(sys.field, y0, 0.01))


def test_loss_examples():
    rng = np.random.default_rng(0)
    y0 = rng.normal(size=(4, 2))
    net = tiny_net()
    perfect = Dataset(y0, predict_pair(net, y0, 0.01, 2), 0.02)
    assert loss(net, perfect, 0.01, 2) == 0.0
    u = rng.normal(size=(4, 2))
    u *= 1e-3 / np.linalg.norm(u, axis=1, keepdims=True)
    shifted = Dataset(y0, y0 + u, 0.01)
    assert loss(zero_net(), shifted, 0.01, 1) == pytest.approx(1e-6, rel=1e-9)


def test_loss_matches_per_sample_recomputation():
    net = tiny_net("pau", 4)
    rng = np.random.default_rng(1)
    ds = Dataset(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), 0.03)
    expected = np.mean([np.sum((predict_pair(net, a, 0.01, 3) - b) ** 2) for a, b in zip(ds.y0, ds.y1)])
    assert loss(net, ds, 0.01, 3) == pytest.approx(expected, rel=1e-13)
    # the traced loss agrees with the plain one
    assert loss_and_gradient(net, ds, 0.01, 3)[0] == pytest.approx(expected, rel=1e-13)


# --- gradients


def _random_case(seed):
    rng = np.random.default_rng(seed)
    kind = ["pade", "pau", "taylor", "relu"][seed % 4]
    d = 1 + seed % 2
    net = tiny_net(kind, seed, d=d, l=2, S=2)
    n = int(rng.integers(1, 4))
    ds = Dataset(rng.uniform(-1, 1, size=(n, 2 * d)), rng.uniform(-1, 1, size=(n, 2 * d)), 0.1)
    return net, ds


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("K", [1, 3])
def test_gradient_matches_finite_differences(seed, K):
    net, ds = _random_case(seed)
    h = 0.1 / K
    ds = Dataset(ds.y0, ds.y1, 0.1)
    g = loss_gradient(net, ds, h, K)
    fd = ad.fd_gradient(lambda th: loss(net.with_params(th), ds, h, K), net.params(), 1e-5)
    scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
    assert np.max(np.abs(g - fd) / scale) < 1e-5


def test_gradient_vanishes_at_constructed_minimum():
    net = quadratic_net(np.eye(2))
    y0 = np.random.default_rng(2).normal(size=(6, 2))
    ds = Dataset(y0, predict_pair(net, y0, 0.01, 1), 0.01)
    assert np.max(np.abs(loss_gradient(net, ds, 0.01, 1))) < 1e-10


def test_gradient_is_additive_over_partition():
    net = tiny_net("pade", 3)
    rng = np.random.default_rng(3)
    ds = Dataset(rng.normal(size=(7, 2)), rng.normal(size=(7, 2)), 0.01)
    d1, d2 = ds.subset(slice(0, 3)), ds.subset(slice(3, 7))
    whole = loss_gradient(net, ds, 0.01, 1) * 7
    parts = loss_gradient(net, d1, 0.01, 1) * 3 + loss_gradient(net, d2, 0.01, 1) * 4
    assert np.max(np.abs(whole - parts)) < 1e-12 * max(1.0, np.max(np.abs(whole)))


# --- Adam


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    _, new = adam_step(AdamState.zeros(2), p, np.zeros(2), 0.1)
    np.testing.assert_array_equal(new, p)


@given(g=st.floats(1e-2, 1e6) | st.floats(-1e6, -1e-2))  # eps negligible against |g|
def test_adam_first_step_is_signed_learning_rate(g):
    state, new = adam_step(AdamState.zeros(1), np.array([0.0]), np.array([g]), 0.01)
    assert new[0] == pytest.approx(-0.01 * math.copysign(1, g), rel=1e-5)
    assert state.t == 1 and np.all(state.v >= 0)


def test_adam_minimises_square():
    theta, state = np.array([1.0]), AdamState.zeros(1)
    for _ in range(200):
        state, theta = adam_step(state, theta, 2 * theta, 0.1)
    assert abs(theta[0]) < 0.05


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(2), np.zeros(3), 0.1)


# --- training loop


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(h=1.0)
    with pytest.raises(ValueError):
        TrainConfig(K=0)
    with pytest.raises(ValueError, match="does not match"):
        TrainConfig(h=0.01, K=2).check_interval(0.01)
    cfg = TrainConfig(activation=taylor(), lr=3e-3)
    assert TrainConfig.from_json(cfg.to_json()) == cfg


def test_zero_epochs_returns_initialisation():
    ds = generate_dataset(builtin("pendulum"), (-2, 2), 4, 0.01, 0.01, seed=1)
    cfg = TrainConfig(epochs=0, seed=2)
    net, hist = train(ds, cfg)
    assert hist == []
    np.testing.assert_array_equal(net.params(), init_network(1, 16, 4, pade(), 2).params())


def test_training_is_deterministic_and_full_batch():
    ds = generate_dataset(builtin("modified_pendulum"), (-2, 2), 5, 0.02, 0.01, seed=1)
    cfg = TrainConfig(h=0.01, K=2, epochs=6, seed=3, width=4, S=2)
    a, ha = train(ds, cfg)
    b, hb = train(ds, cfg)
    assert ha == hb
    np.testing.assert_array_equal(a.params(), b.params())
    # history[j] is the full-batch loss before update j
    assert ha[0] == pytest.approx(loss(init_network(1, 4, 2, pade(), 3), ds, 0.01, 2), rel=1e-13)
    # one Adam step per epoch
    manual = init_network(1, 4, 2, pade(), 3)
    theta, state = manual.params(), AdamState.zeros(manual.n_params)
    for _ in range(6):
        state, theta = adam_step(state, theta, loss_gradient(manual.with_params(theta), ds, 0.01, 2), cfg.lr)
    np.testing.assert_allclose(a.params(), theta, rtol=1e-12, atol=1e-14)


def test_divergence_aborts_with_epoch_and_last_loss():
    ds = generate_dataset(builtin("pendulum"), (-2, 2), 15, 0.01, 0.01, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(TrainingDiverged) as info:
            train(ds, TrainConfig(epochs=50, lr=100.0, activation=taylor(), S=8))
    assert info.value.epoch >= 1
    assert math.isfinite(info.value.last_finite_loss)


def test_example1_training_reaches_small_loss():
    exp = EXPERIMENTS["example1"]
    sys = builtin(exp.system)
    ds = generate_dataset(sys, exp.region, exp.N, exp.T, exp.h_gen, seed=0)
    net, hist = train(ds, exp.train)
    assert net.n_params == 274
    assert hist[-1] < 1e-6
    assert all(math.isfinite(v) for v in hist)


@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_default_configs_train_without_nan(name):
    # shortened schedules; the full runs live in the acceptance suite
    exp = EXPERIMENTS[name]
    sys = builtin(exp.system)
    ds = generate_dataset(sys, exp.region, min(exp.N, 100), exp.T, exp.h_gen, seed=1)
    cfg = TrainConfig(**{**exp.train.__dict__, "epochs": 30})
    _, hist = train(ds, cfg)
    assert all(math.isfinite(v) for v in hist)
