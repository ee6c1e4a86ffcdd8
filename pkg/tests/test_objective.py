import math

import numpy as np
import pytest

from rdohjb.core import RngStream, UsageError
from rdohjb.networks import ControlNet, ValueNet
from rdohjb.objective import (ObjectiveConfig, control_set_penalty, evaluate, full_loss, loss_gradients,
                              martingale_term)
from rdohjb.paths import Minibatch, build_eval_grid, draw_minibatch, generate_paths
from rdohjb.problem import Benchmark, ControlSet, make_benchmark, smooth_g
from rdohjb.rdo import RdoConfig, rdo_residual
from rdohjb.verify import gradient_errors

from conftest import CoupledProblem, FnNet, central_difference, rel_err, small_nets


def zero(t, x):
    return np.zeros_like(np.atleast_2d(x))


def setup(spec, N=5, M=8, size=20, seed=0):
    c, v, a = small_nets(spec, seed)
    pool = generate_paths(spec, c, build_eval_grid(spec.d, 3), N, M, RngStream(seed, 1))
    batch = draw_minibatch(pool, size, RngStream(seed, 2))
    cfg = RdoConfig(spec.T / N)
    w = cfg.law.sample(RngStream(seed, 3), (size, spec.q))
    return c, v, a, pool, batch, cfg, w


def test_zero_test_function_gives_zero_G():
    spec = make_benchmark("smooth", 2)
    c, v, a, pool, batch, cfg, w = setup(spec)
    out, _ = evaluate(spec, pool, batch, v, c, lambda t, x: np.zeros((len(x), 4)), 1.0, cfg, w, grads=False)
    assert np.all(out.G == 0)


def test_constant_value_gives_zero_G():
    spec = make_benchmark("heat", 2)
    c, _, a, pool, batch, cfg, _ = setup(spec)
    const = lambda t, x: np.full(len(np.atleast_2d(x)), 2.0)
    G = martingale_term(spec, pool, batch, const, c, a, cfg, RngStream(4))
    assert np.all(G == 0)


def test_single_element_batch_is_one_residual():
    spec = make_benchmark("smooth", 2)
    c, v, _, pool, _, cfg, _ = setup(spec)
    batch = Minibatch(np.array([2]), np.array([3]))
    w = np.array([[0.3, -1.1]])
    out, _ = evaluate(spec, pool, batch, v, c, lambda t, x: np.ones((len(x), 1)), 0.0, cfg, w, grads=False)
    R = rdo_residual(spec, v, c, cfg, pool.time(2), pool.X[2, 3][None], None, w=w)
    assert out.G[0] == R[0]


def test_lambda_zero_and_zero_problem():
    spec = make_benchmark("smooth", 2)
    c, v, a, pool, batch, cfg, w = setup(spec)
    out, _ = evaluate(spec, pool, batch, v, c, a, 0.0, cfg, w, grads=False)
    assert out.total == out.mean_value
    heat = make_benchmark("heat", 2)
    zero_v = FnNet(lambda t, x: np.zeros(len(x)), lambda t, x: np.zeros_like(x))
    hc = ControlNet(2, 2, heat.lower, heat.upper, width=4, depth=1)
    out, _ = evaluate(heat, pool, batch, zero_v, hc, a, 5.0, cfg, w, grads=False)
    assert out.total == 0.0


def test_lambda_enters_linearly():
    spec = make_benchmark("smooth", 3)
    c, v, a, pool, batch, cfg, _ = setup(spec)
    lam = 3.0
    one = full_loss(spec, pool, batch, v, c, a, lam, cfg, RngStream(5))
    two = full_loss(spec, pool, batch, v, c, a, 2 * lam, cfg, RngStream(5))
    assert two.total - one.total == pytest.approx(lam * one.G2, rel=1e-12)
    assert np.array_equal(one.G, two.G)


def test_loss_decomposition():
    spec = make_benchmark("oscillatory", 3)
    c, v, a, pool, batch, cfg, w = setup(spec)
    out, _ = evaluate(spec, pool, batch, v, c, a, 7.5, cfg, w, grads=False)
    assert out.total == pytest.approx(out.mean_value + 7.5 * float(out.G @ out.G), rel=1e-12)
    assert out.mart_loss == pytest.approx(math.sqrt(out.G2))


@pytest.mark.parametrize("scale", [2.0, -4.0, 0.5, 1.7])
def test_G_linear_in_test_function(scale):
    spec = make_benchmark("smooth", 2)
    c, v, _, pool, batch, cfg, w = setup(spec)
    lin = lambda t, x: np.column_stack([x[:, 0] + t, 0.5 * x[:, 1] - 1.0])
    g1 = evaluate(spec, pool, batch, v, c, lin, 1.0, cfg, w, grads=False)[0].G
    gs = evaluate(spec, pool, batch, v, c, lambda t, x: scale * lin(t, x), 1.0, cfg, w, grads=False)[0].G
    if scale in (2.0, -4.0, 0.5):
        assert np.array_equal(gs, scale * g1)
    else:
        assert np.allclose(gs, scale * g1, rtol=1e-14, atol=0)


def test_scalar_mode_sums_test_functions():
    spec = make_benchmark("smooth", 2)
    c, v, a, pool, batch, cfg, w = setup(spec)
    vec = evaluate(spec, pool, batch, v, c, a, 1.0, cfg, w, grads=False)[0].G
    sca = evaluate(spec, pool, batch, v, c, a, 1.0, cfg, w, ObjectiveConfig("scalar"), grads=False)[0].G
    assert sca.shape == (1,)
    assert sca[0] == pytest.approx(vec.sum(), rel=1e-12)


def test_set_penalty_examples():
    spec = Benchmark("smooth", 2, control_set=ControlSet("ball", 1.0))
    _, v, a, pool, batch, cfg, w = setup(make_benchmark("smooth", 2))
    inside = lambda t, x: np.full((len(x), 2), 0.1)
    two_e1 = lambda t, x: np.tile([2.0, 0.0], (len(x), 1))
    assert control_set_penalty(spec, pool, batch, inside) == 0
    assert control_set_penalty(spec, pool, batch, two_e1) == pytest.approx(1.0)
    one_off = Minibatch(np.array([0, 1, 2, 3]), np.array([0, 0, 0, 0]))
    ctl = lambda t, x: np.where(np.arange(len(x))[:, None] == 0, [2.0, 0.0], [0.0, 0.0])
    assert control_set_penalty(spec, pool, one_off, ctl) == pytest.approx(1 / 4)
    with pytest.raises(UsageError):
        control_set_penalty(make_benchmark("smooth", 2), pool, batch, inside)


def test_set_penalty_enters_total():
    spec = Benchmark("smooth", 2, control_set=ControlSet("ball", 0.5))
    c, v, a, pool, batch, cfg, w = setup(spec)
    for W in c.body.weights:
        W *= 3.0
    obj = ObjectiveConfig(set_penalty_weight=2.0)
    out, _ = evaluate(spec, pool, batch, v, c, a, 1.0, cfg, w, obj, grads=False)
    assert out.set_penalty > 0
    assert out.total == pytest.approx(out.mean_value + out.G2 + 2.0 * out.set_penalty, rel=1e-12)


def test_control_gradient_vanishes_without_penalty():
    spec = make_benchmark("smooth", 3)
    c, v, a, pool, batch, cfg, w = setup(spec)
    _, (gc, gv, ga) = evaluate(spec, pool, batch, v, c, a, 0.0, cfg, w)
    assert all(np.all(g == 0) for g in gc)
    assert all(np.all(g == 0) for g in ga)
    assert any(np.any(g != 0) for g in gv)


def test_zero_residual_kills_adversary_gradient():
    heat = make_benchmark("heat", 2)
    c, _, a, pool, batch, cfg, w = setup(heat)
    const = FnNet(lambda t, x: np.full(len(x), 1.25), lambda t, x: np.zeros_like(x))
    _, (_, _, ga) = evaluate(heat, pool, batch, const, c, a, 10.0, cfg, w)
    assert all(np.all(g == 0) for g in ga)


@pytest.mark.parametrize("variant", ["smooth", "oscillatory"])
@pytest.mark.parametrize("g_mode", ["vector", "scalar"])
def test_benchmark_gradients_vs_central_differences(variant, g_mode):
    errs = gradient_errors(d=3, g_mode=g_mode, variant=variant, seed=1)
    assert max(errs.values()) < 1e-4, errs


def fd_worst(spec, obj, lam=10.0, n_coords=50, seed=0):
    c, v, a, pool, batch, cfg, w = setup(spec, seed=seed)
    if spec.control_set is not None:
        for W in c.body.weights:
            W *= 3.0  # put some controls outside the set

    def loss():
        return evaluate(spec, pool, batch, v, c, a, lam, cfg, w, obj, grads=False)[0].total

    _, grads = evaluate(spec, pool, batch, v, c, a, lam, cfg, w, obj)
    gen = np.random.default_rng(seed)
    worst = {}
    for name, net, g in zip(("control", "value", "adversarial"), (c, v, a), grads):
        params = net.params()
        e = 0.0
        for _ in range(n_coords):
            b = int(gen.integers(len(params)))
            idx = tuple(int(gen.integers(s)) for s in params[b].shape)
            e = max(e, rel_err(central_difference(loss, params, b, idx), g[b][idx]))
        worst[name] = e
    return worst


def test_gradients_with_control_dependent_diffusion():
    errs = fd_worst(CoupledProblem(d=3, q=4), ObjectiveConfig())
    assert max(errs.values()) < 1e-4, errs


def test_gradients_with_set_penalty():
    spec = Benchmark("smooth", 2, control_set=ControlSet("ball", 0.5))
    errs = fd_worst(spec, ObjectiveConfig(set_penalty_weight=0.7), seed=3)
    assert max(errs.values()) < 1e-4, errs


def test_loss_gradients_wrapper_matches_evaluate():
    spec = make_benchmark("smooth", 2)
    c, v, a, pool, batch, cfg, _ = setup(spec)
    out1, g1 = loss_gradients(spec, pool, batch, v, c, a, 2.0, cfg, RngStream(6))
    w = cfg.law.sample(RngStream(6), (len(batch), spec.q))
    out2, g2 = evaluate(spec, pool, batch, v, c, a, 2.0, cfg, w)
    assert out1.total == out2.total
    assert all(np.array_equal(x, y) for x, y in zip(g1[0], g2[0]))


def exact_heat(T, nodes=60):
    """Heat-variant solution in d=1 by Gauss-Hermite: 1 + E g(x + sqrt(2 (T - t)) Z)."""
    z, wts = np.polynomial.hermite.hermgauss(nodes)
    wts = wts / math.sqrt(math.pi)

    def v(t, x):
        x = np.atleast_2d(x)
        t = np.broadcast_to(t, (x.shape[0],))
        y = x[:, :1] + np.sqrt(4.0 * (T - t))[:, None] * z[None, :]
        return 1.0 + smooth_g(y.reshape(-1, 1)).reshape(y.shape) @ wts

    return v


def test_weak_form_vanishes_on_exact_heat_solution():
    spec = make_benchmark("heat", 1)
    v = exact_heat(spec.T)
    ctl = ControlNet(1, 1, spec.lower, spec.upper, width=4, depth=1)
    _, _, a = small_nets(spec)
    grid = build_eval_grid(1, 11)
    means = []
    for N, B in ((10, 2000), (20, 8000)):
        cfg = RdoConfig(spec.T / N)
        g2 = []
        for rep in range(10):
            pool = generate_paths(spec, ctl, grid, N, 1000, RngStream(rep, N))
            batch = draw_minibatch(pool, B, RngStream(rep, N + 1))
            w = cfg.law.sample(RngStream(rep, N + 2), (B, 1))
            g2.append(evaluate(spec, pool, batch, v, ctl, a, 1.0, cfg, w, grads=False)[0].G2)
        means.append(np.mean(g2))
    assert means[1] < means[0]
