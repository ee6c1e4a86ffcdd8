"""Fast invariant battery: noise moments, RDO/martingale identity, gradient
checks against central differences, and the Euler-path audit.

Each check returns a ``CheckResult``; ``run_battery`` runs them in order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .networks import ControlNet, MlpNet, ValueNet
from .objective import ObjectiveConfig, evaluate
from .paths import build_eval_grid, generate_paths, draw_minibatch, replay_paths
from .problem import make_benchmark
from .rdo import NoiseLaw, RdoConfig, martingale_residual, rdo_residual
from .trainer import build_nets, NetConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def moment_zscores(w, kurtosis):
    """z-scores of the first four raw sample moments against (0, 1, 0, kurtosis)."""
    w = np.asarray(w, dtype=np.float64).ravel()
    n = w.size
    target = (0.0, 1.0, 0.0, kurtosis)
    z = []
    for k, mu in zip(range(1, 5), target):
        p = w ** k
        se = p.std() / math.sqrt(n)
        z.append((p.mean() - mu) / se if se > 0 else (0.0 if p.mean() == mu else math.inf))
    return np.array(z)


def check_noise_moments(law: NoiseLaw, n=1_000_000, seed=0, labeled: NoiseLaw | None = None, tol=5.0):
    """Draw from ``law``, test against the moments of ``labeled`` (default: the same law)."""
    labeled = labeled or law
    w = law.sample(RngStream(seed, 11), n)
    z = moment_zscores(w, labeled.fourth_moment)
    name = f"moments {labeled.kind}" + ("" if labeled is law else f" (drawn from {law.kind} r={law.r:g})")
    return CheckResult(name, bool(np.all(np.abs(z) <= tol)), "z=" + ", ".join(f"{v:+.2f}" for v in z))


def _random_nets(d, rng, bias_scale=0.1, T=1.0, spec=None):
    spec = spec or make_benchmark("smooth", d, T)
    c, v, a = build_nets(spec, NetConfig(width=8, depth=2, adv_width=6), rng)
    gen = rng.split(9).gen
    for net in (c, v, a):
        for b in net.body.biases:
            b += bias_scale * gen.standard_normal(b.shape)
    return spec, c, v, a


def check_rdo_martingale(n_configs=1000, seed=0, tol=1e-12):
    """R_h with noise w equals the martingale residual driven by dB = sqrt(h) w."""
    root = RngStream(seed, 12)
    worst = 0.0
    for i in range(n_configs):
        rng = root.split(i)
        gen = rng.gen
        d = int(gen.integers(1, 5))
        N = int(gen.integers(1, 20))
        spec, c, v, _ = _random_nets(d, rng, T=float(gen.uniform(0.2, 2.0)))
        h = spec.T / N
        t = h * int(gen.integers(0, N))
        x = gen.normal(0, 1, (1, d))
        w = gen.standard_normal((1, d))
        cfg = RdoConfig(h)
        a = rdo_residual(spec, v, c, cfg, t, x, None, w=w)
        b = martingale_residual(spec, v, c, cfg, t, x, math.sqrt(h) * w)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("rdo == martingale residual", worst <= tol, f"max |diff| = {worst:.2e} over {n_configs} configs")


def _flat_probe(params, n, gen):
    sizes = [p.size for p in params]
    total = sum(sizes)
    picks = gen.choice(total, size=min(n, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    out = []
    for f in picks:
        b = int(np.searchsorted(offsets, f, side="right") - 1)
        out.append((b, np.unravel_index(int(f - offsets[b]), params[b].shape)))
    return out


def gradient_errors(d=3, g_mode="vector", lam=10.0, n_coords=50, seed=0, step=1e-6, variant="smooth"):
    """Max relative error between backprop and central differences per network.

    The loss is the full minibatch objective with frozen noise, so the
    control enters both through the running cost and through the jump.
    Biases are perturbed away from zero: with zero biases every unit sits
    on its ReLU kink at the origin, where differences are meaningless.
    """
    rng = RngStream(seed, 13)
    spec, c, v, a = _random_nets(d, rng, spec=make_benchmark(variant, d, 1.0))
    N, M = 5, 8
    pool = generate_paths(spec, c, build_eval_grid(d, 3), N, M, rng.split(1))
    batch = draw_minibatch(pool, 24, rng.split(2))
    cfg = RdoConfig(spec.T / N)
    w = cfg.law.sample(rng.split(3), (len(batch), spec.q))
    obj = ObjectiveConfig(g_mode)

    def loss():
        return evaluate(spec, pool, batch, v, c, a, lam, cfg, w, obj, grads=False)[0].total

    _, (gc, gv, ga) = evaluate(spec, pool, batch, v, c, a, lam, cfg, w, obj)
    gen = rng.split(4).gen
    errs = {}
    for name, net, grads in (("control", c, gc), ("value", v, gv), ("adversarial", a, ga)):
        params = net.params()
        worst = 0.0
        for b, idx in _flat_probe(params, n_coords, gen):
            p = params[b]
            keep = p[idx]
            p[idx] = keep + step
            up = loss()
            p[idx] = keep - step
            dn = loss()
            p[idx] = keep
            fd = (up - dn) / (2 * step)
            bp = grads[b][idx]
            scale = max(abs(fd), abs(bp), 1e-6)
            worst = max(worst, abs(fd - bp) / scale)
        errs[name] = worst
    return errs


def check_gradients(seed=0, tol=1e-4):
    res = []
    for g_mode in ("vector", "scalar"):
        e = gradient_errors(g_mode=g_mode, seed=seed)
        res.append(CheckResult(f"gradients ({g_mode} G)", max(e.values()) < tol,
                               ", ".join(f"{k} {val:.1e}" for k, val in e.items())))
    return res


def check_euler(seed=0, M=10_000, N=20, T=1.0, d=2):
    """Replay of stored increments, and Var(X_T - X_0) = 2T per coordinate without control."""
    spec = make_benchmark("heat", d, T)
    c = ControlNet(d, d, spec.lower, spec.upper, width=4, depth=1, rng=RngStream(seed, 14))
    pool = generate_paths(spec, c, build_eval_grid(d, 5), N, M, RngStream(seed, 15))
    replay = float(np.max(np.abs(replay_paths(spec, c, pool) - pool.X)))
    inc = pool.X[-1] - pool.X[0]
    dev = inc - inc.mean(axis=0)
    var = (dev ** 2).mean(axis=0)
    se = np.sqrt(((dev ** 4).mean(axis=0) - var ** 2) / M)
    z = (var - 2 * T) / se
    ok = replay <= 1e-12 and bool(np.all(np.abs(z) <= 5))
    return CheckResult("euler audit", ok, f"replay {replay:.1e}, variance z=" + ", ".join(f"{v:+.2f}" for v in z))


def run_battery(seed=0, negative_control=False, echo=print):
    """Run every check; returns the list of results."""
    laws = [NoiseLaw("gaussian"), NoiseLaw("three_point")]
    jobs = [lambda law=law: check_noise_moments(law, seed=seed) for law in laws]
    if negative_control:
        jobs.append(lambda: check_noise_moments(NoiseLaw("three_point", 1.1), seed=seed, labeled=NoiseLaw("gaussian")))
    jobs += [lambda: check_rdo_martingale(seed=seed), lambda: check_gradients(seed=seed),
             lambda: check_euler(seed=seed)]
    results = []
    for job in jobs:
        t0 = time.perf_counter()
        out = job()
        for r in out if isinstance(out, list) else [out]:
            r.seconds = time.perf_counter() - t0
            results.append(r)
            if echo:
                echo(r.line())
    return results
