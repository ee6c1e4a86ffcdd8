import math

import numpy as np
import pytest

from rdohjb.core import RngStream
from rdohjb.networks import AdversarialNet, ControlNet, ValueNet
from rdohjb.problem import Problem, smooth_g, smooth_g_grad


class CoupledProblem(Problem):
    """Generic test instance: dense q-column diffusion that depends on the control.

    drift = A k, sigma = S + s * diag-embed(k) (first min(d, q) columns),
    cost = |k|^2 + 0.1 |x|^2, terminal = smooth g.
    """

    sigma_depends_on_control = True

    def __init__(self, d=3, q=4, T=1.0, seed=0, s=0.3):
        self.d, self.q, self.m, self.T = d, q, d, T
        gen = np.random.default_rng(seed)
        self.A = gen.normal(size=(d, d))
        self.S = gen.normal(size=(d, q))
        self.s = s
        self.lower = -np.ones(d)
        self.upper = np.ones(d)

    def drift(self, t, x, k):
        return np.atleast_2d(k) @ self.A.T

    def drift_vjp(self, t, x, k, cot):
        return np.atleast_2d(cot) @ self.A

    def diffusion(self, t, x, k):
        k = np.atleast_2d(k)
        sig = np.repeat(self.S[None], k.shape[0], axis=0)
        n = min(self.d, self.q)
        idx = np.arange(n)
        sig[:, idx, idx] += self.s * k[:, :n]
        return sig

    def diffusion_vjp(self, t, x, k, w, cot):
        w, cot = np.atleast_2d(w), np.atleast_2d(cot)
        n = min(self.d, self.q)
        out = np.zeros((cot.shape[0], self.m))
        out[:, :n] = self.s * cot[:, :n] * w[:, :n]
        return out

    def cost(self, t, x, k):
        return np.sum(np.atleast_2d(k) ** 2, axis=1) + 0.1 * np.sum(np.atleast_2d(x) ** 2, axis=1)

    def cost_grad(self, t, x, k):
        return 2.0 * np.atleast_2d(k)

    def terminal(self, x):
        return 1.0 + smooth_g(x)

    def terminal_grad(self, x):
        return smooth_g_grad(x)


def perturb_biases(nets, rng, scale=0.1):
    """Move biases off zero so no ReLU sits exactly on its kink."""
    gen = rng.gen
    for net in nets:
        for b in net.body.biases:
            b += scale * gen.standard_normal(b.shape)


def small_nets(spec, seed=0, width=8, depth=2, r=5):
    rng = RngStream(seed, 99)
    c = ControlNet(spec.d, spec.m, spec.lower, spec.upper, width, depth, rng.split(1), T=spec.T)
    v = ValueNet(spec.d, spec.T, spec.terminal, spec.terminal_grad, width, depth, rng.split(2))
    a = AdversarialNet(spec.d, r, rng.split(3))
    perturb_biases((c, v, a), rng.split(4))
    return c, v, a


def central_difference(f, params, block, idx, step=1e-6):
    p = params[block]
    keep = p[idx]
    p[idx] = keep + step
    up = f()
    p[idx] = keep - step
    dn = f()
    p[idx] = keep
    return (up - dn) / (2 * step)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


class FnNet:
    """Wraps a plain function of (t, x) as a parameter-free net with a state VJP."""

    def __init__(self, f, grad=None):
        self.f, self.grad = f, grad

    def params(self):
        return []

    def run(self, t, x):
        x = np.atleast_2d(x)
        return np.asarray(self.f(t, x), dtype=np.float64), (t, x)

    def __call__(self, t, x):
        return self.run(t, x)[0]

    def backward(self, tape, upstream):
        t, x = tape
        return [], np.asarray(upstream)[:, None] * self.grad(t, x)


@pytest.fixture
def coupled():
    return CoupledProblem()


SQRT2 = math.sqrt(2.0)


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE = {}


def record(n, passed, detail):
    ACCEPTANCE[n] = (bool(passed), detail)
    print(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
