"""Random finite difference operator and the residuals built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DomainError, RngStream
from .problem import Problem

LAWS = ("gaussian", "three_point")


@dataclass(frozen=True)
class NoiseLaw:
    """Law of the noise components W_i (iid, mean 0, variance 1, zero skew).

    ``three_point`` puts mass 1/(2 r^2) on each of +-r and the rest on 0.
    """

    kind: str = "gaussian"
    r: float = math.sqrt(3.0)

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ConfigError(f"unknown noise law {self.kind!r}")
        if self.kind == "three_point" and not self.r > 1.0:
            raise ConfigError(f"three-point law needs r > 1, got {self.r}")

    @property
    def fourth_moment(self):
        return 3.0 if self.kind == "gaussian" else self.r ** 2

    @property
    def zero_probability(self):
        return 0.0 if self.kind == "gaussian" else 1.0 - 1.0 / self.r ** 2

    def sample(self, rng: RngStream, shape):
        if self.kind == "gaussian":
            return rng.gen.standard_normal(shape)
        p = 0.5 / self.r ** 2
        u = rng.gen.random(shape)
        return np.where(u < p, self.r, np.where(u < 2 * p, -self.r, 0.0))


@dataclass(frozen=True)
class RdoConfig:
    h: float
    law: NoiseLaw = NoiseLaw()
    sparse: bool = False  # skip zero noise columns in sigma @ w

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError(f"step h must be positive, got {self.h}")


@dataclass
class JumpSample:
    xi: np.ndarray
    w: np.ndarray


@dataclass
class ResidualTape:
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    kappa: np.ndarray
    control: object
    value0: object
    value1: object
    v0: np.ndarray
    v1: np.ndarray
    cost: np.ndarray


def sample_noise(law: NoiseLaw, rng: RngStream, n=None, q=1):
    """One draw of W (shape (q,)) or n draws (shape (n, q))."""
    if n is None:
        return law.sample(rng, (q,))
    return law.sample(rng, (n, q))


def next_time(t, h, T):
    """t + h, snapped onto T when within rounding; raises past the horizon."""
    tn = np.asarray(t, dtype=np.float64) + h
    tol = 1e-9 * max(T, 1.0)
    if np.any(tn > T + tol):
        raise DomainError(f"t + h exceeds the horizon T={T}")
    return np.where(np.abs(tn - T) <= tol, T, tn)


def _run(fn, t, x):
    if hasattr(fn, "run"):
        return fn.run(t, x)
    return np.asarray(fn(t, x), dtype=np.float64), None


def _times(t, B):
    return np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)).copy()


def jump(spec: Problem, cfg: RdoConfig, t, x, kappa, w):
    """xi = mu(t, x, kappa) h + sigma(t, x, kappa) sqrt(h) w."""
    drift = spec.drift(t, x, kappa)
    diff = spec.diffusion_apply(t, x, kappa, w, sparse=cfg.sparse)
    return drift * cfg.h + diff * math.sqrt(cfg.h)


def make_jump(spec: Problem, control, cfg: RdoConfig, t, x, rng: RngStream, w=None) -> JumpSample:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = _times(t, x.shape[0])
    next_time(t, cfg.h, spec.T)
    kappa, _ = _run(control, t, x)
    if w is None:
        w = cfg.law.sample(rng, (x.shape[0], spec.q))
    return JumpSample(jump(spec, cfg, t, x, np.atleast_2d(kappa), w), w)


def residual_forward(spec: Problem, value, control, cfg: RdoConfig, t, x, w):
    """R = [v(t+h, x+xi) - v(t, x)]/h + c(t, x, u(t, x)) for given noise w."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = _times(t, x.shape[0])
    tn = next_time(t, cfg.h, spec.T)
    kappa, ctape = _run(control, t, x)
    kappa = np.atleast_2d(kappa)
    xi = jump(spec, cfg, t, x, kappa, w)
    v1, vt1 = _run(value, tn, x + xi)
    v0, vt0 = _run(value, t, x)
    c = spec.cost(t, x, kappa)
    R = (v1 - v0) / cfg.h + c
    return R, ResidualTape(t, x, w, kappa, ctape, vt0, vt1, v0, v1, c)


def residual_backward(spec: Problem, value, control, cfg: RdoConfig, tape: ResidualTape, dR,
                      extra_dv0=None, extra_dk=None):
    """Chain dL/dR back to the control and value parameters.

    ``extra_dv0`` adds a cotangent on v(t, x) (the mean-of-value term) and
    ``extra_dk`` one on the control output (the set penalty).  Returns
    (control grads, value grads).
    """
    dR = np.asarray(dR, dtype=np.float64)
    dv1 = dR / cfg.h
    dv0 = -dR / cfg.h
    if extra_dv0 is not None:
        dv0 = dv0 + extra_dv0
    g1, dxi = value.backward(tape.value1, dv1)
    g0, _ = value.backward(tape.value0, dv0)
    gv = [a + b for a, b in zip(g1, g0)]
    t, x, k = tape.t, tape.x, tape.kappa
    dk = spec.drift_vjp(t, x, k, dxi) * cfg.h
    if spec.sigma_depends_on_control:
        dk = dk + spec.diffusion_vjp(t, x, k, tape.w, dxi) * math.sqrt(cfg.h)
    dk = dk + spec.cost_grad(t, x, k) * dR[:, None]
    if extra_dk is not None:
        dk = dk + extra_dk
    gc, _ = control.backward(tape.control, dk)
    return gc, gv


def rdo_residual(spec: Problem, value, control, cfg: RdoConfig, t, x, rng: RngStream, w=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if w is None:
        w = cfg.law.sample(rng, (x.shape[0], spec.q))
    return residual_forward(spec, value, control, cfg, t, x, w)[0]


def martingale_residual(spec: Problem, value, control, cfg: RdoConfig, t, x, dB):
    """h^-1 [v(t+h, X_next) - v(t, x) + h c], X_next the Euler step driven by dB."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = _times(t, x.shape[0])
    tn = next_time(t, cfg.h, spec.T)
    kappa = np.atleast_2d(_run(control, t, x)[0])
    x_next = x + spec.drift(t, x, kappa) * cfg.h + spec.diffusion_apply(t, x, kappa, dB)
    dM = _run(value, tn, x_next)[0] - _run(value, t, x)[0] + cfg.h * spec.cost(t, x, kappa)
    return dM / cfg.h


@dataclass
class BiasEstimate:
    h: float
    bias: float
    se: float


def rdo_bias_probe(fn, exact, spec: Problem, kappa, cfg: RdoConfig, t, x, samples, rng=None, w=None,
                   chunk=250_000):
    """Monte-Carlo estimate of E[D_h fn](t, x) - exact, with its standard error.

    ``fn(t, x)`` is batched; ``exact`` is the known value of (d/dt + L) fn at
    (t, x) under the fixed control ``kappa``.  Passing ``w`` reuses noise
    across step sizes (paired samples).
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    kappa = np.asarray(kappa, dtype=np.float64).reshape(1, -1)
    f0 = float(np.asarray(fn(np.array([t]), x))[0])
    s1 = s2 = 0.0
    for start in range(0, samples, chunk):
        n = min(chunk, samples - start)
        wc = w[start:start + n] if w is not None else cfg.law.sample(rng, (n, spec.q))
        xs = np.repeat(x, n, axis=0)
        ks = np.repeat(kappa, n, axis=0)
        ts = np.full(n, float(t))
        xi = jump(spec, cfg, ts, xs, ks, wc)
        d = (np.asarray(fn(ts + cfg.h, xs + xi)) - f0) / cfg.h - exact
        s1 += d.sum()
        s2 += (d * d).sum()
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    return BiasEstimate(cfg.h, mean, math.sqrt(var / samples))


def bias_ladder(fn, exact, spec, kappa, law: NoiseLaw, hs, t, x, samples, rng: RngStream):
    """Bias estimates at several step sizes sharing one set of noise draws."""
    w = law.sample(rng, (samples, spec.q))
    return [rdo_bias_probe(fn, exact, spec, kappa, RdoConfig(h, law), t, x, samples, w=w) for h in hs]
