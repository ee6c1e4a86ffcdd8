"""Mini-batch adversarial objective and its exact parameter gradients.

    L = mean(v(t_n, X_n)) * h + lam * |G|^2 (+ w_set * mean dist(u, U))
    G = mean(rho(t_n, X_n) * R_n)

G is the r-vector of per-test-function averages in ``vector`` mode and
the sum over test functions in ``scalar`` mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UsageError
from .paths import Minibatch, PathPool
from .problem import Problem
from .rdo import RdoConfig, _run, residual_backward, residual_forward

G_MODES = ("vector", "scalar")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term, breakdown=None):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term
        self.breakdown = breakdown


@dataclass(frozen=True)
class ObjectiveConfig:
    g_mode: str = "vector"
    set_penalty_weight: float = 0.0

    def __post_init__(self):
        if self.g_mode not in G_MODES:
            raise ValueError(f"g_mode must be one of {G_MODES}")


@dataclass
class LossBreakdown:
    mean_value: float
    G: np.ndarray
    lam: float
    set_penalty: float
    total: float

    @property
    def G2(self):
        return float(self.G @ self.G)

    @property
    def mart_loss(self):
        return float(np.sqrt(self.G2))


def batch_states(pool: PathPool, batch: Minibatch):
    return pool.time(batch.n), pool.X[batch.n, batch.m]


def evaluate(spec: Problem, pool: PathPool, batch: Minibatch, value, control, adversarial, lam,
             cfg: RdoConfig, w, obj: ObjectiveConfig = ObjectiveConfig(), grads=True):
    """Loss breakdown and, if ``grads``, (grad_control, grad_value, grad_adversarial).

    ``w`` is the (|A|, q) noise for the jumps; fixing it makes the loss a
    deterministic function of the parameters.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    t, x = batch_states(pool, batch)
    B = t.size
    R, tape = residual_forward(spec, value, control, cfg, t, x, w)
    rho, rtape = _run(adversarial, t, x)
    rho = np.asarray(rho).reshape(B, -1)
    if obj.g_mode == "vector":
        G = (rho * R[:, None]).mean(axis=0)
    else:
        G = np.array([np.mean(rho.sum(axis=1) * R)])
    mean_value = float(tape.v0.mean() * cfg.h)
    set_pen = 0.0
    if spec.control_set is not None and obj.set_penalty_weight:
        set_pen = float(spec.control_distance(tape.kappa).mean())
    total = mean_value + lam * float(G @ G) + obj.set_penalty_weight * set_pen
    out = LossBreakdown(mean_value, G, float(lam), set_pen, total)
    for name, val in (("mean_value", mean_value), ("martingale", G), ("set_penalty", set_pen), ("total", total)):
        if not np.all(np.isfinite(val)):
            raise NonFiniteLoss(name, out)
    if not grads:
        return out, None

    dG = 2.0 * lam * G
    if obj.g_mode == "vector":
        dR = rho @ dG / B
        drho = R[:, None] * dG[None, :] / B
    else:
        dR = rho.sum(axis=1) * dG[0] / B
        drho = np.repeat((R * dG[0] / B)[:, None], rho.shape[1], axis=1)
    extra_dk = None
    if spec.control_set is not None and obj.set_penalty_weight:
        extra_dk = obj.set_penalty_weight * spec.control_distance_grad(tape.kappa) / B
    dv0 = np.full(B, cfg.h / B)
    gc, gv = residual_backward(spec, value, control, cfg, tape, dR, extra_dv0=dv0, extra_dk=extra_dk)
    ga, _ = adversarial.backward(rtape, drho)
    return out, (gc, gv, ga)


def _noise(spec, cfg, batch, rng):
    return cfg.law.sample(rng, (len(batch), spec.q))


def martingale_term(spec, pool, batch, value, control, adversarial, cfg, rng, obj=ObjectiveConfig()):
    out, _ = evaluate(spec, pool, batch, value, control, adversarial, 0.0, cfg,
                      _noise(spec, cfg, batch, rng), obj, grads=False)
    return out.G


def full_loss(spec, pool, batch, value, control, adversarial, lam, cfg, rng, obj=ObjectiveConfig()):
    return evaluate(spec, pool, batch, value, control, adversarial, lam, cfg,
                    _noise(spec, cfg, batch, rng), obj, grads=False)[0]


def loss_gradients(spec, pool, batch, value, control, adversarial, lam, cfg, rng, obj=ObjectiveConfig()):
    return evaluate(spec, pool, batch, value, control, adversarial, lam, cfg,
                    _noise(spec, cfg, batch, rng), obj, grads=True)


def control_set_penalty(spec: Problem, pool: PathPool, batch: Minibatch, control):
    if spec.control_set is None:
        raise UsageError("set penalty only applies to a general control set")
    t, x = batch_states(pool, batch)
    return float(spec.control_distance(np.atleast_2d(control(t, x))).mean())
