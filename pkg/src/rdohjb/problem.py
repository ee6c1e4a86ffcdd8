"""Controlled-diffusion problem contract and the benchmark HJB instances.

Every method is batched: ``t`` has shape (B,), ``x`` (B, d), controls
``k`` (B, m), noise ``w`` (B, q).  The ``*_vjp`` / ``*_grad`` methods give
the pieces needed to chain a loss through the control and the terminal
function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, UsageError

VARIANTS = ("smooth", "oscillatory", "heat")
OSC_DELTA = math.pi / 10


@dataclass(frozen=True)
class ControlSet:
    """General (non-box) control set handled by a distance penalty."""

    kind: str  # "ball" or "box"
    size: float = 1.0  # radius or half-width

    def distance(self, k):
        k = np.atleast_2d(k)
        if self.kind == "ball":
            return np.maximum(np.linalg.norm(k, axis=1) - self.size, 0.0)
        if self.kind == "box":
            return np.linalg.norm(k - np.clip(k, -self.size, self.size), axis=1)
        raise ConfigError(f"unknown control set {self.kind!r}")

    def distance_grad(self, k):
        k = np.atleast_2d(k)
        if self.kind == "ball":
            n = np.linalg.norm(k, axis=1, keepdims=True)
            return np.where(n > self.size, k / np.where(n > 0, n, 1.0), 0.0)
        diff = k - np.clip(k, -self.size, self.size)
        n = np.linalg.norm(diff, axis=1, keepdims=True)
        return diff / np.where(n > 0, n, 1.0)


class Problem:
    """Base class; subclasses provide drift, diffusion, cost and terminal."""

    d: int
    q: int
    m: int
    T: float
    lower = None
    upper = None
    control_set: ControlSet | None = None
    sigma_depends_on_control = False

    def drift(self, t, x, k):
        raise NotImplementedError

    def drift_vjp(self, t, x, k, cot):
        """cot (B, d) -> cotangent w.r.t. the control, (B, m)."""
        raise NotImplementedError

    def diffusion(self, t, x, k):
        """Full diffusion matrix, shape (B, d, q)."""
        raise NotImplementedError

    def diffusion_apply(self, t, x, k, w, sparse=False):
        """sigma(t, x, k) @ w, column by column.

        With ``sparse`` the columns whose noise entries are zero are skipped;
        the accumulation order is the same so both paths agree bitwise.
        """
        sig = self.diffusion(t, x, k)
        w = np.atleast_2d(w)
        out = np.zeros((w.shape[0], self.d))
        for j in range(self.q):
            if sparse:
                rows = np.nonzero(w[:, j])[0]
                if rows.size:
                    out[rows] += sig[rows, :, j] * w[rows, j, None]
            else:
                out += sig[:, :, j] * w[:, j, None]
        return out

    def diffusion_vjp(self, t, x, k, w, cot):
        if self.sigma_depends_on_control:
            raise NotImplementedError
        return np.zeros((np.atleast_2d(x).shape[0], self.m))

    def cost(self, t, x, k):
        raise NotImplementedError

    def cost_grad(self, t, x, k):
        raise NotImplementedError

    def terminal(self, x):
        raise NotImplementedError

    def terminal_grad(self, x):
        raise NotImplementedError

    def control_distance(self, k):
        if self.control_set is None:
            raise UsageError("control distance is only defined for a general control set")
        return self.control_set.distance(k)

    def control_distance_grad(self, k):
        if self.control_set is None:
            raise UsageError("control distance is only defined for a general control set")
        return self.control_set.distance_grad(k)

    def _check(self, x, k=None, w=None):
        x = np.atleast_2d(x)
        if x.shape[1] != self.d:
            raise ConfigError(f"state width {x.shape[1]} != d={self.d}")
        if k is not None and np.atleast_2d(k).shape[1] != self.m:
            raise ConfigError(f"control width {np.atleast_2d(k).shape[1]} != m={self.m}")
        if w is not None and np.atleast_2d(w).shape[1] != self.q:
            raise ConfigError(f"noise width {np.atleast_2d(w).shape[1]} != q={self.q}")


def smooth_g(x):
    x = np.atleast_2d(x)
    return np.log(0.5 * (1.0 + np.sum(x * x, axis=1)))


def smooth_g_grad(x):
    x = np.atleast_2d(x)
    return 2.0 * x / (1.0 + np.sum(x * x, axis=1, keepdims=True))


def osc_g(x, delta=OSC_DELTA):
    x = np.atleast_2d(x)
    return np.mean(np.sin(x - math.pi / 2) + np.sin(1.0 / (delta + x * x)), axis=1)


def osc_g_grad(x, delta=OSC_DELTA):
    x = np.atleast_2d(x)
    s = delta + x * x
    return (np.cos(x - math.pi / 2) - np.cos(1.0 / s) * 2.0 * x / (s * s)) / x.shape[1]


class Benchmark(Problem):
    """dX = 2 u dt + sqrt(2) dB, running cost |u|^2, terminal 1 + g(x).

    ``heat`` uses the smooth g with the control box collapsed to {0}, so the
    equation reduces to dv/dt + Laplacian v = 0.  ``sigma`` and ``drift_coef``
    exist so tests can freeze parts of the dynamics.
    """

    def __init__(self, variant, d, T=1.0, control_halfwidth=4.0, sigma=math.sqrt(2.0), drift_coef=2.0,
                 control_set: ControlSet | None = None):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown problem variant {variant!r}; expected one of {VARIANTS}")
        if d < 1 or T <= 0:
            raise ConfigError("need d >= 1 and T > 0")
        self.variant = variant
        self.d = self.q = self.m = int(d)
        self.T = float(T)
        self.sigma = float(sigma)
        self.drift_coef = float(drift_coef)
        self.control_set = control_set
        if control_set is None:
            hw = 0.0 if variant == "heat" else float(control_halfwidth)
            self.lower = np.full(self.m, -hw)
            self.upper = np.full(self.m, hw)
        self._g, self._dg = (osc_g, osc_g_grad) if variant == "oscillatory" else (smooth_g, smooth_g_grad)

    def __repr__(self):
        return f"Benchmark({self.variant!r}, d={self.d}, T={self.T})"

    def drift(self, t, x, k):
        self._check(x, k)
        return self.drift_coef * np.atleast_2d(k)

    def drift_vjp(self, t, x, k, cot):
        return self.drift_coef * np.atleast_2d(cot)

    def diffusion(self, t, x, k):
        B = np.atleast_2d(x).shape[0]
        return np.broadcast_to(self.sigma * np.eye(self.d), (B, self.d, self.d))

    def diffusion_apply(self, t, x, k, w, sparse=False):
        self._check(x, None, w)
        return self.sigma * np.atleast_2d(w)

    def cost(self, t, x, k):
        k = np.atleast_2d(k)
        return np.sum(k * k, axis=1)

    def cost_grad(self, t, x, k):
        return 2.0 * np.atleast_2d(k)

    def terminal(self, x):
        return 1.0 + self._g(x)

    def terminal_grad(self, x):
        return self._dg(x)

    def g(self, x):
        return self._g(x)


def make_benchmark(variant, d, T=1.0, control_halfwidth=4.0):
    return Benchmark(variant, d, T, control_halfwidth)


def eval_drift(spec: Problem, t, x, k):
    return spec.drift(t, x, k)


def eval_diffusion_apply(spec: Problem, t, x, k, w):
    return spec.diffusion_apply(t, x, k, w)


def control_distance(spec: Problem, k):
    return spec.control_distance(k)
