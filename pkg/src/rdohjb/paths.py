"""Evaluation grid, Euler-Maruyama exploration paths and minibatches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, RngStream, sample_uniform_indices
from .problem import Problem


@dataclass
class EvalGrid:
    """Points s*e1 and s*e2 (e2 the all-ones vector) for s uniform in [-1, 1]."""

    d: int
    s: np.ndarray  # (P,) segment parameters
    points: np.ndarray  # (2P, d): first P on the e1 axis, then P on the diagonal

    @property
    def per_segment(self):
        return self.s.size

    def segment(self, which):
        P = self.per_segment
        return self.points[:P] if which == "e1" else self.points[P:]


def build_eval_grid(d: int, points_per_segment: int) -> EvalGrid:
    P = int(points_per_segment)
    if P < 2:
        raise ConfigError("need at least 2 points per segment")
    s = np.array([2.0 * j / (P - 1) - 1.0 for j in range(P)])
    e1 = np.zeros(d)
    e1[0] = 1.0
    e2 = np.ones(d)
    pts = np.concatenate([s[:, None] * e1, s[:, None] * e2])
    return EvalGrid(d, s, pts)


@dataclass
class PathPool:
    X: np.ndarray  # (N+1, M, d)
    dB: np.ndarray  # (N, M, q)
    T: float
    epoch: int = 0

    @property
    def N(self):
        return self.dB.shape[0]

    @property
    def M(self):
        return self.X.shape[1]

    @property
    def h(self):
        return self.T / self.N

    def time(self, n):
        # grid times n*T/N; the last one is exactly T
        n = np.asarray(n)
        return np.where(n == self.N, self.T, n * self.h)


@dataclass
class Minibatch:
    n: np.ndarray
    m: np.ndarray

    def __len__(self):
        return self.n.size


def start_points(grid: EvalGrid, M: int):
    """Grid points cycled to fill M start states."""
    return grid.points[np.arange(M) % grid.points.shape[0]].copy()


def euler_step(spec: Problem, control, t: float, h: float, x, dB):
    """X_{n+1} = X_n + mu h + sigma dB with the control evaluated at (t_n, X_n)."""
    tt = np.full(x.shape[0], t)
    k = np.atleast_2d(control(tt, x))
    return x + spec.drift(tt, x, k) * h + spec.diffusion_apply(tt, x, k, dB)


def generate_paths(spec: Problem, control, grid: EvalGrid, N: int, M: int, rng: RngStream, epoch=0) -> PathPool:
    if N < 1 or M < 1:
        raise ConfigError("need N >= 1 and M >= 1")
    if grid.d != spec.d:
        raise ConfigError(f"grid dimension {grid.d} != problem dimension {spec.d}")
    h = spec.T / N
    dB = rng.gen.standard_normal((N, M, spec.q)) * math.sqrt(h)
    X = np.empty((N + 1, M, spec.d))
    X[0] = start_points(grid, M)
    for n in range(N):
        X[n + 1] = euler_step(spec, control, n * h, h, X[n], dB[n])
    return PathPool(X, dB, spec.T, epoch)


def replay_paths(spec: Problem, control, pool: PathPool):
    """Recompute states from X_0 and the stored increments."""
    X = np.empty_like(pool.X)
    X[0] = pool.X[0]
    for n in range(pool.N):
        X[n + 1] = euler_step(spec, control, n * pool.h, pool.h, X[n], pool.dB[n])
    return X


def draw_minibatch(pool: PathPool, size: int, rng: RngStream) -> Minibatch:
    """Uniform subset of {0..N-1} x {0..M-1} without replacement."""
    idx = sample_uniform_indices(rng, pool.N * pool.M, int(size))
    n, m = np.divmod(idx, pool.M)
    return Minibatch(n, m)


def draw_path_minibatch(pool: PathPool, n_paths: int, rng: RngStream) -> Minibatch:
    """All time steps 0..N-1 of ``n_paths`` paths chosen without replacement."""
    m = np.sort(sample_uniform_indices(rng, pool.M, int(n_paths)))
    n = np.repeat(np.arange(pool.N), m.size)
    return Minibatch(n, np.tile(m, pool.N))
