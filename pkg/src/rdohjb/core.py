"""Numeric kernels, error types and the counter-based random stream."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid configuration or argument shapes."""


class DomainError(ValueError):
    """Argument outside the domain of an operation (e.g. t > T)."""


class UsageError(RuntimeError):
    """Operation called in a state where it is not defined."""


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(f"gemm expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"gemm dimension mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("gemm produced non-finite entries")
    return out


class RngStream:
    """Philox stream keyed by (seed, stream_id).

    The 128-bit Philox key is the concatenation of the two 64-bit integers,
    so distinct stream ids give independent counter sequences.  ``split``
    derives child streams deterministically, which is how parallel or
    per-epoch work receives its own randomness.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = self.seed | (self.stream_id << 64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, *path: int) -> "RngStream":
        ss = np.random.SeedSequence([self.stream_id, *[int(p) & _MASK64 for p in path]])
        child = int(ss.generate_state(2, np.uint32).view(np.uint64)[0])
        return RngStream(self.seed, child)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_gaussian(rng: RngStream, n, dtype=np.float64) -> np.ndarray:
    if np.prod(np.atleast_1d(n)) < 1:
        raise ConfigError("need at least one draw")
    return rng.gen.standard_normal(n, dtype=dtype)


def sample_uniform_indices(rng: RngStream, pool: int, k: int) -> np.ndarray:
    """k distinct indices from range(pool), uniformly without replacement."""
    if k > pool or k < 0:
        raise ConfigError(f"cannot draw {k} distinct indices from a pool of {pool}")
    return rng.gen.choice(pool, size=k, replace=False, shuffle=True)
