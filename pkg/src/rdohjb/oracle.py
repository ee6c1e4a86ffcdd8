"""Reference solutions of the benchmark, error metric and control cost.

For the benchmark HJB the value function is

    v(t, x) = 1 - ln E[exp(-g(x + sqrt(2) B_{T-t}))]

and for the ``heat`` variant (control frozen at zero, no running cost)
it is the plain expectation 1 + E[g(x + sqrt(2) B_{T-t})].
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .core import ConfigError, DomainError, RngStream
from .problem import VARIANTS, osc_g, smooth_g

ORACLE_MODES = ("monte-carlo", "quadrature-1d")
CACHE_FORMAT = "rdohjb-oracle"


@dataclass(frozen=True)
class OracleConfig:
    samples: int = 1_000_000
    mode: str = "monte-carlo"
    seed: int = 0
    chunk: int = 100_000
    threads: int = 1
    nodes: int = 200  # Gauss-Hermite nodes for quadrature-1d

    def __post_init__(self):
        if self.mode not in ORACLE_MODES:
            raise ConfigError(f"unknown oracle mode {self.mode!r}")
        if self.samples < 1:
            raise ConfigError("oracle needs at least one sample")


def terminal_g(variant):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    return osc_g if variant == "oscillatory" else smooth_g


def _chunk_stats(variant, pts, Z, scale):
    """Per-point shifted sums for one chunk of Brownian draws Z (n, d)."""
    g = terminal_g(variant)
    out = np.empty((pts.shape[0], 3))
    for i, x in enumerate(pts):
        gv = g(x + scale * Z)
        if variant == "heat":
            out[i] = (gv.sum(), (gv * gv).sum(), 0.0)
        else:
            a = -gv
            m = a.max()
            e = np.exp(a - m)
            out[i] = (e.sum(), (e * e).sum(), m)
    return out


def _merge(acc, new, variant):
    if variant == "heat" or acc is None:
        return new if acc is None else acc + new
    # rescale both running sums to the common max shift
    m = np.maximum(acc[:, 2], new[:, 2])
    fa, fn = np.exp(acc[:, 2] - m), np.exp(new[:, 2] - m)
    return np.column_stack([acc[:, 0] * fa + new[:, 0] * fn,
                            acc[:, 1] * fa * fa + new[:, 1] * fn * fn, m])


def reference_values(variant, d, T, t, points, cfg: OracleConfig = OracleConfig()):
    """Reference v(t, x) and its standard error at each row of ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != d:
        raise ConfigError(f"points have width {pts.shape[1]}, expected d={d}")
    if not 0.0 <= t <= T:
        raise DomainError(f"t={t} outside [0, {T}]")
    g = terminal_g(variant)
    tau = T - t
    if tau == 0.0:
        return 1.0 + g(pts), np.zeros(pts.shape[0])
    if cfg.mode == "quadrature-1d":
        return _quadrature(variant, tau, pts, cfg.nodes)
    scale = math.sqrt(2.0 * tau)
    root = RngStream(cfg.seed, 0x0AC1E)
    sizes = [min(cfg.chunk, cfg.samples - s) for s in range(0, cfg.samples, cfg.chunk)]

    def work(i):
        Z = root.split(i).gen.standard_normal((sizes[i], d))
        return _chunk_stats(variant, pts, Z, scale)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(i) for i in range(len(sizes))]
    acc = None
    for p in parts:  # fixed order reduction
        acc = _merge(acc, p, variant)
    n = cfg.samples
    m1, m2 = acc[:, 0] / n, acc[:, 1] / n
    var = np.maximum(m2 - m1 * m1, 0.0)
    if variant == "heat":
        return 1.0 + m1, np.sqrt(var / n)
    # delta method: se of log(mean) = se(mean)/mean
    return 1.0 - (np.log(m1) + acc[:, 2]), np.sqrt(var / n) / m1


def reference_value(variant, d, T, t, x, cfg: OracleConfig = OracleConfig()):
    v, se = reference_values(variant, d, T, t, np.reshape(x, (1, d)), cfg)
    return float(v[0]), float(se[0])


def _quadrature(variant, tau, pts, nodes):
    if pts.shape[1] != 1:
        raise ConfigError("quadrature-1d mode needs d = 1")
    z, wts = np.polynomial.hermite.hermgauss(nodes)
    wts = wts / math.sqrt(math.pi)
    g = terminal_g(variant)
    # x + sqrt(2) B_tau = x + sqrt(4 tau) z under the Hermite weight exp(-z^2)
    y = pts[:, 0][:, None] + math.sqrt(4.0 * tau) * z[None, :]
    gv = g(y.reshape(-1, 1)).reshape(y.shape)
    if variant == "heat":
        return 1.0 + gv @ wts, np.zeros(pts.shape[0])
    a = -gv
    m = a.max(axis=1, keepdims=True)
    return 1.0 - (np.log(np.exp(a - m) @ wts) + m[:, 0]), np.zeros(pts.shape[0])


def relative_error(candidate, reference):
    candidate = np.asarray(candidate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if candidate.shape != reference.shape:
        raise ConfigError(f"shape mismatch {candidate.shape} vs {reference.shape}")
    denom = np.abs(reference).sum()
    if denom == 0.0:
        raise ZeroDivisionError("relative error undefined: reference values sum to zero")
    return float(np.abs(candidate - reference).sum() / denom)


def socp_cost(spec, control, M, N, rng: RngStream, x0=None, chunk=50_000):
    """Monte-Carlo estimate of E[sum_n c(t_n, X_n, u_n) h + terminal(X_N)] and its SE.

    ``spec.terminal`` already includes the constant 1 of the benchmark cost.
    """
    x0 = np.zeros(spec.d) if x0 is None else np.asarray(x0, dtype=np.float64)
    h = spec.T / N
    s1 = s2 = 0.0
    shift = None  # first sample; keeps the variance sum free of cancellation
    for ci, start in enumerate(range(0, M, chunk)):
        n = min(chunk, M - start)
        gen = rng.split(ci).gen
        x = np.repeat(x0[None, :], n, axis=0)
        run = np.zeros(n)
        for k in range(N):
            t = np.full(n, k * h)
            u = np.atleast_2d(control(t, x))
            run += spec.cost(t, x, u) * h
            dB = gen.standard_normal((n, spec.q)) * math.sqrt(h)
            x = x + spec.drift(t, x, u) * h + spec.diffusion_apply(t, x, u, dB)
        J = run + spec.terminal(x)
        if shift is None:
            shift = float(J[0])
        s1 += (J - shift).sum()
        s2 += ((J - shift) ** 2).sum()
    m = s1 / M
    return shift + m, math.sqrt(max(s2 / M - m * m, 0.0) / M)


def _cache_key(variant, d, T, t, points, cfg):
    key = {"variant": variant, "d": d, "T": T, "t": t, "samples": cfg.samples, "seed": cfg.seed,
           "mode": cfg.mode, "chunk": cfg.chunk,
           "points": hashlib.sha256(np.ascontiguousarray(points).tobytes()).hexdigest()[:16]}
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
    return key, digest


def cached_reference(variant, d, T, t, points, cfg: OracleConfig, cache_dir=None):
    """reference_values backed by a JSON file cache (atomic write)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if cache_dir is None:
        return reference_values(variant, d, T, t, points, cfg)
    key, digest = _cache_key(variant, d, T, t, points, cfg)
    path = os.path.join(cache_dir, f"oracle_{variant}_d{d}_{digest}.json")
    if os.path.exists(path):
        with open(path) as fh:
            doc = json.load(fh)
        rows = doc["rows"]
        return np.array([r[1] for r in rows]), np.array([r[2] for r in rows])
    v, se = reference_values(variant, d, T, t, points, cfg)
    doc = {"format": CACHE_FORMAT, "header": {**key, "config": asdict(cfg)},
           "rows": [[p.tolist(), float(a), float(b)] for p, a, b in zip(points, v, se)]}
    os.makedirs(cache_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)
    return v, se
