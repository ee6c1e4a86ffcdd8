"""Alternating descent/ascent training loop with RMSProp updates."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ConfigError, RngStream
from .networks import AdversarialNet, ControlNet, MlpNet, ValueNet, load_checkpoint, save_checkpoint
from .objective import NonFiniteLoss, ObjectiveConfig, evaluate
from .oracle import relative_error
from .paths import EvalGrid, build_eval_grid, draw_minibatch, draw_path_minibatch, generate_paths
from .problem import Problem
from .rdo import NoiseLaw, RdoConfig


@dataclass
class TrainConfig:
    I: int = 500
    J: int = 2
    K: int = 1
    lambda0: float = 10.0
    lambda_cap: float = 1000.0
    lambda_lr: float = 10.0
    lr_base: float = 1e-3
    lr_adv: float = 1e-2
    lr_decay: float = 0.01
    lr_scale: float | None = None  # overrides the dimension rule for delta_0
    batch_sizes: tuple = (128, 256)
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.I, self.J, self.K) < 1:
            raise ConfigError("I, J and K must be at least 1")
        if not 0.0 <= self.lambda0 <= self.lambda_cap:
            raise ConfigError("need 0 <= lambda0 <= lambda_cap")
        if min(self.lr_base, self.lr_adv, self.lr_decay, self.lambda_lr) <= 0 or not self.batch_sizes:
            raise ConfigError("learning rates and batch sizes must be positive")
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)


@dataclass
class PathsConfig:
    N: int = 50
    M: int = 1024
    points_per_segment: int = 51
    freeze_paths: bool = False
    batch_unit: str = "paths"  # "paths": all steps of sampled paths; "pairs": sampled (n, m) pairs

    def __post_init__(self):
        if self.batch_unit not in ("paths", "pairs"):
            raise ConfigError(f"batch_unit must be 'paths' or 'pairs', got {self.batch_unit!r}")


@dataclass
class NetConfig:
    width: int | None = None  # None -> 2d + 20
    depth: int = 4
    adv_width: int = 64


@dataclass
class TrainingRecord:
    epoch: int
    mart_loss: float
    mean_value: float
    rel_error: float
    wall_time: float


@dataclass
class TrainState:
    control: ControlNet
    value: ValueNet
    adversarial: AdversarialNet
    lam: float
    acc: dict
    epoch: int = 0
    history: list = field(default_factory=list)


class TrainingAborted(RuntimeError):
    def __init__(self, epoch, term, history):
        super().__init__(f"training aborted at epoch {epoch}: non-finite {term}")
        self.epoch = epoch
        self.term = term
        self.history = history


def delta0(d, scale=None):
    if scale:
        return float(scale)
    return 3.0 * d ** -0.5 if d <= 1000 else 3.0 * d ** -0.8


def lr_schedule(i, I, d, cfg: TrainConfig = TrainConfig()):
    """(delta1, delta2, delta3, delta4) at epoch i."""
    f = cfg.lr_decay ** (i / I)
    d12 = delta0(d, cfg.lr_scale) * cfg.lr_base * f
    return d12, d12, cfg.lr_adv * f, cfg.lambda_lr


def batch_size(i, I, sizes):
    """Stage k of L covers k I/L < i <= (k+1) I/L; epoch 0 belongs to stage 0."""
    L = len(sizes)
    return sizes[max(0, min(L - 1, math.ceil(i * L / I) - 1))]


def rmsprop_step(params, grads, acc, lr, decay=0.9, eps=1e-8, ascent=False):
    """In-place RMSProp; returns (params, acc)."""
    sign = 1.0 if ascent else -1.0
    for p, g, a in zip(params, grads, acc):
        a *= decay
        a += (1.0 - decay) * g * g
        p += sign * lr * g / (np.sqrt(a) + eps)
    return params, acc


def build_nets(spec: Problem, net: NetConfig, rng: RngStream):
    control = ControlNet(spec.d, spec.m, spec.lower, spec.upper, net.width, net.depth, rng.split(0, 1), T=spec.T)
    value = ValueNet(spec.d, spec.T, spec.terminal, spec.terminal_grad, net.width, net.depth, rng.split(0, 2))
    adv = AdversarialNet(spec.d, net.adv_width, rng.split(0, 3))
    return control, value, adv


class Evaluator:
    """Relative error of v(0, .) on the evaluation grid against fixed reference values."""

    def __init__(self, grid: EvalGrid, reference, t=0.0):
        self.grid = grid
        self.reference = np.asarray(reference, dtype=np.float64)
        self.t = t

    def predict(self, value):
        return value(np.full(self.grid.points.shape[0], self.t), self.grid.points)

    def __call__(self, value):
        return relative_error(self.predict(value), self.reference)


class Trainer:
    def __init__(self, spec: Problem, cfg: TrainConfig = TrainConfig(), law: NoiseLaw = NoiseLaw(),
                 paths: PathsConfig = PathsConfig(), obj: ObjectiveConfig = ObjectiveConfig(),
                 net: NetConfig = NetConfig(), evaluator: Evaluator | None = None, state: TrainState | None = None):
        self.spec, self.cfg, self.paths_cfg, self.obj = spec, cfg, paths, obj
        self.rdo = RdoConfig(spec.T / paths.N, law)
        self.grid = build_eval_grid(spec.d, paths.points_per_segment)
        self.evaluator = evaluator
        self.rng = RngStream(cfg.seed)
        limit = paths.M if paths.batch_unit == "paths" else paths.N * paths.M
        if max(cfg.batch_sizes) > limit:
            raise ConfigError(f"batch size exceeds the {limit} available {paths.batch_unit}")
        if state is None:
            c, v, a = build_nets(spec, net, self.rng)
            acc = {k: [np.zeros_like(p) for p in n.params()] for k, n in (("control", c), ("value", v), ("adversarial", a))}
            state = TrainState(c, v, a, cfg.lambda0, acc)
        self.state = state
        self.pool = None

    def epoch(self, i):
        st, cfg, spec = self.state, self.cfg, self.spec
        d1, d2, d3, d4 = lr_schedule(i, cfg.I, spec.d, cfg)
        if self.pool is None or not self.paths_cfg.freeze_paths:
            self.pool = generate_paths(spec, st.control, self.grid, self.paths_cfg.N, self.paths_cfg.M,
                                       self.rng.split(1, i), epoch=i)
        draw = draw_path_minibatch if self.paths_cfg.batch_unit == "paths" else draw_minibatch
        batch = draw(self.pool, batch_size(i, cfg.I, cfg.batch_sizes), self.rng.split(2, i))
        q = (len(batch), spec.q)
        for j in range(cfg.J):
            w = self.rdo.law.sample(self.rng.split(3, i, j), q)
            out, (gc, gv, _) = evaluate(spec, self.pool, batch, st.value, st.control, st.adversarial, st.lam,
                                        self.rdo, w, self.obj)
            rmsprop_step(st.control.params(), gc, st.acc["control"], d1, cfg.rmsprop_decay, cfg.rmsprop_eps)
            rmsprop_step(st.value.params(), gv, st.acc["value"], d2, cfg.rmsprop_decay, cfg.rmsprop_eps)
        for k in range(cfg.K):
            w = self.rdo.law.sample(self.rng.split(4, i, k), q)
            out, (_, _, ga) = evaluate(spec, self.pool, batch, st.value, st.control, st.adversarial, st.lam,
                                       self.rdo, w, self.obj)
            rmsprop_step(st.adversarial.params(), ga, st.acc["adversarial"], d3, cfg.rmsprop_decay,
                         cfg.rmsprop_eps, ascent=True)
            st.lam = min(cfg.lambda_cap, st.lam + d4 * out.G2)
        return out

    def run(self, epochs=None, callback=None):
        st = self.state
        stop = self.cfg.I if epochs is None else min(self.cfg.I, st.epoch + epochs)
        start = time.perf_counter()
        while st.epoch < stop:
            i = st.epoch
            try:
                out = self.epoch(i)
            except NonFiniteLoss as exc:
                raise TrainingAborted(i, exc.term, st.history) from exc
            rel = self.evaluator(st.value) if self.evaluator is not None else float("nan")
            rec = TrainingRecord(i, out.mart_loss, out.mean_value, rel, time.perf_counter() - start)
            st.history.append(rec)
            st.epoch += 1
            if callback is not None:
                callback(self, rec)
        return st

    def save(self, path):
        st = self.state
        extra = {"lam": st.lam, "epoch": st.epoch,
                 "acc": {k: [a.ravel().tolist() for a in v] for k, v in st.acc.items()},
                 "history": [asdict(r) for r in st.history]}
        save_checkpoint(path, {"control": st.control, "value": st.value, "adversarial": st.adversarial}, extra)


def restore_state(spec: Problem, path) -> TrainState:
    """Rebuild a TrainState from a checkpoint written by ``Trainer.save``."""
    nets, extra = load_checkpoint(path)
    try:
        c_body, v_body, a_body = nets["control"][1], nets["value"][1], nets["adversarial"][1]
    except KeyError as exc:
        raise ConfigError(f"checkpoint {path} lacks network {exc}") from exc
    d = spec.d
    if v_body.sizes[0] != d + 1 or c_body.sizes[0] != d + 1 or c_body.sizes[-1] != spec.m:
        raise ConfigError(f"checkpoint networks expect d={v_body.sizes[0] - 1}, config has d={d}")
    control = ControlNet(d, spec.m, spec.lower, spec.upper, body=c_body, T=spec.T)
    value = ValueNet(d, spec.T, spec.terminal, spec.terminal_grad, body=v_body)
    adv = AdversarialNet(d, a_body.sizes[-1], body=a_body)
    acc = {}
    for name, net in (("control", control), ("value", value), ("adversarial", adv)):
        stored = extra.get("acc", {}).get(name)
        acc[name] = ([np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(stored, net.params())]
                     if stored else [np.zeros_like(p) for p in net.params()])
    hist = [TrainingRecord(**r) for r in extra.get("history", [])]
    return TrainState(control, value, adv, float(extra.get("lam", 0.0)), acc, int(extra.get("epoch", 0)), hist)


def train(spec, cfg=TrainConfig(), law=NoiseLaw(), paths=PathsConfig(), obj=ObjectiveConfig(), net=NetConfig(),
          evaluator=None, callback=None) -> TrainState:
    return Trainer(spec, cfg, law, paths, obj, net, evaluator).run(callback=callback)


def history_json(history):
    return json.dumps([asdict(r) for r in history])
