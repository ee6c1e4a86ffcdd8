"""Run configuration: INI file + ``section.key=value`` overrides, validated
against a fixed schema before anything runs.

Unknown sections or keys are rejected.  Every value is parsed by the
schema's parser, so a typo fails at load time rather than mid-training.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .core import ConfigError
from .objective import ObjectiveConfig
from .oracle import OracleConfig
from .problem import Benchmark, ControlSet, VARIANTS
from .rdo import NoiseLaw
from .trainer import NetConfig, PathsConfig, TrainConfig


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(parse):
    def f(s):
        return None if str(s).strip().lower() in ("", "none") else parse(s)
    return f


def _ints(s):
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _int(s):
    f = float(s)
    if f != int(f):
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


def _choice(*opts):
    def f(s):
        s = str(s).strip()
        if s not in opts:
            raise ValueError(f"expected one of {opts}, got {s!r}")
        return s
    return f


SCHEMA = {
    "run": {"seed": (_int, 0), "run_id": (str, "run")},
    "problem": {
        "variant": (_choice(*VARIANTS), "smooth"),
        "d": (_int, 10),
        "T": (float, 1.0),
        "control_halfwidth": (float, 4.0),
        "control_set": (_opt(_choice("ball", "box")), None),
        "control_set_size": (float, 1.0),
    },
    "rdo": {"law": (_choice("gaussian", "three_point"), "gaussian"), "r": (float, 3 ** 0.5),
            "sparse": (_bool, False)},
    "paths": {"N": (_int, 50), "M": (_int, 1024), "points_per_segment": (_int, 51),
              "freeze_paths": (_bool, False), "batch_unit": (_choice("paths", "pairs"), "paths")},
    "objective": {"g_mode": (_choice("vector", "scalar"), "vector"), "set_penalty_weight": (float, 0.0)},
    "trainer": {
        "I": (_int, 500), "J": (_int, 2), "K": (_int, 1),
        "lambda0": (float, 10.0), "lambda_cap": (float, 1000.0), "lambda_lr": (float, 10.0),
        "lr_base": (float, 1e-3), "lr_adv": (float, 1e-2), "lr_decay": (float, 0.01),
        "lr_scale": (_opt(float), None), "batch_sizes": (_ints, (128, 256)),
        "rmsprop_decay": (float, 0.9), "rmsprop_eps": (float, 1e-8),
    },
    "network": {"width": (_opt(_int), None), "depth": (_int, 4), "adv_width": (_int, 64)},
    "oracle": {"samples": (_int, 1_000_000), "seed": (_int, 0), "chunk": (_int, 100_000),
               "mode": (_choice("monte-carlo", "quadrature-1d"), "monte-carlo"),
               "cache_dir": (_opt(str), None), "threads": (_int, 1)},
    "output": {"dir": (str, "runs/out"), "checkpoint_every": (_int, 0), "timings": (_bool, False)},
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: v[1] for k, v in keys.items()}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, dotted):
        sec, key = _split(dotted)
        return self.values[sec][key]

    def set(self, dotted, raw):
        sec, key = _split(dotted)
        parse = SCHEMA[sec][key][0]
        try:
            self.values[sec][key] = parse(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{dotted}: {exc}") from exc

    @property
    def seed(self):
        return self["run.seed"]

    @property
    def run_id(self):
        return self["run.run_id"]

    def problem(self):
        p = self.values["problem"]
        cs = ControlSet(p["control_set"], p["control_set_size"]) if p["control_set"] else None
        return Benchmark(p["variant"], p["d"], p["T"], p["control_halfwidth"], control_set=cs)

    def law(self):
        r = self.values["rdo"]
        return NoiseLaw(r["law"], r["r"])

    def train(self):
        return TrainConfig(seed=self.seed, **self.values["trainer"])

    def paths(self):
        return PathsConfig(**self.values["paths"])

    def objective(self):
        return ObjectiveConfig(**self.values["objective"])

    def network(self):
        return NetConfig(**self.values["network"])

    def oracle(self):
        o = self.values["oracle"]
        return OracleConfig(samples=o["samples"], mode=o["mode"], seed=o["seed"], chunk=o["chunk"],
                            threads=o["threads"])

    def oracle_cache_dir(self, out_dir):
        return self["oracle.cache_dir"] or os.path.join(out_dir, "oracle_cache")

    def validate(self):
        """Build every typed section once so cross-field errors surface early."""
        self.problem(), self.law(), self.train(), self.paths(), self.objective(), self.network(), self.oracle()
        if self["paths.points_per_segment"] < 2:
            raise ConfigError("paths.points_per_segment must be at least 2")
        return self

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for sec, keys in self.values.items():
            cp[sec] = {k: _fmt(v) for k, v in keys.items()}
        return cp


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _split(dotted):
    if "." not in dotted:
        raise ConfigError(f"config key {dotted!r} must be section.key")
    sec, key = dotted.split(".", 1)
    if sec not in SCHEMA:
        raise ConfigError(f"unknown config section {sec!r}")
    if key not in SCHEMA[sec]:
        raise ConfigError(f"unknown config key {dotted!r}")
    return sec, key


def parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def load_config(path=None, overrides=()):
    """RunConfig from an optional INI file plus ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        if not os.path.isfile(path):
            raise FileNotFoundError(path)
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keys are case-sensitive (N, M, T, I)
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for sec in cp.sections():
            for key, raw in cp[sec].items():
                cfg.set(f"{sec}.{key}", raw)
    for item in overrides:
        cfg.set(*parse_override(item))
    return cfg.validate()
