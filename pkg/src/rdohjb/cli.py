"""Command line: ``rdohjb train | eval | verify``.

Artifacts written to ``--out``:

    history.csv       epoch,mart_loss,mean_value,rel_error,wall_time_s
    curves_e1.csv     s,v_hat,v_ref,ref_se   (points s*e1)
    curves_diag.csv   s,v_hat,v_ref,ref_se   (points s*(1,...,1))
    metrics.json      final errors and losses
    checkpoint.json   networks, multiplier, optimizer state, history
    config.ini        the resolved configuration

wall_time_s is left empty unless ``output.timings=true`` so that equal
seeds give byte-identical history files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import load_config
from .core import ConfigError, DomainError
from .oracle import cached_reference, relative_error
from .paths import build_eval_grid
from .trainer import Evaluator, Trainer, TrainingAborted, restore_state
from .verify import run_battery

HISTORY_COLUMNS = ("epoch", "mart_loss", "mean_value", "rel_error", "wall_time_s")
CURVE_COLUMNS = ("s", "v_hat", "v_ref", "ref_se")
EXIT_CONFIG, EXIT_ABORT, EXIT_CHECK = 2, 3, 1


def _num(v):
    return repr(float(v))


def history_row(rec, timings=False):
    return [str(rec.epoch), _num(rec.mart_loss), _num(rec.mean_value), _num(rec.rel_error),
            _num(rec.wall_time) if timings else ""]


def window_means(values, parts=10):
    return np.array([np.mean(c) for c in np.array_split(np.asarray(values, dtype=float), parts)])


def decreases_after_peak(values, parts=10, drop=0.9, band=0.1):
    """Shape test for a training history: an early peak, then decrease and settling.

    The peak must fall in the first ``1/parts`` of epochs, the last window
    mean must be at most ``drop`` times the peak, and the last three window
    means must agree to within ``band`` of the final one.
    """
    v = np.asarray(values, dtype=float)
    w = window_means(v, parts)
    early = int(np.argmax(v)) < max(1, v.size // parts)
    fell = w[-1] <= drop * v.max()
    settled = np.ptp(w[-3:]) <= band * abs(w[-1])
    return bool(early and fell and settled)


def reference_for(cfg, grid, out_dir):
    spec = cfg.problem()
    return cached_reference(cfg["problem.variant"], spec.d, spec.T, 0.0, grid.points, cfg.oracle(),
                            cfg.oracle_cache_dir(out_dir))


def write_curves(out_dir, grid, v_hat, ref, se):
    P = grid.per_segment
    paths = {}
    for tag, sl in (("e1", slice(0, P)), ("diag", slice(P, 2 * P))):
        rows = zip(grid.s, v_hat[sl], ref[sl], se[sl])
        path = os.path.join(out_dir, f"curves_{tag}.csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CURVE_COLUMNS)
            for row in rows:
                if not np.all(np.isfinite(row)):
                    raise FloatingPointError(f"non-finite value in curve {tag}")
                wr.writerow([_num(v) for v in row])
        paths[tag] = path
    return paths


def metrics(cfg, grid, v_hat, ref, state):
    P = grid.per_segment
    last = state.history[-1] if state.history else None
    return {
        "run_id": cfg.run_id,
        "variant": cfg["problem.variant"],
        "d": cfg["problem.d"],
        "epochs": state.epoch,
        "rel_error": relative_error(v_hat, ref),
        "rel_error_e1": relative_error(v_hat[:P], ref[:P]),
        "rel_error_diag": relative_error(v_hat[P:], ref[P:]),
        "mart_loss": None if last is None else last.mart_loss,
        "mean_value": None if last is None else last.mean_value,
        "lambda": state.lam,
        "oracle_samples": cfg["oracle.samples"],
    }


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(cfg, out_dir, echo=print):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        cfg.to_ini().write(fh)
    spec = cfg.problem()
    grid = build_eval_grid(spec.d, cfg["paths.points_per_segment"])
    ref, se = reference_for(cfg, grid, out_dir)
    evaluator = Evaluator(grid, ref)
    trainer = Trainer(spec, cfg.train(), cfg.law(), cfg.paths(), cfg.objective(), cfg.network(), evaluator)
    timings = cfg["output.timings"]
    every = cfg["output.checkpoint_every"]
    hist_path = os.path.join(out_dir, "history.csv")
    with open(hist_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_COLUMNS)

        def on_epoch(tr, rec):
            wr.writerow(history_row(rec, timings))
            fh.flush()
            if every and tr.state.epoch % every == 0:
                tr.save(os.path.join(out_dir, f"checkpoint_{tr.state.epoch:05d}.json"))

        try:
            trainer.run(callback=on_epoch)
        except TrainingAborted as exc:
            last = exc.history[-1] if exc.history else None
            echo(f"error: {exc}; last record: {last}", file=sys.stderr)
            trainer.save(os.path.join(out_dir, "checkpoint_aborted.json"))
            return EXIT_ABORT
    state = trainer.state
    trainer.save(os.path.join(out_dir, "checkpoint.json"))
    v_hat = evaluator.predict(state.value)
    write_curves(out_dir, grid, v_hat, ref, se)
    m = metrics(cfg, grid, v_hat, ref, state)
    _dump_json(os.path.join(out_dir, "metrics.json"), m)
    echo(f"{cfg.run_id}: {spec!r} epochs={state.epoch} rel_error={m['rel_error']:.4g} "
         f"mart_loss={m['mart_loss']:.4g} mean_value={m['mean_value']:.4g} -> {out_dir}")
    return 0


def cmd_eval(cfg, checkpoint, out_dir, echo=print):
    spec = cfg.problem()
    state = restore_state(spec, checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    grid = build_eval_grid(spec.d, cfg["paths.points_per_segment"])
    ref, se = reference_for(cfg, grid, os.path.dirname(os.path.abspath(checkpoint)))
    v_hat = Evaluator(grid, ref).predict(state.value)
    write_curves(out_dir, grid, v_hat, ref, se)
    m = metrics(cfg, grid, v_hat, ref, state)
    m["checkpoint"] = os.path.abspath(checkpoint)
    _dump_json(os.path.join(out_dir, "metrics.json"), m)
    echo(f"eval {checkpoint}: rel_error={m['rel_error']:.6g} -> {out_dir}")
    return 0


def cmd_verify(seed=0, negative_control=False, echo=print):
    results = run_battery(seed=seed, negative_control=negative_control, echo=echo)
    bad = [r.name for r in results if not r.passed]
    echo(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_CHECK if bad else 0


def build_parser():
    ap = argparse.ArgumentParser(prog="rdohjb", description="Derivative-free HJB / stochastic control solver")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="INI configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                       help="override a config key, e.g. trainer.I=10 (repeatable)")
        p.add_argument("--threads", type=int, help="oracle worker threads (1 = bitwise reproducible)")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--out", metavar="DIR", help="output directory")

    common(sub.add_parser("train", help="train value and control networks"))
    p = sub.add_parser("eval", help="evaluate a checkpoint against the reference solution")
    p.add_argument("checkpoint")
    common(p)
    p = sub.add_parser("verify", help="run the fast invariant battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negative-control", action="store_true",
                   help="also test three-point r=1.1 draws against the gaussian moments (must fail)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args.seed, args.negative_control)
    overrides = list(args.overrides)
    if args.threads is not None:
        overrides.append(f"oracle.threads={args.threads}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            return cmd_train(cfg, args.out or cfg["output.dir"])
        out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "eval")
        return cmd_eval(cfg, args.checkpoint, out)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
