"""Pilot run that fixes the end-to-end error threshold for the d=10 smooth benchmark.

Trains the desk profile on seeds that the acceptance suite does not use and
writes the outcome to calibration/pilot_smooth_d10.json:

    python3 scripts/pilot_calibration.py --seeds 1 2
"""

import argparse
import csv
import json
import os
import time

from rdohjb import cli
from rdohjb.config import load_config

from socp_compare import compare

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)


def window_means(values):
    return cli.window_means(values).tolist()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "desk_smooth_d10.ini"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--out", default=os.path.join(ROOT, "runs", "pilot"))
    ap.add_argument("--record", default=os.path.join(ROOT, "calibration", "pilot_smooth_d10.json"))
    args = ap.parse_args()
    runs = []
    for seed in args.seeds:
        cfg = load_config(args.config, [f"run.seed={seed}", f"run.run_id=pilot_seed{seed}"])
        out = os.path.join(args.out, f"seed{seed}")
        t0 = time.perf_counter()
        if cli.cmd_train(cfg, out) != 0:
            raise SystemExit(f"pilot seed {seed} aborted")
        secs = time.perf_counter() - t0
        with open(os.path.join(out, "history.csv")) as fh:
            rows = list(csv.DictReader(fh))
        rec = {"seed": seed, "seconds": round(secs, 1),
               "rel_error": float(rows[-1]["rel_error"]),
               "mart_loss_windows": window_means([r["mart_loss"] for r in rows]),
               "mean_value_windows": window_means([r["mean_value"] for r in rows]),
               "rel_error_windows": window_means([r["rel_error"] for r in rows]),
               "mart_loss_decreases": cli.decreases_after_peak([r["mart_loss"] for r in rows]),
               "mean_value_decreases": cli.decreases_after_peak([r["mean_value"] for r in rows]),
               "control": compare(cfg, os.path.join(out, "checkpoint.json"), rollouts=40_000)}
        print(json.dumps(rec, indent=2), flush=True)
        runs.append(rec)
    worst = max(r["rel_error"] for r in runs)
    doc = {"config": os.path.relpath(args.config, ROOT), "runs": runs, "worst_rel_error": worst,
           "threshold": 0.10,
           "note": "threshold frozen at 0.10; pilot worst-case must sit well below it"}
    os.makedirs(os.path.dirname(args.record), exist_ok=True)
    with open(args.record, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"worst pilot rel_error {worst:.4f} -> {args.record}")


if __name__ == "__main__":
    main()
