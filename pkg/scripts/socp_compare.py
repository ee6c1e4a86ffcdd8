"""Compare the control cost of a trained checkpoint with the zero control.

    python3 scripts/socp_compare.py runs/desk_smooth_d10/checkpoint.json --config configs/desk_smooth_d10.ini
"""

import argparse
import json
import math

import numpy as np

from rdohjb.config import load_config
from rdohjb.core import RngStream
from rdohjb.oracle import reference_value, socp_cost
from rdohjb.trainer import restore_state


def zero_control(t, x):
    return np.zeros_like(x)


def compare(cfg, checkpoint, rollouts=100_000, seed=2024):
    spec = cfg.problem()
    state = restore_state(spec, checkpoint)
    N = cfg["paths.N"]
    # same rollout stream for both controls (common random numbers)
    Jt, se_t = socp_cost(spec, state.control, rollouts, N, RngStream(seed, 1))
    J0, se_0 = socp_cost(spec, zero_control, rollouts, N, RngStream(seed, 1))
    v, se_v = reference_value(cfg["problem.variant"], spec.d, spec.T, 0.0, np.zeros(spec.d), cfg.oracle())
    return {"J_trained": Jt, "se_trained": se_t, "J_zero": J0, "se_zero": se_0, "v_ref": v, "se_ref": se_v,
            "improvement": J0 - Jt, "combined_se": math.hypot(se_t, se_0),
            "verification_margin": Jt - v, "verification_se": math.hypot(se_t, se_v)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("--config")
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--rollouts", type=int, default=100_000)
    args = ap.parse_args()
    print(json.dumps(compare(load_config(args.config, args.overrides), args.checkpoint, args.rollouts), indent=2))


if __name__ == "__main__":
    main()
