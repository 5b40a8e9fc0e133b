#!/usr/bin/env python3
"""Desk-scale schedule smoke runs: a cosine-eased permutation-frequency ramp
(looking for a uniqueness*novelty dip below 0.9 followed by recovery to
>= 0.95) and a step schedule at matching parameters (reporting the validity
transient around the switch epoch).

Usage: python scripts/desk_ramp_smoke.py [--out runs/desk_ramp]
       [--budget 1000] [--seeds 0 1 2] [--jobs 2]
"""

import argparse
import json

from graphflow.experiments import ramp_smoke


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk_ramp")
    ap.add_argument("--budget", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--jobs", type=int, default=2)
    args = ap.parse_args()

    summary = ramp_smoke(args.out, tuple(args.seeds), args.budget, args.jobs)
    for seed, info in summary["per_seed"].items():
        print(f"seed {seed}: dip at {info['dip_epoch']}, recovery at {info['recovery_epoch']}, "
              f"step validity transient: {info['step_validity_transient']}")
    print(f"dip-and-recover on >= 2 seeds: {summary['recovered_majority']}")
    with open(f"{args.out}/summary.json", "w") as fh:
        json.dump({"per_seed": {str(k): v for k, v in summary["per_seed"].items()},
                   "recovered_majority": summary["recovered_majority"]}, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
