"""Shared argument handling for the study scripts."""

import argparse

from pmcmc.experiments import RUNNERS, ExperimentConfig


def run(command, description, full_scale: dict, **desk):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default=f"results/{command}")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full-scale", action="store_true", help="long run lengths and replication counts (hours)")
    args = p.parse_args()
    settings = dict(desk)
    if args.full_scale:
        settings.update(full_scale)
    config = ExperimentConfig.default(command, seed=args.seed, **settings)
    config.check()
    out = RUNNERS[command](config, args.out, args.workers)
    print(f"wrote {out}")
