#!/usr/bin/env python3
"""Train the benchmark grid (full model + ablations over seeds 7/8/9).

Checkpoints land in the shared cache (artifacts/ by default, or
RELPOSE_CACHE_DIR), where the test suite picks them up.  Re-running skips
anything already cached.
"""

import argparse
import sys

from relpose import experiments, pipeline


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[7, 8, 9])
    parser.add_argument("--only", choices=["full", "no_jre", "no_jrpsp"], default=None,
                        help="train a single variant instead of the whole grid")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()

    train_ds, test_ds, occluded_ds = experiments.benchmark_datasets()
    log = (lambda line: None) if args.quiet else (lambda line: print(line, flush=True))

    for config in experiments.benchmark_variants(args.seeds):
        if args.only and config.ablation_tag() != args.only:
            continue
        print(f"=== {config.ablation_tag()} seed {config.seed} ===", flush=True)
        model, meta = experiments.train_cached(config, train_ds, log=log)
        clean = pipeline.evaluate_pck(model, test_ds, gamma=0.2, norm="bbox").mpck
        occl = pipeline.evaluate_pck(model, occluded_ds, gamma=0.2, norm="bbox").mpck
        print(f"    wall {meta['wall_seconds']:.0f}s  clean mPCK@0.2 {clean:.4f}  "
              f"occluded mPCK@0.2 {occl:.4f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
