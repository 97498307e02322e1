"""Command-line interface: data generation, training, evaluation, dumps.

Subcommands:
  gen-data        write a synthetic PSEQ1 dataset described by a config file
  train           train a model on a PSEQ1 file and save a checkpoint
  eval            score PCK@gamma for a checkpoint on a dataset (JSON line)
  infer           dump per-frame heatmap PGMs and decoded joint coordinates
  dump-relations  dump per-frame relation matrices as K x K PGMs
  gradcheck       run the finite-difference gradient suite
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck, metrics, pipeline, relation, propagation, synthdata
from .config import ABLATIONS, load_config
from .heatmaps import decode_maps
from .pgm import write_pgm


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relpose")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic PSEQ1 dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--occlude", type=float, default=None, metavar="RATE")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", choices=ABLATIONS, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="PCK evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--norm", choices=("bbox", "torso"), default="bbox")

    p = sub.add_parser("infer", help="dump heatmaps and decoded joints")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dump-dir", required=True)

    p = sub.add_parser("dump-relations", help="dump relation-weight PGMs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dump-dir", required=True)

    sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    return parser


def _cmd_gen_data(args) -> int:
    config = load_config(args.config)
    gen_cfg = synthdata.GeneratorConfig(T=config.T, H=config.H, W=config.W)
    dataset = synthdata.generate(config.n_samples, gen_cfg, seed=config.data_seed)
    if args.occlude is not None:
        dataset = synthdata.occlude(dataset, args.occlude, seed=config.data_seed + 50_000,
                                    sigma=config.sigma, stride=config.stride)
    synthdata.write(args.out, dataset)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.ablate is not None:
        setattr(config, args.ablate, True)
    dataset = synthdata.read(args.data)
    result = pipeline.train(config, dataset, log=print)
    checkpoint.save(args.out, result.model)
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = checkpoint.load(args.ckpt)
    dataset = synthdata.read(args.data)
    report = pipeline.evaluate_pck(model, dataset, gamma=args.gamma, norm=args.norm)
    print(report.to_json_line())
    return 0


def _cmd_infer(args) -> int:
    model = checkpoint.load(args.ckpt)
    dataset = synthdata.read(args.data)
    if dataset.K != model.config.K:
        raise metrics.MetricError(
            f"dataset has {dataset.K} joints but checkpoint expects {model.config.K}")
    out_dir = Path(args.dump_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = (synthdata.JOINT_NAMES if dataset.K == synthdata.JOINT_COUNT
             else [f"joint{i}" for i in range(dataset.K)])
    lines = []
    for i, sample in enumerate(dataset.samples):
        refined, _ = model.rollout_detailed(sample.frames[None])
        for t, maps in enumerate(refined):
            tile = np.concatenate(list(maps[0]), axis=1)  # K maps side by side
            write_pgm(out_dir / f"heatmaps_s{i:04d}_f{t}.pgm", tile)
            coords, vis = decode_maps(maps, model.config.stride)
            for j, name in enumerate(names):
                x, y = coords[0, j]
                lines.append(f"{i} {t} {name} {x:.2f} {y:.2f} {int(vis[0, j])}")
    (out_dir / "joints.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(dataset)} samples' dumps to {out_dir}")
    return 0


def _cmd_dump_relations(args) -> int:
    model = checkpoint.load(args.ckpt)
    dataset = synthdata.read(args.data)
    if dataset.K != model.config.K:
        raise metrics.MetricError(
            f"dataset has {dataset.K} joints but checkpoint expects {model.config.K}")
    out_dir = Path(args.dump_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for i, sample in enumerate(dataset.samples):
        _, relations = model.rollout_detailed(sample.frames[None])
        for t, weights in enumerate(relations):
            write_pgm(out_dir / f"relations_s{i:04d}_f{t}.pgm", weights[0])
            count += 1
    print(f"wrote {count} relation matrices to {out_dir}")
    return 0


def _cmd_gradcheck() -> int:
    def extra(rng: np.random.Generator) -> list:
        return relation.gradient_check_cases(rng) + propagation.gradient_check_cases(rng)

    rows = gradcheck.run_suite(extra_cases=extra, verbose=True)
    failed = [name for name, _, ok in rows if not ok]
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(rows)} gradient checks passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "dump-relations":
            return _cmd_dump_relations(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck()
        parser.error(f"unknown command {args.command}")  # pragma: no cover
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
