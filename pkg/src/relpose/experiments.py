"""Desk-scale experiment orchestration with checkpoint caching.

The standard benchmark is fixed here: 512 training clips and 128 clean test
clips of 5 frames at 64x64, plus an occluded copy of the test split (rate
0.3).  Trained checkpoints are cached on disk keyed by the full config, so
scripts and the acceptance suite share one set of runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

from . import checkpoint, pipeline, synthdata
from .config import ModelConfig, serialize_config

TRAIN_DATA_SEED = 1000
TEST_DATA_SEED = 2000
OCCLUSION_SEED = 3000
OCCLUSION_RATE = 0.3
N_TRAIN = 512
N_TEST = 128
# bump to invalidate cached checkpoints when the training recipe changes
RECIPE_VERSION = 2


def default_cache_dir() -> Path:
    root = os.environ.get("RELPOSE_CACHE_DIR")
    if root:
        return Path(root)
    return Path(__file__).resolve().parents[2] / "artifacts"


def acceptance_config(seed: int = 7, **overrides) -> ModelConfig:
    """The benchmark training config (overridable per run)."""
    cfg = ModelConfig(K=13, T=5, H=64, W=64, stride=4, sigma=2.0, C_f=32, C=32,
                      lr=0.0005, lr_decay_epochs=[8, 15], epochs=30, batch_size=8,
                      seed=seed, pretrain_epochs=12, pretrain_batch_size=32,
                      n_samples=N_TRAIN, data_seed=TRAIN_DATA_SEED)
    return replace(cfg, **overrides) if overrides else cfg


def benchmark_datasets(config: Optional[ModelConfig] = None):
    """(train, clean test, occluded test) splits for the benchmark geometry."""
    cfg = config or acceptance_config()
    gen = synthdata.GeneratorConfig(T=cfg.T, H=cfg.H, W=cfg.W)
    train = synthdata.generate(N_TRAIN, gen, seed=TRAIN_DATA_SEED)
    test = synthdata.generate(N_TEST, gen, seed=TEST_DATA_SEED)
    occluded = synthdata.occlude(test, OCCLUSION_RATE, seed=OCCLUSION_SEED,
                                 sigma=cfg.sigma, stride=cfg.stride)
    return train, test, occluded


def config_key(config: ModelConfig) -> str:
    text = f"v{RECIPE_VERSION}\n{serialize_config(config)}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def train_cached(config: ModelConfig, dataset: synthdata.PoseSequenceDataset,
                 cache_dir: Optional[Path] = None,
                 log: Optional[Callable[[str], None]] = None):
    """Train (or load a cached run of) `config`; returns (model, metadata).

    Metadata records wall-clock seconds and the per-epoch histories of the
    run that produced the checkpoint.
    """
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    key = config_key(config)
    tag = f"{config.ablation_tag()}_seed{config.seed}_{key}"
    ckpt_path = cache / f"{tag}.ckpt"
    meta_path = cache / f"{tag}.json"

    if ckpt_path.exists() and meta_path.exists():
        model = checkpoint.load(ckpt_path)
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return model, meta

    start = time.perf_counter()
    result = pipeline.train(config, dataset, log=log)
    wall = time.perf_counter() - start
    meta = {
        "tag": tag,
        "config_key": key,
        "wall_seconds": wall,
        "pretrain_losses": result.pretrain_losses,
        "pretrain_val_mpck": result.pretrain_val_mpck,
        "epoch_losses": result.epoch_losses,
        "val_mpck": result.val_mpck,
    }
    checkpoint.save(ckpt_path, result.model)
    meta_path.write_text(json.dumps(meta, indent=1), encoding="utf-8")
    return result.model, meta


def benchmark_variants(seeds=(7, 8, 9)) -> list[ModelConfig]:
    """Full model plus both ablations, per seed (the Table-I style grid)."""
    grid = []
    for seed in seeds:
        grid.append(acceptance_config(seed=seed))
        grid.append(acceptance_config(seed=seed, no_jre=True))
        grid.append(acceptance_config(seed=seed, no_jrpsp=True))
    return grid
