"""Sequence rollout, loss, two-stage training, and PCK evaluation.

Frame 1 goes through the pose initializer and relation refinement; every
later frame reuses the previous frame's features and refined heatmaps:
fuse, distill to a template, match against the next frame's features, then
refine the matched pseudo maps.  Training runs a single-frame initializer
stage first (unless ablated) and then full-sequence optimization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import metrics, synthdata
from .autodiff import DimensionError, Parameter, Tensor, adam_step
from .backbone import BackboneInit
from .config import ModelConfig
from .heatmaps import JointSet, decode_maps, encode_maps
from .propagation import PoseSemanticsPropagator
from .relation import JointRelationExtractor, relation_matrix


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured."""


@dataclass
class RolloutState:
    """Carry-over between frames: previous features and refined heatmaps."""

    features: Tensor
    heatmaps: Tensor


class PoseTransferNet:
    """Backbone + relation extractor + propagator, wired per the config."""

    def __init__(self, config: ModelConfig):
        config.validate()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 101)))
        self.config = config
        self.backbone = BackboneInit(rng, config.K, config.C_f, config.stride)
        self.jre = JointRelationExtractor(rng, config.K, use_relations=not config.no_jre)
        self.propagator = PoseSemanticsPropagator(rng, config.C_f, config.K, config.C)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self) -> list[Parameter]:
        return (self.backbone.parameters() + self.jre.parameters()
                + self.propagator.parameters())

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return self.jre.bn.buffers()

    def pretrain_parameters(self) -> list[Parameter]:
        # stage 1 fits the whole frame-1 path (initializer + refinement), which
        # also calibrates the refinement BN before sequence training
        return self.backbone.parameters() + self.jre.trainable_parameters()

    def sequence_parameters(self) -> list[Parameter]:
        """Stage-2 trainables, honoring ablation and freeze flags."""
        params = list(self.backbone.trunk_parameters())
        if not self.config.freeze_init:
            params += self.backbone.head_parameters()
        params += self.jre.trainable_parameters()
        if not self.config.no_jrpsp:
            params += self.propagator.parameters()
        return params

    # -- forward --------------------------------------------------------------

    def _frame_features(self, frames: Tensor) -> list[Tensor]:
        """Trunk features for all frames in one folded pass."""
        b, t = frames.shape[:2]
        flat = ad.reshape(frames, (b * t,) + frames.shape[2:])
        feats = self.backbone.extract_features(flat)
        seq = ad.reshape(feats, (b, t) + feats.shape[1:])
        return [ad.time_slice(seq, i) for i in range(t)]

    def rollout(self, frames, training: bool) -> list[Tensor]:
        """Refined heatmaps for each of the T frames of a [B,T,3,H,W] batch."""
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        if frames.data.ndim != 5:
            raise DimensionError(f"rollout expects [B, T, 3, H, W], got {frames.shape}")
        feats = self._frame_features(frames)
        refine = self.jre.refine

        if self.config.no_jrpsp:
            return [refine(self.backbone.pose_head(f), training) for f in feats]

        outputs = [refine(self.backbone.pose_head(feats[0]), training)]
        state = RolloutState(features=feats[0], heatmaps=outputs[0])
        for t in range(1, len(feats)):
            fused = self.propagator.aggregate(state.features, state.heatmaps)
            template = self.propagator.distill(fused)
            pseudo = self.propagator.propagate(template, feats[t])
            refined = refine(pseudo, training)
            outputs.append(refined)
            state = RolloutState(features=feats[t], heatmaps=refined)
        return outputs

    def rollout_detailed(self, frames) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Eval-mode (refined heatmaps, relation matrices) per frame, as arrays."""
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        feats = self._frame_features(frames)
        refined_arrays: list[np.ndarray] = []
        relation_arrays: list[np.ndarray] = []

        def step(pseudo: Tensor) -> Tensor:
            relation_arrays.append(relation_matrix(pseudo).data.copy())
            refined = self.jre.refine(pseudo, training=False)
            refined_arrays.append(refined.data.copy())
            return refined

        if self.config.no_jrpsp:
            for f in feats:
                step(self.backbone.pose_head(f))
        else:
            heatmaps = step(self.backbone.pose_head(feats[0]))
            for t in range(1, len(feats)):
                fused = self.propagator.aggregate(feats[t - 1], heatmaps)
                template = self.propagator.distill(fused)
                heatmaps = step(self.propagator.propagate(template, feats[t]))
        return refined_arrays, relation_arrays

    def decode_sequence(self, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decode an eval-mode rollout to coords [B,T,K,2] and visibility [B,T,K]."""
        outputs = self.rollout(frames, training=False)
        coords, vis = [], []
        for out in outputs:
            c, v = decode_maps(out.data, self.config.stride)
            coords.append(c)
            vis.append(v)
        return np.stack(coords, axis=1), np.stack(vis, axis=1)


def sequence_loss(predicted: list[Tensor], target: list) -> Tensor:
    """Mean over frames of per-frame MSE against ground-truth maps."""
    if len(predicted) != len(target):
        raise DimensionError(
            f"predicted {len(predicted)} frames but target has {len(target)}")
    total = None
    for pred, tgt in zip(predicted, target):
        tgt = tgt if isinstance(tgt, Tensor) else Tensor(tgt)
        term = ad.mse(pred, tgt)
        total = term if total is None else ad.add(total, term)
    return ad.mul_scalar(total, 1.0 / len(predicted))


def infer_sample(model: PoseTransferNet, sample: synthdata.PoseSequenceSample) -> list[JointSet]:
    """Decoded joints per frame of one (possibly occluded) clip."""
    coords, vis = model.decode_sequence(sample.frames[None])
    return [JointSet(coords=coords[0, t], visibility=vis[0, t])
            for t in range(coords.shape[1])]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PoseTransferNet
    pretrain_losses: list[float] = field(default_factory=list)
    pretrain_val_mpck: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    val_mpck: list[float] = field(default_factory=list)


def encode_targets(dataset: synthdata.PoseSequenceDataset, config: ModelConfig) -> np.ndarray:
    """Ground-truth heatmaps [n, T, K, h, w] for every sample and frame."""
    n = len(dataset)
    maps = np.empty((n, dataset.T, config.K, config.map_height, config.map_width),
                    dtype=np.float32)
    for i, sample in enumerate(dataset.samples):
        maps[i] = encode_maps(sample.joints, sample.visibility, config.sigma,
                              config.stride, config.H, config.W)
    return maps


def _epoch_lr(config: ModelConfig, epoch: int) -> float:
    decays = sum(1 for d in config.lr_decay_epochs if epoch >= d)
    return config.lr * (0.1 ** decays)


def _check_loss(value: float, stage: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"{stage} loss diverged (non-finite) at epoch {epoch}")


def train(config: ModelConfig, dataset: synthdata.PoseSequenceDataset,
          val_dataset: Optional[synthdata.PoseSequenceDataset] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Two-stage deterministic training; returns the model plus histories.

    Stage 1 fits the pose initializer on individual frames (skipped with
    `no_init`); stage 2 optimizes the full sequence model with the decayed
    learning-rate schedule.  When no validation set is given and the joint
    count matches the synthetic skeleton, a small held-out split is
    generated from a seed derived from the config seed.
    """
    if len(dataset) == 0:
        raise TrainingError("training dataset is empty")
    if dataset.K != config.K or dataset.H != config.H or dataset.W != config.W:
        raise DimensionError(
            f"dataset geometry ({dataset.K} joints, {dataset.H}x{dataset.W}) does not "
            f"match config ({config.K} joints, {config.H}x{config.W})")
    say = log if log is not None else lambda line: None
    model = PoseTransferNet(config)
    result = TrainResult(model=model)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 202)))

    if val_dataset is None and config.K == synthdata.JOINT_COUNT:
        gen_cfg = synthdata.GeneratorConfig(T=config.T, H=config.H, W=config.W)
        val_dataset = synthdata.generate(32, gen_cfg, seed=900_000 + config.seed)

    targets = encode_targets(dataset, config)
    n = len(dataset)

    # -- stage 1: single-frame pretraining of the frame-1 path (Eq.-(1) style:
    # initializer followed by relation refinement)
    if not config.no_init:
        frame_index = [(i, t) for i in range(n) for t in range(dataset.T)]
        params = model.pretrain_parameters()
        bs = config.pretrain_batch_size
        for epoch in range(1, config.pretrain_epochs + 1):
            order = rng.permutation(len(frame_index))
            losses = []
            for start in range(0, len(order) - bs + 1, bs):
                chosen = [frame_index[j] for j in order[start:start + bs]]
                images = np.stack([dataset.samples[i].frames[t] for i, t in chosen])
                truth = np.stack([targets[i, t] for i, t in chosen])
                pred = model.jre.refine(model.backbone.initial_pose(Tensor(images)),
                                        training=True)
                loss = ad.mse(pred, Tensor(truth))
                value = float(loss.data)
                _check_loss(value, "pretrain", epoch)
                loss.backward()
                adam_step(params, config.lr)
                losses.append(value)
            result.pretrain_losses.append(float(np.mean(losses)))
            mpck = float("nan")
            if val_dataset is not None:
                mpck = initializer_mpck(model, val_dataset)
                result.pretrain_val_mpck.append(mpck)
            say(f"pretrain epoch {epoch:3d}  loss {result.pretrain_losses[-1]:.5f}"
                f"  val mPCK@0.2 {mpck:.3f}")

    # -- stage 2: full-sequence training
    params = model.sequence_parameters()
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        lr = _epoch_lr(config, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            frames = np.stack([dataset.samples[i].frames for i in idx])
            truth = targets[idx]
            outputs = model.rollout(frames, training=True)
            loss = sequence_loss(outputs, [truth[:, t] for t in range(dataset.T)])
            value = float(loss.data)
            _check_loss(value, "sequence", epoch)
            loss.backward()
            adam_step(params, lr)
            losses.append(value)
        result.epoch_losses.append(float(np.mean(losses)))
        mpck = float("nan")
        if val_dataset is not None:
            mpck = evaluate_pck(model, val_dataset, gamma=0.2, norm="bbox").mpck
            result.val_mpck.append(mpck)
        say(f"epoch {epoch:3d}  lr {lr:.2e}  loss {result.epoch_losses[-1]:.5f}"
            f"  val mPCK@0.2 {mpck:.3f}")
    return result


# ---------------------------------------------------------------------------
# evaluation


def _pooled_predictions(model: PoseTransferNet, dataset: synthdata.PoseSequenceDataset,
                        batch_size: int = 16):
    """Eval-mode predictions pooled over samples and frames."""
    preds, truths, vis, boxes, masks = [], [], [], [], []
    n = len(dataset)
    for start in range(0, n, batch_size):
        chunk = dataset.samples[start:start + batch_size]
        frames = np.stack([s.frames for s in chunk])
        coords, _ = model.decode_sequence(frames)
        for s, c in zip(chunk, coords):
            preds.append(c)
            truths.append(s.joints)
            vis.append(s.visibility)
            boxes.append(s.bbox)
            masks.append(s.occluded if s.occluded is not None
                         else np.zeros_like(s.visibility))
    flat = lambda arrays: np.concatenate(arrays, axis=0)
    return flat(preds), flat(truths), flat(vis), flat(boxes), flat(masks)


def evaluate_pck(model: PoseTransferNet, dataset: synthdata.PoseSequenceDataset,
                 gamma: float = 0.2, norm: str = "bbox",
                 occluded_only: bool = False, batch_size: int = 16) -> metrics.PCKReport:
    """Rollout the whole dataset and score PCK@gamma.

    With `occluded_only`, only joints flagged in the occlusion annotation
    are scored (they keep their ground-truth coordinates).
    """
    if dataset.K != model.config.K:
        raise DimensionError(
            f"dataset has {dataset.K} joints but model expects {model.config.K}")
    preds, truths, vis, boxes, masks = _pooled_predictions(model, dataset, batch_size)
    names = synthdata.JOINT_NAMES if dataset.K == synthdata.JOINT_COUNT else None
    score_mask = masks if occluded_only else None
    return metrics.pck(preds, truths, vis, boxes, gamma=gamma, norm=norm,
                       joint_names=names, score_mask=score_mask)


def initializer_mpck(model: PoseTransferNet, dataset: synthdata.PoseSequenceDataset,
                     gamma: float = 0.2, batch_size: int = 64) -> float:
    """mPCK of the raw initializer head decoded frame by frame (no refinement)."""
    preds, truths, vis, boxes = [], [], [], []
    for sample in dataset.samples:
        frames = sample.frames
        out = model.backbone.initial_pose(Tensor(frames))
        coords, _ = decode_maps(out.data, model.config.stride)
        preds.append(coords)
        truths.append(sample.joints)
        vis.append(sample.visibility)
        boxes.append(sample.bbox)
    report = metrics.pck(np.concatenate(preds), np.concatenate(truths),
                         np.concatenate(vis), np.concatenate(boxes),
                         gamma=gamma, norm="bbox")
    return report.mpck
