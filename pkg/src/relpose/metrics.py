"""PCK scoring: fraction of joints within gamma * L of the ground truth.

L is the per-frame reference length: the longer person-box side under
`bbox` normalization, or the left-shoulder to right-hip distance under
`torso` normalization (falling back to the box for degenerate torsos).
The boundary counts as correct; invisible ground-truth joints are excluded
from numerator and denominator alike.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_TORSO_JOINTS = ("l_shoulder", "r_hip")


class MetricError(ValueError):
    """PCK inputs violate the metric's contract."""


@dataclass
class PCKReport:
    """Per-joint and mean PCK for one (gamma, normalization) setting."""

    gamma: float
    norm: str
    per_joint: dict[str, float]
    mpck: float
    sample_count: int          # pooled joint-frames scored
    torso_fallbacks: int = 0   # frames where a degenerate torso used the box

    def to_json_line(self) -> str:
        payload = {
            "gamma": self.gamma,
            "norm": self.norm,
            "mpck": round(self.mpck, 6),
            "per_joint": {k: round(v, 6) for k, v in self.per_joint.items()},
            "sample_count": self.sample_count,
            "torso_fallbacks": self.torso_fallbacks,
        }
        return json.dumps(payload, separators=(", ", ": "))


def _reference_lengths(truths: np.ndarray, bboxes: np.ndarray, norm: str,
                       joint_names: Optional[Sequence[str]]) -> tuple[np.ndarray, int]:
    box_l = np.maximum(bboxes[:, 2] - bboxes[:, 0], bboxes[:, 3] - bboxes[:, 1])
    if norm == "bbox":
        return box_l, 0
    if norm != "torso":
        raise MetricError(f"unknown normalization '{norm}'")
    if joint_names is None or not all(j in joint_names for j in _TORSO_JOINTS):
        raise MetricError("torso normalization needs l_shoulder and r_hip joints")
    ls = list(joint_names).index("l_shoulder")
    rh = list(joint_names).index("r_hip")
    torso = np.linalg.norm(truths[:, ls] - truths[:, rh], axis=-1)
    degenerate = torso < 1e-6
    lengths = np.where(degenerate, box_l, torso)
    return lengths, int(degenerate.sum())


def pck(predictions: np.ndarray, truths: np.ndarray, visibility: np.ndarray,
        bboxes: np.ndarray, gamma: float, norm: str = "bbox",
        joint_names: Optional[Sequence[str]] = None,
        score_mask: Optional[np.ndarray] = None) -> PCKReport:
    """Score pooled joint-frames.

    predictions/truths: [N, K, 2]; visibility: [N, K] bool; bboxes: [N, 4]
    as (x0, y0, x1, y1).  `score_mask`, when given, restricts scoring to the
    flagged joint-frames (on top of the visibility filter).
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    visibility = np.asarray(visibility, dtype=bool)
    bboxes = np.asarray(bboxes, dtype=np.float64)
    if gamma <= 0:
        raise MetricError(f"gamma must be positive, got {gamma}")
    if predictions.shape != truths.shape or predictions.ndim != 3:
        raise MetricError(
            f"predictions {predictions.shape} and truths {truths.shape} must match [N, K, 2]")
    n, k = predictions.shape[:2]
    if visibility.shape != (n, k) or bboxes.shape != (n, 4):
        raise MetricError("visibility/bbox extents do not match predictions")
    if joint_names is None:
        joint_names = [f"joint{i}" for i in range(k)]
    elif len(joint_names) != k:
        raise MetricError(f"{len(joint_names)} joint names for {k} joints")

    lengths, fallbacks = _reference_lengths(truths, bboxes, norm, joint_names)
    dist = np.linalg.norm(predictions - truths, axis=-1)
    correct = dist <= gamma * lengths[:, None]
    scored = visibility if score_mask is None else visibility & np.asarray(score_mask, bool)

    per_joint: dict[str, float] = {}
    for j, name in enumerate(joint_names):
        total = int(scored[:, j].sum())
        if total == 0:
            continue
        per_joint[name] = float(correct[scored[:, j], j].sum() / total)
    if not per_joint:
        raise MetricError("no scorable joint-frames (all invisible or masked out)")
    mpck = float(np.mean(list(per_joint.values())))
    return PCKReport(gamma=float(gamma), norm=norm, per_joint=per_joint, mpck=mpck,
                     sample_count=int(scored.any(axis=1).sum()), torso_fallbacks=fallbacks)


def pck_sweep(predictions: np.ndarray, truths: np.ndarray, visibility: np.ndarray,
              bboxes: np.ndarray, gammas: Sequence[float], norm: str = "bbox",
              joint_names: Optional[Sequence[str]] = None,
              score_mask: Optional[np.ndarray] = None) -> list[PCKReport]:
    """PCK at each threshold, returned in ascending gamma order."""
    return [pck(predictions, truths, visibility, bboxes, g, norm=norm,
                joint_names=joint_names, score_mask=score_mask)
            for g in sorted(gammas)]
