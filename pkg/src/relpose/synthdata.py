"""Deterministic synthetic articulated-skeleton video clips with annotations.

A 13-joint stick figure (head, shoulders, elbows, wrists, hips, knees,
ankles) hangs off a kinematic tree rooted at a virtual pelvis.  Each clip
samples a global scale, a drifting root, and smoothly oscillating absolute
bone angles, then renders anti-aliased capsules with a distinct gray level
per limb over low-frequency noise.  Everything is reproducible per
(seed, sample index), and datasets round-trip bit-exactly through the
PSEQ1 container.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class GenerationError(ValueError):
    """The generator config cannot produce in-bounds skeletons."""


class FormatError(ValueError):
    """A PSEQ1 file is malformed or truncated."""


JOINT_NAMES = [
    "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
    "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
]
JOINT_COUNT = len(JOINT_NAMES)

_UP = -math.pi / 2.0  # y grows downward in image coordinates
_DOWN = math.pi / 2.0

# (name, parent, relative bone length, base-angle interval, max oscillation)
_NODES = [
    ("pelvis",     -1, 0.0,  (0.0, 0.0),                 0.0),
    ("neck",        0, 0.32, (_UP - 0.18, _UP + 0.18),   0.10),
    ("head",        1, 0.16, (_UP - 0.35, _UP + 0.35),   0.25),
    ("l_shoulder",  1, 0.17, (math.pi - 0.25, math.pi + 0.25), 0.10),
    ("r_shoulder",  1, 0.17, (-0.25, 0.25),              0.10),
    ("l_elbow",     3, 0.19, (_DOWN - 1.1, _DOWN + 1.1), 0.60),
    ("r_elbow",     4, 0.19, (_DOWN - 1.1, _DOWN + 1.1), 0.60),
    ("l_wrist",     5, 0.17, (_DOWN - 1.3, _DOWN + 1.3), 0.70),
    ("r_wrist",     6, 0.17, (_DOWN - 1.3, _DOWN + 1.3), 0.70),
    ("l_hip",       0, 0.11, (math.pi - 0.30, math.pi + 0.30), 0.05),
    ("r_hip",       0, 0.11, (-0.30, 0.30),              0.05),
    ("l_knee",      9, 0.23, (_DOWN - 0.55, _DOWN + 0.55), 0.35),
    ("r_knee",     10, 0.23, (_DOWN - 0.55, _DOWN + 0.55), 0.35),
    ("l_ankle",    11, 0.21, (_DOWN - 0.50, _DOWN + 0.50), 0.35),
    ("r_ankle",    12, 0.21, (_DOWN - 0.50, _DOWN + 0.50), 0.35),
]
# indices of the annotated joints within the node list, in JOINT_NAMES order
_JOINT_NODES = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14]
# capsules drawn per frame: every non-root node paints its parent bone,
# in this fixed order (later entries composite on top)
_CAPSULE_NODES = [1, 2, 9, 10, 11, 12, 13, 14, 3, 4, 5, 6, 7, 8]
_CAPSULE_LEVELS = np.linspace(0.42, 1.0, len(_CAPSULE_NODES)).astype(np.float32)


@dataclass
class SkeletonModel:
    """Kinematic tree (virtual pelvis root plus 13 annotated joints)."""

    names: list[str] = field(default_factory=lambda: [n[0] for n in _NODES])
    parents: list[int] = field(default_factory=lambda: [n[1] for n in _NODES])
    bone_lengths: list[float] = field(default_factory=lambda: [n[2] for n in _NODES])
    angle_ranges: list[tuple[float, float]] = field(default_factory=lambda: [n[3] for n in _NODES])
    max_swings: list[float] = field(default_factory=lambda: [n[4] for n in _NODES])
    joint_nodes: list[int] = field(default_factory=lambda: list(_JOINT_NODES))

    def max_reach(self) -> float:
        """Longest root-to-node path (relative units); bounds the silhouette."""
        depth = [0.0] * len(self.parents)
        for i, p in enumerate(self.parents):
            if p >= 0:
                depth[i] = depth[p] + self.bone_lengths[i]
        return max(depth)

    def max_swing_travel(self) -> float:
        """Worst-case per-frame joint travel (relative units) per radian/frame."""
        travel = [0.0] * len(self.parents)
        for i, p in enumerate(self.parents):
            if p >= 0:
                travel[i] = travel[p] + self.bone_lengths[i] * self.max_swings[i]
        return max(travel[j] for j in self.joint_nodes)


@dataclass
class GeneratorConfig:
    """Desk-scale clip generation knobs (pixel units derive from H, W)."""

    T: int = 5
    H: int = 64
    W: int = 64
    scale_frac: tuple[float, float] = (0.28, 0.38)  # body scale / min(H, W)
    root_speed: float = 1.0                         # max root drift px/frame
    angular_speed: tuple[float, float] = (0.05, 0.22)  # rad/frame
    noise_range: tuple[float, float] = (0.05, 0.30)
    skeleton: SkeletonModel = field(default_factory=SkeletonModel)

    def scale_px(self) -> tuple[float, float]:
        m = min(self.H, self.W)
        return self.scale_frac[0] * m, self.scale_frac[1] * m

    def capsule_radius(self, scale: float) -> float:
        return float(np.clip(0.05 * scale, 1.2, 3.0))

    def max_interframe_displacement(self) -> float:
        """Upper bound on any joint's per-frame travel, in pixels."""
        s_max = self.scale_px()[1]
        return self.root_speed + s_max * self.skeleton.max_swing_travel() * self.angular_speed[1]


@dataclass
class PoseSequenceSample:
    """One clip: frames, per-frame joints/visibility, person boxes."""

    frames: np.ndarray      # [T, 3, H, W] float32 in [0, 1]
    joints: np.ndarray      # [T, K, 2] float32, (x, y) input pixels
    visibility: np.ndarray  # [T, K] bool
    bbox: np.ndarray        # [T, 4] float32, (x0, y0, x1, y1)
    occluded: Optional[np.ndarray] = None  # [T, K] bool eval annotation, not serialized


@dataclass
class PoseSequenceDataset:
    samples: list[PoseSequenceSample]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def T(self) -> int:
        return self.samples[0].frames.shape[0]

    @property
    def K(self) -> int:
        return self.samples[0].joints.shape[1]

    @property
    def H(self) -> int:
        return self.samples[0].frames.shape[2]

    @property
    def W(self) -> int:
        return self.samples[0].frames.shape[3]


# ---------------------------------------------------------------------------
# generation


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    """Upsample [C, h, w] to [C, height, width] with bilinear interpolation."""
    c, h, w = coarse.shape
    ys = np.linspace(0, h - 1, height)
    xs = np.linspace(0, w - 1, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    top = coarse[:, y0][:, :, x0] * (1 - fx) + coarse[:, y0][:, :, x1] * fx
    bot = coarse[:, y1][:, :, x0] * (1 - fx) + coarse[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def _paint_capsule(img: np.ndarray, p0: np.ndarray, p1: np.ndarray,
                   radius: float, level: float) -> None:
    """Composite an anti-aliased capsule (segment with radius) onto [3, H, W]."""
    h, w = img.shape[1:]
    x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - radius - 1)))
    x_hi = min(w - 1, int(math.ceil(max(p0[0], p1[0]) + radius + 1)))
    y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - radius - 1)))
    y_hi = min(h - 1, int(math.ceil(max(p0[1], p1[1]) + radius + 1)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float32) + 0.5
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float32) + 0.5
    dx = xs[None, :] - p0[0]
    dy = ys[:, None] - p0[1]
    seg = p1 - p0
    seg_len2 = float(seg @ seg)
    if seg_len2 < 1e-12:
        dist = np.sqrt(dx * dx + dy * dy)
    else:
        t = np.clip((dx * seg[0] + dy * seg[1]) / seg_len2, 0.0, 1.0)
        dist = np.sqrt((dx - t * seg[0]) ** 2 + (dy - t * seg[1]) ** 2)
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0)[None]
    region = img[:, y_lo:y_hi + 1, x_lo:x_hi + 1]
    region *= 1.0 - cover
    region += level * cover


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(index))))


def generate_sample(config: GeneratorConfig, seed: int, index: int) -> PoseSequenceSample:
    """Generate one clip, deterministic per (seed, index)."""
    rng = _sample_rng(seed, index)
    skel = config.skeleton
    n_nodes = len(skel.parents)
    t_frames, height, width = config.T, config.H, config.W

    scale = rng.uniform(*config.scale_px())
    radius = config.capsule_radius(scale)
    reach = scale * skel.max_reach() + radius + 1.0
    drift = (t_frames - 1) * config.root_speed
    margin = reach + drift + 1.0
    if margin >= width - margin or margin >= height - margin:
        raise GenerationError(
            f"skeleton scale {scale:.1f}px cannot stay inside a {width}x{height} image")
    root0 = np.array([rng.uniform(margin, width - margin),
                      rng.uniform(margin, height - margin)])
    velocity = rng.uniform(-config.root_speed, config.root_speed, size=2)

    base = np.array([rng.uniform(lo, hi) for lo, hi in skel.angle_ranges])
    amp = np.array([rng.uniform(0.25, 1.0) * s for s in skel.max_swings])
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n_nodes)
    omega = rng.uniform(*config.angular_speed, size=n_nodes)
    omega *= np.where(rng.random(n_nodes) < 0.5, -1.0, 1.0)

    positions = np.zeros((t_frames, n_nodes, 2))
    for t in range(t_frames):
        theta = base + amp * np.sin(phase + omega * t)
        positions[t, 0] = root0 + velocity * t
        for i in range(1, n_nodes):
            parent = skel.parents[i]
            length = skel.bone_lengths[i] * scale
            positions[t, i] = positions[t, parent] + length * np.array(
                [math.cos(theta[i]), math.sin(theta[i])])

    joints = positions[:, skel.joint_nodes].astype(np.float32)
    if (joints[..., 0] < 0).any() or (joints[..., 0] >= width).any() \
            or (joints[..., 1] < 0).any() or (joints[..., 1] >= height).any():
        raise GenerationError("generated joints left the image; config margins too tight")

    frames = np.empty((t_frames, 3, height, width), dtype=np.float32)
    lo, hi = config.noise_range
    for t in range(t_frames):
        coarse = rng.uniform(lo, hi, size=(3, height // 8 + 2, width // 8 + 2))
        img = _bilinear_upsample(coarse, height, width).astype(np.float32)
        for node, level in zip(_CAPSULE_NODES, _CAPSULE_LEVELS):
            _paint_capsule(img, positions[t, skel.parents[node]], positions[t, node],
                           radius, float(level))
        frames[t] = np.clip(img, 0.0, 1.0)

    pad = radius + 1.0
    x0 = np.clip(joints[..., 0].min(axis=1) - pad, 0, width - 1)
    x1 = np.clip(joints[..., 0].max(axis=1) + pad, 0, width - 1)
    y0 = np.clip(joints[..., 1].min(axis=1) - pad, 0, height - 1)
    y1 = np.clip(joints[..., 1].max(axis=1) + pad, 0, height - 1)
    bbox = np.stack([x0, y0, x1, y1], axis=1).astype(np.float32)

    visibility = np.ones((t_frames, JOINT_COUNT), dtype=bool)
    return PoseSequenceSample(frames=frames, joints=joints, visibility=visibility, bbox=bbox)


def generate(n: int, config: GeneratorConfig, seed: int) -> PoseSequenceDataset:
    """Generate `n` clips; each sample depends only on (seed, its index)."""
    if n <= 0:
        raise GenerationError(f"sample count must be positive, got {n}")
    return PoseSequenceDataset([generate_sample(config, seed, i) for i in range(n)])


# ---------------------------------------------------------------------------
# occlusion


def occlude_sample(sample: PoseSequenceSample, rate: float, seed: int,
                   sigma: float = 2.0, stride: int = 4) -> PoseSequenceSample:
    """Mask joints of frames 2..T with background-colored squares.

    Each joint of each frame after the first is masked independently with
    probability `rate` (square side 3*sigma*stride pixels).  Masked joints
    are flagged in the `occluded` annotation; coordinates and visibility
    stay untouched so occluded joints can still be scored.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"occlusion rate must be in [0, 1], got {rate}")
    rng = _sample_rng(seed, 0)
    t_frames, _, height, width = sample.frames.shape
    k = sample.joints.shape[1]
    frames = sample.frames.copy()
    occluded = np.zeros((t_frames, k), dtype=bool)
    side = 3.0 * sigma * stride
    half = side / 2.0
    for t in range(1, t_frames):
        fill = np.concatenate([
            frames[t, :, 0, :], frames[t, :, -1, :],
            frames[t, :, :, 0], frames[t, :, :, -1]], axis=1).mean(axis=1)
        for j in range(k):
            if rng.random() >= rate:
                continue
            occluded[t, j] = True
            cx, cy = sample.joints[t, j]
            x_lo = max(0, int(math.floor(cx - half)))
            x_hi = min(width, int(math.ceil(cx + half)))
            y_lo = max(0, int(math.floor(cy - half)))
            y_hi = min(height, int(math.ceil(cy + half)))
            frames[t, :, y_lo:y_hi, x_lo:x_hi] = fill[:, None, None]
    return PoseSequenceSample(frames=frames, joints=sample.joints.copy(),
                              visibility=sample.visibility.copy(),
                              bbox=sample.bbox.copy(), occluded=occluded)


def occlude(dataset: PoseSequenceDataset, rate: float, seed: int,
            sigma: float = 2.0, stride: int = 4) -> PoseSequenceDataset:
    """Occlude every sample, with per-sample seeds derived from `seed`."""
    return PoseSequenceDataset([
        occlude_sample(s, rate, seed + 7919 * i, sigma=sigma, stride=stride)
        for i, s in enumerate(dataset.samples)])


# ---------------------------------------------------------------------------
# PSEQ1 container

MAGIC = b"PSEQ1\x00"


def write(path, dataset: PoseSequenceDataset) -> None:
    """Write the dataset as PSEQ1 (little-endian, bit-exact round trip)."""
    n = len(dataset)
    t, k, h, w = dataset.T, dataset.K, dataset.H, dataset.W
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<5I", n, t, k, h, w))
        for s in dataset.samples:
            f.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.joints, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.visibility, dtype=np.uint8).tobytes())
            f.write(np.ascontiguousarray(s.bbox, dtype="<f4").tobytes())


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    end = offset + count
    if end > len(buf):
        raise FormatError(f"truncated file: missing {what}")
    return buf[offset:end], end


def read(path) -> PoseSequenceDataset:
    """Read a PSEQ1 file; raises FormatError naming any missing section."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, offset = _take(buf, 0, len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a PSEQ1 file")
    header, offset = _take(buf, offset, 20, "header")
    n, t, k, h, w = struct.unpack("<5I", header)
    samples = []
    for i in range(n):
        raw, offset = _take(buf, offset, t * 3 * h * w * 4, f"frames of sample {i}")
        frames = np.frombuffer(raw, dtype="<f4").reshape(t, 3, h, w).copy()
        raw, offset = _take(buf, offset, t * k * 2 * 4, f"joints of sample {i}")
        joints = np.frombuffer(raw, dtype="<f4").reshape(t, k, 2).copy()
        raw, offset = _take(buf, offset, t * k, f"visibility of sample {i}")
        visibility = np.frombuffer(raw, dtype=np.uint8).reshape(t, k).astype(bool)
        raw, offset = _take(buf, offset, t * 4 * 4, f"bbox of sample {i}")
        bbox = np.frombuffer(raw, dtype="<f4").reshape(t, 4).copy()
        samples.append(PoseSequenceSample(frames=frames, joints=joints,
                                          visibility=visibility, bbox=bbox))
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after sample data")
    return PoseSequenceDataset(samples)
