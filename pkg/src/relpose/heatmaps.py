"""Conversion between joint coordinates and spatial score maps.

Ground-truth maps are peak-normalized Gaussians (value 1 when a joint sits
exactly at a cell center); decoding takes the global argmax cell back to
input pixels at the cell center.  Cell (u, v) of a stride-s map covers the
input square [u*s, (u+1)*s) x [v*s, (v+1)*s), so its center is
(u*s + s/2, v*s + s/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """Annotation data violates its contract (e.g. out-of-bounds joint)."""


@dataclass
class JointSet:
    """Per-frame joint annotations in input-pixel units."""

    coords: np.ndarray      # [K, 2] float32, (x, y)
    visibility: np.ndarray  # [K] bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise DataError(f"coords must be [K, 2], got {self.coords.shape}")
        if self.visibility.shape != (self.coords.shape[0],):
            raise DataError("visibility length must match joint count")


@dataclass
class JointHeatmaps:
    """Batched per-joint score maps plus the input-pixels-per-cell stride."""

    maps: np.ndarray  # [B, K, H', W'] float32
    stride: int = 1

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float32)
        if self.maps.ndim != 4:
            raise DataError(f"maps must be rank 4, got shape {self.maps.shape}")


def encode_maps(coords: np.ndarray, visibility: np.ndarray, sigma: float,
                stride: int, height: int, width: int) -> np.ndarray:
    """Render Gaussian maps [B, K, H/stride, W/stride] for batched joints.

    `sigma` is in heatmap cells.  Invisible joints yield all-zero maps;
    visible joints must lie inside the image rectangle.
    """
    coords = np.asarray(coords, dtype=np.float32)
    visibility = np.asarray(visibility, dtype=bool)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
        visibility = visibility[None]
    if sigma <= 0:
        raise DataError(f"sigma must be positive, got {sigma}")
    if height % stride or width % stride:
        raise DataError(f"extents ({height}, {width}) not divisible by stride {stride}")
    hh, ww = height // stride, width // stride

    x, y = coords[..., 0], coords[..., 1]
    bad = visibility & ((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if bad.any():
        bi, ki = np.argwhere(bad)[0]
        raise DataError(
            f"visible joint {ki} of sample {bi} at {tuple(coords[bi, ki])} "
            f"outside {width}x{height} image")

    # peak position in cell units under the cell-center convention
    px = x / stride - 0.5
    py = y / stride - 0.5
    us = np.arange(ww, dtype=np.float32)
    vs = np.arange(hh, dtype=np.float32)
    du2 = (us[None, None, :] - px[..., None]) ** 2          # [B, K, W']
    dv2 = (vs[None, None, :] - py[..., None]) ** 2          # [B, K, H']
    maps = np.exp(-(dv2[..., :, None] + du2[..., None, :]) / (2.0 * sigma ** 2))
    maps *= visibility[..., None, None]
    maps = maps.astype(np.float32)
    return maps[0] if single else maps


def decode_maps(maps: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Argmax-decode maps to ((x, y) cell-center coords, visibility).

    Ties go to the first cell in row-major order; an all-zero (or
    non-positive) map decodes as invisible.
    """
    maps = np.asarray(maps)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    b, k, hh, ww = maps.shape
    flat = maps.reshape(b, k, hh * ww)
    idx = np.argmax(flat, axis=-1)
    peak = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    v, u = np.divmod(idx, ww)
    coords = np.stack([u * stride + stride / 2.0, v * stride + stride / 2.0],
                      axis=-1).astype(np.float32)
    visibility = peak > 0
    if single:
        return coords[0], visibility[0]
    return coords, visibility


def encode(joints: JointSet, sigma: float, stride: int, height: int, width: int) -> JointHeatmaps:
    """Encode a single frame's joints; returns maps with batch extent 1."""
    maps = encode_maps(joints.coords[None], joints.visibility[None],
                       sigma, stride, height, width)
    return JointHeatmaps(maps=maps, stride=stride)


def decode(heatmaps: JointHeatmaps) -> list[JointSet]:
    """Decode each batch element to a JointSet."""
    coords, vis = decode_maps(heatmaps.maps, heatmaps.stride)
    return [JointSet(coords=c, visibility=v) for c, v in zip(coords, vis)]
