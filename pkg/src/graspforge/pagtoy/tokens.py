"""Uniform-bin tokenization of bounding boxes and grasp poses.

Coordinates quantize to floor(coord / extent * V) clamped to [0, V-1];
detokenization returns bin centers, so round-trip error is at most half a
bin width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry
from ..errors import OutOfBounds
from ..grasp import GraspPose
from ..scene import BBox2D, DEFAULT_INTRINSICS

N_BBOX_TOKENS = 8  # two views x (x_min, y_min, x_max, y_max)
N_GRASP_TOKENS = 6  # x, y, z + intrinsic xyz Euler angles
DEFAULT_VOCAB = 256


def _quantize(values: np.ndarray, lo: np.ndarray, hi: np.ndarray, vocab: int) -> np.ndarray:
    frac = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.floor(frac * vocab), 0, vocab - 1).astype(np.int64)


def _bin_centers(tokens: np.ndarray, lo: np.ndarray, hi: np.ndarray, vocab: int) -> np.ndarray:
    return lo + (np.asarray(tokens) + 0.5) * (hi - lo) / vocab


def tokenize_bbox(
    bboxes: tuple[BBox2D, BBox2D] | list[BBox2D],
    image_size: tuple[int, int] = (DEFAULT_INTRINSICS[4], DEFAULT_INTRINSICS[5]),
    vocab: int = DEFAULT_VOCAB,
) -> np.ndarray:
    """8 tokens: per view (front then side), (x_min, y_min, x_max, y_max)."""
    if len(bboxes) != 2:
        raise ValueError("need exactly two views")
    w, h = image_size
    lo = np.zeros(4)
    hi = np.array([w, h, w, h], dtype=np.float64)
    toks = [
        _quantize(np.array([b.x_min, b.y_min, b.x_max, b.y_max]), lo, hi, vocab) for b in bboxes
    ]
    return np.concatenate(toks)


def detokenize_bbox(
    tokens: np.ndarray,
    image_size: tuple[int, int] = (DEFAULT_INTRINSICS[4], DEFAULT_INTRINSICS[5]),
    vocab: int = DEFAULT_VOCAB,
) -> np.ndarray:
    """Inverse of tokenize_bbox; returns a (2, 4) array of bin-center coordinates."""
    tokens = np.asarray(tokens).reshape(2, 4)
    w, h = image_size
    lo = np.zeros(4)
    hi = np.array([w, h, w, h], dtype=np.float64)
    return np.stack([_bin_centers(row, lo, hi, vocab) for row in tokens])


@dataclass(frozen=True)
class GraspTokenBounds:
    """Axis-aligned quantization box for grasp poses (xyz meters, Euler radians)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        if self.lower.shape != (6,) or self.upper.shape != (6,):
            raise ValueError("bounds must have 6 entries")
        if np.any(self.upper <= self.lower):
            raise ValueError("upper bounds must exceed lower bounds")

    @classmethod
    def default(cls) -> "GraspTokenBounds":
        # workspace box padded for table-height range, object size and lift
        return cls(
            lower=np.array([0.2, -0.35, -0.15, -np.pi, -np.pi / 2, -np.pi]),
            upper=np.array([0.8, 0.35, 0.6, np.pi, np.pi / 2, np.pi]),
        )


def grasp_pose_values(position: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    rx, ry, rz = geometry.euler_xyz_from_mat(geometry.mat_from_quat(orientation))
    return np.concatenate([np.asarray(position, dtype=np.float64), [rx, ry, rz]])


def tokenize_grasp(
    pose: GraspPose,
    bounds: GraspTokenBounds | None = None,
    vocab: int = DEFAULT_VOCAB,
) -> np.ndarray:
    """6 tokens: position xyz then intrinsic-xyz Euler angles."""
    if bounds is None:
        bounds = GraspTokenBounds.default()
    values = grasp_pose_values(pose.position, pose.orientation)
    if np.any(values < bounds.lower) or np.any(values > bounds.upper):
        raise OutOfBounds(f"grasp values {values} outside declared bounds")
    return _quantize(values, bounds.lower, bounds.upper, vocab)


def detokenize_grasp(
    tokens: np.ndarray,
    bounds: GraspTokenBounds | None = None,
    vocab: int = DEFAULT_VOCAB,
) -> np.ndarray:
    """Inverse of tokenize_grasp; returns (x, y, z, rx, ry, rz) bin centers."""
    if bounds is None:
        bounds = GraspTokenBounds.default()
    return _bin_centers(np.asarray(tokens), bounds.lower, bounds.upper, vocab)
