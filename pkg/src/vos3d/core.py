"""Domain types shared across the package, plus clip padding and normalization.

Arrays crossing the public API use a (T, H, W[, C]) layout. Every type is
validated on construction and its array is frozen (``writeable=False``), so
instances can be shared freely between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError

# ImageNet-style channel statistics; the checkpoint manifest stores whichever pair is in use.
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VideoTensor:
    """A clip of ``T`` RGB frames stored as a (T, H, W, 3) float array."""

    data: np.ndarray
    frame_rate: Optional[float] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[-1] != 3:
            raise ShapeError(f"VideoTensor expects (T, H, W, 3), got {data.shape}")
        if min(data.shape[:3]) < 1:
            raise InvalidArgumentError(f"VideoTensor needs T, H, W >= 1, got {data.shape}")
        data = data.astype(np.float32, copy=False)
        if not np.isfinite(data).all():
            raise InvalidArgumentError("VideoTensor contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        """(T, H, W) of the clip."""
        return tuple(self.data.shape[:3])


@dataclass(frozen=True)
class MaskSequence:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"MaskSequence expects (T, H, W), got {data.shape}")
        if data.dtype != bool and not np.isin(data, (0, 1)).all():
            raise InvalidArgumentError("MaskSequence values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def check_matches(self, clip: VideoTensor) -> None:
        if self.shape != clip.shape:
            raise ShapeError(f"mask shape {self.shape} does not match clip {clip.shape}")


@dataclass(frozen=True)
class ProbabilityMaps:
    """Per-frame foreground probabilities with the number of windows behind each frame."""

    data: np.ndarray
    coverage_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"ProbabilityMaps expects (T, H, W), got {data.shape}")
        if data.size and (np.nanmin(data) < 0.0 or np.nanmax(data) > 1.0 or np.isnan(data).any()):
            raise InvalidArgumentError("probabilities must lie in [0, 1]")
        counts = self.coverage_counts
        if counts is None:
            counts = np.ones(data.shape[0], dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (data.shape[0],):
            raise ShapeError("coverage_counts needs one entry per frame")
        if (counts < 1).any():
            raise InvalidArgumentError("every frame needs coverage >= 1")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "coverage_counts", _freeze(counts))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class FeatureLevel:
    """One encoder output; ``tensor`` is a torch tensor laid out (N, C, T, H, W)."""

    tensor: object
    spatial_stride: int
    temporal_stride: int

    @property
    def channels(self) -> int:
        return int(self.tensor.shape[1])

    @property
    def size(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.tensor.shape[2:])


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple[FeatureLevel, ...]
    input_shape: tuple[int, int, int]  # (T, H, W) of the encoded clip

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) != 4:
            raise ShapeError(f"a pyramid has exactly 4 levels, got {len(levels)}")
        strides = [lv.spatial_stride for lv in levels]
        if any(b <= a for a, b in zip(strides, strides[1:])) or strides[-1] != 32:
            raise ShapeError(f"spatial strides must increase to 32, got {strides}")
        _, H, W = self.input_shape
        for lv in levels:
            expect = (math.ceil(H / lv.spatial_stride), math.ceil(W / lv.spatial_stride))
            if lv.size[1:] != expect:
                raise ShapeError(
                    f"level at stride {lv.spatial_stride} has spatial size {lv.size[1:]}, expected {expect}"
                )
        object.__setattr__(self, "levels", levels)

    def __getitem__(self, i: int) -> FeatureLevel:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)


def pad_clip_to_length(clip: VideoTensor, target: int) -> VideoTensor:
    """Append copies of the last frame until the clip has ``target`` frames."""
    T = clip.num_frames
    if target < T:
        raise InvalidArgumentError(f"target length {target} is shorter than the clip ({T})")
    if target == T:
        return clip
    idx = np.minimum(np.arange(target), T - 1)
    return VideoTensor(clip.data[idx], frame_rate=clip.frame_rate)


def pad_indices(indices: Sequence[int], target: int) -> list[int]:
    """Index-level counterpart of :func:`pad_clip_to_length`."""
    indices = list(indices)
    if not indices:
        raise InvalidArgumentError("cannot pad an empty index list")
    if target < len(indices):
        raise InvalidArgumentError(f"target length {target} is shorter than {len(indices)}")
    return indices + [indices[-1]] * (target - len(indices))


def _check_stats(mean, std):
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise InvalidArgumentError("mean and std must be 3-vectors")
    if (std <= 0).any():
        raise InvalidArgumentError(f"std components must be > 0, got {std.tolist()}")
    return mean, std


def normalize_clip(clip, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> VideoTensor:
    """Map 8-bit pixel values to ``(v / 255 - mean) / std`` per channel."""
    mean, std = _check_stats(mean, std)
    raw = clip.data if isinstance(clip, VideoTensor) else np.asarray(clip)
    out = (raw.astype(np.float64) / 255.0 - mean) / std
    rate = clip.frame_rate if isinstance(clip, VideoTensor) else None
    return VideoTensor(out, frame_rate=rate)


def denormalize_clip(clip: VideoTensor, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> np.ndarray:
    """Inverse of :func:`normalize_clip`; returns float pixel values on the 0..255 scale."""
    mean, std = _check_stats(mean, std)
    return (clip.data.astype(np.float64) * std + mean) * 255.0


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD

    def __post_init__(self):
        _check_stats(self.mean, self.std)


__all__ = [
    "DEFAULT_MEAN",
    "DEFAULT_STD",
    "FeatureLevel",
    "FeaturePyramid",
    "MaskSequence",
    "NormalizationStats",
    "ProbabilityMaps",
    "VideoTensor",
    "denormalize_clip",
    "normalize_clip",
    "pad_clip_to_length",
    "pad_indices",
]
