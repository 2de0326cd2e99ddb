"""Clip-windowed inference over arbitrary-length videos and the training-clip sampler.

Frame indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from . import kernels
from .core import MaskSequence, ProbabilityMaps, VideoTensor, pad_clip_to_length, pad_indices
from .encoder import clip_to_tensor
from .errors import ConfigError, InvalidArgumentError


@dataclass(frozen=True)
class ClipScheduleConfig:
    T_c: int = 8
    T_o: int = 3

    def __post_init__(self):
        if self.T_c < 1:
            raise ConfigError(f"clip length must be >= 1, got {self.T_c}")
        if not 0 <= self.T_o < self.T_c:
            raise ConfigError(f"overlap must be < clip length (T_o={self.T_o}, T_c={self.T_c})")

    @property
    def step(self) -> int:
        return self.T_c - self.T_o

    @classmethod
    def dense(cls, T_c: int = 8) -> "ClipScheduleConfig":
        """Online setting: each new frame closes a window."""
        return cls(T_c, T_c - 1)


@dataclass(frozen=True)
class WindowPlan:
    start: int
    length: int
    pad_count: int = 0

    @property
    def valid(self) -> int:
        return self.length - self.pad_count

    @property
    def stop(self) -> int:
        """One past the last real frame."""
        return self.start + self.valid


def plan_windows(L: int, cfg: ClipScheduleConfig) -> list[WindowPlan]:
    if L < 1:
        raise InvalidArgumentError(f"video length must be >= 1, got {L}")
    plans = []
    start = 0
    while True:
        pad = max(0, start + cfg.T_c - L)
        plans.append(WindowPlan(start, cfg.T_c, pad))
        if start + cfg.T_c >= L:
            return plans
        start += cfg.step


def worst_case_latency(cfg: ClipScheduleConfig) -> int:
    """Frames that may arrive after ``f`` before some window containing ``f`` is complete."""
    return cfg.T_c - cfg.T_o - 1


def first_available(f: int, plans: Sequence[WindowPlan]) -> int:
    """Index of the last frame of the first window that contains frame ``f``."""
    for p in plans:
        if p.start <= f < p.start + p.length:
            return p.start + p.length - 1
    raise InvalidArgumentError(f"frame {f} is not covered by any window")


def merge_window_probabilities(plans: Sequence[WindowPlan], window_probs) -> ProbabilityMaps:
    """Average per-window probabilities frame by frame; padded positions are dropped."""
    if len(plans) != len(window_probs):
        raise InvalidArgumentError(f"{len(plans)} plans but {len(window_probs)} probability blocks")
    if not plans:
        raise InvalidArgumentError("nothing to merge")
    blocks = []
    for p, w in zip(plans, window_probs):
        arr = w.data if isinstance(w, ProbabilityMaps) else np.asarray(w, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != p.length:
            raise InvalidArgumentError(f"window at {p.start} expects {p.length} frames, got {arr.shape}")
        blocks.append(arr)
    if len({b.shape[1:] for b in blocks}) != 1:
        raise InvalidArgumentError("window probability blocks differ in spatial size")
    length = max(p.stop for p in plans)
    sums, counts = kernels.accumulate_windows(
        [p.start for p in plans], [p.valid for p in plans], np.stack(blocks), length
    )
    if (counts < 1).any():
        missing = np.flatnonzero(counts < 1).tolist()
        raise InvalidArgumentError(f"frames {missing} are not covered by any window")
    return ProbabilityMaps(sums / counts[:, None, None], counts)


@dataclass(frozen=True)
class TrainingSampleSpec:
    t: int
    L: int
    S: int
    indices: tuple[int, ...]


def sample_training_clip(L: int, T_c: int, S: int = 32, rng=None, t: Optional[int] = None) -> TrainingSampleSpec:
    """Pick a start ``t`` uniformly, then ``T_c - 1`` sorted distinct frames from
    ``(t, min(t + S - 1, L - 1)]``; short ranges are padded with the last index.
    """
    if T_c < 1:
        raise ConfigError(f"clip length must be >= 1, got {T_c}")
    if S < 1:
        raise ConfigError(f"temporal span must be >= 1, got {S}")
    if L < 1:
        raise InvalidArgumentError(f"video length must be >= 1, got {L}")
    rng = np.random.default_rng(rng)
    if t is None:
        t = int(rng.integers(L))
    elif not 0 <= t < L:
        raise InvalidArgumentError(f"start frame {t} outside [0, {L})")
    candidates = np.arange(t + 1, min(t + S - 1, L - 1) + 1)
    if len(candidates) > T_c - 1:
        rest = np.sort(rng.choice(candidates, size=T_c - 1, replace=False))
    else:
        rest = candidates
    indices = pad_indices([t] + [int(i) for i in rest], T_c)
    return TrainingSampleSpec(t=t, L=L, S=S, indices=tuple(indices))


def binarize(probs, threshold: float = 0.5) -> MaskSequence:
    """Foreground where probability is strictly above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1), got {threshold}")
    data = probs.data if isinstance(probs, ProbabilityMaps) else np.asarray(probs)
    return MaskSequence((data > threshold).astype(np.uint8))


@torch.no_grad()
def predict_windows(model, clip: VideoTensor, plans: Sequence[WindowPlan], batch_size: int = 4) -> list[np.ndarray]:
    """Sigmoid probabilities (T_c, H, W) for each planned window."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    try:
        for i in range(0, len(plans), batch_size):
            batch = []
            for p in plans[i : i + batch_size]:
                window = VideoTensor(clip.data[p.start : p.stop])
                batch.append(clip_to_tensor(pad_clip_to_length(window, p.length), dtype))
            probs = torch.sigmoid(model(torch.cat(batch))).double().numpy()
            out.extend(probs)
    finally:
        model.train(was_training)
    return out


def segment_video(
    model,
    frames: VideoTensor,
    cfg: Optional[ClipScheduleConfig] = None,
    threshold: float = 0.5,
    batch_size: int = 4,
) -> tuple[ProbabilityMaps, MaskSequence]:
    """Plan windows, run the network on each, average overlaps and threshold."""
    cfg = cfg or ClipScheduleConfig()
    if not isinstance(frames, VideoTensor):
        frames = VideoTensor(np.asarray(frames))
    plans = plan_windows(frames.num_frames, cfg)
    probs = merge_window_probabilities(plans, predict_windows(model, frames, plans, batch_size))
    return probs, binarize(probs, threshold)
