"""Training clips synthesized from a still image and its instance masks.

A random affine + piecewise-affine step is drawn per frame and composed
with all previous steps, so objects drift coherently through the clip.
Transforms are stored as size-free parameters and instantiated on the
image grid when warping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import LinearNDInterpolator

from .core import MaskSequence, VideoTensor
from .errors import ConfigError, InvalidArgumentError


def _pair(name, value):
    lo, hi = (float(v) for v in value)
    if lo > hi:
        raise ConfigError(f"{name} range ({lo}, {hi}) is inverted")
    return (lo, hi)


@dataclass(frozen=True)
class TransformSpec:
    """Per-frame step ranges as (low, high) pairs."""

    rotation: tuple[float, float] = (-10.0, 10.0)  # degrees
    translation: tuple[float, float] = (-0.05, 0.05)  # fraction of width/height
    scale: tuple[float, float] = (0.95, 1.05)
    shear: tuple[float, float] = (-5.0, 5.0)  # degrees
    grid: int = 4  # piecewise control points per axis
    jitter: float = 0.02  # fraction of a grid cell

    def __post_init__(self):
        for name in ("rotation", "translation", "scale", "shear"):
            object.__setattr__(self, name, _pair(name, getattr(self, name)))
        if self.scale[0] <= 0:
            raise ConfigError("scale range must be positive")
        if self.grid < 2:
            raise ConfigError("piecewise grid needs at least 2 points per axis")
        if not 0 <= self.jitter < 0.5:
            raise ConfigError("piecewise jitter must lie in [0, 0.5) of a cell")

    @classmethod
    def still(cls) -> "TransformSpec":
        """All ranges collapsed to the identity."""
        return cls((0, 0), (0, 0), (1, 1), (0, 0), 4, 0.0)


@dataclass(frozen=True)
class SynthConfig:
    T_c: int = 8
    per_step: TransformSpec = field(default_factory=TransformSpec)

    def __post_init__(self):
        if self.T_c < 1:
            raise ConfigError("T_c must be >= 1")


@dataclass(frozen=True)
class WarpStep:
    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0
    shear: float = 0.0
    grid_offsets: np.ndarray | None = None  # (g, g, 2) in cell units, border rows/cols zero

    def matrix(self, shape) -> np.ndarray:
        """Forward 3x3 affine in pixel (x, y) coordinates, centred on the image."""
        H, W = shape
        cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
        a, sh = np.deg2rad(self.angle), np.deg2rad(self.shear)
        rot = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
        shear = np.array([[1, -np.sin(sh), 0], [0, np.cos(sh), 0], [0, 0, 1]])
        scale = np.diag([self.scale, self.scale, 1.0])
        to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
        back = np.array([[1, 0, cx + self.tx * W], [0, 1, cy + self.ty * H], [0, 0, 1]])
        return back @ rot @ shear @ scale @ to_origin

    def inverse_map(self, xy: np.ndarray, shape) -> np.ndarray:
        """Source pixel coordinates for output coordinates ``xy`` (N, 2)."""
        if self.grid_offsets is not None and np.any(self.grid_offsets):
            H, W = shape
            g = self.grid_offsets.shape[0]
            gx, gy = np.meshgrid(np.linspace(0, W - 1, g), np.linspace(0, H - 1, g))
            cell = np.array([(W - 1) / (g - 1), (H - 1) / (g - 1)])
            pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
            disp = self.grid_offsets.reshape(-1, 2) * cell
            # piecewise-linear on the Delaunay mesh, identity outside it
            xy = xy + LinearNDInterpolator(pts, disp, fill_value=0.0)(xy)
        inv = np.linalg.inv(self.matrix(shape))
        return xy @ inv[:2, :2].T + inv[:2, 2]


@dataclass(frozen=True)
class Transform:
    """Composition ``steps[-1] o ... o steps[0]``; empty means identity."""

    steps: tuple[WarpStep, ...] = ()

    @property
    def is_identity(self) -> bool:
        return not self.steps

    def then(self, step: WarpStep) -> "Transform":
        return Transform(self.steps + (step,))

    def inverse_map(self, xy: np.ndarray, shape) -> np.ndarray:
        for step in reversed(self.steps):
            xy = step.inverse_map(xy, shape)
        return xy


def _draw_step(spec: TransformSpec, rng) -> WarpStep:
    u = lambda r: float(rng.uniform(*r))  # noqa: E731
    offsets = None
    if spec.jitter > 0:
        offsets = rng.uniform(-spec.jitter, spec.jitter, size=(spec.grid, spec.grid, 2))
        offsets[[0, -1], :, :] = 0.0
        offsets[:, [0, -1], :] = 0.0
    return WarpStep(
        angle=u(spec.rotation), tx=u(spec.translation), ty=u(spec.translation),
        scale=u(spec.scale), shear=u(spec.shear), grid_offsets=offsets,
    )


def sample_transform_chain(cfg: SynthConfig, rng=None) -> list[Transform]:
    """``T_c`` cumulative transforms; the first is the identity."""
    rng = np.random.default_rng(rng)
    chain = [Transform()]
    for _ in range(cfg.T_c - 1):
        chain.append(chain[-1].then(_draw_step(cfg.per_step, rng)))
    return chain


def union_instance_masks(instances: Sequence[np.ndarray]) -> np.ndarray:
    if len(instances) == 0:
        raise InvalidArgumentError("need at least one instance mask")
    masks = [np.asarray(m) != 0 for m in instances]
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise InvalidArgumentError(f"instance masks differ in shape: {[m.shape for m in masks]}")
    return np.logical_or.reduce(masks).astype(np.uint8)


def _source_coords(transform: Transform, shape) -> np.ndarray:
    H, W = shape
    ys, xs = np.mgrid[0:H, 0:W]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src = transform.inverse_map(xy, shape)
    return np.stack([src[:, 1].reshape(H, W), src[:, 0].reshape(H, W)])  # (row, col)


def warp_image(image: np.ndarray, transform: Transform) -> np.ndarray:
    """Bilinear warp with edge replication; (H, W, C) float output."""
    image = np.asarray(image, dtype=np.float64)
    if transform.is_identity:
        return image.copy()
    coords = _source_coords(transform, image.shape[:2])
    return np.stack(
        [ndimage.map_coordinates(image[..., c], coords, order=1, mode="nearest") for c in range(image.shape[2])],
        axis=-1,
    )


def warp_mask(mask: np.ndarray, transform: Transform) -> np.ndarray:
    """Nearest-neighbour warp; outside the source image is background."""
    mask = (np.asarray(mask) != 0).astype(np.uint8)
    if transform.is_identity:
        return mask.copy()
    coords = _source_coords(transform, mask.shape)
    return ndimage.map_coordinates(mask, coords, order=0, mode="constant", cval=0)


def synthesize_clip(image, instance_masks, cfg: SynthConfig | None = None, rng=None):
    """Warp ``image`` and the union of its instances through one random chain.

    Frames keep the image's 0..255 value scale; normalize before feeding the network.
    """
    cfg = cfg or SynthConfig()
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    union = union_instance_masks(instance_masks)
    if union.shape != image.shape[:2]:
        raise InvalidArgumentError(f"mask shape {union.shape} does not match image {image.shape[:2]}")
    if not union.any():
        warnings.warn("instance masks are empty; emitting an all-background clip", stacklevel=2)
    chain = sample_transform_chain(cfg, rng)
    frames = np.stack([warp_image(image, tf) for tf in chain])
    masks = np.stack([warp_mask(union, tf) for tf in chain])
    return VideoTensor(frames), MaskSequence(masks)
