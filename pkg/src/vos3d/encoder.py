"""Channel-separated 3D ResNet encoder (ir-CSN) emitting a 4-level feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FeatureLevel, FeaturePyramid, VideoTensor
from .errors import ConfigError, InvalidArgumentError, ShapeError

EXPANSION = 4
STAGE_SPATIAL_STRIDES = (1, 2, 2, 2)


@dataclass(frozen=True)
class BottleneckSpec:
    in_channels: int
    mid_channels: int
    out_channels: int
    spatial_stride: int = 1
    temporal_stride: int = 1
    channel_separated: bool = True

    def __post_init__(self):
        if min(self.in_channels, self.mid_channels, self.out_channels) < 1:
            raise ConfigError("bottleneck channel counts must be positive")
        if self.mid_channels > self.out_channels:
            raise ConfigError("mid_channels must not exceed out_channels")
        if self.spatial_stride not in (1, 2) or self.temporal_stride not in (1, 2):
            raise ConfigError("bottleneck strides must be 1 or 2")

    @property
    def stride(self) -> tuple[int, int, int]:
        return (self.temporal_stride, self.spatial_stride, self.spatial_stride)

    @property
    def needs_projection(self) -> bool:
        return self.stride != (1, 1, 1) or self.in_channels != self.out_channels


def bottleneck_param_count(spec: BottleneckSpec) -> int:
    """Closed-form convolution weight count of one bottleneck (norm layers excluded)."""
    mid = spec.mid_channels
    middle = 27 * mid if spec.channel_separated else 27 * mid * mid
    total = spec.in_channels * mid + middle + mid * spec.out_channels
    if spec.needs_projection:
        total += spec.in_channels * spec.out_channels
    return total


def csn_bottleneck_forward(
    x: torch.Tensor,
    spec: BottleneckSpec,
    weights: Mapping[str, torch.Tensor],
    norms: Optional[Mapping[str, Callable]] = None,
    activation: Callable = F.relu,
) -> torch.Tensor:
    """Residual 1x1x1 -> 3x3x3 (depthwise when separated) -> 1x1x1 block.

    ``weights`` holds ``conv1``, ``conv2``, ``conv3`` and, when the residual
    needs reshaping, ``proj``; a ``<name>.bias`` entry is added when present.
    ``norms`` optionally maps ``bn1``, ``bn2``, ``bn3``, ``bn_proj`` to callables.
    """
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    norms = norms or {}

    def norm(name, t):
        fn = norms.get(name)
        return t if fn is None else fn(t)

    groups = spec.mid_channels if spec.channel_separated else 1
    out = F.conv3d(x, weights["conv1"], weights.get("conv1.bias"))
    out = activation(norm("bn1", out))
    out = F.conv3d(
        out, weights["conv2"], weights.get("conv2.bias"), stride=spec.stride, padding=1, groups=groups
    )
    out = activation(norm("bn2", out))
    out = norm("bn3", F.conv3d(out, weights["conv3"], weights.get("conv3.bias")))
    if spec.needs_projection:
        residual = norm("bn_proj", F.conv3d(x, weights["proj"], weights.get("proj.bias"), stride=spec.stride))
    else:
        residual = x
    return activation(residual + out)


class CSNBottleneck(nn.Module):
    def __init__(self, spec: BottleneckSpec):
        super().__init__()
        self.spec = spec
        mid = spec.mid_channels
        groups = mid if spec.channel_separated else 1
        self.conv1 = nn.Conv3d(spec.in_channels, mid, kernel_size=1, bias=False)
        self.bn1 = nn.BatchNorm3d(mid)
        self.conv2 = nn.Conv3d(
            mid, mid, kernel_size=3, stride=spec.stride, padding=1, groups=groups, bias=False
        )
        self.bn2 = nn.BatchNorm3d(mid)
        self.conv3 = nn.Conv3d(mid, spec.out_channels, kernel_size=1, bias=False)
        self.bn3 = nn.BatchNorm3d(spec.out_channels)
        if spec.needs_projection:
            self.proj = nn.Conv3d(spec.in_channels, spec.out_channels, kernel_size=1, stride=spec.stride, bias=False)
            self.bn_proj = nn.BatchNorm3d(spec.out_channels)

    def weights(self) -> dict:
        w = {"conv1": self.conv1.weight, "conv2": self.conv2.weight, "conv3": self.conv3.weight}
        if self.spec.needs_projection:
            w["proj"] = self.proj.weight
        return w

    def norms(self) -> dict:
        n = {"bn1": self.bn1, "bn2": self.bn2, "bn3": self.bn3}
        if self.spec.needs_projection:
            n["bn_proj"] = self.bn_proj
        return n

    def layer_chain(self):
        from .decoder import LayerSpec

        return [LayerSpec((1, 1, 1)), LayerSpec((3, 3, 3), stride=self.spec.stride), LayerSpec((1, 1, 1))]

    def forward(self, x):
        return csn_bottleneck_forward(x, self.spec, self.weights(), self.norms())


@dataclass(frozen=True)
class EncoderConfig:
    stage_depths: tuple[int, ...] = (3, 8, 36, 3)
    base_width: int = 64
    temporal_strides: tuple[int, ...] = (1, 2, 2, 2)
    channel_separated: bool = True
    stem_temporal_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        object.__setattr__(self, "temporal_strides", tuple(int(s) for s in self.temporal_strides))
        if len(self.stage_depths) != 4:
            raise ConfigError(f"stage_depths needs 4 entries, got {len(self.stage_depths)}")
        if min(self.stage_depths) < 1:
            raise ConfigError("stage_depths must all be >= 1")
        if len(self.temporal_strides) != 4 or any(s not in (1, 2) for s in self.temporal_strides):
            raise ConfigError("temporal_strides needs 4 entries, each 1 or 2")
        if self.base_width < 1:
            raise ConfigError("base_width must be positive")
        if self.stem_temporal_stride not in (1, 2):
            raise ConfigError("stem_temporal_stride must be 1 or 2")

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_width * 2**i * EXPANSION for i in range(4))

    @property
    def level_strides(self) -> tuple[tuple[int, int], ...]:
        """(spatial, temporal) stride of each pyramid level."""
        out, spatial, temporal = [], 4, self.stem_temporal_stride
        for s, t in zip(STAGE_SPATIAL_STRIDES, self.temporal_strides):
            spatial *= s
            temporal *= t
            out.append((spatial, temporal))
        return tuple(out)


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv3d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm3d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        self.stem = nn.Sequential(
            nn.Conv3d(3, w, kernel_size=(3, 7, 7), stride=(config.stem_temporal_stride, 2, 2),
                      padding=(1, 3, 3), bias=False),
            nn.BatchNorm3d(w),
            nn.ReLU(inplace=True),
            nn.MaxPool3d(kernel_size=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        in_ch = w
        stages = []
        for i, depth in enumerate(config.stage_depths):
            mid = w * 2**i
            out = mid * EXPANSION
            blocks = []
            for b in range(depth):
                first = b == 0
                spec = BottleneckSpec(
                    in_ch, mid, out,
                    spatial_stride=STAGE_SPATIAL_STRIDES[i] if first else 1,
                    temporal_stride=config.temporal_strides[i] if first else 1,
                    channel_separated=config.channel_separated,
                )
                blocks.append(CSNBottleneck(spec))
                in_ch = out
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def build_encoder(config: Optional[EncoderConfig] = None) -> Encoder:
    return Encoder(config or EncoderConfig())


def clip_to_tensor(clip, dtype=torch.float32) -> torch.Tensor:
    """(T, H, W, 3) clip -> (1, 3, T, H, W) tensor."""
    data = clip.data if isinstance(clip, VideoTensor) else np.asarray(clip)
    if data.ndim != 4 or data.shape[0] == 0:
        raise InvalidArgumentError(f"cannot encode a clip of shape {data.shape}")
    return torch.from_numpy(np.ascontiguousarray(data.transpose(3, 0, 1, 2))).to(dtype).unsqueeze(0)


def pyramid_from_features(feats, config: EncoderConfig, input_shape) -> FeaturePyramid:
    levels = tuple(
        FeatureLevel(f, spatial_stride=s, temporal_stride=t)
        for f, (s, t) in zip(feats, config.level_strides)
    )
    return FeaturePyramid(levels, tuple(int(v) for v in input_shape))


def encode(encoder: Encoder, clip) -> FeaturePyramid:
    """Run the encoder on one clip; the tensor levels keep a leading batch axis of 1."""
    if not isinstance(clip, VideoTensor):
        clip = VideoTensor(np.asarray(clip))
    dtype = next(encoder.parameters()).dtype
    feats = encoder(clip_to_tensor(clip, dtype))
    return pyramid_from_features(feats, encoder.config, clip.shape)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
