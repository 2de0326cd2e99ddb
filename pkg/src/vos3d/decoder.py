"""Decoder: GC3D/C3D bridge on the stride-32 level, then RF3D (or plain
upsampling) refinement steps back to stride 4, then a logit head.

Feature tensors are (N, C, T, H, W). Trilinear upsampling uses half-pixel
centres (``align_corners=False``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FeaturePyramid
from .errors import ConfigError, ShapeError

BRIDGES = ("GC3D", "C3D")
REFINEMENTS = ("RF3D", "UPSAMPLE")


@dataclass(frozen=True)
class LayerSpec:
    """Kernel extent, stride and upsampling factor of one layer, each as (t, h, w)."""

    kernel: tuple[int, int, int] = (1, 1, 1)
    stride: tuple[int, int, int] = (1, 1, 1)
    upsample: tuple[int, int, int] = (1, 1, 1)


def effective_receptive_field(layer_chain: Sequence[LayerSpec]) -> tuple[int, int, int]:
    """Input extent (dt, dh, dw) that one output element of the chain can see.

    Layers are listed input-first and composed from the output backwards.
    A linear upsample by ``u`` maps ``r`` consecutive outputs onto at most
    ``ceil((r - 1) / u) + 2`` input samples.
    """
    extent = [1, 1, 1]
    for layer in reversed(list(layer_chain)):
        for d in range(3):
            u = layer.upsample[d]
            if u > 1:
                extent[d] = math.ceil((extent[d] - 1) / u) + 2
            extent[d] = (extent[d] - 1) * layer.stride[d] + layer.kernel[d]
    return tuple(extent)


@dataclass(frozen=True)
class GC3DConfig:
    in_channels: int
    out_channels: int
    k: int = 7

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"GC3D kernel size must be odd and positive, got {self.k}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("GC3D channel counts must be positive")

    @property
    def mid_channels(self) -> int:
        return self.out_channels


def gc3d_param_count(cfg: GC3DConfig) -> int:
    """Weights of the two factorized branches; equals 4*k*C*C when in == out."""
    return 2 * cfg.k * cfg.mid_channels * (cfg.in_channels + cfg.out_channels)


def dense_spatial_param_count(cfg: GC3DConfig) -> int:
    """Weights of the 1 x k x k convolution that GC3D replaces."""
    return cfg.k * cfg.k * cfg.in_channels * cfg.out_channels


def gc3d_forward(x: torch.Tensor, cfg: GC3DConfig, weights: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """Sum of (1xkx1 -> 1x1xk) and (1x1xk -> 1xkx1) convolution branches.

    ``weights`` keys: ``a_row``, ``a_col`` (first branch), ``b_col``, ``b_row``.
    """
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"GC3D expects {cfg.in_channels} channels, got {x.shape[1]}")
    p = cfg.k // 2
    row, col = (0, p, 0), (0, 0, p)
    a = F.conv3d(x, weights["a_row"], weights.get("a_row.bias"), padding=row)
    a = F.conv3d(a, weights["a_col"], weights.get("a_col.bias"), padding=col)
    b = F.conv3d(x, weights["b_col"], weights.get("b_col.bias"), padding=col)
    b = F.conv3d(b, weights["b_row"], weights.get("b_row.bias"), padding=row)
    return a + b


class GC3D(nn.Module):
    def __init__(self, cfg: GC3DConfig, boundary_refine: bool = False):
        super().__init__()
        self.cfg = cfg
        k, cin, mid, cout = cfg.k, cfg.in_channels, cfg.mid_channels, cfg.out_channels
        self.a_row = nn.Conv3d(cin, mid, (1, k, 1), padding=(0, k // 2, 0), bias=False)
        self.a_col = nn.Conv3d(mid, cout, (1, 1, k), padding=(0, 0, k // 2), bias=False)
        self.b_col = nn.Conv3d(cin, mid, (1, 1, k), padding=(0, 0, k // 2), bias=False)
        self.b_row = nn.Conv3d(mid, cout, (1, k, 1), padding=(0, k // 2, 0), bias=False)
        # optional residual 1x3x3 pair on the output, as in the 2D global-convolution design
        self.refine = None
        if boundary_refine:
            self.refine = nn.Sequential(
                nn.Conv3d(cout, cout, (1, 3, 3), padding=(0, 1, 1)),
                nn.ReLU(inplace=True),
                nn.Conv3d(cout, cout, (1, 3, 3), padding=(0, 1, 1)),
            )

    def weights(self) -> dict:
        return {n: getattr(self, n).weight for n in ("a_row", "a_col", "b_col", "b_row")}

    def layer_chain(self) -> list[LayerSpec]:
        k = self.cfg.k
        chain = [LayerSpec((1, k, 1)), LayerSpec((1, 1, k))]
        if self.refine is not None:
            chain += [LayerSpec((1, 3, 3)), LayerSpec((1, 3, 3))]
        return chain

    def forward(self, x):
        out = gc3d_forward(x, self.cfg, self.weights())
        if self.refine is not None:
            out = out + self.refine(out)
        return out


@dataclass(frozen=True)
class DecoderConfig:
    bridge: str = "GC3D"
    refine: str = "RF3D"
    channels: tuple[int, ...] = (256, 128, 64, 32)  # bridge output, then one width per refinement
    k: int = 7
    final_upsample_factor: int = 4
    head: str = "sigmoid"  # "sigmoid": one logit channel; "softmax": two-class logits
    boundary_refine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.bridge not in BRIDGES:
            raise ConfigError(f"unknown bridge variant {self.bridge!r}; choose from {BRIDGES}")
        if self.refine not in REFINEMENTS:
            raise ConfigError(f"unknown refinement variant {self.refine!r}; choose from {REFINEMENTS}")
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ConfigError("decoder channels need 4 positive widths (bridge + 3 refinement steps)")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"GC3D kernel size must be odd and positive, got {self.k}")
        if self.final_upsample_factor < 1:
            raise ConfigError("final_upsample_factor must be positive")
        if self.head not in ("sigmoid", "softmax"):
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def head_channels(self) -> int:
        return 1 if self.head == "sigmoid" else 2


def bridge_forward(x: torch.Tensor, cfg: DecoderConfig, weights: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """Raw bridge convolution(s) on the deepest level, before norm and activation."""
    if cfg.bridge == "GC3D":
        return gc3d_forward(x, GC3DConfig(x.shape[1], weights["a_col"].shape[0], cfg.k), weights)
    if cfg.bridge == "C3D":
        w = weights["conv"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"C3D bridge expects {w.shape[1]} channels, got {x.shape[1]}")
        return F.conv3d(x, w, weights.get("conv.bias"), padding=1)
    raise ConfigError(f"unknown bridge variant {cfg.bridge!r}")


class Bridge(nn.Module):
    def __init__(self, cfg: DecoderConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        out = cfg.channels[0]
        if cfg.bridge == "GC3D":
            self.body = GC3D(GC3DConfig(in_channels, out, cfg.k), boundary_refine=cfg.boundary_refine)
        else:
            self.body = nn.Conv3d(in_channels, out, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm3d(out)

    def weights(self) -> dict:
        if isinstance(self.body, GC3D):
            return self.body.weights()
        return {"conv": self.body.weight}

    def layer_chain(self) -> list[LayerSpec]:
        if isinstance(self.body, GC3D):
            return self.body.layer_chain()
        return [LayerSpec((3, 3, 3))]

    def forward(self, x):
        if isinstance(self.body, GC3D):
            out = self.body(x)
        else:
            out = bridge_forward(x, self.cfg, self.weights())
        return F.relu(self.bn(out))


def upsample_to(x: torch.Tensor, size: Sequence[int], factor: Optional[Sequence[int]] = None) -> torch.Tensor:
    """Trilinear upsampling of ``x`` to ``size``.

    With ``factor`` given, each target dim must satisfy ``x_dim == ceil(size / factor)``
    (the relation produced by stride-``factor`` padded convolutions); otherwise
    the ratio must be an exact integer.
    """
    src = tuple(int(s) for s in x.shape[2:])
    size = tuple(int(s) for s in size)
    for d, (s, n) in enumerate(zip(src, size)):
        if factor is not None:
            ok = factor[d] >= 1 and s == math.ceil(n / factor[d])
        else:
            ok = n % s == 0
        if not ok:
            raise ShapeError(f"cannot upsample {src} to {size} (factor {factor})")
    if src == size:
        return x
    return F.interpolate(x, size=size, mode="trilinear", align_corners=False)


def _norm(norms, name, t):
    if norms is None or name not in norms:
        return t
    return norms[name](t)


def _residual_pair(x, weights, norms, prefix):
    y = F.conv3d(x, weights[f"{prefix}a"], weights.get(f"{prefix}a.bias"), padding=1)
    y = F.relu(_norm(norms, f"{prefix}a", y))
    y = F.conv3d(y, weights[f"{prefix}b"], weights.get(f"{prefix}b.bias"), padding=1)
    return x + _norm(norms, f"{prefix}b", y)


def rf3d_forward(
    x: torch.Tensor,
    skip: torch.Tensor,
    weights: Mapping[str, torch.Tensor],
    factor: Optional[Sequence[int]] = None,
    norms: Optional[Mapping[str, Callable]] = None,
) -> torch.Tensor:
    """RF3D: ``R2(upsample(R1(x)) + adapt(skip))`` with ``R(y) = y + conv(relu(conv(y)))``.

    Weight keys: ``r1a``, ``r1b``, ``r2a``, ``r2b`` (3x3x3), ``adapt`` (1x1x1 on
    the skip) and, when the width changes, ``reduce`` (1x1x1 after R1).
    """
    y = _residual_pair(x, weights, norms, "r1")
    if "reduce" in weights:
        y = _norm(norms, "reduce", F.conv3d(y, weights["reduce"], weights.get("reduce.bias")))
    y = upsample_to(y, skip.shape[2:], factor)
    adapted = _norm(norms, "adapt", F.conv3d(skip, weights["adapt"], weights.get("adapt.bias")))
    if adapted.shape[1] != y.shape[1]:
        raise ShapeError(f"adapted skip has {adapted.shape[1]} channels, decoder has {y.shape[1]}")
    return _residual_pair(y + adapted, weights, norms, "r2")


class RF3D(nn.Module):
    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        c, o = in_channels, out_channels
        self.convs = nn.ModuleDict(
            {
                "r1a": nn.Conv3d(c, c, 3, padding=1, bias=False),
                "r1b": nn.Conv3d(c, c, 3, padding=1, bias=False),
                "adapt": nn.Conv3d(skip_channels, o, 1, bias=False),
                "r2a": nn.Conv3d(o, o, 3, padding=1, bias=False),
                "r2b": nn.Conv3d(o, o, 3, padding=1, bias=False),
            }
        )
        if c != o:
            self.convs["reduce"] = nn.Conv3d(c, o, 1, bias=False)
        self.norms = nn.ModuleDict({name: nn.BatchNorm3d(conv.out_channels) for name, conv in self.convs.items()})

    def weights(self) -> dict:
        return {name: conv.weight for name, conv in self.convs.items()}

    def forward(self, x, skip, factor=None):
        return rf3d_forward(x, skip, self.weights(), factor, self.norms)


class UpsampleRefine(nn.Module):
    """Ablation baseline: two 3x3x3 convs, upsampling, concatenation with the encoder feature."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        c = in_channels
        self.convs = nn.Sequential(
            nn.Conv3d(c, c, 3, padding=1, bias=False), nn.BatchNorm3d(c), nn.ReLU(inplace=True),
            nn.Conv3d(c, c, 3, padding=1, bias=False), nn.BatchNorm3d(c), nn.ReLU(inplace=True),
        )
        self.fuse = nn.Sequential(
            nn.Conv3d(c + skip_channels, out_channels, 1, bias=False),
            nn.BatchNorm3d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x, skip, factor=None):
        y = upsample_to(self.convs(x), skip.shape[2:], factor)
        return self.fuse(torch.cat([y, skip], dim=1))


class Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, level_channels: Sequence[int], level_strides: Sequence[tuple[int, int]]):
        super().__init__()
        if len(level_channels) != 4 or len(level_strides) != 4:
            raise ShapeError("decoder needs channel and stride metadata for 4 levels")
        self.cfg = cfg
        self.level_channels = tuple(level_channels)
        self.level_strides = tuple(tuple(s) for s in level_strides)
        self.bridge = Bridge(cfg, level_channels[3])
        block = RF3D if cfg.refine == "RF3D" else UpsampleRefine
        steps = []
        for i, level in enumerate((2, 1, 0)):
            steps.append(block(cfg.channels[i], level_channels[level], cfg.channels[i + 1]))
        self.steps = nn.ModuleList(steps)
        self.head = nn.Conv3d(cfg.channels[3], cfg.head_channels, 3, padding=1)

    def step_factor(self, coarse: int) -> tuple[int, int, int]:
        """Upsampling factor from pyramid level ``coarse`` to ``coarse - 1``."""
        (s_hi, t_hi), (s_lo, t_lo) = self.level_strides[coarse], self.level_strides[coarse - 1]
        if s_hi % s_lo or t_hi % t_lo:
            raise ShapeError("pyramid strides are not integer multiples of each other")
        return (t_hi // t_lo, s_hi // s_lo, s_hi // s_lo)

    def final_factor(self) -> tuple[int, int, int]:
        s, t = self.level_strides[0]
        if s != self.cfg.final_upsample_factor:
            raise ShapeError(f"finest level stride {s} != final_upsample_factor {self.cfg.final_upsample_factor}")
        return (t, s, s)

    def forward(self, feats: Sequence[torch.Tensor], out_size: Sequence[int]) -> torch.Tensor:
        """Head logits (N, head_channels, T, H, W) at ``out_size`` = (T, H, W)."""
        for f, c in zip(feats, self.level_channels):
            if f.shape[1] != c:
                raise ShapeError(f"pyramid level has {f.shape[1]} channels, decoder expects {c}")
        x = self.bridge(feats[3])
        for step, level in zip(self.steps, (2, 1, 0)):
            x = step(x, feats[level], self.step_factor(level + 1))
        return upsample_to(self.head(x), out_size, self.final_factor())


def foreground_logits(head_out: torch.Tensor) -> torch.Tensor:
    """Collapse head output to one foreground logit per voxel: (N, T, H, W).

    For the two-class head, ``sigmoid(l1 - l0)`` equals the softmax foreground probability.
    """
    if head_out.shape[1] == 1:
        return head_out[:, 0]
    return head_out[:, 1] - head_out[:, 0]


def decode(pyramid: FeaturePyramid, decoder: Decoder) -> torch.Tensor:
    """Foreground logits (T, H, W) for a single-clip pyramid."""
    if len(pyramid) != 4:
        raise ShapeError("decode needs a 4-level pyramid")
    strides = tuple((lv.spatial_stride, lv.temporal_stride) for lv in pyramid.levels)
    if strides != decoder.level_strides:
        raise ShapeError(f"pyramid strides {strides} do not match decoder {decoder.level_strides}")
    out = decoder([lv.tensor for lv in pyramid.levels], pyramid.input_shape)
    return foreground_logits(out)[0]
