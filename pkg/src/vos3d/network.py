"""Encoder + decoder segmentation network."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .decoder import Decoder, DecoderConfig, foreground_logits
from .encoder import Encoder, EncoderConfig, _init_weights


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


def tiny_model_config(**decoder_overrides) -> ModelConfig:
    """Depths [1,1,1,1], width 8: the desk-scale network used in tests and fixtures."""
    dec = dict(channels=(32, 16, 16, 8))
    dec.update(decoder_overrides)
    return ModelConfig(EncoderConfig(stage_depths=(1, 1, 1, 1), base_width=8), DecoderConfig(**dec))


class SegmentationNet(nn.Module):
    """Maps (N, 3, T, H, W) clips to foreground logits (N, T, H, W)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.encoder)
        self.decoder = Decoder(config.decoder, config.encoder.level_channels, config.encoder.level_strides)
        _init_weights(self.decoder)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(x)
        return foreground_logits(self.decoder(feats, x.shape[2:]))


def build_model(config: ModelConfig | None = None) -> SegmentationNet:
    return SegmentationNet(config or ModelConfig())
