"""Fully-3D encoder-decoder video salient object segmentation."""

from .core import (
    FeatureLevel,
    FeaturePyramid,
    MaskSequence,
    NormalizationStats,
    ProbabilityMaps,
    VideoTensor,
    normalize_clip,
    pad_clip_to_length,
)
from .decoder import DecoderConfig, GC3DConfig, effective_receptive_field
from .encoder import EncoderConfig, build_encoder, count_parameters, encode
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import EvalReport, evaluate_davis, evaluate_saliency
from .network import ModelConfig, SegmentationNet, build_model, tiny_model_config
from .pipeline import ClipScheduleConfig, plan_windows, segment_video, worst_case_latency

__all__ = [
    "FeatureLevel",
    "FeaturePyramid",
    "MaskSequence",
    "NormalizationStats",
    "ProbabilityMaps",
    "VideoTensor",
    "normalize_clip",
    "pad_clip_to_length",
    "DecoderConfig",
    "GC3DConfig",
    "effective_receptive_field",
    "EncoderConfig",
    "build_encoder",
    "count_parameters",
    "encode",
    "KERNEL_BACKEND",
    "EvalReport",
    "evaluate_davis",
    "evaluate_saliency",
    "ModelConfig",
    "SegmentationNet",
    "build_model",
    "tiny_model_config",
    "ClipScheduleConfig",
    "plan_windows",
    "segment_video",
    "worst_case_latency",
]

__version__ = "0.1.0"
