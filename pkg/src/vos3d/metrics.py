"""Region (J), boundary (F), saliency F-measure and MAE, per frame and per dataset.

Sequences are averaged frame-wise first, then over sequences.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import kernels
from .errors import InvalidArgumentError

DAVIS_TOLERANCE_FRACTION = 0.008


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    return pred, gt


@dataclass(frozen=True)
class BoundaryMatchConfig:
    tolerance_radius: int = 1

    def __post_init__(self):
        if self.tolerance_radius < 1:
            raise InvalidArgumentError("tolerance radius must be >= 1 pixel")

    @classmethod
    def for_shape(cls, shape, fraction: float = DAVIS_TOLERANCE_FRACTION) -> "BoundaryMatchConfig":
        """Radius of ``fraction`` of the image diagonal, rounded up."""
        H, W = shape[-2:]
        return cls(max(1, math.ceil(fraction * math.hypot(H, W))))


def region_jaccard(pred, gt) -> float:
    """Intersection over union; two empty masks score 1."""
    pred, gt = _check_pair(pred, gt)
    tp, fp, fn, _ = kernels.confusion_counts(pred, gt)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def boundary_f_measure(pred, gt, cfg: Optional[BoundaryMatchConfig] = None) -> float:
    pred, gt = _check_pair(pred, gt)
    cfg = cfg or BoundaryMatchConfig.for_shape(gt.shape)
    pb, gb = kernels.mask_boundary(pred), kernels.mask_boundary(gt)
    n_pred, n_gt = int(pb.sum()), int(gb.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    r = cfg.tolerance_radius
    matched_pred = kernels.confusion_counts(pb, kernels.dilate_disk(gb, r))[0]
    matched_gt = kernels.confusion_counts(gb, kernels.dilate_disk(pb, r))[0]
    precision, recall = matched_pred / n_pred, matched_gt / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def saliency_f_measure(pred, gt, beta2: float = 1.0) -> float:
    """Weighted harmonic mean of pixel precision and recall (``beta2=0.3`` for the saliency convention)."""
    pred, gt = _check_pair(pred, gt)
    tp, fp, fn, _ = kernels.confusion_counts(pred, gt)
    if tp + fp == 0 and tp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def mean_absolute_error(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    pred = pred.astype(np.float64)
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise InvalidArgumentError("predictions must lie in [0, 1]")
    return float(np.mean(np.abs(pred - (gt != 0))))


@dataclass
class SequenceScores:
    frames: int
    J: Optional[float] = None
    F: Optional[float] = None
    F_measure: Optional[float] = None
    MAE: Optional[float] = None


@dataclass
class EvalReport:
    protocol: str
    J_mean: Optional[float] = None
    F_mean: Optional[float] = None
    JF: Optional[float] = None
    F_measure: Optional[float] = None
    MAE: Optional[float] = None
    per_sequence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_sequence"] = {k: asdict(v) for k, v in sorted(self.per_sequence.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        cols = ("J", "F", "F_measure", "MAE")
        fmt = lambda v: "    -   " if v is None else f"{v:8.4f}"  # noqa: E731
        lines = [f"{'sequence':<24}{'frames':>7}  " + "  ".join(f"{c:>8}" for c in cols)]
        for name, s in sorted(self.per_sequence.items()):
            lines.append(f"{name:<24}{s.frames:>7}  " + "  ".join(fmt(getattr(s, c)) for c in cols))
        total = sum(s.frames for s in self.per_sequence.values())
        agg = (self.J_mean, self.F_mean, self.F_measure, self.MAE)
        lines.append(f"{'mean':<24}{total:>7}  " + "  ".join(fmt(v) for v in agg))
        if self.JF is not None:
            lines.append(f"J&F = {self.JF:.4f}")
        return "\n".join(lines) + "\n"


def _check_names(pred_sequences, gt_sequences):
    missing = sorted(set(gt_sequences) - set(pred_sequences))
    extra = sorted(set(pred_sequences) - set(gt_sequences))
    if missing or extra:
        raise InvalidArgumentError(f"sequence mismatch: missing predictions {missing}, unknown predictions {extra}")
    if not gt_sequences:
        raise InvalidArgumentError("no sequences to evaluate")


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def evaluate_davis(
    pred_sequences: Mapping[str, np.ndarray],
    gt_sequences: Mapping[str, np.ndarray],
    exclude_first_last: bool = False,
    boundary: Optional[BoundaryMatchConfig] = None,
    workers: int = 1,
) -> EvalReport:
    """Mean J and boundary F per sequence, then over sequences; JF is their mean."""
    _check_names(pred_sequences, gt_sequences)

    def score(name):
        pred, gt = np.asarray(pred_sequences[name]), np.asarray(gt_sequences[name])
        if pred.shape != gt.shape:
            raise InvalidArgumentError(f"{name}: prediction shape {pred.shape} != ground truth {gt.shape}")
        frames = range(1, len(gt) - 1) if exclude_first_last and len(gt) > 2 else range(len(gt))
        cfg = boundary or BoundaryMatchConfig.for_shape(gt.shape)
        js = [region_jaccard(pred[f], gt[f]) for f in frames]
        fs = [boundary_f_measure(pred[f], gt[f], cfg) for f in frames]
        return name, SequenceScores(len(js), J=float(np.mean(js)), F=float(np.mean(fs)))

    per = dict(_map(score, sorted(gt_sequences), workers))
    J = float(np.mean([s.J for s in per.values()]))
    F = float(np.mean([s.F for s in per.values()]))
    return EvalReport("davis", J_mean=J, F_mean=F, JF=(J + F) / 2, per_sequence=per)


def _annotated(gt) -> dict:
    """Frame index -> mask, from a dense array or a sparse mapping (``None`` = unannotated)."""
    if isinstance(gt, Mapping):
        return {int(k): np.asarray(v) for k, v in gt.items() if v is not None}
    if isinstance(gt, (list, tuple)):
        return {i: np.asarray(v) for i, v in enumerate(gt) if v is not None}
    return {i: frame for i, frame in enumerate(np.asarray(gt))}


def evaluate_saliency(
    pred_sequences: Mapping[str, np.ndarray],
    gt_sequences: Mapping[str, object],
    annotated_frames_only: bool = True,
    threshold: float = 0.5,
    beta2: float = 1.0,
    mae_on_probabilities: bool = False,
    workers: int = 1,
) -> EvalReport:
    """F-measure and MAE over annotated frames, averaged per sequence then overall.

    Predictions may be binary masks or probabilities; they are thresholded
    (strictly above ``threshold``) for the F-measure, and for MAE unless
    ``mae_on_probabilities``.
    """
    _check_names(pred_sequences, gt_sequences)

    def score(name):
        pred = np.asarray(pred_sequences[name], dtype=np.float64)
        gts = _annotated(gt_sequences[name])
        if not annotated_frames_only and len(gts) != len(pred):
            raise InvalidArgumentError(f"{name}: dense evaluation needs every frame annotated")
        if not gts:
            raise InvalidArgumentError(f"{name}: no annotated frames")
        if max(gts) >= len(pred):
            raise InvalidArgumentError(f"{name}: annotation at frame {max(gts)} beyond {len(pred)} predictions")
        fm, mae = [], []
        for f, gt in sorted(gts.items()):
            binary = pred[f] > threshold
            fm.append(saliency_f_measure(binary, gt, beta2))
            mae.append(mean_absolute_error(pred[f] if mae_on_probabilities else binary, gt))
        return name, SequenceScores(len(fm), F_measure=float(np.mean(fm)), MAE=float(np.mean(mae)))

    per = dict(_map(score, sorted(gt_sequences), workers))
    return EvalReport(
        "saliency",
        F_measure=float(np.mean([s.F_measure for s in per.values()])),
        MAE=float(np.mean([s.MAE for s in per.values()])),
        per_sequence=per,
    )
