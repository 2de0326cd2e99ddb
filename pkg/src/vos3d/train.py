"""Loss, learning-rate schedule, two-stage training loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .core import MaskSequence, NormalizationStats, VideoTensor, normalize_clip
from .decoder import DecoderConfig
from .encoder import EncoderConfig, clip_to_tensor
from .errors import CheckpointError, ConfigError, InvalidArgumentError, ShapeError, TrainingError
from .network import ModelConfig, SegmentationNet
from .pipeline import sample_training_clip
from .synth import SynthConfig, TransformSpec, synthesize_clip
from .verify import finite_difference_gradcheck  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOSSES = ("binary-cross-entropy", "two-class-cross-entropy")
STAGES = ("images", "video")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-5
    decay_gamma: float = 0.95
    epochs: int = 20
    batch_size: int = 2
    iterations_per_epoch: Optional[int] = None  # default: one pass over the dataset
    T_c: int = 8
    S: int = 32
    stage: str = "images"
    loss: str = "binary-cross-entropy"
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not 0 < self.decay_gamma <= 1:
            raise ConfigError(f"decay_gamma must lie in (0, 1], got {self.decay_gamma}")
        if self.epochs < 1 or self.batch_size < 1 or self.T_c < 1 or self.S < 1:
            raise ConfigError("epochs, batch_size, T_c and S must be positive")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ConfigError("iterations_per_epoch must be positive")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")


def lr_at_epoch(initial_lr: float, gamma: float, epoch: int) -> float:
    if epoch < 0:
        raise InvalidArgumentError("epoch must be >= 0")
    return initial_lr * gamma**epoch


def _as_target(gt, like: torch.Tensor) -> torch.Tensor:
    data = gt.data if isinstance(gt, MaskSequence) else gt
    target = torch.as_tensor(np.asarray(data) if not torch.is_tensor(data) else data).to(like.dtype)
    if target.shape != like.shape:
        raise ShapeError(f"logits shape {tuple(like.shape)} != mask shape {tuple(target.shape)}")
    return target


def pixel_cross_entropy(logits: torch.Tensor, gt) -> torch.Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a 0/1 mask.

    Uses ``max(l, 0) - l*y + log1p(exp(-|l|))``, which never overflows.
    """
    target = _as_target(gt, logits)
    if not torch.isfinite(logits).all():
        raise InvalidArgumentError("logits contain non-finite values")
    return (logits.clamp(min=0) - logits * target + torch.log1p(torch.exp(-logits.abs()))).mean()


def two_class_cross_entropy(logits: torch.Tensor, gt) -> torch.Tensor:
    """Softmax cross-entropy over (background = 0, foreground = logit) class scores."""
    target = _as_target(gt, logits)
    if not torch.isfinite(logits).all():
        raise InvalidArgumentError("logits contain non-finite values")
    scores = torch.stack([torch.zeros_like(logits), logits], dim=1)
    return F.cross_entropy(scores, target.long())


LOSS_FNS = {"binary-cross-entropy": pixel_cross_entropy, "two-class-cross-entropy": two_class_cross_entropy}


# -- datasets -----------------------------------------------------------------


class ImageInstanceDataset:
    """Still images with instance masks, turned into clips by ``synthesize_clip``.

    With ``fixed=True`` each item is synthesized once (seeded by its index)
    and the same clip is returned on every visit.
    """

    stage = "images"

    def __init__(self, items, synth: Optional[SynthConfig] = None, fixed: bool = False, seed: int = 0):
        self.items = list(items)
        self.synth = synth
        self.fixed = fixed
        self.seed = seed
        self._cache: dict = {}

    def __len__(self):
        return len(self.items)

    def sample(self, index: int, rng, T_c: int, S: int):
        cfg = self.synth or SynthConfig(T_c=T_c)
        if cfg.T_c != T_c:
            cfg = SynthConfig(T_c=T_c, per_step=cfg.per_step)
        image, masks = self.items[index]
        if not self.fixed:
            return synthesize_clip(image, masks, cfg, rng)
        if index not in self._cache:
            self._cache[index] = synthesize_clip(image, masks, cfg, np.random.default_rng([self.seed, index]))
        return self._cache[index]


class VideoSequenceDataset:
    """Annotated videos; clips are drawn with :func:`sample_training_clip`."""

    stage = "video"

    def __init__(self, sequences):
        self.sequences = [(np.asarray(f), np.asarray(m)) for f, m in sequences]
        for frames, masks in self.sequences:
            if frames.shape[:3] != masks.shape:
                raise ShapeError(f"frames {frames.shape} and masks {masks.shape} disagree")

    def __len__(self):
        return len(self.sequences)

    def sample(self, index: int, rng, T_c: int, S: int):
        frames, masks = self.sequences[index]
        spec = sample_training_clip(len(frames), T_c, S, rng)
        idx = list(spec.indices)
        return VideoTensor(frames[idx].astype(np.float32)), MaskSequence(masks[idx])


# -- checkpoints --------------------------------------------------------------


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {"encoder": asdict(cfg.encoder), "decoder": asdict(cfg.decoder)}


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]))


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(model_config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CheckpointMeta:
    model_config: dict
    train_config: dict
    epoch: int
    normalization: dict
    config_hash: str
    format_version: int = FORMAT_VERSION
    optimizer_state: Optional[str] = None  # file name inside the checkpoint directory
    metrics: dict = field(default_factory=dict)
    history: list = field(default_factory=list)  # per-epoch {"epoch", "lr", "loss"}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def save_checkpoint(path, model: SegmentationNet, meta: CheckpointMeta, optimizer=None) -> Path:
    """Write weights, optional optimizer state and manifest; the directory appears atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        torch.save(model.state_dict(), tmp / "weights.pt")
        if optimizer is not None:
            torch.save(optimizer.state_dict(), tmp / "optimizer.pt")
            meta.optimizer_state = "optimizer.pt"
        (tmp / "manifest.json").write_text(meta.to_json())
        old = None
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
        os.replace(tmp, path)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_manifest(path) -> CheckpointMeta:
    manifest = Path(path) / "manifest.json"
    if not manifest.is_file():
        raise CheckpointError(f"no manifest.json in {path}")
    try:
        data = json.loads(manifest.read_text())
        meta = CheckpointMeta(**data)
    except (json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"malformed manifest in {path}: {exc}") from exc
    if meta.format_version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.format_version}")
    return meta


def load_checkpoint(path) -> tuple[SegmentationNet, CheckpointMeta]:
    meta = read_manifest(path)
    cfg = model_config_from_dict(meta.model_config)
    if config_hash(cfg) != meta.config_hash:
        raise CheckpointError("manifest config hash does not match its model config")
    model = SegmentationNet(cfg)
    state = torch.load(Path(path) / "weights.pt", map_location="cpu", weights_only=True)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"weights do not fit the manifest architecture: {exc}") from exc
    model.eval()
    return model, meta


# -- training -----------------------------------------------------------------


def _batch(dataset, indices, rng, cfg: TrainConfig, norm: NormalizationStats):
    clips, masks = [], []
    for i in indices:
        clip, mask = dataset.sample(int(i), rng, cfg.T_c, cfg.S)
        clips.append(clip_to_tensor(normalize_clip(clip, norm.mean, norm.std)))
        masks.append(torch.from_numpy(mask.data.astype(np.float32)))
    shapes = {tuple(c.shape) for c in clips}
    if len(shapes) != 1:
        raise ShapeError(f"clips in a batch differ in shape: {sorted(shapes)}")
    return torch.cat(clips), torch.stack(masks)


def train_stage(
    model: SegmentationNet,
    dataset,
    cfg: TrainConfig,
    out_dir=None,
    norm: Optional[NormalizationStats] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> CheckpointMeta:
    """Adam with per-epoch exponential decay over one training stage.

    ``dataset`` provides ``sample(index, rng, T_c, S)`` and a ``stage``
    attribute that must equal ``cfg.stage``. Writes ``epoch_XXX``
    checkpoints plus ``last`` under ``out_dir`` when given.
    """
    if getattr(dataset, "stage", cfg.stage) != cfg.stage:
        raise ConfigError(f"{type(dataset).__name__} feeds the {dataset.stage!r} stage, config says {cfg.stage!r}")
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    norm = norm or NormalizationStats()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr, weight_decay=cfg.weight_decay)
    loss_fn = LOSS_FNS[cfg.loss]
    iters = cfg.iterations_per_epoch or math.ceil(len(dataset) / cfg.batch_size)
    history = []
    meta = None
    model.train()
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.initial_lr, cfg.decay_gamma, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.array([], dtype=np.int64)
        losses = []
        for it in range(iters):
            if len(order) < cfg.batch_size:
                order = np.concatenate([order, rng.permutation(len(dataset))])
            indices, order = order[: cfg.batch_size], order[cfg.batch_size :]
            x, y = _batch(dataset, indices, rng, cfg, norm)
            try:
                logits = model(x)
            except ValueError as exc:
                if "more than 1 value per channel" not in str(exc):
                    raise
                raise TrainingError(
                    f"clip {tuple(x.shape[2:])} with batch size {len(x)} leaves a single value per channel "
                    "at the coarsest level; use a larger batch, more frames or a higher resolution"
                ) from exc
            loss = loss_fn(logits, y) if torch.isfinite(logits).all() else torch.tensor(float("nan"))
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, iteration {it} (lr={lr:g}, "
                    f"input range [{x.min().item():.3g}, {x.max().item():.3g}])"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        history.append(record)
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, record["loss"])
        if on_epoch is not None:
            on_epoch(record)
        meta = CheckpointMeta(
            model_config=model_config_to_dict(model.config),
            train_config=asdict(cfg),
            epoch=epoch,
            normalization={"mean": list(norm.mean), "std": list(norm.std)},
            config_hash=config_hash(model.config),
            metrics={"loss": record["loss"]},
            history=list(history),
        )
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / f"epoch_{epoch:03d}", model, meta, optimizer)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "last", model, meta, optimizer)
    model.eval()
    return meta


__all__ = [
    "CheckpointMeta",
    "ImageInstanceDataset",
    "TrainConfig",
    "TransformSpec",
    "VideoSequenceDataset",
    "config_hash",
    "finite_difference_gradcheck",
    "load_checkpoint",
    "lr_at_epoch",
    "pixel_cross_entropy",
    "save_checkpoint",
    "train_stage",
    "two_class_cross_entropy",
]
