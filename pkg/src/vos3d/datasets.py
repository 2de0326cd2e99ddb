"""Frame/mask directory I/O and the on-disk dataset layouts.

davis:            <root>/JPEGImages/<seq>/<NNNNN>.jpg, <root>/Annotations/<seq>/<NNNNN>.png,
                  optional <root>/ImageSets/<split>.txt listing sequence names
sparse:           same as davis, but annotations may exist for a subset of frames
image-instances:  <root>/images/<name>.{jpg,png}, <root>/instances/<name>/<k>.png
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DatasetError

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")
LAYOUTS = ("davis", "sparse", "image-instances")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_mask(path) -> np.ndarray:
    """Any non-zero pixel is foreground."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr.max(axis=-1)
    return (arr != 0).astype(np.uint8)


def read_frames(directory) -> tuple[np.ndarray, list[str]]:
    """Stack of 8-bit RGB frames (T, H, W, 3) and their file stems."""
    paths = list_images(directory)
    if not paths:
        raise DatasetError(f"no frames in {directory}")
    return np.stack([read_rgb(p) for p in paths]), [p.stem for p in paths]


def read_masks(directory) -> dict[str, np.ndarray]:
    return {p.stem: read_mask(p) for p in list_images(directory)}


def write_masks(directory, masks: np.ndarray, stems: Sequence[str]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for mask, stem in zip(masks, stems):
        Image.fromarray((np.asarray(mask) != 0).astype(np.uint8) * 255, mode="L").save(directory / f"{stem}.png")


def write_probabilities(directory, probs: np.ndarray, stems: Sequence[str]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for p, stem in zip(probs, stems):
        np.save(directory / f"{stem}.npy", np.asarray(p, dtype=np.float32))


def write_frames(directory, frames: np.ndarray, stems: Optional[Sequence[str]] = None, suffix: str = ".png") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stems = stems or [f"{i:05d}" for i in range(len(frames))]
    for frame, stem in zip(frames, stems):
        Image.fromarray(np.clip(np.rint(frame), 0, 255).astype(np.uint8)).save(directory / f"{stem}{suffix}")


class VideoLayout:
    """DAVIS-style root; ``sparse=True`` allows unannotated frames."""

    def __init__(self, root, sparse: bool = False, split: Optional[str] = None):
        self.root = Path(root)
        self.sparse = sparse
        self.split = split
        if not (self.root / "JPEGImages").is_dir() and not (self.root / "Annotations").is_dir():
            raise DatasetError(f"{root} has neither JPEGImages/ nor Annotations/")

    def sequences(self) -> list[str]:
        if self.split:
            listing = self.root / "ImageSets" / f"{self.split}.txt"
            if not listing.is_file():
                raise DatasetError(f"split file not found: {listing}")
            return [line.strip() for line in listing.read_text().splitlines() if line.strip()]
        base = self.root / "JPEGImages"
        if not base.is_dir():
            base = self.root / "Annotations"
        return sorted(p.name for p in base.iterdir() if p.is_dir())

    def frames(self, seq: str) -> tuple[np.ndarray, list[str]]:
        return read_frames(self.root / "JPEGImages" / seq)

    def annotations(self, seq: str, stems: Optional[Sequence[str]] = None):
        """Dense (T, H, W) array, or frame index -> mask when sparse."""
        masks = read_masks(self.root / "Annotations" / seq)
        if stems is None:
            stems = sorted(masks)
        if self.sparse:
            index = {s: i for i, s in enumerate(stems)}
            unknown = sorted(set(masks) - set(index))
            if unknown:
                raise DatasetError(f"{seq}: annotations without frames: {unknown[:5]}")
            return {index[s]: m for s, m in masks.items()}
        missing = [s for s in stems if s not in masks]
        if missing:
            raise DatasetError(f"{seq}: missing annotations for frames {missing[:5]}")
        return np.stack([masks[s] for s in stems])


def read_image_instances(root) -> list[tuple[str, np.ndarray, list[np.ndarray]]]:
    """(name, image, instance masks) for every image under ``<root>/images``."""
    root = Path(root)
    out = []
    for path in list_images(root / "images"):
        inst_dir = root / "instances" / path.stem
        masks = [read_mask(p) for p in list_images(inst_dir)] if inst_dir.is_dir() else []
        if not masks:
            raise DatasetError(f"no instance masks for {path.name} in {inst_dir}")
        out.append((path.stem, read_rgb(path), masks))
    if not out:
        raise DatasetError(f"no images under {root / 'images'}")
    return out


def read_prediction_dir(directory) -> dict[str, tuple[np.ndarray, list[str]]]:
    """Binary predictions per sequence subdirectory: name -> (masks, stems)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"not a directory: {directory}")
    out = {}
    for seq in sorted(p for p in directory.iterdir() if p.is_dir()):
        paths = list_images(seq)
        if paths:
            out[seq.name] = (np.stack([read_mask(p) for p in paths]), [p.stem for p in paths])
    return out
