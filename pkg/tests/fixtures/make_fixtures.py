"""Regenerate the tiny on-disk fixtures (deterministic).

    python tests/fixtures/make_fixtures.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).parent
SIZE = 64


def textured_background(rng, size=SIZE):
    base = rng.integers(40, 120, size=(size, size, 3))
    return base.astype(np.uint8)


def disk(size, cy, cx, r):
    yy, xx = np.mgrid[:size, :size]
    return ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r


def paint(img, mask, rng, color=(220, 80, 40)):
    img[mask] = np.clip(np.array(color) + rng.integers(-20, 20, size=(mask.sum(), 3)), 0, 255)


def make_images(root):
    rng = np.random.default_rng(0)
    for i in range(2):
        img = textured_background(rng)
        instances = [disk(SIZE, 20 + 20 * i, 24, 9), disk(SIZE, 40 - 10 * i, 44, 8)]
        for m in instances:
            paint(img, m, rng)
        (root / "images").mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(root / "images" / f"img{i}.png")
        inst_dir = root / "instances" / f"img{i}"
        inst_dir.mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(instances):
            Image.fromarray(m.astype(np.uint8) * 255).save(inst_dir / f"{k}.png")


def make_davis(root):
    rng = np.random.default_rng(1)
    seqs = {"blob-left": (10, 20, 18, 1.5), "blob-down": (12, 18, 32, -1.0)}
    for name, (n, cy, cx, v) in seqs.items():
        bg = textured_background(rng)
        for f in range(n):
            m = disk(SIZE, cy + (0 if v > 0 else -v * f), cx + (v * f if v > 0 else 0), 10)
            img = bg.copy()
            paint(img, m, rng)
            frames, annos = root / "JPEGImages" / name, root / "Annotations" / name
            frames.mkdir(parents=True, exist_ok=True)
            annos.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img).save(frames / f"{f:05d}.jpg", quality=95)
            Image.fromarray(m.astype(np.uint8) * 255).save(annos / f"{f:05d}.png")
    (root / "ImageSets").mkdir(exist_ok=True)
    (root / "ImageSets" / "val.txt").write_text("\n".join(sorted(seqs)) + "\n")


if __name__ == "__main__":
    make_images(HERE / "images")
    make_davis(HERE / "davis")
