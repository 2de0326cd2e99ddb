"""numpy/scipy implementations of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np
from scipy import ndimage


def confusion_counts(pred, gt):
    p = np.asarray(pred) != 0
    g = np.asarray(gt) != 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def mask_boundary(mask):
    m = np.asarray(mask) != 0
    # edge padding: pixels outside the image never count as background
    padded = np.pad(m, 1, mode="edge")
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (m & ~interior).astype(np.uint8)


def disk(radius):
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (y * y + x * x) <= radius * radius


def dilate_disk(bmap, radius):
    b = np.asarray(bmap) != 0
    if radius <= 0 or not b.any():
        return b.astype(np.uint8)
    return ndimage.binary_dilation(b, structure=disk(radius)).astype(np.uint8)


def accumulate_windows(starts, valid, probs, length):
    probs = np.asarray(probs, dtype=np.float64)
    sums = np.zeros((length,) + probs.shape[2:], dtype=np.float64)
    counts = np.zeros(length, dtype=np.int64)
    for k, (s, v) in enumerate(zip(starts, valid)):
        sums[s : s + v] += probs[k, :v]
        counts[s : s + v] += 1
    return sums, counts
