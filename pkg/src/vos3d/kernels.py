"""Backend selection for the hot mask/merge loops.

The Cython extension is used when it was built; otherwise, or when
``VOS3D_PURE_PYTHON=1`` is set, the numpy/scipy versions are used.
"""

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("VOS3D_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _u8(a):
    return np.ascontiguousarray(np.asarray(a) != 0, dtype=np.uint8)


def confusion_counts(pred, gt, backend=None):
    """(TP, FP, FN, TN) pixel counts of two binary masks."""
    return get_backend(backend).confusion_counts(_u8(pred), _u8(gt))


def mask_boundary(mask, backend=None):
    """Foreground pixels with a background 4-neighbour inside the image."""
    return get_backend(backend).mask_boundary(_u8(mask))


def dilate_disk(bmap, radius, backend=None):
    return get_backend(backend).dilate_disk(_u8(bmap), int(radius))


def accumulate_windows(starts, valid, probs, length, backend=None):
    """Per-frame sums and window counts for window blocks placed at ``starts``.

    Only the first ``valid[k]`` frames of block ``k`` contribute.
    """
    return get_backend(backend).accumulate_windows(
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(valid, dtype=np.int64),
        np.ascontiguousarray(probs, dtype=np.float64),
        int(length),
    )
