"""Numerical probes: finite-difference gradient checks and Jacobian footprints."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def finite_difference_gradcheck(op: Callable, x: torch.Tensor, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    The output is reduced to a scalar through a fixed random projection
    ``v``; every input element is then perturbed by ``+-eps``. The error is
    ``max|g_auto - g_fd| / max(max|g_auto|, max|g_fd|)``.
    """
    x = x.detach().to(torch.float64).clone()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        v = torch.randn(op(x).shape, generator=gen, dtype=torch.float64)

    xg = x.clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad((op(xg) * v).sum(), xg)

    numeric = torch.zeros_like(x)
    flat, nflat = x.view(-1), numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = (op(x) * v).sum().item()
            flat[i] = orig - eps
            down = (op(x) * v).sum().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-300)
    return (analytic - numeric).abs().max().item() / scale


@torch.no_grad()
def jacobian_footprint(
    fn: Callable,
    x: torch.Tensor,
    out_index: Sequence[int],
    tol: float = 1e-9,
    chunk: int = 64,
    seed: int = 0,
) -> np.ndarray:
    """Boolean (T, H, W) map of input positions that move output voxel ``out_index``.

    ``x`` is (1, C, T, H, W); each position is perturbed across all channels
    (batched), and a position counts when any output channel at
    ``out_index = (t, h, w)`` changes by more than ``tol``.
    """
    x = x.detach()
    gen = torch.Generator().manual_seed(seed)
    base = fn(x)[0, :, out_index[0], out_index[1], out_index[2]]
    C, T, H, W = x.shape[1:]
    positions = [(t, h, w) for t in range(T) for h in range(H) for w in range(W)]
    hit = np.zeros((T, H, W), dtype=bool)
    for i in range(0, len(positions), chunk):
        batch = positions[i : i + chunk]
        xs = x.repeat(len(batch), 1, 1, 1, 1)
        for b, (t, h, w) in enumerate(batch):
            xs[b, :, t, h, w] += 1.0 + torch.rand(C, generator=gen, dtype=x.dtype)
        out = fn(xs)[:, :, out_index[0], out_index[1], out_index[2]]
        moved = (out - base).abs().amax(dim=1) > tol
        for b, (t, h, w) in enumerate(batch):
            hit[t, h, w] = bool(moved[b])
    return hit


def footprint_extent(hit: np.ndarray) -> tuple[int, int, int]:
    """Bounding-box size (dt, dh, dw) of a footprint map."""
    idx = np.argwhere(hit)
    if len(idx) == 0:
        return (0, 0, 0)
    return tuple(int(v) for v in idx.max(axis=0) - idx.min(axis=0) + 1)
