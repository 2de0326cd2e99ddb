"""Parameter and runtime measurement, and the compiled-vs-Python kernel comparison."""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import kernels
from .encoder import count_parameters
from .errors import BenchError, InvalidArgumentError

DEVICE_ENV = "VOS3D_DEVICE"


def select_device(name: str | None = None) -> torch.device:
    """Device from ``name``, else ``$VOS3D_DEVICE``, else CPU."""
    name = name or os.environ.get(DEVICE_ENV) or "cpu"
    if name.startswith("cuda") and not torch.cuda.is_available():
        raise BenchError(f"device {name!r} requested but CUDA is not available")
    return torch.device(name)


def device_descriptor(device: torch.device) -> str:
    if device.type == "cuda":
        return f"cuda:{torch.cuda.get_device_name(device)}"
    return f"cpu:{platform.machine()} ({torch.get_num_threads()} threads)"


@dataclass(frozen=True)
class BenchReport:
    parameters: int
    seconds_per_frame: float
    clip_shape: tuple[int, int, int]  # (T, H, W)
    device: str
    warmup_iterations: int
    timed_iterations: int

    def __post_init__(self):
        if not self.seconds_per_frame > 0:
            raise InvalidArgumentError("seconds_per_frame must be positive")
        if self.timed_iterations < 10 or self.warmup_iterations < 3:
            raise InvalidArgumentError("need >= 3 warm-up and >= 10 timed iterations")

    def to_dict(self) -> dict:
        return asdict(self)


def _is_oom(exc: BaseException) -> bool:
    return isinstance(exc, MemoryError) or "out of memory" in str(exc).lower()


@torch.no_grad()
def bench_runtime(model, resolution=(480, 854), frames: int = 8, warmup: int = 3, iterations: int = 10,
                  device=None, seed: int = 0) -> BenchReport:
    """Median forward time per frame on random input of shape (frames, H, W)."""
    H, W = resolution
    if min(H, W, frames) < 1:
        raise InvalidArgumentError(f"bad bench shape {(frames, H, W)}")
    device = select_device(device) if not isinstance(device, torch.device) else device
    model = model.to(device).eval()
    gen = torch.Generator().manual_seed(seed)
    times = []
    try:
        x = torch.randn(1, 3, frames, H, W, generator=gen).to(device)
        for i in range(max(3, warmup) + max(10, iterations)):
            if device.type == "cuda":
                torch.cuda.synchronize(device)
            start = time.perf_counter()
            model(x)
            if device.type == "cuda":
                torch.cuda.synchronize(device)
            if i >= max(3, warmup):
                times.append(time.perf_counter() - start)
    except (RuntimeError, MemoryError) as exc:
        if _is_oom(exc):
            raise BenchError(
                f"out of memory at {W}x{H}x{frames}; retry with a smaller --resolution or fewer --frames"
            ) from exc
        raise
    return BenchReport(
        parameters=count_parameters(model),
        seconds_per_frame=statistics.median(times) / frames,
        clip_shape=(frames, H, W),
        device=device_descriptor(device),
        warmup_iterations=max(3, warmup),
        timed_iterations=len(times),
    )


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(size: int = 480, frames: int = 8, repeat: int = 5, seed: int = 0) -> dict:
    """Best-of-``repeat`` seconds per kernel for each available backend."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    a = ((yy - size / 2) ** 2 + (xx - size / 2) ** 2 < (size / 3) ** 2).astype(np.uint8)
    b = np.roll(a, 3, axis=1)
    noisy = (rng.random((size, size)) < 0.5).astype(np.uint8)
    probs = rng.random((4, frames, size // 4, size // 4))
    step = max(1, frames - 3)
    starts, valid = [i * step for i in range(4)], [frames] * 4
    length = starts[-1] + frames

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        pass
    results = {}
    for name in backends:
        results[name] = {
            "confusion_counts": _time(lambda: kernels.confusion_counts(noisy, a, backend=name), repeat),
            "mask_boundary": _time(lambda: kernels.mask_boundary(a, backend=name), repeat),
            "dilate_disk": _time(lambda: kernels.dilate_disk(kernels.mask_boundary(b), 8, backend=name), repeat),
            "accumulate_windows": _time(lambda: kernels.accumulate_windows(starts, valid, probs, length, backend=name), repeat),
        }
    return results
