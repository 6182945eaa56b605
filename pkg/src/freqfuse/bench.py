"""Wall-clock micro-benchmarks of the hot ops on both kernel backends."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from . import modules as M
from . import spectral as S
from .params import ParamStore
from .tensor import Tensor

CHANNELS = 16
WARMUP = 5
RUNS = 30


@dataclass
class BenchResult:
    op: str
    size: tuple[int, int]
    backend: str
    median_ns: float
    cov: float
    runs: int

    def line(self):
        return (f"op={self.op} size={self.size[0]}x{self.size[1]} backend={self.backend} "
                f"median_ns={self.median_ns:.0f} cov={self.cov:.3f} runs={self.runs}")


def _setup(op, h, w, rng):
    x = Tensor(rng.standard_normal((1, CHANNELS, h, w)))
    store = ParamStore(0)
    if op == "fft2":
        return lambda: S.fft2(x)
    if op == "ifft2":
        s = S.fft2(x)
        return lambda: S.ifft2(s)
    if op == "conv3x3":
        spec = store.conv("c", CHANNELS, CHANNELS, 3)
        return lambda: nn.conv2d(x, spec)
    if op == "dwconv31":
        spec = store.conv("d", CHANNELS, CHANNELS, 31, depthwise=True)
        return lambda: nn.conv2d(x, spec)
    if op == "grid_sample":
        off = Tensor(rng.uniform(-2.0, 2.0, size=(1, 2, h, w)))
        return lambda: nn.grid_sample(x, off)
    if op == "ff":
        p = M.FFParams.build(store, "ff", CHANNELS, alpha=0.5)
        return lambda: M.ff_forward(x, p)
    raise KeyError(op)


OPS = ("fft2", "ifft2", "conv3x3", "dwconv31", "grid_sample", "ff")


def measure(fn, runs=RUNS, warmup=WARMUP):
    for _ in range(warmup):
        fn()
    times = np.empty(runs)
    for i in range(runs):
        t0 = time.perf_counter_ns()
        fn()
        times[i] = time.perf_counter_ns() - t0
    median = float(np.median(times))
    # robust spread: scaled MAD, so a single preempted run does not dominate
    mad = 1.4826 * float(np.median(np.abs(times - median)))
    return median, mad / median


def run(op, size, backend, runs=RUNS, warmup=WARMUP, seed=0) -> BenchResult:
    if runs < 1:
        raise ValueError("runs must be >= 1")
    h, w = size
    rng = np.random.default_rng(seed)
    with kernels.backend_scope(backend):
        fn = _setup(op, h, w, rng)
        median, cov = measure(fn, runs, warmup)
    return BenchResult(op, size, backend, median, cov, runs)
