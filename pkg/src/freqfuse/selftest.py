"""Release-gate suites: oracle equivalence, spectral identities, gradient checks.

Each suite returns its worst observed error against a tolerance. Oracles here
are deliberately naive (explicit DFT matrices, loop convolutions, exhaustive
assignment) so they share no code path with the library under test.
"""

from __future__ import annotations

import io
import itertools
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import boxes as B
from . import checkpoint, kernels, nn, scenes
from . import gradcheck as GC
from . import head as H
from . import modules as M
from . import spectral as S
from .params import ParamStore
from .tensor import Tensor


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures and self.max_error <= self.tolerance

    def line(self):
        status = "true" if self.passed else "false"
        text = f"suite={self.name} max_err={self.max_error:.3e} tol={self.tolerance:.0e} pass={status}"
        if not self.passed:
            named = self.failures or [f"max_err {self.max_error:.3e} > {self.tolerance:.0e}"]
            text += " failed=" + ",".join(named)
        return text


def _dft_matrix(n, inverse=False):
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def naive_dft2(x):
    """O(n²) per axis matrix DFT of the last two axes."""
    h, w = x.shape[-2:]
    return _dft_matrix(h) @ x @ _dft_matrix(w).T


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            y[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return y + (0.0 if b is None else b.reshape(1, o, 1, 1))


def _interval_iou(a, b):
    def overlap(c1, s1, c2, s2):
        lo = max(c1 - s1 / 2, c2 - s2 / 2)
        hi = min(c1 + s1 / 2, c2 + s2 / 2)
        return max(0.0, hi - lo)
    inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3])
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def suite_fft_roundtrip(rng):
    err = 0.0
    for h, w in ((1, 1), (2, 8), (8, 8), (16, 32), (64, 64)):
        x = rng.standard_normal((2, 3, h, w))
        back = S.ifft2(S.fft2(Tensor(x))).data
        err = max(err, float(np.abs(back - x).max()))
    return SuiteResult("fft-roundtrip", err, 1e-10)


def suite_parseval(rng):
    err = 0.0
    for h, w in ((4, 4), (8, 16), (32, 32)):
        x = rng.standard_normal((1, 2, h, w))
        energy = float(np.sum(x * x))
        spec = float(np.sum(np.abs(S.fft2(Tensor(x)).z) ** 2)) / (h * w)
        err = max(err, abs(spec - energy) / energy)
    return SuiteResult("parseval", err, 1e-9)


def suite_naive_dft(rng):
    err = 0.0
    for h, w in ((1, 2), (2, 2), (4, 8), (16, 16), (32, 32)):
        x = rng.standard_normal((1, 2, h, w))
        err = max(err, float(np.abs(S.fft2(Tensor(x)).z - naive_dft2(x)).max()))
        z = rng.standard_normal((1, 2, h, w)) + 1j * rng.standard_normal((1, 2, h, w))
        ref = _dft_matrix(h, True) @ z @ _dft_matrix(w, True).T / (h * w)
        err = max(err, float(np.abs(S.ifft2_complex(S.Spectrum(z)).z - ref).max()))
    return SuiteResult("naive-dft", err, 1e-10)


def suite_backend_parity(rng):
    if len(kernels.available_backends()) < 2:
        return SuiteResult("backend-parity", 0.0, 1e-12)
    from .kernels import _ckernels, pykernels
    err = 0.0
    z = rng.standard_normal((6, 16, 32)) + 1j * rng.standard_normal((6, 16, 32))
    for inverse in (False, True):
        err = max(err, float(np.abs(_ckernels.fft2_planes(z, inverse) - pykernels.fft2_planes(z, inverse)).max()))
    x = rng.standard_normal((2, 3, 9, 9))
    w = rng.standard_normal((3, 7, 7))
    err = max(err, float(np.abs(_ckernels.dwconv_forward(x, w, 3) - pykernels.dwconv_forward(x, w, 3)).max()))
    g = rng.standard_normal((2, 3, 9, 9))
    for a, b in zip(_ckernels.dwconv_backward(g, x, w, 3), pykernels.dwconv_backward(g, x, w, 3)):
        err = max(err, float(np.abs(a - b).max()))
    off = rng.uniform(-2.5, 2.5, size=(2, 2, 9, 9))
    err = max(err, float(np.abs(_ckernels.grid_sample_forward(x, off) - pykernels.grid_sample_forward(x, off)).max()))
    for a, b in zip(_ckernels.grid_sample_backward(g, x, off), pykernels.grid_sample_backward(g, x, off)):
        err = max(err, float(np.abs(a - b).max()))
    return SuiteResult("backend-parity", err, 1e-10)


def suite_conv_oracle(rng):
    err = 0.0
    store = ParamStore(int(rng.integers(1 << 30)))
    for i, (k, stride, pad, dw) in enumerate(((3, 1, 1, False), (3, 2, 1, False), (1, 1, 0, False),
                                              (5, 1, 2, True), (31, 1, 15, True))):
        c = 3
        spec = store.conv(f"c{i}", c, c if dw else 4, k, stride=stride, padding=pad, depthwise=dw)
        spec.bias.data = rng.standard_normal(spec.bias.shape)
        x = rng.standard_normal((2, c, 8, 8))
        wt = spec.weight.data
        if dw:
            ref = np.concatenate([naive_conv2d(x[:, j:j + 1], wt[j:j + 1], spec.bias.data[0, j], stride, pad)
                                  for j in range(c)], axis=1)
        else:
            ref = naive_conv2d(x, wt, spec.bias.data, stride, pad)
        err = max(err, float(np.abs(nn.conv2d(Tensor(x), spec).data - ref).max()))
    return SuiteResult("conv-oracle", err, 1e-10)


def suite_pool_resample(rng):
    err = 0.0
    x = rng.standard_normal((2, 3, 8, 8))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    ref = np.array([[[[xp[a, b, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max() for j in range(4)]
                      for i in range(4)] for b in range(3)] for a in range(2)])
    err = max(err, float(np.abs(nn.max_pool(Tensor(x), 3, 2, 1).data - ref).max()))
    err = max(err, float(np.abs(nn.grid_sample(Tensor(x), Tensor(np.zeros((2, 2, 8, 8)))).data - x).max()))
    # constant shift of one pixel right/down reads the neighbour, border clamped
    off = np.ones((2, 2, 8, 8))
    shifted = x[:, :, np.minimum(np.arange(8) + 1, 7)][:, :, :, np.minimum(np.arange(8) + 1, 7)]
    err = max(err, float(np.abs(nn.grid_sample(Tensor(x), Tensor(off)).data - shifted).max()))
    up = nn.bilinear_upsample(Tensor(x), 8, 8).data
    err = max(err, float(np.abs(up - x).max()))
    return SuiteResult("pool-resample", err, 1e-12)


def suite_identities(rng):
    store = ParamStore(int(rng.integers(1 << 30)))
    p = M.FFParams.build(store, "ff", 4)
    x = rng.standard_normal((2, 4, 8, 8))
    err = float(np.abs(M.ff_forward(Tensor(x), p).data - x).max())
    a = rng.uniform(0.2, 0.8, size=(200, 4))
    b = rng.uniform(0.2, 0.8, size=(200, 4))
    a[:, 2:] *= 0.3
    b[:, 2:] *= 0.3
    err = max(err, float(np.abs(B.inner_iou(a, b, 1.0) - B.iou(a, b)).max()))
    err = max(err, float(np.abs(B.inner_siou_loss(a, a)).max()))
    spec = store.conv("eye", 4, 4, 1)
    spec.weight.data = np.eye(4).reshape(4, 4, 1, 1)
    err = max(err, float(np.abs(nn.conv2d(Tensor(x), spec).data - x).max()))
    return SuiteResult("identity-fixed-points", err, 1e-12)


def suite_box_geometry(rng):
    a = np.column_stack([rng.uniform(0, 1, (500, 2)), rng.uniform(0.01, 0.5, (500, 2))])
    b = np.column_stack([rng.uniform(0, 1, (500, 2)), rng.uniform(0.01, 0.5, (500, 2))])
    ref = np.array([_interval_iou(p, q) for p, q in zip(a, b)])
    err = float(np.abs(B.iou(a, b) - ref).max())
    failures = []
    if np.any(B.giou(a, b) > B.iou(a, b) + 1e-15):
        failures.append("giou<=iou")
    t = rng.uniform(-3, 3, size=2)
    s = 2.7
    moved_a = np.column_stack([a[:, :2] + t, a[:, 2:]])
    moved_b = np.column_stack([b[:, :2] + t, b[:, 2:]])
    err = max(err, float(np.abs(B.inner_siou_loss(moved_a, moved_b) - B.inner_siou_loss(a, b)).max()))
    err = max(err, float(np.abs(B.inner_siou_loss(a * s, b * s) - B.inner_siou_loss(a, b)).max()))
    return SuiteResult("box-geometry", err, 1e-10, failures)


def suite_hungarian(rng):
    failures = []
    err = 0.0
    for trial in range(40):
        q = int(rng.integers(1, 7))
        g = int(rng.integers(1, q + 1))
        cost = rng.uniform(0, 10, size=(q, g))
        rows, cols = H.hungarian(cost)
        got = float(cost[rows, cols].sum())
        best = min(sum(cost[p[j], j] for j in range(g)) for p in itertools.permutations(range(q), g))
        err = max(err, abs(got - best))
        if len(set(rows.tolist())) != g:
            failures.append(f"hungarian-trial-{trial}")
    return SuiteResult("hungarian-optimality", err, 1e-12, failures)


def suite_ap(rng):
    # two images, one class: hits at ranks 1, 3; one ground truth missed entirely
    gt = [B.BoxSet([[0.2, 0.2, 0.1, 0.1], [0.7, 0.7, 0.1, 0.1]], [0, 0]),
          B.BoxSet([[0.5, 0.5, 0.2, 0.2]], [0])]
    dets = [B.BoxSet([[0.2, 0.2, 0.1, 0.1], [0.9, 0.1, 0.05, 0.05]], [0, 0], [0.9, 0.8]),
            B.BoxSet([[0.5, 0.5, 0.2, 0.2]], [0], [0.7])]
    # PR points: (1/3, 1), (1/3, 1/2), (2/3, 2/3) -> envelope 1 up to r=1/3, 2/3 up to 2/3
    r = np.linspace(0, 1, 101)
    expected = float(np.where(r <= 1 / 3, 1.0, np.where(r <= 2 / 3, 2 / 3, 0.0)).mean())
    err = abs(H.average_precision(dets, gt, 0.5) - expected)
    err = max(err, abs(H.average_precision(gt, gt, 0.5) - 1.0))
    return SuiteResult("average-precision", err, 1e-12)


def suite_serialization(rng):
    failures = []
    data = scenes.generate(scenes.SceneSpec(size=16, seed=int(rng.integers(1000)), min_objects=1,
                                            max_objects=3, max_object_px=6), 3)
    blob = scenes.encode(data)
    if scenes.encode(scenes.decode(blob)) != blob:
        failures.append("dataset-byte-stable")
    store = ParamStore(3)
    store.conv("a", 2, 3, 3)
    store.scalar("s", 0.1)
    ck = checkpoint.encode(store.state())
    back = checkpoint.decode(ck)
    if checkpoint.encode(back) != ck:
        failures.append("checkpoint-byte-stable")
    err = max(float(np.abs(back[k] - v).max() / max(1e-30, np.abs(v).max()))
              for k, v in store.state().items() if np.abs(v).max() > 0)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.fds")
        scenes.save(data, path)
        if scenes.load(path) != data:
            failures.append("dataset-file-roundtrip")
    return SuiteResult("serialization", err, 2 ** -23, failures)


def suite_gradcheck(rng, seed=0):
    failures = []
    err = 0.0
    for rep in GC.run_all(seed):
        err = max(err, rep.max_rel_error)
        if not rep.passed:
            failures.append(f"gradcheck:{rep.name}")
    return SuiteResult("gradcheck", err, GC.TOL, failures)


SUITES: list[tuple[str, Callable]] = [
    ("fft-roundtrip", suite_fft_roundtrip),
    ("parseval", suite_parseval),
    ("naive-dft", suite_naive_dft),
    ("backend-parity", suite_backend_parity),
    ("conv-oracle", suite_conv_oracle),
    ("pool-resample", suite_pool_resample),
    ("identity-fixed-points", suite_identities),
    ("box-geometry", suite_box_geometry),
    ("hungarian-optimality", suite_hungarian),
    ("average-precision", suite_ap),
    ("serialization", suite_serialization),
    ("gradcheck", suite_gradcheck),
]


def run(seed: int = 0, out: io.TextIOBase | None = None) -> list[SuiteResult]:
    results = []
    for name, fn in SUITES:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(name)] + [ord(c) for c in name]))
        try:
            res = fn(rng)
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, float("inf"), 0.0, [f"{name}:{type(exc).__name__}: {exc}"])
        results.append(res)
        if out is not None:
            print(res.line(), file=out, flush=True)
    return results
