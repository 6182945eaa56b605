"""Central finite-difference checks of the hand-written backward rules.

The op output is reduced to a scalar with a fixed random projection
``L = Σ r·y`` (real and imaginary parts separately for spectra), then every
input coordinate (or a seeded sample of them) is nudged by
``h = 1e-5·max(1, |x|)``. The error reported per input is normwise:
``‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖, ATOL)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import boxes as B
from . import head as H
from . import modules as M
from . import nn
from . import spectral as S
from . import tensor as T
from .params import ParamStore
from .spectral import Spectrum
from .tensor import Graph, Tensor

TOL = 1e-4
ATOL = 1e-5
REL_STEP = 1e-5


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    passed: bool
    checked: int = 0
    message: str = ""

    def line(self):
        text = (f"op={self.name} max_rel_err={self.max_rel_error:.3e} "
                f"pass={'true' if self.passed else 'false'}")
        return f"{text} note={self.message!r}" if self.message else text


def _outputs(y):
    return tuple(y) if isinstance(y, (tuple, list)) else (y,)


def _finite(outs):
    return all(np.all(np.isfinite(o.data)) for o in outs)


def _projection(outs, rng):
    proj = []
    for o in outs:
        scale = 1.0 / np.sqrt(max(1, o.data.size))
        if isinstance(o, Spectrum):
            proj.append((rng.standard_normal(o.shape) * scale, rng.standard_normal(o.shape) * scale))
        else:
            proj.append(rng.standard_normal(o.shape) * scale)
    return proj


def _project_values(outs, proj):
    total = 0.0
    for o, r in zip(outs, proj):
        if isinstance(o, Spectrum):
            total += float(np.sum(o.z.real * r[0]) + np.sum(o.z.imag * r[1]))
        else:
            total += float(np.sum(o.data * r))
    return total


def _project_graph(outs, proj):
    terms = []
    for o, r in zip(outs, proj):
        if isinstance(o, Spectrum):
            terms.append(T.sum(T.mul(S.real(o), T.constant(r[0]))))
            terms.append(T.sum(T.mul(S.imag(o), T.constant(r[1]))))
        else:
            terms.append(T.sum(T.mul(o, T.constant(r))))
    loss = terms[0]
    for t in terms[1:]:
        loss = T.add(loss, t)
    return loss


def _views(leaf, grad):
    # (array to perturb, matching analytic gradient) pairs; spectra split into re / im
    if isinstance(leaf, Spectrum):
        return [("re", grad.real), ("im", grad.imag)]
    return [(None, grad)]


def _perturb(leaf, part, i, value):
    if part is None:
        leaf.data.reshape(-1)[i] = value
    elif part == "re":
        flat = leaf.z.reshape(-1)
        flat[i] = value + 1j * flat[i].imag
    else:
        flat = leaf.z.reshape(-1)
        flat[i] = flat[i].real + 1j * value


def _read(leaf, part, i):
    if part is None:
        return float(leaf.data.reshape(-1)[i])
    v = leaf.z.reshape(-1)[i]
    return float(v.real if part == "re" else v.imag)


def gradcheck(fn: Callable, inputs: Sequence, seed: int = 0, name: str = "op",
              params: Sequence = (), max_coords: int | None = None, tol: float = TOL) -> GradReport:
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    ``params`` are extra leaves that ``fn`` closes over (module weights).
    With ``max_coords`` set, at most that many coordinates per leaf are probed.
    """
    leaves = list(inputs) + [p for p in params if all(p is not q for q in inputs)]
    saved = [(leaf.requires_grad, leaf.grad) for leaf in leaves]
    for leaf in leaves:
        if not leaf.data.flags.writeable or not leaf.data.flags.c_contiguous:
            raise ValueError(f"{name}: gradcheck needs writable contiguous leaves")
        leaf.requires_grad = True
        leaf.grad = None
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6C4E]))
    try:
        with Graph() as g:
            outs = _outputs(fn(*inputs))
            if not _finite(outs):
                return GradReport(name, float("inf"), False, 0, f"non-finite forward output in {name}")
            proj = _projection(outs, rng)
            loss = _project_graph(outs, proj)
        g.backward(loss)
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
        for leaf in leaves:
            leaf.requires_grad = False

        worst, checked = 0.0, 0
        for leaf, grad in zip(leaves, analytic):
            for part, ga in _views(leaf, grad):
                size = ga.size
                if max_coords is not None and size > max_coords:
                    idx = np.sort(rng.choice(size, max_coords, replace=False))
                else:
                    idx = np.arange(size)
                num = np.empty(len(idx))
                for j, i in enumerate(idx):
                    x0 = _read(leaf, part, i)
                    h = REL_STEP * max(1.0, abs(x0))
                    _perturb(leaf, part, i, x0 + h)
                    up = _project_values(_outputs(fn(*inputs)), proj)
                    _perturb(leaf, part, i, x0 - h)
                    down = _project_values(_outputs(fn(*inputs)), proj)
                    _perturb(leaf, part, i, x0)
                    num[j] = (up - down) / (2.0 * h)
                ana = np.asarray(ga, dtype=np.float64).reshape(-1)[idx]
                denom = max(np.linalg.norm(ana), np.linalg.norm(num), ATOL)
                worst = max(worst, float(np.linalg.norm(ana - num) / denom))
                checked += len(idx)
        return GradReport(name, worst, bool(worst < tol), checked)
    finally:
        for leaf, (rg, gr) in zip(leaves, saved):
            leaf.requires_grad = rg
            leaf.grad = gr


# ---------------------------------------------------------------------------
# registry: module name -> list of (case name, builder(seed) -> case dict)
# ---------------------------------------------------------------------------

def _rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _spaced(rng, shape, gap=0.05):
    # distinct values at least ``gap`` apart: no ties for min / max / |.|
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * gap
    return Tensor(vals.reshape(shape))


def _spec(rng, shape, floor=0.0):
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if floor:
        z = z + floor * np.exp(1j * np.angle(z))
    return Spectrum(z)


def _case(fn, inputs, params=(), max_coords=None):
    return {"fn": fn, "inputs": inputs, "params": params, "max_coords": max_coords}


def _tensor_cases():
    def binary(op, lo=-1.0, hi=1.0, blo=None, bhi=None):
        def build(rng):
            a = _rand(rng, (2, 3, 2, 2), lo, hi)
            b = _rand(rng, (2, 3, 2, 2), lo if blo is None else blo, hi if bhi is None else bhi)
            return _case(op, [a, b])
        return build

    def minmax(op):
        def build(rng):
            both = _spaced(rng, (2, 2, 3, 4))
            return _case(op, [Tensor(both.data[0:1].copy()), Tensor(both.data[1:2].copy())])
        return build

    return [
        ("add", binary(T.add)),
        ("sub", binary(T.sub)),
        ("mul", binary(T.mul)),
        ("div", binary(T.div, blo=0.5, bhi=2.0)),
        ("neg", lambda r: _case(T.neg, [_rand(r, (1, 2, 3, 3))])),
        ("scale", lambda r: _case(lambda a: T.scale(a, -1.7), [_rand(r, (1, 2, 3, 3))])),
        ("shift", lambda r: _case(lambda a: T.shift(a, 0.3), [_rand(r, (1, 2, 3, 3))])),
        ("mul_scalar", lambda r: _case(T.mul_scalar, [_rand(r, (2, 3, 2, 2)), _rand(r, (1, 1, 1, 1))])),
        ("mul_channel", lambda r: _case(T.mul_channel, [_rand(r, (2, 3, 2, 2)), _rand(r, (2, 3, 1, 1))])),
        ("minimum", minmax(T.minimum)),
        ("maximum", minmax(T.maximum)),
        ("abs", lambda r: _case(T.abs, [_spaced(r, (1, 2, 3, 3))])),
        ("exp", lambda r: _case(T.exp, [_rand(r, (1, 2, 3, 3))])),
        ("sqrt", lambda r: _case(T.sqrt, [_rand(r, (1, 2, 3, 3), 0.2, 2.0)])),
        ("power", lambda r: _case(lambda a: T.power(a, 3), [_rand(r, (1, 2, 3, 3))])),
        ("sum", lambda r: _case(T.sum, [_rand(r, (2, 2, 3, 3))])),
        ("mean", lambda r: _case(T.mean, [_rand(r, (2, 2, 3, 3))])),
        ("reshape", lambda r: _case(lambda a: T.reshape(a, (1, 6, 2, 3)), [_rand(r, (2, 3, 2, 3))])),
        ("concat_channels", lambda r: _case(lambda a, b: T.concat_channels([a, b]),
                                            [_rand(r, (2, 1, 3, 3)), _rand(r, (2, 3, 3, 3))])),
        ("split_channels", lambda r: _case(lambda a: T.split_channels(a, (1, 3)), [_rand(r, (2, 4, 3, 3))])),
        ("take_queries", lambda r: _case(lambda a: T.take_queries(a, [0, 1, 1], [2, 0, 2]),
                                         [_rand(r, (2, 4, 5, 1))])),
    ]


def _spectral_cases():
    shape = (2, 2, 4, 8)
    return [
        ("fft2", lambda r: _case(S.fft2, [_rand(r, shape)])),
        ("ifft2", lambda r: _case(S.ifft2, [_spec(r, shape)])),
        ("ifft2_complex", lambda r: _case(S.ifft2_complex, [_spec(r, shape)])),
        ("real", lambda r: _case(S.real, [_spec(r, shape)])),
        ("imag", lambda r: _case(S.imag, [_spec(r, shape)])),
        ("cmul", lambda r: _case(S.cmul, [_spec(r, shape), _rand(r, shape)])),
        ("cmul_per_channel", lambda r: _case(S.cmul, [_spec(r, shape), _rand(r, (2, 2, 1, 1))])),
        ("cmul_spec", lambda r: _case(S.cmul_spec, [_spec(r, shape), _spec(r, shape)])),
        ("magnitude", lambda r: _case(S.magnitude, [_spec(r, shape, floor=1e-2)])),
    ]


def _neural_cases():
    def conv_case(k, stride, padding, depthwise=False, cin=3, cout=4):
        def build(rng):
            store = ParamStore(int(rng.integers(1 << 30)))
            spec = store.conv("c", cin, cin if depthwise else cout, k, stride=stride,
                              padding=padding, depthwise=depthwise)
            _randomize(store, rng)
            return _case(lambda x, w, b: nn.conv2d(x, spec), [_rand(rng, (2, cin, 6, 6)), spec.weight, spec.bias])
        return build

    def attention(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        spec = store.conv("a", 3, 3, 1)
        _randomize(store, rng)
        return _case(lambda x, ctx, w, b: nn.channel_attention(x, spec, ctx),
                     [_rand(rng, (2, 3, 4, 4)), _rand(rng, (2, 3, 4, 4)), spec.weight, spec.bias])

    def grid(rng):
        # interior, fractional positions: away from floor() and clamp kinks
        n, c, h, w = 2, 3, 6, 6
        frac = rng.uniform(0.2, 0.8, size=(n, 2, h, w))
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tx = np.clip(jj + rng.integers(-1, 2, size=(n, h, w)), 0, w - 2)
        ty = np.clip(ii + rng.integers(-1, 2, size=(n, h, w)), 0, h - 2)
        off = np.stack([tx - jj, ty - ii], axis=1) + frac
        return _case(nn.grid_sample, [_rand(rng, (n, c, h, w)), Tensor(off)])

    def targets(rng):
        return rng.uniform(0.0, 1.0, size=(2, 3, 4, 1))

    return [
        ("conv2d_3x3", conv_case(3, 1, 1)),
        ("conv2d_3x3_stride2", conv_case(3, 2, 1)),
        ("conv2d_1x1", conv_case(1, 1, 0)),
        ("conv2d_5x5_nopad", conv_case(5, 1, 0)),
        ("conv2d_depthwise_7x7", conv_case(7, 1, 3, depthwise=True)),
        ("conv2d_depthwise_31x31", conv_case(31, 1, 15, depthwise=True)),
        ("gelu", lambda r: _case(nn.gelu, [_rand(r, (2, 3, 3, 3), -3.0, 3.0)])),
        ("sigmoid", lambda r: _case(nn.sigmoid, [_rand(r, (2, 3, 3, 3), -4.0, 4.0)])),
        ("bce_with_logits", lambda r: _case(lambda z, t=targets(r): nn.bce_with_logits(z, t),
                                            [_rand(r, (2, 3, 4, 1), -4.0, 4.0)])),
        ("avg_pool", lambda r: _case(lambda x: nn.avg_pool(x, 3, 2, 1), [_rand(r, (2, 2, 6, 6))])),
        ("avg_pool_asym_pad", lambda r: _case(lambda x: nn.avg_pool(x, 2, 1, (0, 1, 0, 1)),
                                              [_rand(r, (2, 2, 4, 4))])),
        ("max_pool", lambda r: _case(lambda x: nn.max_pool(x, 3, 2, 1), [_spaced(r, (2, 2, 6, 6))])),
        ("global_avg_pool", lambda r: _case(nn.global_avg_pool, [_rand(r, (2, 3, 4, 5))])),
        ("bilinear_upsample", lambda r: _case(lambda x: nn.bilinear_upsample(x, 8, 6),
                                              [_rand(r, (2, 2, 4, 3))])),
        ("channel_attention", attention),
        ("focus_slice", lambda r: _case(nn.focus_slice, [_rand(r, (2, 2, 4, 6))])),
        ("focus_unslice", lambda r: _case(nn.focus_unslice, [_rand(r, (2, 8, 2, 3))])),
        ("grid_sample", grid),
        ("to_queries", lambda r: _case(nn.to_queries, [_rand(r, (2, 3, 2, 4))])),
    ]


def _randomize(store, rng, skip=()):
    # move off the identity initialization so every path carries signal
    for name, t in store.tensors.items():
        if any(s in name for s in skip):
            continue
        if name.endswith(".alpha") or name.endswith(".beta"):
            t.data = np.full(t.shape, rng.uniform(0.4, 1.2))
        elif name.endswith(".bias"):
            t.data = rng.uniform(-0.2, 0.2, size=t.shape)


def _module_cases(coords=48):
    def ff(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        p = M.FFParams.build(store, "ff", 4)
        _randomize(store, rng)
        return _case(lambda x: M.ff_forward(x, p), [_rand(rng, (2, 4, 8, 8))],
                     list(store.tensors.values()), coords)

    def msff(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        p = M.MSFFParams.build(store, "m", 8, 8, focus_in=2, focus_out=4)
        _randomize(store, rng)
        hi, lo = _rand(rng, (1, 2, 16, 16)), _rand(rng, (1, 4, 8, 8))
        return _case(lambda a, b: M.msfffe_forward([a, b], p), [hi, lo],
                     list(store.tensors.values()), coords)

    def fd(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        p = M.FDParams.build(store, "fd", 4, 8)
        _randomize(store, rng)
        return _case(lambda x: M.fd_forward(x, p), [_rand(rng, (2, 4, 8, 8))],
                     list(store.tensors.values()), coords)

    def sac(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        p = M.SACParams.build(store, "sac", 3, 5, 4)
        _randomize(store, rng)
        # non-zero offsets with fractional parts, away from the bilinear kinks
        p.offset.weight.data = rng.uniform(-0.05, 0.05, size=p.offset.weight.shape)
        p.offset.bias.data = np.array([0.37, -0.41, -0.29, 0.33]).reshape(1, 4, 1, 1)
        return _case(lambda a, b: M.sac_forward(a, b, p), [_rand(rng, (1, 3, 8, 8)), _rand(rng, (1, 5, 4, 4))],
                     list(store.tensors.values()), coords)

    return [("ff_module", ff), ("msff_fe", msff), ("fd", fd), ("sac", sac)]


def _box_pairs(rng, k=6, same_center=False):
    cxy = rng.uniform(0.3, 0.7, size=(k, 2))
    wh = rng.uniform(0.05, 0.3, size=(k, 2))
    pred = np.concatenate([cxy, wh], axis=1)
    shift = np.zeros((k, 2)) if same_center else rng.uniform(-0.1, 0.1, size=(k, 2))
    gt = np.concatenate([cxy + shift, wh * rng.uniform(0.6, 1.5, size=(k, 2))], axis=1)
    return Tensor(B._as_channel_boxes(pred)), B.as_tensor_boxes(gt)


def _box_cases():
    def pair(op):
        def build(rng):
            a, b = _box_pairs(rng)
            return _case(lambda x: op(x, b), [a])
        return build

    def both(op):
        def build(rng):
            a, b = _box_pairs(rng)
            b = Tensor(b.data.copy())
            return _case(op, [a, b])
        return build

    return [
        ("iou", pair(B.iou)),
        ("giou", pair(B.giou)),
        ("giou_loss", pair(B.giou_loss)),
        ("inner_iou", pair(lambda a, b: B.inner_iou(a, b, 1.25))),
        ("inner_iou_ratio_0.7", pair(lambda a, b: B.inner_iou(a, b, 0.7))),
        ("siou_loss", pair(lambda a, b: B.siou_loss(a, b)[0])),
        ("siou_terms", pair(lambda a, b: B.siou_loss(a, b)[1:])),
        ("inner_siou_loss", pair(lambda a, b: B.inner_siou_loss(a, b, 1.25))),
        ("inner_siou_loss_both_args", both(lambda a, b: B.inner_siou_loss(a, b, 1.25))),
    ]


def _head_cases():
    def loss_case(kind):
        def build(rng):
            n, k, q = 2, 3, 6
            logits = _rand(rng, (n, k, q, 1), -3.0, 3.0)
            raw = rng.uniform(0.1, 0.9, size=(n, 4, q, 1))
            raw[:, 2:] = rng.uniform(0.05, 0.3, size=(n, 2, q, 1))
            boxes = Tensor(raw)
            gts = []
            for _ in range(n):
                g = int(rng.integers(1, 4))
                gb = np.concatenate([rng.uniform(0.2, 0.8, size=(g, 2)), rng.uniform(0.05, 0.3, size=(g, 2))], 1)
                gts.append(B.BoxSet(gb, rng.integers(0, k, size=g)))
            pred = H.Predictions(logits, boxes)
            matches = H.match_batch(pred, gts)
            return _case(lambda lg, bx: H.detection_loss(H.Predictions(lg, bx), gts, matches, kind).total,
                         [logits, boxes])
        return build

    return [(f"detection_loss_{kind}", loss_case(kind)) for kind in B.LOSS_KINDS]


REGISTRY: dict[str, Callable[[], list]] = {
    "tensor-core": _tensor_cases,
    "spectral": _spectral_cases,
    "neural-ops": _neural_cases,
    "freq-modules": _module_cases,
    "box-geometry": _box_cases,
    "detection-head": _head_cases,
}


def run_case(module: str, case: str, build, seed: int) -> GradReport:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(case)] + [ord(ch) for ch in case]))
    spec = build(rng)
    return gradcheck(spec["fn"], spec["inputs"], seed=seed, name=f"{module}/{case}",
                     params=spec["params"], max_coords=spec["max_coords"])


def run_module(module: str, seed: int = 0) -> list[GradReport]:
    if module not in REGISTRY:
        raise KeyError(module)
    return [run_case(module, case, build, seed) for case, build in REGISTRY[module]()]


def run_all(seed: int = 0) -> list[GradReport]:
    out = []
    for module in REGISTRY:
        out.extend(run_module(module, seed))
    return out
