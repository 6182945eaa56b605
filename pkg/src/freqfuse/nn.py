"""Differentiable neural primitives on rank-4 tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import kernels
from .tensor import ShapeError, Tensor, concat_channels, emit, mul_channel

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
GELU_CUBIC = 0.044715


@dataclass
class ConvSpec:
    """Convolution hyperparameters plus the learnable tensors.

    Dense weights are (out, in, kh, kw); depthwise weights are (c, 1, kh, kw).
    ``bias`` is (1, out, 1, 1) or None.
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    depthwise: bool = False

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[0] if self.depthwise else self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]

    def output_size(self, h, w):
        kh, kw = self.kernel
        p, s = self.padding, self.stride
        return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1


def _pad4(pad):
    if isinstance(pad, int):
        return pad, pad, pad, pad
    top, bottom, left, right = pad
    return int(top), int(bottom), int(left), int(right)


def _padded(x, pad, value=0.0):
    t, b, l, r = pad
    if not (t or b or l or r):
        return x
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)), constant_values=value)


def _crop(xp, pad, h, w):
    t, _, l, _ = pad
    return xp[:, :, t:t + h, l:l + w]


def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _scatter_taps(gtaps, shape_padded, kh, kw, stride, ho, wo):
    # gtaps: (n, c, ho, wo, kh, kw) -> summed into padded input positions
    gxp = np.zeros(shape_padded)
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride] += gtaps[..., a, b]
    return gxp


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Zero-padded cross-correlation; differentiable w.r.t. input, weight and bias."""
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: input has {c} channels, layer expects {spec.in_channels}")
    if spec.depthwise:
        y, rule = _conv_depthwise(x.data, spec)
    else:
        y, rule = _conv_dense(x.data, spec)
    inputs = (x, spec.weight) if spec.bias is None else (x, spec.weight, spec.bias)
    if spec.bias is not None:
        y = y + spec.bias.data

    def full_rule(g):
        gx, gw = rule(g, x.requires_grad)
        if spec.bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)

    return emit(Tensor(y), inputs, full_rule)


def _conv_dense(xd, spec):
    wd = spec.weight.data
    o, c, kh, kw = wd.shape
    s, p = spec.stride, spec.padding
    n, _, h, w = xd.shape
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {p}")
    if kh == 1 and kw == 1 and s == 1 and p == 0:
        wm = wd[:, :, 0, 0]
        y = np.matmul(wm, xd.reshape(n, c, h * w)).reshape(n, o, h, w)

        def rule(g, need_x):
            gf = g.reshape(n, o, h * w)
            gw = np.matmul(gf, xd.reshape(n, c, h * w).transpose(0, 2, 1)).sum(axis=0).reshape(o, c, 1, 1)
            gx = np.matmul(wm.T, gf).reshape(n, c, h, w) if need_x else None
            return gx, gw

        return y, rule

    pad = (p, p, p, p)
    xp = _padded(xd, pad)
    cols = np.ascontiguousarray(_windows(xp, kh, kw, s, ho, wo).transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * ho * wo, c * kh * kw)
    wm = wd.reshape(o, c * kh * kw)
    y = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def rule(g, need_x):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gm.T @ cols).reshape(o, c, kh, kw)
        gx = None
        if need_x:
            gcols = (gm @ wm).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gx = _crop(_scatter_taps(gcols, xp.shape, kh, kw, s, ho, wo), pad, h, w)
        return gx, gw

    return np.ascontiguousarray(y), rule


def _conv_depthwise(xd, spec):
    wd = spec.weight.data
    if spec.stride != 1:
        raise ShapeError("depthwise conv2d supports stride 1 only")
    if wd.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (c, 1, kh, kw), got {wd.shape}")
    w3 = np.ascontiguousarray(wd[:, 0])
    xc = np.ascontiguousarray(xd)
    y = kernels.dwconv_forward(xc, w3, spec.padding)

    def rule(g, need_x):
        gx, gw = kernels.dwconv_backward(np.ascontiguousarray(g), xc, w3, spec.padding)
        return gx, gw[:, None]

    return y, rule


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    inner = SQRT_2_OVER_PI * (xd + GELU_CUBIC * (xd * xd * xd))
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def rule(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * xd * xd)
        return (g * d,)

    return emit(Tensor(y), (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return emit(Tensor(s), (x,), lambda g: (g * s * (1.0 - s),))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy against constant targets in [0, 1]."""
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {z.shape}")
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return emit(Tensor(loss), (logits,), lambda g: (g * (expit(z) - t),))


def _pool_geometry(x, k, stride, pad):
    pad = _pad4(pad)
    n, c, h, w = x.shape
    ho = (h + pad[0] + pad[1] - k) // stride + 1
    wo = (w + pad[2] + pad[3] - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool window {k} does not fit {h}x{w} with padding {pad}")
    return pad, ho, wo


def avg_pool(x: Tensor, k: int, stride: int, pad=0) -> Tensor:
    """Window mean over k×k; zero padding counts toward the divisor.

    ``pad`` is an int or (top, bottom, left, right).
    """
    pad, ho, wo = _pool_geometry(x, k, stride, pad)
    n, c, h, w = x.shape
    xp = _padded(x.data, pad)
    y = _windows(xp, k, k, stride, ho, wo).mean(axis=(4, 5))

    def rule(g):
        gt = np.broadcast_to((g / (k * k))[..., None, None], (n, c, ho, wo, k, k))
        return (_crop(_scatter_taps(gt, xp.shape, k, k, stride, ho, wo), pad, h, w),)

    return emit(Tensor(y), (x,), rule)


def max_pool(x: Tensor, k: int, stride: int, pad=0) -> Tensor:
    """Window max with -inf padding; backward goes to the first argmax."""
    pad, ho, wo = _pool_geometry(x, k, stride, pad)
    n, c, h, w = x.shape
    xp = _padded(x.data, pad, value=-np.inf)
    win = _windows(xp, k, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    hp, wp = xp.shape[2], xp.shape[3]
    rows = np.arange(ho)[:, None] * stride + arg // k
    cols = np.arange(wo)[None, :] * stride + arg % k
    flat = (np.arange(n * c).reshape(n, c, 1, 1) * (hp * wp) + rows * wp + cols).ravel()

    def rule(g):
        gxp = np.bincount(flat, weights=g.ravel(), minlength=n * c * hp * wp).reshape(n, c, hp, wp)
        return (_crop(gxp, pad, h, w),)

    return emit(Tensor(y), (x,), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool needs non-empty spatial dims")
    y = x.data.mean(axis=(2, 3), keepdims=True)
    return emit(Tensor(y), (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def interp_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) bilinear weights, half-pixel centres, border clamp."""
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_upsample: output size {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return emit(Tensor(x.data.copy()), (x,), lambda g: (g,))
    ah = interp_matrix(h, out_h)
    aw = interp_matrix(w, out_w)
    y = ah @ x.data @ aw.T
    return emit(Tensor(y), (x,), lambda g: (ah.T @ g @ aw,))


def channel_attention(x: Tensor, conv: ConvSpec, context: Tensor | None = None) -> Tensor:
    """x · sigmoid(conv(GAP(context))), one gate per (sample, channel).

    ``context`` defaults to ``x`` itself.
    """
    gate = sigmoid(conv2d(global_avg_pool(x if context is None else context), conv))
    return mul_channel(x, gate)


def focus_slice(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, 4c, h/2, w/2), parity blocks ordered ee, eo, oe, oo."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"focus_slice needs even spatial dims, got {h}x{w}")
    xd = x.data
    y = np.concatenate([xd[:, :, 0::2, 0::2], xd[:, :, 0::2, 1::2],
                        xd[:, :, 1::2, 0::2], xd[:, :, 1::2, 1::2]], axis=1)
    return emit(Tensor(y), (x,), lambda g: (_unfocus(g),))


def _unfocus(y):
    n, c4, h2, w2 = y.shape
    c = c4 // 4
    x = np.empty((n, c, 2 * h2, 2 * w2))
    x[:, :, 0::2, 0::2] = y[:, :c]
    x[:, :, 0::2, 1::2] = y[:, c:2 * c]
    x[:, :, 1::2, 0::2] = y[:, 2 * c:3 * c]
    x[:, :, 1::2, 1::2] = y[:, 3 * c:]
    return x


def focus_unslice(y: Tensor) -> Tensor:
    if y.shape[1] % 4:
        raise ShapeError(f"focus_unslice needs a channel count divisible by 4, got {y.shape[1]}")
    return emit(Tensor(_unfocus(y.data)), (y,), lambda g: (focus_slice(Tensor(g)).data,))


def grid_sample(x: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear read of x at (col + Δx, row + Δy) with border clamping.

    ``offsets`` is (n, 2, h, w) in pixels, channel 0 = Δx, channel 1 = Δy.
    """
    n, c, h, w = x.shape
    if offsets.shape != (n, 2, h, w):
        raise ShapeError(f"grid_sample: offsets {offsets.shape} must be {(n, 2, h, w)}")
    xd = np.ascontiguousarray(x.data)
    od = np.ascontiguousarray(offsets.data)
    y = kernels.grid_sample_forward(xd, od)
    return emit(Tensor(y), (x, offsets),
                lambda g: kernels.grid_sample_backward(np.ascontiguousarray(g), xd, od))


def to_queries(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, c, h·w, 1), row-major over the grid."""
    n, c, h, w = x.shape
    return emit(Tensor(x.data.reshape(n, c, h * w, 1).copy()), (x,),
                lambda g: (g.reshape(n, c, h, w),))


__all__ = [
    "ConvSpec", "conv2d", "gelu", "sigmoid", "bce_with_logits", "avg_pool", "max_pool",
    "global_avg_pool", "bilinear_upsample", "interp_matrix", "channel_attention",
    "focus_slice", "focus_unslice", "grid_sample", "to_queries", "concat_channels",
]
