"""Frequency-focused operator and the three fusion blocks built from it.

* FF: ``alpha · Re(IFFT(FFT(value(x)) ⊙ mask(x))) + beta · x``
* MSFF-FE: cross-stage-partial multi-scale fusion with spectral gain and FF
* FD: stride-2 downsampling through parallel conv / FF / max-pool paths
* SAC: gated spatial/frequency fusion followed by learned-offset alignment
"""

from __future__ import annotations

from dataclasses import dataclass

from . import spectral
from .nn import (ConvSpec, bilinear_upsample, channel_attention, conv2d, focus_slice,
                 gelu, global_avg_pool, grid_sample, avg_pool, max_pool, sigmoid)
from .params import ParamStore
from .tensor import (ShapeError, Tensor, add, concat_channels, mul, mul_scalar,
                     split_channels, sub)


class ConfigError(ValueError):
    """Module wiring (channel counts, sizes) is inconsistent."""


@dataclass
class FFParams:
    mask_conv: ConvSpec
    value_conv: ConvSpec
    alpha: Tensor
    beta: Tensor

    @classmethod
    def build(cls, store: ParamStore, prefix: str, c: int, alpha=0.0, beta=1.0):
        return cls(store.conv(f"{prefix}.mask", c, c, 1),
                   store.conv(f"{prefix}.value", c, c, 1),
                   store.scalar(f"{prefix}.alpha", alpha),
                   store.scalar(f"{prefix}.beta", beta))


def ff_forward(x: Tensor, p: FFParams) -> Tensor:
    """Learned per-bin real mask on the spectrum of value_conv(x), blended with x."""
    spectral.check_spatial(x.shape, "ff_forward")
    spec = spectral.fft2(conv2d(x, p.value_conv))
    filtered = spectral.ifft2(spectral.cmul(spec, conv2d(x, p.mask_conv)))
    return add(mul_scalar(filtered, p.alpha), mul_scalar(x, p.beta))


@dataclass
class MSFFParams:
    channels: int
    out_channels: int
    entry: ConvSpec
    gain: ConvSpec
    attention: ConvSpec
    scale1: ConvSpec
    scale3: ConvSpec
    scale5: ConvSpec
    ff: FFParams
    large: ConvSpec
    point: ConvSpec
    exit: ConvSpec
    focus: ConvSpec | None = None

    @classmethod
    def build(cls, store: ParamStore, prefix: str, channels: int, out_channels: int | None = None,
              focus_in: int | None = None, focus_out: int | None = None, large_kernel: int = 31):
        """``channels`` is C after concatenation (including the Focus path, if any).

        With ``focus_in`` set, ``inputs[0]`` of the forward pass is the
        higher-resolution map that goes through Focus slicing and a 1×1 conv
        producing ``focus_out`` channels.
        """
        if channels % 4:
            raise ConfigError(f"MSFF-FE needs C divisible by 4, got {channels}")
        c1 = channels // 4
        out_channels = channels if out_channels is None else out_channels
        focus = None
        if focus_in is not None:
            focus = store.conv(f"{prefix}.focus", 4 * focus_in, focus_out or focus_in, 1)
        return cls(
            channels=channels,
            out_channels=out_channels,
            entry=store.conv(f"{prefix}.entry", c1, c1, 1),
            gain=store.conv(f"{prefix}.gain", c1, c1, 1),
            attention=store.conv(f"{prefix}.attn", c1, c1, 1),
            scale1=store.conv(f"{prefix}.sc1", c1, c1, 1),
            scale3=store.conv(f"{prefix}.sc3", c1, c1, 3),
            scale5=store.conv(f"{prefix}.sc5", c1, c1, 5),
            ff=FFParams.build(store, f"{prefix}.ff", c1),
            large=store.conv(f"{prefix}.dw{large_kernel}", c1, c1, large_kernel, depthwise=True),
            point=store.conv(f"{prefix}.pw", c1, c1, 1),
            exit=store.conv(f"{prefix}.exit", channels, out_channels, 1),
            focus=focus,
        )

    def branch_params(self):
        """Every learnable tensor on the x1 (processed) branch."""
        convs = [self.entry, self.gain, self.attention, self.scale1, self.scale3, self.scale5,
                 self.ff.mask_conv, self.ff.value_conv, self.large, self.point]
        out = [self.ff.alpha, self.ff.beta]
        for cv in convs:
            out.append(cv.weight)
            if cv.bias is not None:
                out.append(cv.bias)
        return out


def spectral_gain(x_conv: Tensor, gain: ConvSpec) -> Tensor:
    """|IFFT(gain(GAP(x)) · FFT(x))| with one real gain per channel."""
    g = conv2d(global_avg_pool(x_conv), gain)
    return spectral.magnitude(spectral.ifft2_complex(spectral.cmul(spectral.fft2(x_conv), g)))


def msfffe_forward(inputs, p: MSFFParams) -> Tensor:
    inputs = list(inputs)
    if p.focus is not None:
        inputs[0] = conv2d(focus_slice(inputs[0]), p.focus)
    x = concat_channels(inputs) if len(inputs) > 1 else inputs[0]
    c = x.shape[1]
    if c != p.channels:
        raise ConfigError(f"MSFF-FE built for {p.channels} channels, inputs give {c}")
    x1, x2 = split_channels(x, (c // 4, c - c // 4))

    x_conv = gelu(conv2d(x1, p.entry))
    x_sp = spectral_gain(x_conv, p.gain)
    x_sc = add(add(conv2d(x_sp, p.scale1), conv2d(x_sp, p.scale3)), conv2d(x_sp, p.scale5))
    x_sc = channel_attention(x_sc, p.attention, context=x_conv)
    x_f = ff_forward(x_sc, p.ff)
    x_final = add(add(add(x1, conv2d(x_conv, p.large)), conv2d(x_conv, p.point)), x_f)
    return gelu(conv2d(concat_channels([x_final, x2]), p.exit))


@dataclass
class FDParams:
    in_channels: int
    out_channels: int
    down: ConvSpec
    ff: FFParams
    ff_proj: ConvSpec
    pool_proj: ConvSpec
    merge: ConvSpec

    @classmethod
    def build(cls, store: ParamStore, prefix: str, c_in: int, c_out: int):
        if c_in % 2:
            raise ConfigError(f"FD needs an even input channel count, got {c_in}")
        if c_out % 2:
            raise ConfigError(f"FD needs an even output channel count, got {c_out}")
        half_in, half_out = c_in // 2, c_out // 2
        return cls(
            in_channels=c_in,
            out_channels=c_out,
            down=store.conv(f"{prefix}.down", half_in, half_out, 3, stride=2, padding=1),
            ff=FFParams.build(store, f"{prefix}.ff", half_in),
            ff_proj=store.conv(f"{prefix}.ffproj", half_in, half_out, 3, stride=2, padding=1),
            pool_proj=store.conv(f"{prefix}.poolproj", half_in, half_out, 1),
            merge=store.conv(f"{prefix}.merge", c_out, half_out, 1),
        )


# kernel 2 / stride 1 pooling kept shape-preserving by padding right and bottom only
FD_POOL_PAD = (0, 1, 0, 1)


def fd_forward(x: Tensor, p: FDParams) -> Tensor:
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ConfigError(f"FD built for {p.in_channels} channels, got {c}")
    if h % 2 or w % 2:
        raise ShapeError(f"FD needs even spatial dims, got {h}x{w}")
    x_p = avg_pool(x, 2, 1, FD_POOL_PAD)
    x1, x2 = split_channels(x_p, (c // 2, c // 2))
    x1_down = conv2d(x1, p.down)
    x_f = conv2d(ff_forward(x2, p.ff), p.ff_proj)
    x_pool = conv2d(max_pool(x2, 3, 2, 1), p.pool_proj)
    x2_down = conv2d(concat_channels([x_f, x_pool]), p.merge)
    return concat_channels([x1_down, x2_down])


@dataclass
class SACParams:
    channels: int
    unify1: ConvSpec
    unify2: ConvSpec
    ff: FFParams
    gate: ConvSpec
    offset: ConvSpec
    alpha: Tensor
    beta: Tensor

    @classmethod
    def build(cls, store: ParamStore, prefix: str, c1: int, c2: int, c: int):
        return cls(
            channels=c,
            unify1=store.conv(f"{prefix}.unify1", c1, c, 1),
            unify2=store.conv(f"{prefix}.unify2", c2, c, 1),
            ff=FFParams.build(store, f"{prefix}.ff", c),
            gate=store.conv(f"{prefix}.gate", c, c, 1),
            offset=store.conv(f"{prefix}.offset", 2 * c, 4, 3, zero=True),
            alpha=store.scalar(f"{prefix}.alpha", 0.5),
            beta=store.scalar(f"{prefix}.beta", 0.5),
        )


def gated_fusion(x_freq: Tensor, x2: Tensor, gate_logits: Tensor) -> Tensor:
    """G·x_freq + (1 − G)·x2 with G = sigmoid(gate_logits)."""
    g = sigmoid(gate_logits)
    return add(x2, mul(g, sub(x_freq, x2)))


def sac_forward(x1: Tensor, x2: Tensor, p: SACParams, return_parts=False):
    h1, w1 = x1.shape[2:]
    h2, w2 = x2.shape[2:]
    if h2 > h1 or w2 > w1:
        raise ShapeError(f"SAC: low-resolution input {h2}x{w2} exceeds {h1}x{w1}")
    a = conv2d(x1, p.unify1)
    b = bilinear_upsample(conv2d(x2, p.unify2), h1, w1)
    x_freq = ff_forward(b, p.ff)
    x_fused = gated_fusion(x_freq, b, conv2d(b, p.gate))
    d1, d2 = split_channels(conv2d(concat_channels([a, x_fused]), p.offset), (2, 2))
    a_aligned = grid_sample(a, d1)
    f_aligned = grid_sample(x_fused, d2)
    out = add(mul_scalar(a_aligned, p.alpha), mul_scalar(f_aligned, p.beta))
    if return_parts:
        return out, {"x1": a, "x2": b, "x_freq": x_freq, "x_fused": x_fused,
                     "delta1": d1, "delta2": d2}
    return out
