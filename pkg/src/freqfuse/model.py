"""Desk-scale detector wiring the fusion blocks behind switchable ablation axes.

Layout for a 64×64 input (all stages on)::

    stem 3×3           64×64  stem_channels
    down ×3 (FD|conv)  32, 16, 8
    fusion (MSFF-FE|concat) on [Focus(1/4 map), 1/8 map]  -> 8×8
    align (SAC|off) of the 1/4 map with the fused map      -> 16×16 (or 8×8 when off)
    head: 3×3 conv, GELU, 1×1 conv -> class logits + box deltas per grid query
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from . import boxes as B
from .head import Predictions
from .modules import (ConfigError, FDParams, MSFFParams, SACParams, fd_forward,
                      msfffe_forward, sac_forward)
from .nn import conv2d, focus_slice, gelu, sigmoid, to_queries
from .params import ParamStore
from .spectral import is_pow2
from .tensor import Tensor, add, concat_channels, constant, split_channels


@dataclass
class ToyDetectorConfig:
    image_size: int = 64
    num_classes: int = 3
    stem_channels: int = 32
    stage_channels: tuple = (32, 64, 64)
    fusion_channels: int = 64
    align_channels: int = 64
    head_channels: int = 64
    large_kernel: int = 31
    downsample: str = "fd"  # fd | conv
    fusion: str = "msff"  # msff | concat
    align: str = "sac"  # sac | off
    loss: str = "inner_siou"  # inner_siou | siou | giou
    inner_ratio: float = B.DEFAULT_INNER_RATIO
    anchor_size: float = 0.1
    class_prior: float = 0.01
    cost_class: float = 2.0
    cost_l1: float = 5.0
    cost_iou: float = 2.0
    lr: float = 1e-4
    lr_schedule: str = "constant"  # constant | cosine (decays to 0 over the run)
    batch_size: int = 4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    score_threshold: float = 0.01

    def validate(self):
        if not is_pow2(self.image_size) or self.image_size < 16:
            raise ConfigError(f"image_size {self.image_size} must be a power of two >= 16 (FFT stages)")
        if len(self.stage_channels) != 3:
            raise ConfigError("stage_channels needs exactly three entries")
        if self.downsample not in ("fd", "conv"):
            raise ConfigError(f"downsample must be fd or conv, got {self.downsample!r}")
        if self.fusion not in ("msff", "concat"):
            raise ConfigError(f"fusion must be msff or concat, got {self.fusion!r}")
        if self.align not in ("sac", "off"):
            raise ConfigError(f"align must be sac or off, got {self.align!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.loss not in B.LOSS_KINDS:
            raise ConfigError(f"loss must be one of {B.LOSS_KINDS}, got {self.loss!r}")
        if self.downsample == "fd":
            for c in (self.stem_channels, *self.stage_channels):
                if c % 2:
                    raise ConfigError(f"FD stages need even channel counts, got {c}")
        if self.fusion == "msff" and (self.stage_channels[1] + self.stage_channels[2]) % 4:
            raise ConfigError("MSFF-FE needs the concatenated channel count divisible by 4")
        if self.inner_ratio <= 0:
            raise ConfigError("inner_ratio must be positive")

    @property
    def grid_size(self):
        return self.image_size // 4 if self.align == "sac" else self.image_size // 8

    @property
    def num_queries(self):
        return self.grid_size ** 2

    @property
    def cost_weights(self):
        return (self.cost_class, self.cost_l1, self.cost_iou)

    # -- flat key=value text -------------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kind = kinds[key]
            try:
                if kind is tuple:
                    values[key] = tuple(int(x) for x in val.split(",") if x.strip())
                elif kind is bool:
                    values[key] = val.lower() in ("1", "true", "yes", "on")
                else:
                    values[key] = kind(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _logit(p):
    return float(np.log(p / (1.0 - p)))


class ToyDetector:
    def __init__(self, config: ToyDetectorConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.store = ParamStore(seed)
        s = self.store
        cfg = config
        c_stem = cfg.stem_channels
        c1, c2, c3 = cfg.stage_channels
        self.stem = s.conv("stem", 3, c_stem, 3)
        self.stages = []
        c_prev = c_stem
        for i, c in enumerate(cfg.stage_channels):
            if cfg.downsample == "fd":
                self.stages.append(FDParams.build(s, f"down{i + 1}", c_prev, c))
            else:
                self.stages.append(s.conv(f"down{i + 1}", c_prev, c, 3, stride=2, padding=1))
            c_prev = c

        if cfg.fusion == "msff":
            self.fusion = MSFFParams.build(s, "fuse", c2 + c3, cfg.fusion_channels,
                                           focus_in=c2, focus_out=c2, large_kernel=cfg.large_kernel)
        else:
            self.fusion = {
                "focus": s.conv("fuse.focus", 4 * c2, c2, 1),
                "mix": s.conv("fuse.mix", c2 + c3, cfg.fusion_channels, 1),
            }
        c_final = cfg.fusion_channels
        self.align = None
        if cfg.align == "sac":
            self.align = SACParams.build(s, "align", c2, cfg.fusion_channels, cfg.align_channels)
            c_final = cfg.align_channels
        self.head_hidden = s.conv("head.hidden", c_final, cfg.head_channels, 3)
        self.head_out = s.conv("head.out", cfg.head_channels, cfg.num_classes + 4, 1)
        # class-prior bias so the background terms start near their optimum
        self.head_out.bias.data[0, :cfg.num_classes] = _logit(cfg.class_prior)

        g = cfg.grid_size
        centers = (np.arange(g) + 0.5) / g
        cy, cx = np.meshgrid(centers, centers, indexing="ij")
        anchors = np.stack([cx.ravel(), cy.ravel(), np.full(g * g, cfg.anchor_size),
                            np.full(g * g, cfg.anchor_size)])
        self.anchor_logits = np.log(anchors / (1.0 - anchors)).reshape(1, 4, g * g, 1)

    def module_params(self):
        """Parameter names grouped by the ablation module that owns them."""
        groups = {"stem": [], "downsample": [], "fusion": [], "align": [], "head": []}
        for name in self.store.names():
            root = name.split(".", 1)[0]
            if root == "stem":
                groups["stem"].append(name)
            elif root.startswith("down"):
                groups["downsample"].append(name)
            elif root == "fuse":
                groups["fusion"].append(name)
            elif root == "align":
                groups["align"].append(name)
            else:
                groups["head"].append(name)
        return groups

    def features(self, images: Tensor):
        x = gelu(conv2d(images, self.stem))
        feats = []
        for stage in self.stages:
            x = fd_forward(x, stage) if isinstance(stage, FDParams) else conv2d(x, stage)
            x = gelu(x)
            feats.append(x)
        _, f2, f3 = feats
        if isinstance(self.fusion, MSFFParams):
            fused = msfffe_forward([f2, f3], self.fusion)
        else:
            focus = conv2d(focus_slice(f2), self.fusion["focus"])
            fused = gelu(conv2d(concat_channels([focus, f3]), self.fusion["mix"]))
        if self.align is not None:
            return sac_forward(f2, fused, self.align)
        return fused

    def forward(self, images: Tensor) -> Predictions:
        n, c, h, w = images.shape
        if (h, w) != (self.config.image_size, self.config.image_size) or c != 3:
            raise ConfigError(f"detector built for (n,3,{self.config.image_size},{self.config.image_size}), "
                              f"got {images.shape}")
        feat = self.features(images)
        out = conv2d(gelu(conv2d(feat, self.head_hidden)), self.head_out)
        k = self.config.num_classes
        logits, deltas = split_channels(out, (k, 4))
        anchors = constant(np.broadcast_to(self.anchor_logits, (n, *self.anchor_logits.shape[1:])))
        boxes = sigmoid(add(to_queries(deltas), anchors))
        return Predictions(to_queries(logits), boxes)
