"""Seeded synthetic aerial-style scenes with small, partially occluded objects.

Dataset file layout (all integers little-endian)::

    b"FDS1" | version u16 | count u32
    per sample: h u16 | w u16 | 3·h·w f32 (CHW) | boxes u16 | per box 4×f32 cxcywh + class u16
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .boxes import BoxSet
from .modules import ConfigError
from .spectral import is_pow2
from .tensor import Tensor

MAGIC = b"FDS1"
VERSION = 1
CHANNELS = 3
SHAPES = ("rectangle", "disk", "cross")
BASE_COLORS = np.array([[0.92, 0.22, 0.18], [0.2, 0.85, 0.3], [0.25, 0.35, 0.95]])


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class SceneSpec:
    size: int = 64
    num_classes: int = 3
    min_objects: int = 4
    max_objects: int = 12
    min_object_px: int = 3
    max_object_px: int = 10
    occlusion: float = 0.3
    seed: int = 0

    def validate(self):
        if not is_pow2(self.size) or self.size < 16:
            raise ConfigError(
                f"image size {self.size} must be a power of two >= 16: every feature map "
                "down to 1/8 scale goes through the radix-2 FFT")
        if self.min_object_px < 2 or self.min_object_px > self.max_object_px:
            raise ConfigError(f"object size range {self.min_object_px}-{self.max_object_px} px is invalid")
        if self.max_object_px > self.size:
            raise ConfigError(f"objects up to {self.max_object_px} px do not fit a {self.size} px image")
        if not 1 <= self.num_classes <= len(SHAPES):
            raise ConfigError(f"num_classes must be 1..{len(SHAPES)}, got {self.num_classes}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("object count range is invalid")
        if not 0.0 <= self.occlusion <= 1.0:
            raise ConfigError(f"occlusion probability {self.occlusion} outside [0, 1]")


@dataclass
class Sample:
    image: Tensor  # (1, 3, h, w), values in [0, 1]
    gt: BoxSet

    def __eq__(self, other):
        return (isinstance(other, Sample)
                and np.array_equal(self.image.data, other.image.data)
                and np.array_equal(self.gt.boxes, other.gt.boxes)
                and np.array_equal(self.gt.class_ids, other.gt.class_ids))


def _mask(shape_id, w, h):
    yy, xx = np.mgrid[0:h, 0:w]
    if shape_id == 0:
        return np.ones((h, w), dtype=bool)
    if shape_id == 1:
        cy, cx = (h - 1) / 2, (w - 1) / 2
        return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0 + 1e-9
    arm_w = max(1, w // 3)
    arm_h = max(1, h // 3)
    x0 = (w - arm_w) // 2
    y0 = (h - arm_h) // 2
    return ((xx >= x0) & (xx < x0 + arm_w)) | ((yy >= y0) & (yy < y0 + arm_h))


def _overlap_px(a, b):
    ix = max(0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    return ix * iy


def layout_scene(rng: np.random.Generator, spec: SceneSpec):
    """Return placed objects as (x, y, w, h, class) in pixels, in drawing order."""
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    placed = []
    owner = np.full((spec.size, spec.size), -1, dtype=np.int64)
    masks = []
    for _ in range(count):
        cls = int(rng.integers(spec.num_classes))
        w = int(rng.integers(spec.min_object_px, spec.max_object_px + 1))
        h = w if cls == 1 else int(rng.integers(spec.min_object_px, spec.max_object_px + 1))
        occlude = bool(placed) and rng.random() < spec.occlusion
        mask = _mask(cls, w, h)
        for attempt in range(2000):
            # fall back to disjoint placement if an overlapping spot is hard to find
            want_overlap = occlude and attempt < 1000
            if want_overlap:
                tgt = placed[int(rng.integers(len(placed)))]
                x = int(rng.integers(max(0, tgt[0] - w + 1), min(spec.size - w, tgt[0] + tgt[2] - 1) + 1))
                y = int(rng.integers(max(0, tgt[1] - h + 1), min(spec.size - h, tgt[1] + tgt[3] - 1) + 1))
            else:
                x = int(rng.integers(0, spec.size - w + 1))
                y = int(rng.integers(0, spec.size - h + 1))
            box = (x, y, w, h)
            ok = True
            for other in placed:
                ov = _overlap_px(box, other)
                if want_overlap and other is tgt:
                    frac = ov / (other[2] * other[3])
                    ok = 0.3 <= frac <= 0.7
                else:
                    ok = ov == 0
                if not ok:
                    break
            if not ok:
                continue
            trial = owner.copy()
            region = trial[y:y + h, x:x + w]
            region[mask] = len(placed)
            visible = np.bincount(trial[trial >= 0].ravel(), minlength=len(placed) + 1)
            if visible.min() < 4:
                continue
            owner = trial
            placed.append((x, y, w, h, cls))
            masks.append(mask)
            break
    return placed, masks


def render_scene(rng: np.random.Generator, spec: SceneSpec, placed, masks):
    s = spec.size
    noise = rng.normal(size=(CHANNELS, s, s))
    bg = np.stack([gaussian_filter(noise[c], sigma=2.0, mode="wrap") for c in range(CHANNELS)])
    bg = 0.3 + 0.25 * bg / (bg.std() + 1e-12)
    img = np.clip(bg, 0.0, 1.0)
    for (x, y, w, h, cls), mask in zip(placed, masks):
        color = np.clip(BASE_COLORS[cls] + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)
        region = img[:, y:y + h, x:x + w]
        region[:, mask] = color[:, None]
    return img.astype(np.float32).astype(np.float64)


def sample_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def generate_one(spec: SceneSpec, index: int) -> Sample:
    rng = np.random.default_rng(sample_seed(spec.seed, index))
    placed, masks = layout_scene(rng, spec)
    img = render_scene(rng, spec, placed, masks)
    s = float(spec.size)
    boxes = np.array([[(x + w / 2) / s, (y + h / 2) / s, w / s, h / s] for x, y, w, h, _ in placed],
                     dtype=np.float64).reshape(-1, 4)
    boxes = np.clip(boxes, 0.0, 1.0).astype(np.float32).astype(np.float64)
    classes = np.array([p[4] for p in placed], dtype=np.int64)
    return Sample(Tensor(img[None]), BoxSet(boxes, classes))


def generate(spec: SceneSpec, count: int) -> list[Sample]:
    """Deterministic in (spec, index): sample i depends only on (seed, i)."""
    spec.validate()
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    return [generate_one(spec, i) for i in range(count)]


def encode(dataset) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(dataset))]
    for smp in dataset:
        _, c, h, w = smp.image.shape
        if c != CHANNELS:
            raise ValueError(f"images must have {CHANNELS} channels, got {c}")
        parts.append(struct.pack("<HH", h, w))
        parts.append(smp.image.data[0].astype("<f4").tobytes())
        parts.append(struct.pack("<H", len(smp.gt)))
        for box, cls in zip(smp.gt.boxes, smp.gt.class_ids):
            parts.append(struct.pack("<4fH", *box.tolist(), int(cls)))
    return b"".join(parts)


def decode(buf: bytes) -> list[Sample]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated file: need {n} bytes, {len(buf) - pos} left", pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError("bad magic, expected FDS1", 0)
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    out = []
    for _ in range(count):
        h, w = struct.unpack("<HH", take(4))
        img = np.frombuffer(take(4 * CHANNELS * h * w), dtype="<f4").astype(np.float64)
        (nb,) = struct.unpack("<H", take(2))
        rows = [struct.unpack("<4fH", take(18)) for _ in range(nb)]
        boxes = np.array([r[:4] for r in rows], dtype=np.float64).reshape(-1, 4)
        classes = np.array([r[4] for r in rows], dtype=np.int64)
        out.append(Sample(Tensor(img.reshape(1, CHANNELS, h, w)), BoxSet(boxes, classes)))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return out


def save(dataset, path):
    data = encode(dataset)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path) -> list[Sample]:
    with open(path, "rb") as fh:
        return decode(fh.read())
