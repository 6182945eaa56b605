"""Axis-aligned box overlap measures and the IoU loss family.

Boxes are centre-size ``(cx, cy, w, h)``. Every function accepts either numpy
arrays shaped ``(..., 4)`` (broadcasting, values only) or Tensors shaped
``(n, 4, k, 1)`` (elementwise pairs, differentiable through the graph).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

EPS = 1e-9
SHAPE_THETA = 4
DEFAULT_INNER_RATIO = 1.25


@dataclass
class BoxSet:
    boxes: np.ndarray
    class_ids: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        if len(self.boxes) != len(self.class_ids):
            raise ValueError(f"{len(self.boxes)} boxes but {len(self.class_ids)} class ids")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if len(self.scores) != len(self.boxes):
                raise ValueError("scores and boxes differ in length")

    def __len__(self):
        return len(self.boxes)


@dataclass
class LossBreakdown:
    iou: float
    giou: float
    siou: float
    inner_iou: float
    inner_siou: float
    angle_cost: float
    distance_cost: float
    shape_cost: float


class _NumpyOps:
    minimum = staticmethod(np.minimum)
    maximum = staticmethod(np.maximum)
    abs = staticmethod(np.abs)
    exp = staticmethod(np.exp)


class _TensorOps:
    minimum = staticmethod(T.minimum)
    maximum = staticmethod(T.maximum)
    abs = staticmethod(T.abs)
    exp = staticmethod(T.exp)


def _unpack(a, b):
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a = a if isinstance(a, Tensor) else T.constant(_as_channel_boxes(a))
        b = b if isinstance(b, Tensor) else T.constant(_as_channel_boxes(b))
        return _TensorOps, T.split_channels(a, (1, 1, 1, 1)), T.split_channels(b, (1, 1, 1, 1))
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return _NumpyOps, tuple(np.moveaxis(a, -1, 0)), tuple(np.moveaxis(b, -1, 0))


def _as_channel_boxes(arr):
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    return np.ascontiguousarray(arr.T.reshape(1, 4, -1, 1))


def as_tensor_boxes(arr) -> Tensor:
    """(k, 4) array -> constant (1, 4, k, 1) tensor."""
    return T.constant(_as_channel_boxes(arr))


def cxcywh_to_xyxy(boxes):
    b = np.asarray(boxes, dtype=np.float64)
    cx, cy, w, h = np.moveaxis(b, -1, 0)
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(boxes):
    b = np.asarray(boxes, dtype=np.float64)
    x1, y1, x2, y2 = np.moveaxis(b, -1, 0)
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def _corners(cx, cy, w, h):
    hw, hh = w * 0.5, h * 0.5
    return cx - hw, cy - hh, cx + hw, cy + hh


def _overlap(ops, pa, pb):
    ax1, ay1, ax2, ay2 = _corners(*pa)
    bx1, by1, bx2, by2 = _corners(*pb)
    iw = ops.maximum(ops.minimum(ax2, bx2) - ops.maximum(ax1, bx1), 0.0)
    ih = ops.maximum(ops.minimum(ay2, by2) - ops.maximum(ay1, by1), 0.0)
    inter = iw * ih
    # areas from corners so identical boxes give inter == union exactly
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull_w = ops.maximum(ax2, bx2) - ops.minimum(ax1, bx1)
    hull_h = ops.maximum(ay2, by2) - ops.minimum(ay1, by1)
    return inter, union, hull_w, hull_h


def _iou(ops, pa, pb):
    inter, union, _, _ = _overlap(ops, pa, pb)
    return inter / ops.maximum(union, EPS)


def _scaled(parts, ratio):
    cx, cy, w, h = parts
    return cx, cy, w * ratio, h * ratio


def iou(a, b):
    ops, pa, pb = _unpack(a, b)
    return _iou(ops, pa, pb)


def giou(a, b):
    """IoU minus the fraction of the enclosing box not covered by the union."""
    ops, pa, pb = _unpack(a, b)
    inter, union, hw, hh = _overlap(ops, pa, pb)
    hull = ops.maximum(hw * hh, EPS)
    return inter / ops.maximum(union, EPS) - (hull - union) / hull


def inner_iou(a, b, ratio=DEFAULT_INNER_RATIO):
    """IoU of auxiliary boxes with the same centres and sides scaled by ``ratio``."""
    if ratio <= 0:
        raise ValueError(f"inner_iou ratio must be positive, got {ratio}")
    ops, pa, pb = _unpack(a, b)
    return _iou(ops, _scaled(pa, ratio), _scaled(pb, ratio))


def _siou_terms(ops, pa, pb):
    inter, union, hull_w, hull_h = _overlap(ops, pa, pb)
    value_iou = inter / ops.maximum(union, EPS)
    dx = pb[0] - pa[0]
    dy = pb[1] - pa[1]
    sigma2 = ops.maximum(dx * dx + dy * dy, EPS * EPS)
    # 1 - 2 sin^2(asin(|dy|/σ) - π/4) == sin(2·asin(|dy|/σ)) == 2|dx||dy|/σ²
    angle = 2.0 * ops.abs(dx * dy) / sigma2
    gamma = 2.0 - angle
    rho_x = (dx / ops.maximum(hull_w, EPS)) ** 2
    rho_y = (dy / ops.maximum(hull_h, EPS)) ** 2
    distance = (1.0 - ops.exp(-gamma * rho_x)) + (1.0 - ops.exp(-gamma * rho_y))
    omega_w = ops.abs(pa[2] - pb[2]) / ops.maximum(ops.maximum(pa[2], pb[2]), EPS)
    omega_h = ops.abs(pa[3] - pb[3]) / ops.maximum(ops.maximum(pa[3], pb[3]), EPS)
    shape = (1.0 - ops.exp(-omega_w)) ** SHAPE_THETA + (1.0 - ops.exp(-omega_h)) ** SHAPE_THETA
    loss = 1.0 - value_iou + (distance + shape) * 0.5
    return loss, value_iou, angle, distance, shape


def siou_loss(a, b):
    """SIoU loss of prediction ``a`` against ground truth ``b``.

    Returns ``(loss, angle_cost, distance_cost, shape_cost)``.
    """
    ops, pa, pb = _unpack(a, b)
    loss, _, angle, distance, shape = _siou_terms(ops, pa, pb)
    return loss, angle, distance, shape


def inner_siou_loss(a, b, ratio=DEFAULT_INNER_RATIO):
    """L_SIoU + IoU − Inner-IoU(ratio); zero for identical boxes."""
    if ratio <= 0:
        raise ValueError(f"inner_siou_loss ratio must be positive, got {ratio}")
    ops, pa, pb = _unpack(a, b)
    loss, value_iou, _, _, _ = _siou_terms(ops, pa, pb)
    return loss + value_iou - _iou(ops, _scaled(pa, ratio), _scaled(pb, ratio))


def giou_loss(a, b):
    return 1.0 - giou(a, b)


LOSS_KINDS = ("giou", "siou", "inner_siou")


def box_loss(a, b, kind="inner_siou", ratio=DEFAULT_INNER_RATIO):
    if kind == "giou":
        return giou_loss(a, b)
    if kind == "siou":
        return siou_loss(a, b)[0]
    if kind == "inner_siou":
        return inner_siou_loss(a, b, ratio)
    raise ValueError(f"unknown box loss {kind!r}; choose from {LOSS_KINDS}")


def loss_breakdown(a, b, ratio=DEFAULT_INNER_RATIO) -> LossBreakdown:
    """Every measure for a single (prediction, ground truth) pair."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    loss, angle, distance, shape = siou_loss(a, b)
    return LossBreakdown(
        iou=float(iou(a, b)),
        giou=float(giou(a, b)),
        siou=float(loss),
        inner_iou=float(inner_iou(a, b, ratio)),
        inner_siou=float(inner_siou_loss(a, b, ratio)),
        angle_cost=float(angle),
        distance_cost=float(distance),
        shape_cost=float(shape),
    )
