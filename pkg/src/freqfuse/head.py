"""NMS-free detection head: one-to-one matching, set loss, decoding and AP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from . import boxes as B
from . import tensor as T
from .nn import bce_with_logits
from .tensor import ContractError, Tensor

DEFAULT_COST_WEIGHTS = (2.0, 5.0, 2.0)
L1_WEIGHT = 5.0
BOX_WEIGHT = 2.0


@dataclass
class Predictions:
    logits: Tensor  # (n, num_classes, Q, 1)
    boxes: Tensor  # (n, 4, Q, 1), sigmoid-activated cxcywh

    @property
    def num_queries(self):
        return self.logits.shape[2]


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]
    unmatched: list[int]
    total_cost: float
    cost: np.ndarray | None = field(default=None, repr=False)


def hungarian(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost one-to-one assignment covering min(rows, cols) pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix has non-finite entries")
    if cost.size == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    rows, cols = linear_sum_assignment(cost)
    return rows.astype(np.intp), cols.astype(np.intp)


def match_cost(logits, boxes, gt: B.BoxSet, weights=DEFAULT_COST_WEIGHTS,
               ratio=B.DEFAULT_INNER_RATIO) -> np.ndarray:
    """(Q, G) cost for one image.

    logits: (K, Q) raw class scores; boxes: (Q, 4) cxcywh.
    """
    w_cls, w_l1, w_iou = weights
    if min(weights) < 0:
        raise ContractError(f"cost weights must be non-negative, got {weights}")
    logits = np.asarray(logits, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    q = boxes.shape[0]
    if len(gt) == 0:
        return np.zeros((q, 0))
    prob = expit(logits)[gt.class_ids].T  # (Q, G)
    l1 = np.abs(boxes[:, None, :] - gt.boxes[None, :, :]).sum(axis=-1)
    sim = B.inner_iou(boxes[:, None, :], gt.boxes[None, :, :], ratio)
    return w_cls * (1.0 - prob) + w_l1 * l1 + w_iou * (1.0 - sim)


def match(logits, boxes, gt: B.BoxSet, weights=DEFAULT_COST_WEIGHTS,
          ratio=B.DEFAULT_INNER_RATIO) -> MatchResult:
    cost = match_cost(logits, boxes, gt, weights, ratio)
    rows, cols = hungarian(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    taken = set(rows.tolist())
    unmatched = [i for i in range(cost.shape[0]) if i not in taken]
    return MatchResult(pairs, unmatched, float(cost[rows, cols].sum()), cost)


def match_batch(pred: Predictions, gts, weights=DEFAULT_COST_WEIGHTS, ratio=B.DEFAULT_INNER_RATIO):
    out = []
    for i, gt in enumerate(gts):
        out.append(match(pred.logits.data[i, :, :, 0], pred.boxes.data[i, :, :, 0].T, gt,
                         weights, ratio))
    return out


@dataclass
class LossParts:
    total: Tensor
    cls: float
    l1: float
    box: float


def detection_loss(pred: Predictions, gts, matches, box_kind="inner_siou",
                   ratio=B.DEFAULT_INNER_RATIO) -> LossParts:
    """BCE over every (query, class) + 5·L1 + 2·box loss on matched pairs.

    Unmatched queries are pushed toward background (all-zero targets). The sum
    is divided by max(1, total ground-truth count in the batch).
    """
    n, k, q, _ = pred.logits.shape
    targets = np.zeros((n, k, q, 1))
    bidx, qidx, gt_boxes = [], [], []
    for i, (gt, m) in enumerate(zip(gts, matches)):
        for qi, gi in m.pairs:
            targets[i, gt.class_ids[gi], qi, 0] = 1.0
            bidx.append(i)
            qidx.append(qi)
            gt_boxes.append(gt.boxes[gi])
    num_gt = sum(len(gt) for gt in gts)
    norm = 1.0 / max(1, num_gt)

    cls = T.sum(bce_with_logits(pred.logits, targets))
    total = cls
    l1_val = box_val = 0.0
    if bidx:
        picked = T.take_queries(pred.boxes, bidx, qidx)
        target = B.as_tensor_boxes(np.array(gt_boxes))
        l1 = T.sum(T.abs(T.sub(picked, target)))
        box = T.sum(B.box_loss(picked, target, box_kind, ratio))
        total = T.add(T.add(total, T.scale(l1, L1_WEIGHT)), T.scale(box, BOX_WEIGHT))
        l1_val, box_val = l1.item() * norm, box.item() * norm
    return LossParts(T.scale(total, norm), cls.item() * norm, l1_val, box_val)


def decode(pred_logits, pred_boxes, score_threshold=0.0) -> B.BoxSet:
    """Every query whose best class probability reaches the threshold, best first.

    pred_logits: (K, Q), pred_boxes: (Q, 4). No suppression of any kind.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ValueError(f"score threshold must lie in [0, 1], got {score_threshold}")
    # cap below 1 so a saturated sigmoid never meets threshold 1
    prob = np.minimum(expit(np.asarray(pred_logits, dtype=np.float64)), np.nextafter(1.0, 0.0))
    cls = np.argmax(prob, axis=0)
    score = prob[cls, np.arange(prob.shape[1])]
    keep = np.nonzero(score >= score_threshold)[0]
    order = keep[np.argsort(-score[keep], kind="stable")]
    return B.BoxSet(np.asarray(pred_boxes)[order], cls[order], score[order])


RECALL_POINTS = np.linspace(0.0, 1.0, 101)
COCO_IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)


def _as_list(x):
    return [x] if isinstance(x, B.BoxSet) else list(x)


def average_precision(dets, gts, iou_threshold=0.5) -> float:
    """101-point interpolated AP, averaged over classes present in the ground truth.

    ``dets`` / ``gts`` are a BoxSet each or equal-length lists (one per image).
    Detections are matched greedily by descending score to the unmatched
    same-class ground truth with the highest IoU at or above the threshold.
    """
    dets, gts = _as_list(dets), _as_list(gts)
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection sets for {len(gts)} images")
    classes = sorted({int(c) for g in gts for c in g.class_ids})
    if not classes:
        return 0.0
    aps = []
    for cls in classes:
        scores, hits = [], []
        total = 0
        for d, g in zip(dets, gts):
            gmask = g.class_ids == cls
            gb = g.boxes[gmask]
            total += len(gb)
            dmask = d.class_ids == cls
            db = d.boxes[dmask]
            ds = d.scores[dmask] if d.scores is not None else np.ones(len(db))
            order = np.argsort(-ds, kind="stable")
            used = np.zeros(len(gb), dtype=bool)
            ious = B.iou(db[:, None, :], gb[None, :, :]) if len(gb) and len(db) else None
            for j in order:
                scores.append(ds[j])
                hit = False
                if ious is not None:
                    cand = np.where(used, -1.0, ious[j])
                    best = int(np.argmax(cand))
                    if cand[best] >= iou_threshold:
                        used[best] = True
                        hit = True
                hits.append(hit)
        aps.append(_interpolated_ap(np.array(scores), np.array(hits, dtype=bool), total))
    return float(np.mean(aps))


def _interpolated_ap(scores, hits, total):
    if total == 0 or len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(hits[order])
    fp = np.cumsum(~hits[order])
    recall = tp / total
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def coco_ap(dets, gts):
    """(AP averaged over IoU 0.50:0.95:0.05, AP at 0.50)."""
    per = [average_precision(dets, gts, t) for t in COCO_IOU_THRESHOLDS]
    return float(np.mean(per)), per[0]
