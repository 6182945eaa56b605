"""Deterministic training and evaluation loops for the toy detector."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import head as H
from .model import ToyDetector, ToyDetectorConfig
from .params import ParamStore
from .tensor import Graph, Tensor

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay, applied to conv weights only."""

    def __init__(self, store: ParamStore, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in store.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in store.tensors.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.store.tensors.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd and name.endswith(".weight"):
                p.data = p.data * (1.0 - self.lr * self.wd)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepLog:
    step: int
    loss: float
    cls: float
    l1: float
    box: float

    def line(self):
        return (f"step={self.step} loss={self.loss:.8f} cls={self.cls:.8f} "
                f"l1={self.l1:.8f} box={self.box:.8f}")


def stack_images(samples):
    return Tensor(np.concatenate([s.image.data for s in samples], axis=0))


def loss_and_grads(model: ToyDetector, samples):
    """One forward/backward pass; gradients land in model.store."""
    cfg = model.config
    model.store.zero_grad()
    with Graph() as g:
        pred = model.forward(stack_images(samples))
        gts = [s.gt for s in samples]
        matches = H.match_batch(pred, gts, cfg.cost_weights, cfg.inner_ratio)
        parts = H.detection_loss(pred, gts, matches, cfg.loss, cfg.inner_ratio)
    g.backward(parts.total)
    return parts


def batch_schedule(n_samples, batch_size, steps, seed, overfit=False):
    """Yield index lists; epochs are reshuffled from a seeded generator."""
    batch_size = min(batch_size, n_samples)
    if overfit:
        for _ in range(steps):
            yield list(range(batch_size))
        return
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBA7C]))
    order = []
    for _ in range(steps):
        if len(order) < batch_size:
            order.extend(rng.permutation(n_samples).tolist())
        batch, order = order[:batch_size], order[batch_size:]
        yield batch


def lr_at(cfg: ToyDetectorConfig, step, steps):
    """Step size for 1-based ``step`` of a ``steps``-long run."""
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * (step - 1) / steps))
    return cfg.lr


def train(model: ToyDetector, dataset, steps, seed=0, overfit=False, on_step=None):
    cfg = model.config
    opt = AdamW(model.store, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                weight_decay=cfg.weight_decay)
    history = []
    for step, idx in enumerate(batch_schedule(len(dataset), cfg.batch_size, steps, seed, overfit), 1):
        parts = loss_and_grads(model, [dataset[i] for i in idx])
        opt.lr = lr_at(cfg, step, steps)
        opt.step()
        rec = StepLog(step, parts.total.item(), parts.cls, parts.l1, parts.box)
        history.append(rec)
        if on_step is not None:
            on_step(rec)
    return history


def predict(model: ToyDetector, dataset, batch_size=16):
    out = []
    for i in range(0, len(dataset), batch_size):
        chunk = dataset[i:i + batch_size]
        pred = model.forward(stack_images(chunk))
        for j in range(len(chunk)):
            out.append((pred.logits.data[j, :, :, 0], pred.boxes.data[j, :, :, 0].T))
    return out


def evaluate(model: ToyDetector, dataset, iou=0.5, score_threshold=None):
    """Return (AP over 0.50:0.95, AP at ``iou``)."""
    thr = model.config.score_threshold if score_threshold is None else score_threshold
    dets = [H.decode(lg, bx, thr) for lg, bx in predict(model, dataset)]
    gts = [s.gt for s in dataset]
    ap = float(np.mean([H.average_precision(dets, gts, t) for t in H.COCO_IOU_THRESHOLDS]))
    return ap, H.average_precision(dets, gts, iou)


def build(config: ToyDetectorConfig, seed=0) -> ToyDetector:
    return ToyDetector(config, seed)
