"""Loss, SGD with momentum, cosine schedule, training loop and evaluation metrics."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import Dataset
from .diffcore import Tensor, backward, no_grad, reshape, save_checkpoint, softmax_cross_entropy
from .errors import ConfigError, ContractError
from .network import PointCloudTransformer

log = logging.getLogger(__name__)

EVAL_BATCH = 32


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over rows of ``logits`` (…, C); labels share the leading shape."""
    labels = np.asarray(labels)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    if logits.ndim != 2:
        logits = reshape(logits, (-1, n_cls))
    return softmax_cross_entropy(logits, labels.reshape(-1).astype(np.int64))


def cosine_lr(t: float, total: float, lr0: float = 0.01, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr0`` at ``t=0`` to ``lr_min`` at ``t=total`` (clamped beyond)."""
    if total <= 0 or t >= total:
        return lr_min
    t = max(t, 0.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


@dataclass
class OptimState:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    total_epochs: int = 250
    current_epoch: int = 0

    @property
    def lr(self) -> float:
        return cosine_lr(self.current_epoch, self.total_epochs, self.lr0)


def sgd_step(params, opt: OptimState, lr: Optional[float] = None):
    """Velocity-form momentum: ``v <- m v + (g + wd theta)``, ``theta <- theta - lr v``."""
    lr = opt.lr if lr is None else lr
    for p in params:
        g = p.grad + opt.weight_decay * p.data if opt.weight_decay else p.grad
        p.velocity *= opt.momentum
        p.velocity += g
        p.data -= lr * p.velocity


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    oa: float


@dataclass
class TrainResult:
    model: PointCloudTransformer
    log: list
    best_epoch: int
    best_state: dict


def batch_arrays(samples, in_channels: int) -> tuple:
    return np.stack([s.features(in_channels) for s in samples]), np.stack([s.coords for s in samples])


def _targets(samples, task: str) -> np.ndarray:
    if task == "cls":
        if any(s.class_label is None for s in samples):
            raise ContractError("classification needs class labels on every sample")
        return np.array([s.class_label for s in samples], dtype=np.int64)
    if any(s.point_labels is None for s in samples):
        raise ContractError("segmentation needs per-point labels on every sample")
    return np.stack([s.point_labels for s in samples])


def check_compatible(model: PointCloudTransformer, dataset: Dataset):
    cfg = model.cfg
    if cfg.task == "cls" and dataset.num_classes > cfg.num_classes:
        raise ConfigError(f"num_classes: data has {dataset.num_classes} classes, config {cfg.num_classes}", field="num_classes")
    if cfg.task == "seg" and (dataset.num_parts or 0) > cfg.num_parts:
        raise ConfigError(f"num_parts: data has {dataset.num_parts} part labels, config {cfg.num_parts}", field="num_parts")
    n = len(dataset.samples[0]) if dataset.samples else 0
    if n != cfg.input_points:
        raise ConfigError(f"input_points: data has {n} points per sample, config {cfg.input_points}", field="input_points")


def predict(model: PointCloudTransformer, dataset: Dataset, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode argmax predictions: (num_samples,) for classification, (num_samples, n) for segmentation."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for start in range(0, len(dataset), batch_size):
                feats, coords = batch_arrays(dataset.samples[start : start + batch_size], model.cfg.in_channels)
                out.append(np.argmax(model(feats, coords).data, axis=-1))
    finally:
        model.train(was_training)
    return np.concatenate(out, axis=0)


def train(
    model: PointCloudTransformer,
    dataset: Dataset,
    cfg: TrainConfig,
    checkpoint: Optional[str] = None,
    log_path: Optional[str] = None,
) -> TrainResult:
    """Mini-batch SGD over ``dataset``.

    Each epoch logs the epoch's learning rate, the mean training loss and the
    eval-mode accuracy over the training set after the epoch's updates (point
    accuracy for segmentation).  The state with the lowest training loss is
    kept and written to ``checkpoint``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    check_compatible(model, dataset)
    task = model.cfg.task
    targets = _targets(dataset.samples, task)
    feats_all, coords_all = batch_arrays(dataset.samples, model.cfg.in_channels)
    opt = OptimState(cfg.lr, cfg.momentum, cfg.weight_decay, cfg.epochs)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    history = []
    best = (math.inf, -1, None)
    for epoch in range(cfg.epochs):
        opt.current_epoch = epoch
        lr = opt.lr
        model.train()
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            model.zero_grad()
            loss = cross_entropy(model(feats_all[sel], coords_all[sel]), targets[sel])
            backward(loss)
            sgd_step(params, opt, lr)
            total += loss.item() * len(sel)
            count += len(sel)
        mean_loss = total / count
        pred = predict(model, dataset)
        oa = float(np.mean(pred == targets))
        history.append(EpochLog(epoch, lr, mean_loss, oa))
        log.info("epoch %d lr %.6f loss %.5f oa %.4f", epoch, lr, mean_loss, oa)
        if mean_loss < best[0]:
            best = (mean_loss, epoch, copy.deepcopy(model.state_dict()))
    if log_path is not None:
        write_log(log_path, history)
    if checkpoint is not None:
        save_checkpoint(checkpoint, best[2])
    return TrainResult(model, history, best[1], best[2])


def write_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss", "oa"])
        for row in history:
            w.writerow([row.epoch, repr(row.lr), repr(row.loss), repr(row.oa)])


# -- metrics -----------------------------------------------------------------


@dataclass
class MetricsReport:
    OA: Optional[float] = None
    mAcc: Optional[float] = None
    cat_mIoU: Optional[float] = None
    inst_mIoU: Optional[float] = None
    per_class_iou: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)


def confusion_matrix(truth, pred, n: int) -> np.ndarray:
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    return np.bincount(truth * n + pred, minlength=n * n).reshape(n, n)


def overall_accuracy(conf: np.ndarray) -> float:
    return float(np.trace(conf) / conf.sum())


def mean_class_accuracy(conf: np.ndarray) -> float:
    """Mean recall over the classes that occur in the ground truth."""
    support = conf.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(conf)[present] / support[present]))


def _iou(truth, pred, labels) -> dict:
    out = {}
    for c in labels:
        t, p = truth == c, pred == c
        union = np.logical_or(t, p).sum()
        out[int(c)] = float(np.logical_and(t, p).sum() / union) if union else 1.0
    return out


def classification_metrics(truth, pred, num_classes: int) -> MetricsReport:
    conf = confusion_matrix(truth, pred, num_classes)
    return MetricsReport(OA=overall_accuracy(conf), mAcc=mean_class_accuracy(conf))


def segmentation_metrics(truth, pred) -> MetricsReport:
    """Part IoUs pooled over all points; instance mIoU averages each sample's mean part IoU.

    A sample's parts are those present in its ground truth or prediction.
    """
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    present = np.unique(truth)
    per_class = _iou(truth.reshape(-1), pred.reshape(-1), present)
    inst = []
    for t, p in zip(truth, pred):
        ious = _iou(t, p, np.union1d(np.unique(t), np.unique(p)))
        inst.append(np.mean(list(ious.values())))
    return MetricsReport(
        OA=float(np.mean(truth == pred)),
        cat_mIoU=float(np.mean(list(per_class.values()))),
        inst_mIoU=float(np.mean(inst)),
        per_class_iou=per_class,
    )


def evaluate(model: PointCloudTransformer, dataset: Dataset, task: Optional[str] = None) -> MetricsReport:
    task = task or model.cfg.task
    if task != model.cfg.task:
        raise ContractError(f"task {task!r} does not match the model's {model.cfg.task!r}")
    check_compatible(model, dataset)
    truth = _targets(dataset.samples, task)
    pred = predict(model, dataset)
    if task == "cls":
        return classification_metrics(truth, pred, model.cfg.num_classes)
    return segmentation_metrics(truth, pred)
