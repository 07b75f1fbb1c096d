"""LoRA fine-tuning on long-tailed emitter labels.

The pretrained backbone is frozen bitwise; only the rank-r adapters on
the encoder linears and the classifier head receive gradient. The
learning rate warms up linearly over the first 10 epochs and afterwards
decays by 10x every 15 epochs, counted from the end of warmup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .losses import classification_loss
from .metrics import EvalReport, classification_report
from .model import RadarPosModel
from .optim import AdamW
from .tensor import no_grad


@dataclass(frozen=True)
class FinetuneSchedule:
    epochs: int = 50
    base_lr: float = 2.5e-5
    warmup_epochs: int = 10
    decay_factor: float = 0.1
    decay_every: int = 15


def lr_at(epoch: int, sched: FinetuneSchedule) -> float:
    """lr(e) = base * (e+1)/warmup while warming up, then stepped decay."""
    if not 0 <= epoch < sched.epochs:
        raise ConfigError(f"epoch {epoch} outside schedule [0, {sched.epochs})")
    if epoch < sched.warmup_epochs:
        return sched.base_lr * (epoch + 1) / sched.warmup_epochs
    steps = (epoch - sched.warmup_epochs) // sched.decay_every
    return sched.base_lr * sched.decay_factor**steps


def finetune(model: RadarPosModel, records, sched: FinetuneSchedule,
             rank: int = 8, seed: int = 0, batch_size: int = 256,
             weight_decay: float = 0.01, log_fn=None) -> list:
    """Train adapters + classifier head in place; returns epoch history."""
    if not records:
        raise ConfigError("fine-tuning requires a non-empty dataset")
    model.attach_lora(rank, seed=seed)
    model.freeze_for_finetune()
    reinit_classifier(model, seed)
    if sched.epochs == 0:
        return []
    trainables = {n: p for n, p in model.parameters().items() if p.trainable}
    opt = AdamW(trainables, lr=lr_at(0, sched), weight_decay=weight_decay)
    n = len(records)
    labels_all = np.array([r.label for r in records])
    history = []

    for epoch in range(sched.epochs):
        opt.lr = lr_at(epoch, sched)
        order = np.random.default_rng(
            np.random.SeedSequence([seed, 3, epoch])
        ).permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            feats = np.stack([records[i].features for i in idx]).astype(np.float64)
            toas = np.stack([records[i].toa_track for i in idx])
            logits = model.forward_classify(feats, toas)
            loss = classification_loss(logits, labels_all[idx])
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_losses.append(loss.item())
        entry = {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "lr": opt.lr}
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
    return history


def reinit_classifier(model: RadarPosModel, seed: int):
    """Fresh head for the downstream task, independent of the checkpoint."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    w = model.param("classifier.weight")
    w.data = (rng.normal(0.0, 0.02, w.data.shape)).astype(model.dtype)
    w.grad = np.zeros_like(w.data)
    b = model.param("classifier.bias")
    b.data = np.zeros_like(b.data)
    b.grad = np.zeros_like(b.data)


def predict(model: RadarPosModel, records, batch_size: int = 128) -> np.ndarray:
    preds = []
    with no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            feats = np.stack([r.features for r in chunk]).astype(np.float64)
            toas = np.stack([r.toa_track for r in chunk])
            logits = model.forward_classify(feats, toas)
            preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds)


def evaluate(model: RadarPosModel, records, scenario=None,
             batch_size: int = 128) -> EvalReport:
    """Argmax classification of ``records``; macro-averaged metrics."""
    if not records:
        raise ConfigError("evaluation requires a non-empty split")
    y_pred = predict(model, records, batch_size)
    y_true = np.array([r.label for r in records])
    return classification_report(y_true, y_pred, model.cfg.n_classes, scenario)
