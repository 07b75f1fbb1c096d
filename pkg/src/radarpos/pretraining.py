"""Pretraining loop: masked position prediction over simulated pulses.

Each step tokenizes a batch, draws per-sample mask plans, assembles the
masked token matrix, runs encoder -> decoder -> projector, evaluates the
attention-weighted smoothed position loss, and takes one AdamW step.
Everything is derived from the root seed through named seed sequences,
so reruns are bitwise identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericAbort
from .losses import (attention_weights_batch, position_loss, radarpos_loss,
                     smoothing_weights)
from .model import RadarPosModel, plan_mask
from .optim import AdamW
from .tensor import no_grad


@dataclass
class PretrainHyper:
    epochs: int = 300
    batch_size: int = 256
    lr: float = 1e-5
    sigma: float = 0.9
    temperature: float = 0.95
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    reduction: str = "mean"


@dataclass
class PretrainResult:
    history: list = field(default_factory=list)  # per-epoch dicts
    final_loss: float | None = None


def _batch_arrays(records, idx):
    feats = np.stack([records[i].features for i in idx]).astype(np.float64)
    toas = np.stack([records[i].toa_track for i in idx])
    return feats, toas


def _mask_plans(cfg, root_seed, epoch, step, count):
    seeds = np.random.SeedSequence([root_seed, 1, epoch, step]).generate_state(count)
    return [plan_mask(cfg.n_patches, cfg.mask_ratio, int(s)) for s in seeds]


def pretrain(model: RadarPosModel, records, hyper: PretrainHyper, seed: int = 0,
             log_fn=None) -> PretrainResult:
    """Train ``model`` in place; returns the per-epoch loss history.

    ``log_fn``, when given, receives one dict per epoch (epoch, loss, lr,
    wall_ms). Aborts with :class:`NumericAbort` the moment a batch loss
    stops being finite, reporting the batch index and the loss history
    so far.
    """
    if not records:
        raise ConfigError("pretraining requires a non-empty dataset")
    cfg = model.cfg
    w_star = smoothing_weights(cfg.n_patches, hyper.sigma)
    opt = AdamW(model.parameters(), lr=hyper.lr, betas=hyper.betas,
                eps=hyper.eps, weight_decay=hyper.weight_decay)
    result = PretrainResult()
    loss_history = []
    batch_index = 0
    n = len(records)

    for epoch in range(hyper.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence([seed, 0, epoch])
        ).permutation(n)
        epoch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            feats, toas = _batch_arrays(records, idx)
            plans = _mask_plans(cfg, seed, epoch, start, len(idx))
            o, cls_out, patch_out = model.forward_pretrain(feats, toas, plans)
            # The attention weights act as fixed per-row coefficients here
            # (detached). Backpropagating through them lets the model zero
            # the weight of every masked row instead of predicting
            # positions, and training collapses.
            attn = attention_weights_batch(cls_out, patch_out, hyper.temperature).detach()
            loss = radarpos_loss(o, plans, w_star, attn, reduction=hyper.reduction)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericAbort(
                    f"non-finite loss {value} at batch {batch_index}",
                    batch_index=batch_index,
                    loss_history=loss_history[-50:],
                )
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_losses.append(value)
            loss_history.append(value)
            batch_index += 1
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)),
            "lr": hyper.lr,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        result.history.append({"epoch": entry["epoch"], "loss": entry["loss"], "lr": hyper.lr})
        if log_fn is not None:
            log_fn(entry)

    result.final_loss = result.history[-1]["loss"] if result.history else None
    return result


def masked_position_ce(model: RadarPosModel, records, seed: int = 0,
                       batch_size: int = 64) -> float:
    """Mean plain position cross-entropy over masked rows, deterministic
    per (seed, record index); the criterion used to judge whether
    pretraining actually learned positions."""
    cfg = model.cfg
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(records), batch_size):
            idx = list(range(start, min(start + batch_size, len(records))))
            feats, toas = _batch_arrays(records, idx)
            seeds = np.random.SeedSequence([seed, 7, start]).generate_state(len(idx))
            plans = [plan_mask(cfg.n_patches, cfg.mask_ratio, int(s)) for s in seeds]
            o, _, _ = model.forward_pretrain(feats, toas, plans)
            loss = position_loss(o, plans, reduction="sum")
            total += loss.item()
            count += sum(p.masked_count for p in plans)
    return total / count
