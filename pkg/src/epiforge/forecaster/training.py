"""Adam training with early stopping on validation loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..errors import HistoryError
from .features import curve_pairs, first_valid_index
from .model import ForecastModel, ModelConfig, dropout_masks, forward_batch, init_model, loss_and_grad, \
    batch_loss_grad

log = logging.getLogger(__name__)

MIN_IMPROVEMENT = 1e-9


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False


def column_scales(curves) -> np.ndarray:
    """Per-column maxima over the training curves (1 where a column is all zero)."""
    mx = np.max(np.stack([c.values.max(axis=0) for c in curves]), axis=0)
    return np.where(mx > 0, mx, 1.0)


def evaluate_loss(model: ForecastModel, x1, x2, z, batch_size: int = 1024) -> float:
    """Mean objective over normalised pairs, dropout off."""
    cfg = model.config
    total = 0.0
    n = x1.shape[0]
    for s in range(0, n, batch_size):
        z_hat, _ = forward_batch(model, x1[s:s + batch_size], x2[s:s + batch_size])
        val, _ = batch_loss_grad(z[s:s + batch_size], z_hat, cfg.mu, cfg.lam, cfg.K, model.scales)
        total += val * z_hat.shape[0]
    return total / n


def make_pairs(dataset, config: ModelConfig):
    """Normalisation-free training arrays plus the split each target falls in."""
    b = config.b_effective
    need = first_valid_index(config.a, b, config.season_length) + 1
    total = len(dataset.curves) * dataset.weeks
    if total < need:
        raise HistoryError(f"dataset has {total} weeks of concatenated history; at least {need} needed "
                           f"for a={config.a}, b={b}", shortfall=need - total)
    if dataset.weeks != config.season_length:
        raise HistoryError(f"curves have {dataset.weeks} weeks but season_length={config.season_length}")
    x1, x2, z, which = curve_pairs(dataset.curves, config.a, b, config.season_length)
    part_of = np.empty(len(dataset.curves), dtype=object)
    for name, idx in dataset.split.items():
        part_of[list(idx)] = name
    return x1, x2, z, part_of[which]


def train(model: ForecastModel | None, dataset, config: ModelConfig, seed: int = 0,
          progress=None) -> tuple[ForecastModel, TrainingHistory]:
    """Fit a model to one-week-ahead targets built from ``dataset``.

    If ``model`` is None a fresh one is initialised from ``seed``. The
    returned model is the snapshot with the lowest validation loss (the
    earliest one on ties). Without validation pairs, training loss is used.
    """
    x1, x2, z, part = make_pairs(dataset, config)
    tr = part == "train"
    if not tr.any():
        raise HistoryError("no training pairs: training curves are too short for the configured windows")
    va = part == "validate"
    train_curves = [dataset.curves[i] for i in dataset.split["train"]]
    if model is None:
        model = init_model(config, seed, scales=column_scales(train_curves))
    else:
        model = model.copy()
        if model.config != config:
            model = ForecastModel(config, model.params, model.scales)
    s0 = model.scales[0]
    X1, X2, Z = x1 / s0, x2 / s0, z / model.scales
    tx1, tx2, tz = X1[tr], X2[tr], Z[tr]
    vx1, vx2, vz = (X1[va], X2[va], Z[va]) if va.any() else (tx1, tx2, tz)

    opt = Adam(model.params, lr=config.lr)
    hist = TrainingHistory()
    best = model.copy()
    best_val = evaluate_loss(model, vx1, vx2, vz)
    hist.best_epoch, hist.best_val_loss = 0, best_val
    stale = 0
    n = tx1.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        rng = rngmod.make_rng(seed, rngmod.TRAIN, epoch)
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            masks = tuple(dropout_masks(config.dropout_rate, (idx.size, config.H), rng, 2))
            val, grads = loss_and_grad(model, tx1[idx], tx2[idx], tz[idx], masks)
            opt.step(model.params, grads)
            running += val * idx.size
        v = evaluate_loss(model, vx1, vx2, vz)
        hist.train_loss.append(running / n)
        hist.val_loss.append(v)
        if progress:
            progress(epoch, running / n, v)
        if v < best_val - MIN_IMPROVEMENT:
            best_val, best, stale = v, model.copy(), 0
            hist.best_epoch, hist.best_val_loss = epoch, v
        else:
            stale += 1
            if stale >= config.patience:
                hist.stopped_early = True
                break
    log.info("training stopped after %d epochs; best epoch %d (val %.6g)",
             len(hist.val_loss), hist.best_epoch, hist.best_val_loss)
    return best, hist
