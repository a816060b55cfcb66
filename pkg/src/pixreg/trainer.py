"""Patch-based training loop and whole-image evaluation."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import segnet
from .data import ImageSample, PatchSpec, patch_dataset
from .metrics import MetricsReport, metrics_report
from .optim import AdamState, adam_step, lr_schedule
from .regularizers import (
    ObjectiveKind,
    RegularizerConfig,
    batch_objective,
    bce_value_grad,
)

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    base_lr: float = 1e-3
    lr_decay_every: int = 25
    lr_decay_factor: float = 10.0
    batch_size: int = 32
    objective: ObjectiveKind = ObjectiveKind.BASELINE
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    seed: int = 0
    patches_per_image: int = 4750
    patch_size: int = 48
    dtype: str = "float32"
    threads: int = 1

    def __post_init__(self):
        for name in ("batch_size", "lr_decay_every", "patches_per_image", "patch_size", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or not self.base_lr > 0 or not self.lr_decay_factor > 0:
            raise ValueError("epochs must be >= 0 and learning-rate settings positive")

    def lr(self, epoch: int) -> float:
        return lr_schedule(epoch, self.base_lr, self.lr_decay_every, self.lr_decay_factor, self.epochs)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    reg_value: float
    val_acc: float = float("nan")
    val_auc: float = float("nan")


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "lr", "loss", "reg_value", "val_acc", "val_auc")

    def __len__(self):
        return len(self.records)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, f"{r.lr:.9g}", f"{r.loss:.12g}", f"{r.reg_value:.12g}",
                            f"{r.val_acc:.9g}", f"{r.val_auc:.9g}"])

    @classmethod
    def from_csv(cls, path) -> TrainLog:
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[c]) for c in cls.COLUMNS[1:]))
                    for r in rows])


def _loss_and_grads(params, spec, x, t, kind, reg):
    probs, cache = segnet.forward(params, spec, x)
    loss = batch_objective(probs, t, kind, reg)
    return loss.value, loss.reg_value, segnet.backward(params, cache, loss.grad)


def batch_step(params, spec, x, t, cfg: TrainConfig, pool: ThreadPoolExecutor | None = None):
    """Loss, mean regularizer value and parameter gradients for one batch.

    With a pool the batch is cut into ``cfg.threads`` contiguous chunks whose
    results are combined in chunk order, weighted by chunk size.
    """
    x = x[:, None] if x.ndim == 3 else x
    t = t[:, None] if t.ndim == 3 else t
    if pool is None or cfg.threads == 1 or len(x) < 2:
        return _loss_and_grads(params, spec, x, t, cfg.objective, cfg.reg)
    bounds = np.linspace(0, len(x), min(cfg.threads, len(x)) + 1).astype(int)
    chunks = list(zip(bounds[:-1], bounds[1:]))
    futures = [pool.submit(_loss_and_grads, params, spec, x[a:b], t[a:b], cfg.objective, cfg.reg)
               for a, b in chunks]
    loss = reg = 0.0
    grads = {k: np.zeros_like(p) for k, p in params.items()}
    for (a, b), fut in zip(chunks, futures):
        w = (b - a) / len(x)
        lv, rv, g = fut.result()
        loss += w * lv
        reg += w * rv
        for k in grads:
            grads[k] += (w * g[k]).astype(grads[k].dtype)
    return loss, reg, grads


BatchHook = Callable[[int, int, dict, np.ndarray, np.ndarray, float], None]


def train(dataset, spec: segnet.NetworkSpec, cfg: TrainConfig, validation: list[ImageSample] | None = None,
          on_batch: BatchHook | None = None):
    """Train on ``dataset = (patches, masks)``, arrays of shape (P, s, s).

    Deterministic for a fixed ``cfg.seed`` and thread count. ``on_batch`` is
    called before each update with (epoch, batch index, params, x, t, loss).
    Returns the final parameters and the per-epoch log.
    """
    x_all, t_all = (np.asarray(a) for a in dataset)
    if len(x_all) == 0:
        raise ValueError("empty training set")
    if x_all.shape != t_all.shape:
        raise ValueError(f"patch shape {x_all.shape} != mask shape {t_all.shape}")
    params = segnet.init_params(spec, cfg.seed, np.dtype(cfg.dtype))
    state = AdamState.zeros_like(params)
    history = TrainLog()
    order_rng = np.random.default_rng([cfg.seed, 1])
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr(epoch)
            order = order_rng.permutation(len(x_all))
            loss_sum = reg_sum = 0.0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                x, t = x_all[idx], t_all[idx]
                loss, reg, grads = batch_step(params, spec, x, t, cfg, pool)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
                if on_batch is not None:
                    on_batch(epoch, b, params, x, t, loss)
                try:
                    params, state = adam_step(params, grads, state, lr)
                except FloatingPointError as exc:
                    raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
                loss_sum += loss * len(idx)
                reg_sum += reg * len(idx)
            rec = EpochRecord(epoch, lr, loss_sum / len(order), reg_sum / len(order))
            if validation:
                report = evaluate(params, spec, validation)
                rec.val_acc, rec.val_auc = report.acc, report.auc
            history.records.append(rec)
            log.info("epoch %d lr=%.1e loss=%.6f reg=%.6f val_auc=%.4f",
                     epoch, lr, rec.loss, rec.reg_value, rec.val_auc)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, history


def train_on_samples(samples: list[ImageSample], spec: segnet.NetworkSpec, cfg: TrainConfig,
                     validation: list[ImageSample] | None = None, on_batch: BatchHook | None = None):
    """Draw ``cfg.patches_per_image`` patches per sample, then :func:`train`."""
    if not samples:
        raise ValueError("empty training set")
    patches = patch_dataset(samples, PatchSpec(cfg.patch_size, cfg.patches_per_image, cfg.seed))
    return train(patches, spec, cfg, validation, on_batch)


def mean_bce(params, spec: segnet.NetworkSpec, dataset, batch_size: int = 64) -> float:
    """Pixel-mean BCE of the network over a patch dataset."""
    x_all, t_all = dataset
    total = 0.0
    for start in range(0, len(x_all), batch_size):
        probs, _ = segnet.forward(params, spec, x_all[start : start + batch_size, None])
        for p, t in zip(probs[:, 0], t_all[start : start + batch_size]):
            total += bce_value_grad(p, t).value
    return total / len(x_all)


def evaluate(params, spec: segnet.NetworkSpec, samples: list[ImageSample], threshold: float = 0.5,
             fov_only: bool = True) -> MetricsReport:
    """Pixel metrics over whole images, pooled across the dataset.

    With ``fov_only`` pixels outside a sample's field of view are ignored
    (samples without a fov contribute every pixel).
    """
    if not samples:
        raise ValueError("empty evaluation set")
    scores, truth = [], []
    for s in samples:
        p = segnet.predict(params, spec, s.image)
        keep = s.fov.astype(bool) if (fov_only and s.fov is not None) else np.ones(p.shape, bool)
        scores.append(p[keep])
        truth.append(s.mask[keep] >= 0.5)
    return metrics_report(np.concatenate(scores), np.concatenate(truth), threshold)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["objective"] = cfg.objective.value
    d["reg"] = {k: getattr(v, "value", v) for k, v in asdict(cfg.reg).items()}
    return d


def gradient_check(spec: segnet.NetworkSpec, seed: int, kind: ObjectiveKind, lam: float = 0.5,
                   size: int = 8, batch: int = 2, entries: int | None = None, step: float = 1e-5,
                   kink_margin: float = 1e-4) -> float:
    """Max relative error of end-to-end parameter gradients vs central differences.

    Runs in float64 on a random ``size`` x ``size`` batch. Biases are jittered
    away from zero. Central differences are meaningless across a ReLU or
    max-pool switch, so draws whose nearest switch is closer than
    ``kink_margin`` (ten steps by default) are redrawn from the same seed
    sequence before any gradient is compared. ``entries`` limits the check to
    that many largest-magnitude gradient entries (default: all). The error is
    max |analytic - numeric| / max |numeric| over checked entries.
    """
    for attempt in range(100):
        rng = np.random.default_rng([seed, attempt])
        params = segnet.init_params(spec, seed * 100 + attempt, np.float64)
        for k in params:
            if k.endswith(".b"):
                params[k] = rng.normal(0, 0.1, params[k].shape)
        x = rng.random((batch, 1, size, size))
        t = (rng.random((batch, 1, size, size)) < 0.3).astype(np.float64)
        probs, cache = segnet.forward(params, spec, x, track_kinks=True)
        if cache.kink_margin >= kink_margin:
            break
    else:
        raise RuntimeError("no draw cleared the kink margin in 100 attempts")
    reg = RegularizerConfig(lam=lam)

    def loss(p):
        probs, _ = segnet.forward(p, spec, x)
        return batch_objective(probs, t, kind, reg).value

    grads = segnet.backward(params, cache, batch_objective(probs, t, kind, reg).grad)
    flat = [(k, i) for k in params for i in range(params[k].size)]
    if entries is not None:
        mags = np.array([abs(grads[k].flat[i]) for k, i in flat])
        flat = [flat[j] for j in np.argsort(-mags, kind="stable")[:entries]]
    analytic, numeric = [], []
    for k, i in flat:
        orig = params[k].flat[i]
        params[k].flat[i] = orig + step
        up = loss(params)
        params[k].flat[i] = orig - step
        down = loss(params)
        params[k].flat[i] = orig
        analytic.append(grads[k].flat[i])
        numeric.append((up - down) / (2 * step))
    analytic, numeric = np.array(analytic), np.array(numeric)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-300))
