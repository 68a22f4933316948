"""Phase-1 joint optimization of the forecaster and the shared augmentation
mask.

Each step samples a minibatch, regenerates references (fresh noise draws per
step when the reference mode is noise), perturbs the batch through the shared
mask, and updates every parameter (neural, AR, mask logits) with Adam plus
decoupled weight decay. Decay applies to weight matrices only, never to
biases or mask logits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import Scaler, WindowSet, invert_scaler
from .mask import Mask, apply_mask_node, size_penalty, smoothness_penalty
from .metrics import EvalBlock, UndefinedMetricError, corr_stats, rse
from .models import Forecaster
from .reference import ReferenceSpec, reference_batch

log = logging.getLogger("tsaliency.training")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    p0: int = 2
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    mask_enabled: bool = True
    ar_enabled: bool = True
    size_penalty_complement: bool = True
    feature_axis_smoothness: bool = True
    patience: int | None = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.weight_decay < 0:
            raise ValueError("lambdas and weight decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.p0 not in (1, 2, 3):
            raise ValueError(f"p0 must be 1, 2 or 3, got {self.p0}")


class AdamW:
    """Adam with decoupled weight decay. Decay hits only the names listed in
    ``decay_names``. Iteration order is sorted by name, so updates are
    deterministic."""

    def __init__(self, params: dict[str, Node], lr: float,
                 weight_decay: float = 0.0, decay_names: set[str] = frozenset(),
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay_names = set(decay_names)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if name in self.decay_names and self.weight_decay > 0:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def loss_l1(target, prediction: Node, mask: Mask | None, cfg: TrainConfig) -> Node:
    """Training objective: forecast MSE plus mask size and smoothness terms.
    ``target``/``prediction`` may be batched; the MSE already averages over
    the batch while the mask terms enter once."""
    target = target if isinstance(target, Node) else ad.constant(target)
    loss = ad.mse(target, prediction)
    if mask is not None:
        if cfg.lambda1 > 0:
            loss = loss + ad.constant(cfg.lambda1) * size_penalty(
                mask, cfg.p0, complement=cfg.size_penalty_complement)
        if cfg.lambda2 > 0:
            loss = loss + ad.constant(cfg.lambda2) * smoothness_penalty(
                mask, include_feature_axis=cfg.feature_axis_smoothness)
    return loss


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rse: float
    val_corr: float


@dataclass
class TrainResult:
    forecaster: Forecaster
    mask: Mask | None
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False


def _perturb_batch(images: np.ndarray, refs: np.ndarray, mask: Mask) -> Node:
    bsz, w, d = images.shape
    m = ad.tile(ad.reshape(mask.values_node(), (1, w, d)), 0, bsz)
    return apply_mask_node(ad.constant(images), ad.constant(refs), m)


def train(dataset: WindowSet, forecaster: Forecaster, mask: Mask | None,
          cfg: TrainConfig, reference: ReferenceSpec | None = None,
          val: WindowSet | None = None,
          train_feature_means: np.ndarray | None = None) -> TrainResult:
    """Minibatch training loop. Deterministic given cfg.seed. Aborts with
    TrainingDivergedError on a non-finite loss."""
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    if cfg.mask_enabled and mask is None:
        mask = Mask(dataset.window, dataset.n_features)
    if not cfg.mask_enabled:
        mask = None
    reference = reference or ReferenceSpec()

    params = forecaster.params()
    decay = forecaster.decay_names()
    decay = {n for n in decay if not n.endswith(".bias")}
    if mask is not None:
        params = dict(params)
        params["mask.logits"] = mask.logits
    opt = AdamW(params, cfg.lr, cfg.weight_decay, decay)

    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    history: list[EpochRecord] = []
    best_val = np.inf
    stale = 0
    stopped_early = False
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            images = dataset.images[idx]
            targets = dataset.targets[idx]
            if mask is not None:
                refs = reference_batch(images, dataset.start_indices[idx],
                                       reference, train_feature_means, salt=step)
                x = _perturb_batch(images, refs, mask)
            else:
                x = ad.constant(images)
            pred = forecaster.forward(x)
            loss = loss_l1(targets, pred, mask, cfg)
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {step} (lr={cfg.lr})")
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += lv
            n_batches += 1
            step += 1
        val_rse = float("nan")
        val_corr = float("nan")
        if val is not None and len(val) > 0:
            res = evaluate(forecaster, val)
            val_rse, val_corr = res.rse, res.corr
        history.append(EpochRecord(epoch, epoch_loss / max(1, n_batches),
                                   val_rse, val_corr))
        if val is not None and cfg.patience is not None and np.isfinite(val_rse):
            if val_rse < best_val - 1e-12:
                best_val = val_rse
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d (val RSE stalled)", epoch)
                    stopped_early = True
                    break
    return TrainResult(forecaster, mask, history, stopped_early)


@dataclass
class EvalResult:
    rse: float
    corr: float
    corr_excluded: int
    rse_unscaled: float | None = None
    corr_unscaled: float | None = None


def predict_all(forecaster: Forecaster, dataset: WindowSet,
                chunk: int = 256) -> np.ndarray:
    preds = []
    for lo in range(0, len(dataset), chunk):
        preds.append(forecaster.predict(dataset.images[lo:lo + chunk]))
    return np.concatenate(preds, axis=0)


def evaluate(forecaster: Forecaster, dataset: WindowSet,
             scaler: Scaler | None = None) -> EvalResult:
    """RSE/CORR on unperturbed windows, in the (scaled) training space; when a
    scaler is given, metrics on the de-scaled values are reported as well."""
    if len(dataset) == 0:
        raise ValueError("empty evaluation dataset")
    preds = predict_all(forecaster, dataset)
    block = EvalBlock(dataset.targets, preds)
    r = rse(block)
    try:
        c, excluded = corr_stats(block)
    except UndefinedMetricError:
        c, excluded = float("nan"), dataset.n_features
    result = EvalResult(r, c, excluded)
    if scaler is not None:
        raw = EvalBlock(invert_scaler(dataset.targets, scaler),
                        invert_scaler(preds, scaler))
        result.rse_unscaled = rse(raw)
        try:
            result.corr_unscaled = corr_stats(raw)[0]
        except UndefinedMetricError:
            result.corr_unscaled = float("nan")
    return result
