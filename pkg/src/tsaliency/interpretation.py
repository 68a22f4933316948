"""Phase-2 mask optimization on a frozen forecaster.

For one window, a fresh mask is optimized to MAXIMIZE forecast error while
staying small and smooth (the deletion-game objective): high mask cells mark
the input regions whose removal hurts the forecast most. Model parameters
receive no updates; only the mask logits move.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import SeriesImage
from .mask import Mask, apply_mask_node, size_penalty, smoothness_penalty
from .models import Forecaster
from .reference import ReferenceSpec, make_reference
from .training import AdamW


class InterpretationDivergedError(RuntimeError):
    pass


class InterpretBatchError(RuntimeError):
    """One or more samples failed; carries per-sample errors and whatever
    completed."""

    def __init__(self, failures: list[tuple[int, Exception]], completed: list):
        ids = ", ".join(str(i) for i, _ in failures)
        super().__init__(f"interpretation failed for sample(s) {ids}")
        self.failures = failures
        self.completed = completed


@dataclass
class InterpretConfig:
    steps: int = 500
    lr: float = 1e-2
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    p0: int = 2
    feature_axis_smoothness: bool = True
    reference: ReferenceSpec = field(default_factory=lambda: ReferenceSpec(mode="blur"))
    seed: int = 0
    against: str = "target"     # "target" or "self" (model's own clean forecast)
    init_logit: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.against not in ("target", "self"):
            raise ValueError(f"against must be 'target' or 'self', got {self.against!r}")


@dataclass
class SaliencyMap:
    mask_values: np.ndarray          # (w, D), every value in (0, 1)
    sample_id: int
    horizon: int
    loss_trace: list[float]          # objective value per optimization step
    final_lp: float                  # forecast MSE under the final mask


def _l2_terms(target, prediction: Node, mask: Mask,
              cfg: InterpretConfig) -> tuple[Node, Node]:
    target = target if isinstance(target, Node) else ad.constant(target)
    lp = ad.mse(target, prediction)
    loss = ad.neg(lp)
    if cfg.lambda1 > 0:
        loss = loss + ad.constant(cfg.lambda1) * size_penalty(mask, cfg.p0,
                                                              complement=False)
    if cfg.lambda2 > 0:
        loss = loss + ad.constant(cfg.lambda2) * smoothness_penalty(
            mask, include_feature_axis=cfg.feature_axis_smoothness)
    return loss, lp


def loss_l2(target, prediction: Node, mask: Mask, cfg: InterpretConfig) -> Node:
    """Interpretation objective: -MSE + size + smoothness. Minimizing it
    drives the masked region toward maximum forecast damage at minimum mask
    cost."""
    return _l2_terms(target, prediction, mask, cfg)[0]


def interpret(forecaster: Forecaster, sample: tuple[SeriesImage, np.ndarray],
              cfg: InterpretConfig,
              feature_means: np.ndarray | None = None) -> SaliencyMap:
    """Optimize a fresh per-sample mask for ``cfg.steps`` steps against a
    reference fixed once up front. Deterministic per (cfg, sample)."""
    image, target = sample
    ref_spec = cfg.reference
    if ref_spec.seed != cfg.seed:
        # interpretation noise draws are keyed by the interpretation seed
        ref_spec = ReferenceSpec(ref_spec.mode, ref_spec.sigma1, ref_spec.sigma2,
                                 cfg.seed)
    reference = make_reference(image, ref_spec, feature_means)
    if cfg.against == "self":
        target = forecaster.predict(image.values)
    target = np.asarray(target, dtype=np.float64)

    w, d = image.values.shape
    mask = Mask(w, d, init_logit=cfg.init_logit)
    opt = AdamW({"mask.logits": mask.logits}, cfg.lr)
    img = ad.constant(image.values)
    ref = ad.constant(reference.values)

    trace: list[float] = []
    final_lp = float("nan")
    for step in range(cfg.steps):
        perturbed = apply_mask_node(img, ref, mask.values_node())
        x = ad.reshape(perturbed, (1, w, d))
        pred = ad.reshape(forecaster.forward(x), (d,))
        loss, lp = _l2_terms(target, pred, mask, cfg)
        lv = float(loss.value)
        if not np.isfinite(lv):
            raise InterpretationDivergedError(
                f"non-finite interpretation loss at step {step}")
        ad.backward(loss)
        opt.step()
        opt.zero_grad()
        trace.append(lv)
        final_lp = float(lp.value)
    return SaliencyMap(mask.values(), image.start_index, image.horizon,
                       trace, final_lp)


def interpret_batch(forecaster: Forecaster, samples, cfg: InterpretConfig,
                    parallelism: int = 1,
                    feature_means: np.ndarray | None = None) -> list[SaliencyMap]:
    """interpret() over many samples. Output order matches input order and is
    identical for any parallelism level; per-sample failures are collected
    and raised together after the rest complete."""
    samples = list(samples)
    if not samples:
        return []

    def run(sample):
        return interpret(forecaster, sample, cfg, feature_means)

    results: list[SaliencyMap | None] = [None] * len(samples)
    failures: list[tuple[int, Exception]] = []
    if parallelism <= 1:
        for i, sample in enumerate(samples):
            try:
                results[i] = run(sample)
            except Exception as exc:       # noqa: BLE001 - reported per sample
                failures.append((sample[0].start_index, exc))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            futs = {pool.submit(run, s): i for i, s in enumerate(samples)}
            for fut in concurrent.futures.as_completed(futs):
                i = futs[fut]
                try:
                    results[i] = fut.result()
                except Exception as exc:   # noqa: BLE001
                    failures.append((samples[i][0].start_index, exc))
    if failures:
        failures.sort(key=lambda t: t[0])
        raise InterpretBatchError(failures, [r for r in results if r is not None])
    return results  # type: ignore[return-value]
