"""The w x D perturbation mask, its application, and its complexity penalties.

The mask is parameterized by unconstrained logits; values are
sigmoid(logits), so every entry stays strictly inside (0, 1) and the
optimization is unconstrained. Cell value 1 means "replace with the
reference", 0 means "keep the original".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import SeriesImage


class Mask:
    """Learnable mask over a window x feature grid."""

    def __init__(self, window: int, n_features: int, init_logit: float = 0.0):
        self.window = window
        self.n_features = n_features
        self.logits = ad.parameter(np.full((window, n_features), float(init_logit)))

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Mask":
        logits = np.asarray(logits, dtype=np.float64)
        m = cls(logits.shape[0], logits.shape[1])
        m.logits.value[...] = logits
        return m

    def values_node(self) -> Node:
        return ad.sigmoid(self.logits)

    def values(self) -> np.ndarray:
        return self.values_node().value


@dataclass
class PerturbedImage:
    """M * reference + (1 - M) * original; carries the graph node so callers
    can keep differentiating through it."""
    values: np.ndarray
    node: Node


def apply_mask_node(image: Node, reference: Node, mask_values: Node) -> Node:
    if not (image.shape == reference.shape == mask_values.shape):
        raise ad.ShapeError(
            f"apply_mask: shapes {image.shape}, {reference.shape}, "
            f"{mask_values.shape} must all match")
    one = ad.constant(1.0)
    return mask_values * reference + (one - mask_values) * image


def apply_mask(image: SeriesImage, reference: SeriesImage, mask: Mask) -> PerturbedImage:
    """Blend image toward reference cell-wise by the mask value."""
    img = ad.constant(image.values)
    ref = ad.constant(reference.values)
    node = apply_mask_node(img, ref, mask.values_node())
    return PerturbedImage(node.value, node)


def size_penalty(mask: Mask | Node, p0: int = 2, complement: bool = False) -> Node:
    """Mask size term: entrywise p-norm ||M||_p0, or ||1 - M||_1 when
    ``complement`` is set (the training-phase variant that rewards masks
    close to 1, i.e. more augmentation noise)."""
    if p0 not in (1, 2, 3):
        raise ValueError(f"p0 must be 1, 2 or 3, got {p0}")
    m = mask.values_node() if isinstance(mask, Mask) else mask
    if complement:
        # m in (0,1) so |1 - m| == 1 - m
        return ad.tensor_sum(ad.constant(1.0) - m)
    if p0 == 1:
        return ad.tensor_sum(m)
    return ad.power(ad.tensor_sum(ad.power(m, p0)), 1.0 / p0)


def smoothness_penalty(mask: Mask | Node, include_feature_axis: bool = True) -> Node:
    """Sum of squared differences between neighboring mask cells along time,
    plus along the feature axis unless disabled (exchangeable features)."""
    m = mask.values_node() if isinstance(mask, Mask) else mask
    w, d = m.shape
    total: Node | None = None
    if w > 1:
        dt = ad.slice_node(m, (slice(0, w - 1), slice(None))) - \
            ad.slice_node(m, (slice(1, w), slice(None)))
        total = ad.tensor_sum(ad.power(dt, 2.0))
    if include_feature_axis and d > 1:
        df = ad.slice_node(m, (slice(None), slice(0, d - 1))) - \
            ad.slice_node(m, (slice(None), slice(1, d)))
        term = ad.tensor_sum(ad.power(df, 2.0))
        total = term if total is None else total + term
    if total is None:
        total = ad.constant(0.0)
    return total


def export_mask_csv(mask_values: np.ndarray, path) -> None:
    """w rows x D cols, fixed 6 decimal places."""
    np.savetxt(path, np.asarray(mask_values), fmt="%.6f", delimiter=",")
