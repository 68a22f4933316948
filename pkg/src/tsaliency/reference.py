"""Reference (degraded) series images used as the mask's replacement values.

Four modes: ``constant`` replaces every cell with that feature's training-set
mean, ``noise`` adds zero-mean Gaussian noise, ``blur`` applies a per-feature
temporal Gaussian blur, and ``identity`` returns the image unchanged (kept
selectable for strictness; it makes the mask unidentifiable and is not a
useful default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SeriesImage

MODES = ("constant", "noise", "blur", "identity")


class ReferenceError(ValueError):
    pass


@dataclass
class ReferenceSpec:
    mode: str = "blur"
    sigma1: float = 0.5       # noise std, in scaled units
    sigma2: float = 2.0       # blur std, in time steps
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ReferenceError(f"unknown reference mode {self.mode!r}")
        if self.mode == "noise" and not self.sigma1 > 0:
            raise ReferenceError(f"noise mode needs sigma1 > 0, got {self.sigma1}")
        if self.mode == "blur" and not self.sigma2 > 0:
            raise ReferenceError(f"blur mode needs sigma2 > 0, got {self.sigma2}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian kernel truncated at radius ceil(3*sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur_1d(column: np.ndarray, sigma2: float) -> np.ndarray:
    """Blur one column in time with a truncated normalized Gaussian,
    reflect padding at both ends."""
    column = np.asarray(column, dtype=np.float64)
    if column.ndim != 1 or column.shape[0] < 1:
        raise ReferenceError(f"column must be 1-D non-empty, got shape {column.shape}")
    if not sigma2 > 0:
        raise ReferenceError(f"sigma2 must be > 0, got {sigma2}")
    w = column.shape[0]
    if w == 1:
        return column.copy()
    kernel = gaussian_kernel(sigma2)
    radius = (kernel.shape[0] - 1) // 2
    padded = np.pad(column, radius, mode="symmetric")
    return np.convolve(padded, kernel, mode="valid")


def _blur_matrix(values: np.ndarray, sigma2: float) -> np.ndarray:
    return np.column_stack([gaussian_blur_1d(values[:, j], sigma2)
                            for j in range(values.shape[1])])


def _rng_for(spec: ReferenceSpec, sample_key: int, salt: int) -> np.random.Generator:
    # keyed per (seed, salt, sample) so parallel generation is reproducible
    return np.random.default_rng(np.random.SeedSequence((spec.seed, salt, sample_key)))


def reference_values(values: np.ndarray, spec: ReferenceSpec,
                     feature_means: np.ndarray | None = None,
                     sample_key: int = 0, salt: int = 0) -> np.ndarray:
    """Array-level reference generation; shape is preserved."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ReferenceError("cannot build a reference for an empty image")
    if spec.mode == "identity":
        return values.copy()
    if spec.mode == "constant":
        if feature_means is None:
            raise ReferenceError("constant mode needs per-feature means")
        means = np.asarray(feature_means, dtype=np.float64)
        if means.shape != (values.shape[-1],):
            raise ReferenceError(
                f"means shape {means.shape} != ({values.shape[-1]},)")
        return np.broadcast_to(means, values.shape).copy()
    if spec.mode == "noise":
        rng = _rng_for(spec, sample_key, salt)
        return values + rng.normal(0.0, spec.sigma1, size=values.shape)
    # blur
    if values.ndim == 2:
        return _blur_matrix(values, spec.sigma2)
    return np.stack([_blur_matrix(v, spec.sigma2) for v in values])


def make_reference(image: SeriesImage, spec: ReferenceSpec,
                   feature_means: np.ndarray | None = None,
                   salt: int = 0) -> SeriesImage:
    """Reference image for one series image. Deterministic given
    (image, spec, salt); noise draws are keyed by the image's start index."""
    ref = reference_values(image.values, spec, feature_means,
                           sample_key=image.start_index, salt=salt)
    return SeriesImage(ref, image.start_index, image.window, image.horizon)


def reference_batch(images: np.ndarray, start_indices: np.ndarray,
                    spec: ReferenceSpec,
                    feature_means: np.ndarray | None = None,
                    salt: int = 0) -> np.ndarray:
    """References for a stacked (B, w, D) batch; per-sample noise streams are
    keyed by start index so the result does not depend on batch composition."""
    if spec.mode == "noise":
        out = np.empty_like(images)
        for i in range(images.shape[0]):
            out[i] = reference_values(images[i], spec, feature_means,
                                      sample_key=int(start_indices[i]), salt=salt)
        return out
    return reference_values(images, spec, feature_means, salt=salt)
