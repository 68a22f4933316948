"""Saliency post-processing: per-feature importance, spectral periodicity,
and heatmap export.

The transform is a direct one-sided DFT of the mean-removed column (O(w^2),
fine at desk scale and radix-agnostic); a fast transform would be an
optimization, not a behavior change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AnalysisError(ValueError):
    pass


@dataclass
class Spectrum:
    frequencies: np.ndarray       # bin indices 0..floor(w/2); bin 0 is DC
    magnitudes: np.ndarray        # same length, non-negative


def mean_saliency_per_feature(maps) -> np.ndarray:
    """Mean mask value per feature column, over time and over samples."""
    values = [np.asarray(getattr(m, "mask_values", m), dtype=np.float64)
              for m in maps]
    if not values:
        raise AnalysisError("no saliency maps given")
    shape = values[0].shape
    for v in values[1:]:
        if v.shape != shape:
            raise AnalysisError(f"mixed map shapes: {v.shape} vs {shape}")
    return np.stack(values).mean(axis=(0, 1))


def fft_magnitude(column: np.ndarray) -> Spectrum:
    """One-sided DFT magnitudes of the mean-removed column."""
    x = np.asarray(column, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise AnalysisError(f"need a 1-D column with w >= 2, got shape {x.shape}")
    w = x.shape[0]
    x = x - x.mean()
    n_bins = w // 2 + 1
    t = np.arange(w)
    k = np.arange(n_bins)[:, None]
    angles = -2.0 * np.pi * k * t / w
    real = (np.cos(angles) * x).sum(axis=1)
    imag = (np.sin(angles) * x).sum(axis=1)
    return Spectrum(np.arange(n_bins), np.sqrt(real * real + imag * imag))


def periodicity_score(spec: Spectrum) -> float:
    """Fraction of non-DC spectral energy held by the single strongest bin:
    1 for a pure tone, about 1/#bins for white noise."""
    mags = np.asarray(spec.magnitudes, dtype=np.float64)
    if mags.shape[0] < 2:
        raise AnalysisError("spectrum has no non-DC bins")
    power = mags[1:] ** 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    return float(power.max() / total)


def export_heatmap_pgm(saliency_map, path) -> None:
    """Plain-text PGM (P2): width D, height w, maxval 255, cells rounded
    half-up from 255 * mask value."""
    values = np.asarray(getattr(saliency_map, "mask_values", saliency_map),
                        dtype=np.float64)
    if values.ndim != 2:
        raise AnalysisError(f"mask must be 2-D, got shape {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise AnalysisError("mask values must lie in [0, 1]")
    h, w = values.shape
    pixels = np.floor(values * 255.0 + 0.5).astype(np.int64)
    lines = [f"P2", f"{w} {h}", "255"]
    for row in pixels:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read back a plain P2 PGM written by export_heatmap_pgm."""
    with open(path) as fh:
        tokens: list[str] = []
        for line in fh:
            hash_at = line.find("#")
            if hash_at >= 0:
                line = line[:hash_at]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise AnalysisError(f"{path}: not a plain P2 PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:4 + w * h]], dtype=np.int64)
    if data.size != w * h:
        raise AnalysisError(f"{path}: expected {w * h} pixels, found {data.size}")
    if data.min() < 0 or data.max() > maxval:
        raise AnalysisError(f"{path}: pixel out of range 0..{maxval}")
    return data.reshape(h, w)
