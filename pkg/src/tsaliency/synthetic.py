"""Deterministic synthetic series used by the test suite, the bundled
fixture, and the demo scripts."""

from __future__ import annotations

import numpy as np

from .data import SeriesFrame


def sine_mix(t_rows: int, n_features: int = 2, noise: float = 0.1,
             seed: int = 0) -> SeriesFrame:
    """Smooth multi-periodic channels plus observation noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(t_rows, dtype=np.float64)
    cols = []
    for d in range(n_features):
        p1 = 17.0 + 6.0 * d
        p2 = 43.0 + 11.0 * d
        phase = rng.uniform(0, 2 * np.pi)
        base = np.sin(2 * np.pi * t / p1 + phase) + 0.5 * np.sin(2 * np.pi * t / p2)
        cols.append(base + rng.normal(0.0, noise, size=t_rows))
    values = np.column_stack(cols)
    return SeriesFrame(values, [f"f{d}" for d in range(n_features)])


def ar2_series(t_rows: int, a1: float, a2: float, noise_std: float = 0.05,
               seed: int = 0, burn_in: int = 200) -> SeriesFrame:
    """Univariate AR(2) draw: x[t] = a1*x[t-1] + a2*x[t-2] + eps."""
    rng = np.random.default_rng(seed)
    n = t_rows + burn_in
    x = np.zeros(n)
    eps = rng.normal(0.0, noise_std, size=n)
    for t in range(2, n):
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + eps[t]
    return SeriesFrame(x[burn_in:, None], ["x"])


def planted_lag_series(t_rows: int, lag: int = 6, coeff: float = 0.8,
                       noise: float = 0.05, seed: int = 0) -> SeriesFrame:
    """Three channels where channel 0 is driven solely by channel 2 at a
    fixed lag; channels 1 and 2 are white noise, so the lagged cell is the
    only informative input."""
    rng = np.random.default_rng(seed)
    driver = rng.normal(0.0, 1.0, size=t_rows)          # channel 2
    distract = rng.normal(0.0, 1.0, size=t_rows)        # channel 1
    caused = np.zeros(t_rows)
    caused[lag:] = coeff * driver[:-lag]
    caused += rng.normal(0.0, noise, size=t_rows)
    values = np.column_stack([caused, distract, driver])
    return SeriesFrame(values, ["caused", "distractor", "driver"])


def periodic_vs_noise_series(t_rows: int, period: float = 16.0,
                             noise: float = 0.05, seed: int = 0) -> SeriesFrame:
    """Channel 0 is a clean cosine, channel 1 pure white noise; only channel 0
    carries predictable signal."""
    rng = np.random.default_rng(seed)
    t = np.arange(t_rows, dtype=np.float64)
    periodic = np.cos(2 * np.pi * t / period) + rng.normal(0.0, noise, size=t_rows)
    white = rng.normal(0.0, 1.0, size=t_rows)
    return SeriesFrame(np.column_stack([periodic, white]), ["periodic", "white"])


def seasonal_ar_series(t_rows: int, n_features: int = 3, period: int = 24,
                       noise: float = 0.1, seed: int = 0) -> SeriesFrame:
    """Channels with strong short-lag structure (seasonal + AR(1)), the kind
    of signal a moderate-order AR model captures well."""
    rng = np.random.default_rng(seed)
    t = np.arange(t_rows, dtype=np.float64)
    cols = []
    for d in range(n_features):
        phase = rng.uniform(0, 2 * np.pi)
        seasonal = np.sin(2 * np.pi * t / period + phase)
        ar = np.zeros(t_rows)
        eps = rng.normal(0.0, noise, size=t_rows)
        for i in range(1, t_rows):
            ar[i] = 0.8 * ar[i - 1] + eps[i]
        cols.append(seasonal + ar)
    return SeriesFrame(np.column_stack(cols),
                       [f"f{d}" for d in range(n_features)])


def fixture_frame(t_rows: int = 500, seed: int = 7) -> SeriesFrame:
    """The bundled 500-row, 3-feature fixture used by the CLI smoke tests."""
    rng = np.random.default_rng(seed)
    t = np.arange(t_rows, dtype=np.float64)
    f0 = np.sin(2 * np.pi * t / 24.0) + 0.1 * rng.normal(size=t_rows)
    f1 = 0.6 * np.cos(2 * np.pi * t / 12.0) + 0.1 * rng.normal(size=t_rows)
    ar = np.zeros(t_rows)
    eps = rng.normal(0.0, 0.15, size=t_rows)
    for i in range(1, t_rows):
        ar[i] = 0.7 * ar[i - 1] + eps[i]
    f2 = ar + 0.3 * np.sin(2 * np.pi * t / 48.0)
    return SeriesFrame(np.column_stack([f0, f1, f2]), ["load", "temp", "flow"],
                       sample_period="1h")


def write_csv(frame: SeriesFrame, path, header: bool = True,
              decimals: int = 8) -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(frame.feature_names) + "\n")
        fmt = f"%.{decimals}f"
        for row in frame.values:
            fh.write(",".join(fmt % v for v in row) + "\n")
