"""Loading, scaling, splitting and windowing of multivariate series.

A series is a T x D float matrix. Models consume fixed-width slices of it
("series images", w x D) paired with the row ``horizon`` steps past the
window end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Bad input data or indices."""


@dataclass
class SeriesFrame:
    values: np.ndarray                   # (T, D) float64, finite
    feature_names: list[str]
    sample_period: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"frame values must be 2-D, got shape {self.values.shape}")
        t, d = self.values.shape
        if t < 1 or d < 1:
            raise DataError(f"frame must be at least 1x1, got {t}x{d}")
        if len(self.feature_names) != d:
            raise DataError(f"{len(self.feature_names)} names for {d} features")
        if not np.all(np.isfinite(self.values)):
            raise DataError("frame contains NaN/Inf after ingestion")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass
class Scaler:
    """Per-feature min-max scaler fitted on a row range."""
    min: np.ndarray
    max: np.ndarray
    mode: str = "minmax"

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if self.min.shape != self.max.shape or self.min.ndim != 1:
            raise DataError("scaler min/max must be equal-length vectors")
        if np.any(self.max < self.min):
            raise DataError("scaler max < min")

    @property
    def n_features(self) -> int:
        return self.min.shape[0]

    def degenerate(self) -> np.ndarray:
        return self.max == self.min


@dataclass
class SeriesImage:
    """One sliding-window slice of a frame, rows ordered oldest to newest."""
    values: np.ndarray                   # (w, D)
    start_index: int
    window: int
    horizon: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.window:
            raise DataError(
                f"image shape {self.values.shape} inconsistent with window {self.window}")


def _parse_cell(text: str) -> float | None:
    """None for a missing cell, float otherwise; raises ValueError on junk."""
    text = text.strip()
    if not text:
        return None
    v = float(text)
    if not math.isfinite(v):
        return None
    return v


def load_csv(path, has_header: bool = False, missing_policy: str = "reject",
             timestamp_col: int | None = None,
             sample_period: str | None = None) -> SeriesFrame:
    """Read a comma-separated series file into a SeriesFrame.

    Missing cells (empty, nan or inf) are handled by ``missing_policy``:
    ``reject`` raises naming the cell, ``forward_fill`` copies the previous
    row's value. Ragged rows are always an error.
    """
    if missing_policy not in ("reject", "forward_fill"):
        raise DataError(f"unknown missing_policy {missing_policy!r}")
    rows: list[list[float | None]] = []
    names: list[str] | None = None
    n_cols: int | None = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, raw in enumerate(reader, start=1):
            if not raw:
                continue
            if n_cols is None:
                n_cols = len(raw)
            elif len(raw) != n_cols:
                raise DataError(
                    f"{path}: row {lineno} has {len(raw)} columns, expected {n_cols}")
            if names is None and has_header:
                names = [c.strip() for c in raw]
                continue
            parsed: list[float | None] = []
            for col, cell in enumerate(raw):
                if timestamp_col is not None and col == timestamp_col:
                    continue
                try:
                    parsed.append(_parse_cell(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, col {col + 1}: cannot parse {cell!r}")
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    d = len(rows[0])
    if d < 1:
        raise DataError(f"{path}: no feature columns left after dropping timestamp")
    values = np.empty((len(rows), d), dtype=np.float64)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            if cell is None:
                if missing_policy == "reject":
                    raise DataError(
                        f"{path}: missing value at row {i + 1}, col {j + 1}")
                if i == 0:
                    raise DataError(
                        f"{path}: missing value at row 1, col {j + 1} "
                        "cannot be forward-filled")
                values[i, j] = values[i - 1, j]
            else:
                values[i, j] = cell
    if names is not None and timestamp_col is not None:
        names = [n for k, n in enumerate(names) if k != timestamp_col]
    if names is None:
        names = [f"f{j}" for j in range(d)]
    return SeriesFrame(values, names, sample_period)


def fit_scaler(frame: SeriesFrame, fit_range: tuple[int, int]) -> Scaler:
    """Per-feature min/max computed over rows [lo, hi) only."""
    lo, hi = fit_range
    if not (0 <= lo < hi <= frame.n_rows):
        raise DataError(f"fit range [{lo}, {hi}) invalid for T={frame.n_rows}")
    block = frame.values[lo:hi]
    return Scaler(block.min(axis=0), block.max(axis=0))


def apply_scaler(frame: SeriesFrame, scaler: Scaler) -> SeriesFrame:
    """Map each feature to (x - min) / (max - min); degenerate features
    (max == min) map to the constant 0.5. Values outside the fit range are
    not clipped."""
    if scaler.n_features != frame.n_features:
        raise DataError(
            f"scaler has {scaler.n_features} features, frame has {frame.n_features}")
    span = scaler.max - scaler.min
    deg = scaler.degenerate()
    safe = np.where(deg, 1.0, span)
    scaled = (frame.values - scaler.min) / safe
    scaled[:, deg] = 0.5
    return SeriesFrame(scaled, list(frame.feature_names), frame.sample_period)


def invert_scaler(values: np.ndarray, scaler: Scaler) -> np.ndarray:
    """Undo apply_scaler; degenerate features return their stored constant."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != scaler.n_features:
        raise DataError(
            f"values last dim {values.shape[-1]} != scaler features {scaler.n_features}")
    deg = scaler.degenerate()
    out = values * (scaler.max - scaler.min) + scaler.min
    if deg.any():
        out = np.where(deg, scaler.min, out)
    return out


def chronological_split(frame: SeriesFrame, fractions: tuple[float, float, float],
                        min_len: int | None = None
                        ) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Contiguous train/val/test row intervals covering [0, T), in order.

    Boundaries are floor(T * cumulative fraction); the last interval absorbs
    the remainder. ``min_len`` (typically window + horizon) is enforced on
    every interval when given.
    """
    f1, f2, f3 = fractions
    if min(f1, f2, f3) <= 0:
        raise DataError(f"fractions must be positive, got {fractions}")
    if abs(f1 + f2 + f3 - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    t = frame.n_rows
    b1 = int(math.floor(t * f1))
    b2 = int(math.floor(t * (f1 + f2)))
    intervals = ((0, b1), (b1, b2), (b2, t))
    if min_len is not None:
        for name, (lo, hi) in zip(("train", "val", "test"), intervals):
            if hi - lo < min_len:
                raise DataError(
                    f"split too small for windowing: {name} interval [{lo},{hi}) "
                    f"has {hi - lo} rows, needs {min_len}")
    return intervals


@dataclass
class WindowSet:
    """Stride-1 (series image, target) pairs cut from one row interval.

    Sequence-like: ``ws[i]`` yields ``(SeriesImage, target_row)``. The
    stacked arrays are kept for batched work.
    """
    images: np.ndarray                   # (N, w, D)
    targets: np.ndarray                  # (N, D)
    start_indices: np.ndarray            # (N,)
    window: int
    horizon: int
    feature_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> tuple[SeriesImage, np.ndarray]:
        if isinstance(i, slice):
            raise TypeError("use .subset() for slicing")
        image = SeriesImage(self.images[i], int(self.start_indices[i]),
                            self.window, self.horizon)
        return image, self.targets[i]

    def subset(self, indices) -> "WindowSet":
        indices = np.asarray(indices)
        return WindowSet(self.images[indices], self.targets[indices],
                         self.start_indices[indices], self.window, self.horizon,
                         list(self.feature_names))

    @property
    def n_features(self) -> int:
        return self.images.shape[2]


def make_windows(frame: SeriesFrame, interval: tuple[int, int], window: int,
                 horizon: int) -> WindowSet:
    """All stride-1 windows whose image AND target rows lie inside
    ``interval``. A window covering rows [s, s+w) targets row s+w-1+horizon."""
    if window < 1 or horizon < 1:
        raise DataError(f"window and horizon must be >= 1, got {window}, {horizon}")
    lo, hi = interval
    if not (0 <= lo <= hi <= frame.n_rows):
        raise DataError(f"interval [{lo}, {hi}) invalid for T={frame.n_rows}")
    count = hi - lo - window - horizon + 1
    if count <= 0:
        d = frame.n_features
        return WindowSet(np.zeros((0, window, d)), np.zeros((0, d)),
                         np.zeros(0, dtype=np.int64), window, horizon,
                         list(frame.feature_names))
    starts = np.arange(lo, lo + count, dtype=np.int64)
    images = np.stack([frame.values[s:s + window] for s in starts])
    targets = frame.values[starts + window - 1 + horizon]
    return WindowSet(images, targets.copy(), starts, window, horizon,
                     list(frame.feature_names))


def feature_means(frame: SeriesFrame, interval: tuple[int, int]) -> np.ndarray:
    """Per-feature mean over an interval (the 'uninformative' constant
    reference level, conventionally fitted on the training rows)."""
    lo, hi = interval
    if not (0 <= lo < hi <= frame.n_rows):
        raise DataError(f"interval [{lo}, {hi}) invalid for T={frame.n_rows}")
    return frame.values[lo:hi].mean(axis=0)
