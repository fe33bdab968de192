"""Series ingestion, per-window normalization, patching, and batch assembly.

Every context window is normalized to [0, 1] with its own min/max; the same
affine map is applied to that window's forecast target (which may therefore
leave [0, 1] — never clipped).  Constant windows map to 0.5 everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DivisibilityError,
    InsufficientDataError,
    NumericError,
    RateError,
)


@dataclass(frozen=True)
class TimeSeries:
    """An immutable ordered sequence of finite measurements."""

    id: str
    values: np.ndarray
    sampling_rate_hz: Optional[float] = None
    units: Optional[str] = None

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if arr.ndim != 1 or arr.size == 0:
            raise DataError(f"series {self.id!r}: values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise DataError(f"series {self.id!r}: non-finite value at index {bad}")
        if self.sampling_rate_hz is not None and not self.sampling_rate_hz > 0:
            raise DataError(f"series {self.id!r}: sampling rate must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ContextWindow:
    """A window normalized into [0,1], remembering its affine map and origin."""

    values: np.ndarray
    norm_min: float
    norm_max: float
    source_offset: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if self.norm_max < self.norm_min:
            raise DataError("norm_max must be >= norm_min")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DataError("context window values must lie in [0, 1]")
        if self.norm_max > self.norm_min:
            if abs(v.min()) > 1e-6 or abs(v.max() - 1.0) > 1e-6:
                raise DataError("non-constant window must span [0, 1]")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PatchSequence:
    """A window split into n contiguous patches of length l_patch."""

    patches: np.ndarray  # (n, l_patch)

    def __post_init__(self):
        p = np.asarray(self.patches, dtype=np.float64)
        if p.ndim != 2:
            raise DataError(f"patches must be 2-D, got shape {p.shape}")
        object.__setattr__(self, "patches", p)

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def l_patch(self) -> int:
        return self.patches.shape[1]

    def concatenate(self) -> np.ndarray:
        """Inverse of segmentation: the original window, exactly."""
        return self.patches.reshape(-1)


@dataclass(frozen=True)
class Batch:
    """B normalized windows as patches, plus forecast/reconstruction targets.

    inputs: (B, n, l_patch); forecast_targets: (B, l_pred) in each window's
    context scale (not clipped); reconstruction_targets: (B, W) equal to the
    flattened inputs.  ``windows`` keeps one ContextWindow per item for later
    denormalization.
    """

    inputs: np.ndarray
    forecast_targets: np.ndarray
    reconstruction_targets: np.ndarray
    windows: tuple = field(repr=False, default=())

    def __post_init__(self):
        b, n, lp = self.inputs.shape
        if self.forecast_targets.shape[0] != b or self.reconstruction_targets.shape != (b, n * lp):
            raise DataError("batch arrays disagree on B/W")
        for arr in (self.inputs, self.forecast_targets, self.reconstruction_targets):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class WindowSpan:
    """Half-open index ranges of one sliding window: context then target."""

    context: tuple  # (start, stop), stop - start == W
    target: tuple  # (start, stop), stop - start == H

    @property
    def offset(self) -> int:
        return self.context[0]


# ---------------------------------------------------------------------------
# normalization


def minmax_normalize(window, source_offset: int = 0) -> ContextWindow:
    """Affine-map a raw window onto [0,1]; constant windows go to all-0.5."""
    v = np.asarray(window, dtype=np.float64)
    if v.size == 0:
        raise DataError("cannot normalize an empty window")
    if not np.all(np.isfinite(v)):
        raise NumericError("window contains non-finite values")
    lo = float(v.min())
    hi = float(v.max())
    if hi > lo:
        out = (v - lo) / (hi - lo)
    else:
        out = np.full_like(v, 0.5)
    return ContextWindow(values=out, norm_min=lo, norm_max=hi, source_offset=source_offset)


def normalize_like(values, window: ContextWindow) -> np.ndarray:
    """Apply a window's affine map to other values (e.g. its forecast target).

    Results may leave [0,1] and are deliberately not clipped.  For a constant
    window the map is degenerate; every value goes to the 0.5 midpoint, the
    same convention the window itself uses.
    """
    v = np.asarray(values, dtype=np.float64)
    span = window.norm_max - window.norm_min
    if span <= 0.0:
        return np.full_like(v, 0.5)
    return (v - window.norm_min) / span


def denormalize(values, window: ContextWindow) -> np.ndarray:
    """Inverse map back to source units; constant windows give norm_min."""
    v = np.asarray(values, dtype=np.float64)
    span = window.norm_max - window.norm_min
    if span <= 0.0:
        return np.full_like(v, window.norm_min)
    return v * span + window.norm_min


# ---------------------------------------------------------------------------
# segmentation / windowing


def segment_patches(window: Union[ContextWindow, np.ndarray], l_patch: int) -> PatchSequence:
    """Split a window into n = W/l_patch contiguous patches, oldest first.

    No resampling happens here — patch duration simply follows the source
    sampling rate.
    """
    v = window.values if isinstance(window, ContextWindow) else np.asarray(window, dtype=np.float64)
    if l_patch < 1:
        raise ConfigError(f"l_patch must be positive, got {l_patch}")
    w = v.size
    if w % l_patch != 0:
        raise DivisibilityError(
            f"window length {w} is not a multiple of l_patch={l_patch}; "
            f"trim the {w % l_patch} oldest samples before segmenting"
        )
    return PatchSequence(patches=v.reshape(w // l_patch, l_patch))


def sliding_windows(series, W: int, H: int, S: int) -> list:
    """Enumerate context/target index spans at offsets 0, S, 2S, ...

    Accepts a TimeSeries or a plain length.  The number of windows is
    floor((L - W - H)/S) + 1; every context is immediately followed by its
    length-H target.
    """
    if isinstance(series, TimeSeries):
        L = len(series.values)
    else:
        L = int(series)
    for name, val in (("W", W), ("H", H), ("S", S)):
        if val < 1:
            raise ConfigError(f"{name} must be positive, got {val}")
    if L < W + H:
        raise InsufficientDataError(
            f"series has {L} samples but one window needs at least {W + H}"
        )
    count = (L - W - H) // S + 1
    return [
        WindowSpan(context=(o, o + W), target=(o + W, o + W + H))
        for o in range(0, count * S, S)
    ]


def preprocess_slow_signal(series: TimeSeries, target_hz: float, smooth_width: int = 5) -> TimeSeries:
    """Block-average down to target_hz, then smooth with a centered window.

    The decimation factor rate/target_hz must be a whole number; each output
    sample is the mean of one block of inputs (a trailing partial block is
    dropped).  The moving average is centered with width ``smooth_width``
    (positive odd); near the edges the window shrinks symmetrically.
    """
    if series.sampling_rate_hz is None:
        raise RateError(f"series {series.id!r} has no sampling rate; cannot resample")
    if target_hz <= 0:
        raise ConfigError(f"target_hz must be positive, got {target_hz}")
    factor_f = series.sampling_rate_hz / target_hz
    factor = int(round(factor_f))
    if factor < 1 or abs(factor_f - factor) > 1e-9:
        raise RateError(
            f"decimation factor {factor_f:g} (rate {series.sampling_rate_hz:g} Hz "
            f"to {target_hz:g} Hz) is not a whole number"
        )
    if smooth_width < 1 or smooth_width % 2 == 0:
        raise ConfigError(f"smooth_width must be positive and odd, got {smooth_width}")

    v = series.values
    usable = (len(v) // factor) * factor
    if usable == 0:
        raise InsufficientDataError(
            f"series {series.id!r} too short to decimate by {factor}"
        )
    coarse = v[:usable].reshape(-1, factor).mean(axis=1)

    half = smooth_width // 2
    if half == 0 or len(coarse) == 1:
        smoothed = coarse
    else:
        # interior: full-width average via cumulative sums; edges shrink
        cs = np.concatenate([[0.0], np.cumsum(coarse)])
        smoothed = np.empty_like(coarse)
        n = len(coarse)
        for i in range(n):
            k = min(half, i, n - 1 - i)
            smoothed[i] = (cs[i + k + 1] - cs[i - k]) / (2 * k + 1)
    return TimeSeries(
        id=f"{series.id}@{target_hz:g}hz",
        values=smoothed,
        sampling_rate_hz=float(target_hz),
        units=series.units,
    )


# ---------------------------------------------------------------------------
# batching


def make_batch(pool: Sequence[TimeSeries], count: int, W: int, H: int, l_patch: int, rng) -> Batch:
    """Assemble a training batch of normalized, patched windows.

    Sampling picks a series uniformly among those long enough for a W+H
    window, then an offset uniformly within it.  Deterministic for a given
    seed (pass an int) or generator state.
    """
    if count < 1:
        raise ConfigError(f"batch count must be positive, got {count}")
    if W % l_patch != 0:
        raise DivisibilityError(f"W={W} is not a multiple of l_patch={l_patch}")
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    admissible = [s for s in pool if len(s.values) >= W + H]
    if not admissible:
        raise InsufficientDataError(
            f"no series in the pool admits a window of {W}+{H} samples"
        )
    n = W // l_patch
    inputs = np.empty((count, n, l_patch), dtype=np.float32)
    fore = np.empty((count, H), dtype=np.float32)
    recon = np.empty((count, W), dtype=np.float32)
    windows = []
    for b in range(count):
        s = admissible[int(gen.integers(len(admissible)))]
        o = int(gen.integers(len(s.values) - W - H + 1))
        win = minmax_normalize(s.values[o : o + W], source_offset=o)
        target = normalize_like(s.values[o + W : o + W + H], win)
        inputs[b] = win.values.reshape(n, l_patch)
        fore[b] = target
        recon[b] = win.values
        windows.append(win)
    return Batch(
        inputs=inputs,
        forecast_targets=fore,
        reconstruction_targets=recon,
        windows=tuple(windows),
    )


# ---------------------------------------------------------------------------
# CSV in/out


def load_csv(path, column=None) -> TimeSeries:
    """Read one numeric column (default: last) from a CSV file.

    A first row whose selected cell fails numeric parsing is treated as a
    header.  Column may be a zero-based index or, when a header exists, a
    name.  Row numbers in errors are 1-based and include the header.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]

    if not rows:
        raise DataError(f"{path.name}: empty file")

    col_index = None
    start = 0
    if isinstance(column, str):
        header = rows[0]
        if column not in header:
            raise DataError(f"{path.name}: no column named {column!r} in header {header}")
        col_index = header.index(column)
        start = 1
    else:
        if column is not None:
            col_index = int(column)
        # header detection: does the first row's cell parse as a number?
        try:
            float(rows[0][col_index if col_index is not None else -1])
        except (ValueError, IndexError):
            start = 1

    values = []
    for i in range(start, len(rows)):
        row = rows[i]
        idx = col_index if col_index is not None else len(row) - 1
        if idx >= len(row) or idx < -len(row):
            raise DataError(f"{path.name}: row {i + 1} has no column {idx}")
        cell = row[idx]
        try:
            values.append(float(cell))
        except ValueError:
            raise DataError(f"{path.name}: cannot parse {cell!r} at row {i + 1}") from None
    if not values:
        raise DataError(f"{path.name}: no data rows")
    return TimeSeries(id=path.stem, values=np.asarray(values))


def save_series_csv(path, series: TimeSeries) -> None:
    """Write a series as a single 'value' column (full float64 precision)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value"])
        for x in series.values:
            writer.writerow([repr(float(x))])


def write_trace_csv(path, rows) -> None:
    """Write prediction traces: offset, ground_truth, prediction (source units).

    ``rows`` yields (offset, ground_truth, prediction); None cells are blank.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offset", "ground_truth", "prediction"])
        for offset, truth, pred in rows:
            writer.writerow([
                offset,
                "" if truth is None else repr(float(truth)),
                "" if pred is None else repr(float(pred)),
            ])
