"""Audio activity segmentation along the spectrogram time axis.

Pipeline: Savitzky-Golay smoothing of every frequency row over time,
temporal gradient, absolute value, mean over frequency bins, a second
smoothing pass, then peak selection of the largest change points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .numerics import ConfigError

EPS = 1e-12


@dataclass(frozen=True)
class SegmentConfig:
    window: int = 5
    poly_order: int = 2
    score_window: int = 5


@dataclass
class SegmentMap:
    boundaries: list[int]
    time_frames: int
    segments: list[tuple[int, int]] = field(init=False)

    def __post_init__(self):
        b = [int(x) for x in self.boundaries]
        if any(x <= 0 or x >= self.time_frames for x in b) or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing inside (0, {self.time_frames}): {b}")
        self.boundaries = b
        edges = [0, *b, self.time_frames]
        self.segments = list(zip(edges[:-1], edges[1:]))

    def __len__(self) -> int:
        return len(self.segments)

    def to_json(self) -> dict:
        return {"boundaries": self.boundaries, "segments": [list(s) for s in self.segments]}


def savgol_coefficients(window: int, poly_order: int, deriv: int = 0) -> np.ndarray:
    """Convolution weights giving the ``deriv``-th derivative of the local fit at the window centre."""
    if window % 2 != 1 or window < 1:
        raise ConfigError(f"Savitzky-Golay window must be a positive odd number, got {window}")
    if window <= poly_order:
        raise ConfigError(f"window {window} must exceed polynomial order {poly_order}")
    half = window // 2
    vander = np.vander(np.arange(-half, half + 1, dtype=np.float64), poly_order + 1, increasing=True)
    return np.linalg.pinv(vander)[deriv] * factorial(deriv)


def _edge_fit(y: np.ndarray, window: int, poly_order: int, left: bool) -> np.ndarray:
    # Fit one polynomial to the first/last window and evaluate it on the edge half-window.
    half = window // 2
    x = np.arange(window, dtype=np.float64)
    seg = y[:window] if left else y[-window:]
    coef = np.polynomial.polynomial.polyfit(x, seg, poly_order)
    pts = x[:half] if left else x[-half:]
    vals = np.polynomial.polynomial.polyval(pts, coef)
    return vals.T if vals.ndim > 1 else vals


def savitzky_golay(signal, window: int = 5, poly_order: int = 2) -> np.ndarray:
    """Smooth a 1-D signal, or each column of a 2-D array, along axis 0.

    Interior points take the centre value of the least-squares polynomial
    over their window. The first and last ``window // 2`` points are
    evaluated on a polynomial fitted to the first/last full window, so
    polynomials of degree ``<= poly_order`` pass through unchanged.
    """
    y = np.asarray(signal, dtype=np.float64)
    if y.ndim not in (1, 2):
        raise ValueError(f"expected 1-D or 2-D input, got shape {y.shape}")
    coeffs = savgol_coefficients(window, poly_order)
    n = y.shape[0]
    if n < window:
        raise ConfigError(f"signal length {n} is shorter than the smoothing window {window}")
    half = window // 2
    out = np.empty_like(y)
    for k, c in enumerate(coeffs):
        if k == 0:
            out[half : n - half] = c * y[k : n - window + 1 + k]
        else:
            out[half : n - half] += c * y[k : n - window + 1 + k]
    if half:
        out[:half] = _edge_fit(y, window, poly_order, left=True)
        out[n - half :] = _edge_fit(y, window, poly_order, left=False)
    return out


def change_scores(spec, cfg: SegmentConfig = SegmentConfig()) -> np.ndarray:
    """Nonnegative change score per time frame."""
    values = np.asarray(getattr(spec, "values", spec), dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    if T < max(cfg.window, cfg.score_window, 2):
        raise ConfigError(f"{T} frames is too short for smoothing window {max(cfg.window, cfg.score_window)}")
    # offsets do not change the gradient; removing one makes constant input exactly zero
    smoothed = savitzky_golay(values - values[:1], cfg.window, cfg.poly_order)
    grad = np.gradient(smoothed, axis=0)  # central inside, one-sided at the ends
    score = np.abs(grad).mean(axis=1)
    score = savitzky_golay(score, cfg.score_window, cfg.poly_order)
    return np.maximum(score, 0.0)


def uniform_boundaries(time_frames: int, num_segments: int) -> list[int]:
    return sorted({i * time_frames // num_segments for i in range(1, num_segments)})


def select_boundaries(scores: np.ndarray, num_segments: int) -> list[int]:
    """Pick ``num_segments - 1`` boundaries from per-frame change scores.

    Candidates are interior frames (1..T-1). Local maxima above ``EPS``
    (frames 1..T-2, strictly above the left neighbour and at least the
    right one) are taken first, largest score first with ties to the earliest frame; then
    the remaining frames above ``EPS`` in the same order; any shortfall is
    filled from the uniform partition and finally from the earliest unused
    frames.
    """
    scores = np.asarray(scores, dtype=np.float64)
    T = scores.size
    if not 1 <= num_segments <= T:
        raise ConfigError(f"num_segments must lie in [1, {T}], got {num_segments}")
    need = num_segments - 1
    if need == 0:
        return []
    idx = np.arange(1, T)
    s = scores[1:]
    left = scores[:-1]
    right = np.append(scores[2:], np.inf)  # the last frame has no right neighbour, so it is never a peak
    is_peak = (s > left) & (s >= right) & (s > EPS)
    # lexsort: last key is primary -> sort by (-score, index)
    peaks = idx[is_peak][np.lexsort((idx[is_peak], -s[is_peak]))]
    rest_mask = ~is_peak & (s > EPS)
    rest = idx[rest_mask][np.lexsort((idx[rest_mask], -s[rest_mask]))]
    chosen: list[int] = []
    taken: set[int] = set()
    for pool in (peaks, rest, uniform_boundaries(T, num_segments), range(1, T)):
        for b in pool:
            if len(chosen) == need:
                break
            b = int(b)
            if b not in taken:
                taken.add(b)
                chosen.append(b)
    return sorted(chosen)


def detect_segments(spec, num_segments: int, cfg: SegmentConfig = SegmentConfig()) -> SegmentMap:
    values = np.asarray(getattr(spec, "values", spec), dtype=np.float64)
    T = values.shape[0]
    if not 1 <= num_segments <= T:
        raise ConfigError(f"num_segments must lie in [1, {T}], got {num_segments}")
    if num_segments == 1:
        return SegmentMap([], T)
    return SegmentMap(select_boundaries(change_scores(values, cfg), num_segments), T)


# -- spectrogram file formats ----------------------------------------------
# CSV: first line "time_frames,freq_bins", then one row per time frame.
# Binary: two little-endian int64 (time_frames, freq_bins), then row-major float64.


def read_spectrogram(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".csv"):
        with open(path) as fh:
            header = fh.readline()
            t, f = (int(x) for x in header.strip().split(","))
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    else:
        raw = open(path, "rb").read()
        t, f = (int(x) for x in np.frombuffer(raw[:16], dtype="<i8"))
        data = np.frombuffer(raw[16:], dtype="<f8")
    return np.asarray(data, dtype=np.float64).reshape(t, f)


def write_spectrogram(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    t, f = values.shape
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "w") as fh:
            fh.write(f"{t},{f}\n")
            for row in values:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    else:
        with open(path, "wb") as fh:
            fh.write(np.array([t, f], dtype="<i8").tobytes())
            fh.write(values.astype("<f8").tobytes())
