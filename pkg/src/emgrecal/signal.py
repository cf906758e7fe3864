"""Deterministic sEMG preprocessing.

Causal band-pass filtering (cascaded second-order sections), sliding-window
segmentation, and the MAV / MSA amplitude and pattern-variability summaries.

Signals are arrays shaped [channels, time].  Filtering is forward-only
(causal), not zero-phase: the downstream classifier operates under a
real-time latency budget, so look-ahead is off the table.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal as sps


@dataclass(frozen=True)
class FilterSpec:
    """Band-pass design request. ``order`` is the analog prototype order per
    band edge (order 4 means 8 poles after the band transformation)."""

    low_cut: float
    high_cut: float
    order: int
    sample_rate: float

    def validate(self):
        nyquist = self.sample_rate / 2.0
        if not 0 < self.low_cut < self.high_cut:
            raise ValueError(
                f"need 0 < low_cut < high_cut, got {self.low_cut}, {self.high_cut}"
            )
        if self.high_cut >= nyquist:
            raise ValueError(
                f"high_cut {self.high_cut} Hz must be below Nyquist {nyquist} Hz"
            )
        if self.order < 1:
            raise ValueError("order must be >= 1")


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window segmentation in milliseconds."""

    window_ms: float = 150.0
    overlap_ms: float = 100.0

    def validate(self):
        if not 0 <= self.overlap_ms < self.window_ms:
            raise ValueError(
                f"need 0 <= overlap < window, got {self.overlap_ms}, {self.window_ms}"
            )

    def samples(self, sample_rate):
        """(window, stride) lengths in samples."""
        self.validate()
        window = int(round(self.window_ms * sample_rate / 1000.0))
        stride = int(round((self.window_ms - self.overlap_ms) * sample_rate / 1000.0))
        if stride < 1:
            raise ValueError("stride shorter than one sample")
        return window, stride


DEFAULT_FILTER = FilterSpec(low_cut=20.0, high_cut=495.0, order=4, sample_rate=1000.0)
DEFAULT_WINDOW = WindowSpec(window_ms=150.0, overlap_ms=100.0)


def design_bandpass(spec: FilterSpec) -> np.ndarray:
    """Butterworth band-pass as cascaded second-order sections.

    Designed by bilinear transform with frequency pre-warping; maximally flat
    in the passband.  Returns the SOS coefficient matrix.
    """
    spec.validate()
    return sps.butter(
        spec.order,
        [spec.low_cut, spec.high_cut],
        btype="bandpass",
        output="sos",
        fs=spec.sample_rate,
    )


def bandpass_gain(spec: FilterSpec, freq_hz):
    """Analytic magnitude response of the design at ``freq_hz``.

    Computed from the analog prototype with pre-warped band edges, i.e.
    independently of the discrete coefficients: |H|^2 = 1 / (1 + W^(2N))
    with W the band-transformed, pre-warped frequency.
    """
    spec.validate()
    fs = spec.sample_rate
    warp = lambda f: 2.0 * fs * np.tan(np.pi * f / fs)
    wl, wh = warp(spec.low_cut), warp(spec.high_cut)
    w = warp(np.asarray(freq_hz, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        transformed = (w * w - wl * wh) / (w * (wh - wl))
    transformed = np.where(w == 0, np.inf, transformed)
    return 1.0 / np.sqrt(1.0 + transformed ** (2 * spec.order))


def filter_causal(samples: np.ndarray, sos: np.ndarray) -> np.ndarray:
    """Channel-wise forward filtering with zero initial state.

    Output at time t depends only on inputs at times <= t.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError("expected [channels, time]")
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite input sample")
    return sps.sosfilt(sos, samples, axis=1)


def segment_windows(samples: np.ndarray, spec: WindowSpec, sample_rate: float):
    """Contiguous sliding windows, oldest first: [N, channels, window].

    N = floor((T - W) / S) + 1; a signal shorter than one window yields an
    empty batch.  The result is a read-only view; copy before mutating.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError("expected [channels, time]")
    window, stride = spec.samples(sample_rate)
    t = samples.shape[1]
    if t < window:
        return np.empty((0, samples.shape[0], window), dtype=samples.dtype)
    view = np.lib.stride_tricks.sliding_window_view(samples, window, axis=1)
    return view[:, ::stride].transpose(1, 0, 2)


def window_count(t: int, window: int, stride: int) -> int:
    """Number of full windows in a signal of length t."""
    if t < window:
        return 0
    return (t - window) // stride + 1


def window_starts(t: int, window: int, stride: int) -> np.ndarray:
    """Start sample of each window produced by segment_windows."""
    return np.arange(window_count(t, window, stride)) * stride


def mav(window: np.ndarray) -> np.ndarray:
    """Per-channel mean absolute value of one window [channels, time]."""
    window = np.asarray(window)
    if window.ndim != 2 or window.size == 0:
        raise ValueError("expected non-empty [channels, time]")
    return np.abs(window).mean(axis=1)


def mav_scalar(window: np.ndarray) -> float:
    """Mean of the per-channel MAVs."""
    return float(mav(window).mean())


class MsaResult(NamedTuple):
    value: float
    degenerate: bool


def msa(feature_rows: np.ndarray, rank_tol: float = 1e-12) -> MsaResult:
    """Mean semi-principal axis of a feature cloud [N, D].

    Rows are mean-centered, the sample covariance (N-1 denominator) is
    eigendecomposed, and the semi-axis lengths are the square roots of the
    eigenvalues; the MSA is their geometric mean.  A rank-deficient cloud
    has a zero axis, so the geometric mean collapses to 0 and the result is
    flagged degenerate.
    """
    rows = np.asarray(feature_rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected [N, D]")
    n, d = rows.shape
    if n <= d:
        raise ValueError(f"need more rows than dimensions (N={n}, D={d})")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals = np.linalg.eigvalsh(cov)
    scale = max(eigvals[-1], 0.0)
    if scale == 0.0 or eigvals[0] <= rank_tol * scale:
        return MsaResult(0.0, True)
    axes = np.sqrt(eigvals)
    return MsaResult(float(np.exp(np.log(axes).mean())), False)
