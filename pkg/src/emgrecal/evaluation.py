"""Metrics and statistics for the across-day benchmark.

Per-session accuracy, Cohen's Dz, the Wilcoxon signed-rank test (exact
distribution up to n=25, normal approximation with tie correction above),
Pearson r, transition-trimmed binned analyses, and the MAV/MSA day
comparison.  Everything here is a pure function; report writers emit
deterministic CSV.
"""

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import rankdata

from . import signal as sig

WILCOXON_EXACT_MAX_N = 25


def accuracy(predictions, labels) -> float:
    """Exact fraction of matching entries."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError("predictions and labels must be equal-length vectors")
    if predictions.size == 0:
        raise ValueError("empty prediction set")
    return float(np.count_nonzero(predictions == labels)) / predictions.size


def cohens_dz(paired_a, paired_b) -> float:
    """Standardized mean difference for paired samples: mean(d) / sd(d)."""
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two paired vectors with n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("degenerate pairs: zero difference variance")
    return float(d.mean() / sd)


class WilcoxonResult(NamedTuple):
    statistic: float   # min(W+, W-)
    p_value: float     # two-sided
    n: int             # pairs remaining after zero-difference removal
    method: str        # "exact" or "normal"


def _exact_signed_rank_cdf(doubled_ranks, doubled_w):
    """P(W+ <= w) under random signs, by dynamic programming.

    Ranks are doubled so mid-ranks from ties become integers; the DP then
    counts sign patterns per achievable doubled rank-sum, which equals full
    enumeration over the 2^n patterns.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    cdf = counts[: doubled_w + 1].sum() / 2.0 ** len(doubled_ranks)
    return cdf


def wilcoxon_signed_rank(paired_a, paired_b) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; ties in |d| get mid-ranks.  Exact p for
    n <= 25, else normal approximation with tie correction.
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two paired vectors")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero")
    if n < 5:
        raise ValueError(f"need >= 5 nonzero differences, have {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    if n <= WILCOXON_EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        cdf = _exact_signed_rank_cdf(doubled, int(round(2 * statistic)))
        p = min(1.0, 2.0 * cdf)
        return WilcoxonResult(statistic, p, n, "exact")
    mean_w = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    var_w = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = (statistic - mean_w) / math.sqrt(var_w)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(statistic, p, n, "normal")


def pearson_r(x, y) -> float:
    """Product-moment correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length vectors with n >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
    if denom == 0:
        raise ValueError("zero variance input")
    return float((xc * yc).sum() / denom)


def trim_transitions(window_starts_s, cue_times_s, trim_s=1.5):
    """Keep-mask for windows not starting within ``trim_s`` after a cue.

    A window is governed by the latest cue at or before its start; windows
    earlier than the first cue are kept.
    """
    starts = np.asarray(window_starts_s, dtype=np.float64)
    cues = np.sort(np.asarray(cue_times_s, dtype=np.float64))
    keep = np.ones(starts.size, dtype=bool)
    if cues.size == 0:
        return keep
    idx = np.searchsorted(cues, starts, side="right") - 1
    governed = idx >= 0
    since_cue = starts[governed] - cues[idx[governed]]
    keep[governed] = since_cue >= trim_s
    return keep


@dataclass(frozen=True)
class BinCell:
    """One populated analysis bin; under-threshold bins are simply absent."""

    key: tuple          # (bin_index,) for intensity, (pitch_idx, yaw_idx) for grid
    low: tuple
    high: tuple
    n: int
    n_correct: int

    @property
    def accuracy(self):
        return self.n_correct / self.n


@dataclass(frozen=True)
class BinnedAnalysis:
    kind: str
    min_count: int
    cells: tuple


def bin_by_intensity(correct, ratios, bin_width=0.05, min_count=1) -> BinnedAnalysis:
    """Accuracy vs intensity ratio in fixed-width bins."""
    correct = np.asarray(correct, dtype=bool)
    ratios = np.asarray(ratios, dtype=np.float64)
    if correct.shape != ratios.shape:
        raise ValueError("correct/ratios length mismatch")
    idx = np.floor(ratios / bin_width).astype(np.int64)
    cells = []
    for i in np.unique(idx):
        mask = idx == i
        n = int(mask.sum())
        if n < min_count:
            continue
        cells.append(
            BinCell(
                key=(int(i),),
                low=(i * bin_width,),
                high=((i + 1) * bin_width,),
                n=n,
                n_correct=int(correct[mask].sum()),
            )
        )
    return BinnedAnalysis("intensity", min_count, tuple(cells))


def bin_by_orientation(correct, pitch, yaw, cell_deg=5.0, min_count=500) -> BinnedAnalysis:
    """Accuracy on a pitch x yaw grid; cells under ``min_count`` are dropped."""
    correct = np.asarray(correct, dtype=bool)
    pitch = np.asarray(pitch, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    if not (correct.shape == pitch.shape == yaw.shape):
        raise ValueError("correct/pitch/yaw length mismatch")
    pi = np.floor(pitch / cell_deg).astype(np.int64)
    yi = np.floor(yaw / cell_deg).astype(np.int64)
    cells = []
    keys = sorted({(int(a), int(b)) for a, b in zip(pi, yi)})
    for a, b in keys:
        mask = (pi == a) & (yi == b)
        n = int(mask.sum())
        if n < min_count:
            continue
        cells.append(
            BinCell(
                key=(a, b),
                low=(a * cell_deg, b * cell_deg),
                high=((a + 1) * cell_deg, (b + 1) * cell_deg),
                n=n,
                n_correct=int(correct[mask].sum()),
            )
        )
    return BinnedAnalysis("orientation", min_count, tuple(cells))


# ---------------------------------------------------------------------------
# MAV / MSA day comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DaySeries:
    part: str            # "training" or "evaluation"
    metric: str          # "mav" or "msa"
    days: tuple
    means: tuple
    stds: tuple


@dataclass(frozen=True)
class DayComparison:
    part: str
    metric: str
    day_a: float
    day_b: float
    n: int
    outcome: str                      # "tested", "no change", "insufficient pairs"
    statistic: Optional[float] = None
    p_value: Optional[float] = None


@dataclass(frozen=True)
class MavMsaReport:
    series: tuple
    comparisons: tuple


def _session_mav_msa(session, part, window_spec, sos):
    """Scalar MAV mean and MSA of per-window channel-MAV rows for one part."""
    rows = []
    if part == "training":
        for cycle in session.cycles:
            if cycle.cycle_id == 2:      # maximal-intensity cycle stays out
                continue
            filtered = sig.filter_causal(cycle.samples, sos)
            for start, stop in cycle.segment_bounds():
                windows = sig.segment_windows(
                    filtered[:, start:stop], window_spec, session.sample_rate
                )
                rows.extend(sig.mav(w) for w in windows)
    else:
        for run in session.evaluation_runs:
            filtered = sig.filter_causal(run.samples, sos)
            windows = sig.segment_windows(filtered, window_spec, session.sample_rate)
            rows.extend(sig.mav(w) for w in windows)
    if not rows:
        return None
    rows = np.asarray(rows)
    mav_mean = float(rows.mean())
    msa_value = sig.msa(rows).value if rows.shape[0] > rows.shape[1] else 0.0
    return mav_mean, msa_value


def mav_msa_day_report(sessions, window_spec=None, filter_spec=None) -> MavMsaReport:
    """Fig-style MAV and MSA per day, training vs evaluation parts.

    Values are computed per participant per day, averaged across
    participants, and the first vs last day is compared with a paired
    Wilcoxon test (identical data yields "no change").
    """
    window_spec = window_spec or sig.DEFAULT_WINDOW
    filter_spec = filter_spec or sig.DEFAULT_FILTER
    sos = sig.design_bandpass(filter_spec)
    days = sorted({s.day_offset for s in sessions})
    if len(days) < 2:
        raise ValueError("need sessions on at least two distinct days")
    per_day = {}   # (part, metric, day) -> {participant: value}
    for session in sessions:
        for part in ("training", "evaluation"):
            stats = _session_mav_msa(session, part, window_spec, sos)
            if stats is None:
                continue
            for metric, value in zip(("mav", "msa"), stats):
                per_day.setdefault((part, metric, session.day_offset), {})[
                    session.participant
                ] = value
    series, comparisons = [], []
    for part in ("training", "evaluation"):
        for metric in ("mav", "msa"):
            day_list, means, stds = [], [], []
            for day in days:
                values = per_day.get((part, metric, day))
                if not values:
                    continue
                arr = np.asarray(sorted(values.values()))
                day_list.append(day)
                means.append(float(arr.mean()))
                stds.append(float(arr.std(ddof=1) if arr.size > 1 else 0.0))
            if len(day_list) < 2:
                continue
            series.append(
                DaySeries(part, metric, tuple(day_list), tuple(means), tuple(stds))
            )
            first, last = day_list[0], day_list[-1]
            a_map = per_day[(part, metric, first)]
            b_map = per_day[(part, metric, last)]
            shared = sorted(set(a_map) & set(b_map))
            a = [a_map[p] for p in shared]
            b = [b_map[p] for p in shared]
            try:
                res = wilcoxon_signed_rank(a, b)
                comparisons.append(
                    DayComparison(part, metric, first, last, len(shared),
                                  "tested", res.statistic, res.p_value)
                )
            except ValueError as err:
                outcome = (
                    "no change" if "zero" in str(err) else "insufficient pairs"
                )
                comparisons.append(
                    DayComparison(part, metric, first, last, len(shared), outcome)
                )
    return MavMsaReport(tuple(series), tuple(comparisons))


# ---------------------------------------------------------------------------
# deterministic CSV emission
# ---------------------------------------------------------------------------

def fmt(value):
    """Shortest round-trip decimal for floats; plain str otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """Write rows (already ordered) with deterministic formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_binned_csv(path, analysis: BinnedAnalysis):
    if analysis.kind == "intensity":
        header = ["ratio_low", "ratio_high", "n", "accuracy"]
        rows = [
            (c.low[0], c.high[0], c.n, c.accuracy) for c in analysis.cells
        ]
    else:
        header = ["pitch_low", "pitch_high", "yaw_low", "yaw_high", "n", "accuracy"]
        rows = [
            (c.low[0], c.high[0], c.low[1], c.high[1], c.n, c.accuracy)
            for c in analysis.cells
        ]
    write_csv(path, header, rows)
