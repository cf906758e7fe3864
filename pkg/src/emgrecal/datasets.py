"""Dataset ingestion and synthesis.

Canonical on-disk format (one directory per participant/session)::

    <root>/
      manifest.txt                     sha256 per file + dataset checksum
      p00/s00/
        meta.txt                       plain-text key=value sidecar
        cycle_1.i16 .. cycle_4.i16     raw little-endian int16, [channels, T]
        eval_0.i16, eval_0.angles.csv  evaluation-run signal + angle track

Signals are quantized to an int16 grid with a per-session scale factor, so
write(load(x)) is byte-identical.  The synthetic generator embeds the four
dynamic factors (intensity spread, limb orientation, electrode shift,
across-day drift) in a ring-of-channels activation model so the benchmark
has ground truth for all of them.
"""

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal as sps

from . import signal as sig

NUM_GESTURES = 11
NUM_CHANNELS = 10
SAMPLE_RATE = 1000.0
INT16_SCALE = 1000.0

LEVEL_BOUNDS = (0.25, 0.45)   # intensity-level cut points (fractions of max)


class DataError(Exception):
    """Malformed dataset on disk or incompatible dataset contents."""


# ---------------------------------------------------------------------------
# structures
# ---------------------------------------------------------------------------

@dataclass
class Cycle:
    cycle_id: int                 # 1-based; cycle 2 is the maximal-intensity one
    samples: np.ndarray           # [channels, T] float32 on the int16 grid
    gestures: tuple               # gesture id per segment
    starts: tuple                 # start sample per segment

    def segment_bounds(self):
        bounds = list(self.starts) + [self.samples.shape[1]]
        return [(bounds[i], bounds[i + 1]) for i in range(len(self.gestures))]


@dataclass
class Trial:
    start_s: float
    gesture: int
    intensity_level: int          # requested level 1..3
    pitch: float                  # requested, degrees
    yaw: float


@dataclass
class EvaluationRun:
    samples: np.ndarray           # [channels, T]
    trials: tuple
    angle_track: np.ndarray       # [frames, 3]: time_s, measured pitch, yaw
    score: Optional[float] = None

    def cue_times(self):
        return np.array([t.start_s for t in self.trials])

    def angles_at(self, times_s):
        """Nearest-frame measured (pitch, yaw) at the given times."""
        frame_t = self.angle_track[:, 0]
        idx = np.clip(
            np.searchsorted(frame_t, np.asarray(times_s)), 0, len(frame_t) - 1
        )
        return self.angle_track[idx, 1], self.angle_track[idx, 2]


@dataclass
class SessionDataset:
    participant: int
    session_index: int            # 1-based, strictly increasing per participant
    day_offset: float             # days since the participant's first session
    sample_rate: float
    cycles: list
    evaluation_runs: list

    def cycle(self, cycle_id):
        for c in self.cycles:
            if c.cycle_id == cycle_id:
                return c
        raise DataError(
            f"participant {self.participant} session {self.session_index}: "
            f"missing cycle {cycle_id}"
        )

    def key(self):
        return f"s{self.session_index}"


def by_participant(sessions):
    out = {}
    for s in sessions:
        out.setdefault(s.participant, []).append(s)
    for plist in out.values():
        plist.sort(key=lambda s: s.session_index)
    return out


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic multi-session generator.

    Per-session electrode shift is a circular channel rotation (the armband
    is a ring); across-day change is a per-channel multiplicative template
    perturbation plus noise-floor growth, both linear in days.
    """

    num_participants: int = 1
    num_sessions: int = 3
    days_between_sessions: float = 7.0
    num_cycles: int = 4
    gesture_duration_s: float = 5.0
    eval_runs_per_session: int = 2
    eval_trials: int = 42
    trial_duration_s: float = 5.0
    ramp_s: float = 0.3
    template_width: float = 1.2       # ring bump width, channels
    template_amp_low: float = 0.8
    template_amp_high: float = 1.2
    shift_channels_per_session: float = 0.75
    drift_per_day: float = 0.02
    noise_floor: float = 0.02
    noise_floor_growth_per_day: float = 0.0
    intensity_mean: float = 0.4343
    intensity_std: float = 0.2302
    intensity_low: float = 0.05
    intensity_high: float = 1.0
    pitch_max: float = 45.0
    yaw_max: float = 70.0
    pitch_gain: float = 0.1
    yaw_distortion_start: float = 40.0
    yaw_distortion_channels: float = 1.5
    carrier_low_hz: float = 20.0
    carrier_high_hz: float = 450.0
    seed: int = 0

    def validate(self):
        if self.num_participants < 1 or self.num_sessions < 1:
            raise ValueError("need at least one participant and one session")
        if self.num_cycles < 1 or self.gesture_duration_s <= 0.2:
            raise ValueError("bad cycle geometry")
        if min(self.drift_per_day, self.noise_floor, self.shift_channels_per_session,
               self.noise_floor_growth_per_day) < 0:
            raise ValueError("rates must be non-negative")
        if not 0 < self.intensity_low < self.intensity_high <= 1.0:
            raise ValueError("bad intensity bounds")

    def to_items(self):
        items = {}
        for name in self.__dataclass_fields__:
            items[name] = fmt_value(getattr(self, name))
        return items

    @classmethod
    def from_items(cls, items):
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in items:
                continue
            kwargs[name] = f.type(items[name]) if callable(f.type) else items[name]
        return cls(**kwargs)


def fmt_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _circular_shift(template, shift):
    """Rotate a ring-indexed vector by a possibly fractional channel count."""
    n = template.shape[0]
    base = int(math.floor(shift))
    frac = shift - base
    rolled = np.roll(template, base)
    if frac == 0.0:
        return rolled
    return (1.0 - frac) * rolled + frac * np.roll(template, base + 1)


def _truncated_normal(rng, mean, std, low, high, size=None):
    value = rng.normal(mean, std, size)
    return np.clip(value, low, high)


class _ParticipantModel:
    """Frozen per-participant ground truth: templates and drift direction."""

    def __init__(self, spec, rng):
        self.spec = spec
        channels = np.arange(NUM_CHANNELS, dtype=np.float64)
        templates = [np.zeros(NUM_CHANNELS)]          # gesture 0 is neutral
        for g in range(1, NUM_GESTURES):
            center = (g - 1) % NUM_CHANNELS + rng.uniform(-0.3, 0.3)
            dist = np.minimum(
                np.abs(channels - center), NUM_CHANNELS - np.abs(channels - center)
            )
            amp = rng.uniform(spec.template_amp_low, spec.template_amp_high)
            templates.append(amp * np.exp(-0.5 * (dist / spec.template_width) ** 2))
        self.templates = np.stack(templates)           # [G, channels]
        self.drift_direction = rng.uniform(-1.0, 1.0, NUM_CHANNELS)

    def session_templates(self, session_index, day_offset):
        shift = self.spec.shift_channels_per_session * (session_index - 1)
        drift = 1.0 + self.spec.drift_per_day * day_offset * self.drift_direction
        out = np.empty_like(self.templates)
        for g in range(NUM_GESTURES):
            out[g] = np.maximum(
                0.0, _circular_shift(self.templates[g], shift) * drift
            )
        return out

    def oriented_template(self, templates, gesture, pitch, yaw):
        """Apply limb-orientation modulation to one session template."""
        spec = self.spec
        t = templates[gesture]
        gain = 1.0 + spec.pitch_gain * (pitch / spec.pitch_max)
        external = yaw - spec.yaw_distortion_start
        if external > 0:
            span = spec.yaw_max - spec.yaw_distortion_start
            t = _circular_shift(
                t, spec.yaw_distortion_channels * external / span
            )
        return gain * t


def _carrier(rng, n, spec, sample_rate=SAMPLE_RATE):
    """Unit-RMS band-limited noise, [channels, n]."""
    sos = sps.butter(
        4, [spec.carrier_low_hz, spec.carrier_high_hz], btype="bandpass",
        output="sos", fs=sample_rate,
    )
    raw = rng.standard_normal((NUM_CHANNELS, n))
    band = sps.sosfilt(sos, raw, axis=1)
    rms = np.sqrt((band * band).mean(axis=1, keepdims=True))
    return band / rms


def _quantize(x):
    q = np.clip(np.round(x * INT16_SCALE), -32768, 32767).astype(np.int16)
    return (q.astype(np.float32)) / np.float32(INT16_SCALE)


def _ramped_envelope(envelopes, bounds, total, ramp_n):
    """Piecewise-constant per-channel envelope with linear onset ramps."""
    env = np.zeros((NUM_CHANNELS, total))
    for (start, stop), e in zip(bounds, envelopes):
        env[:, start:stop] = e[:, None]
    for (start, _), e in zip(bounds[1:], envelopes[1:]):
        prev = env[:, start - 1].copy()
        ramp = min(ramp_n, total - start)
        mix = np.linspace(0.0, 1.0, ramp, endpoint=False)
        env[:, start:start + ramp] = (
            prev[:, None] * (1.0 - mix) + e[:, None] * mix
        )
    return env


def synthesize(spec: SynthSpec):
    """Generate SessionDatasets per ``spec``; a pure function of the spec."""
    spec.validate()
    root_ss = np.random.SeedSequence(spec.seed)
    participant_seqs = root_ss.spawn(spec.num_participants)
    sessions = []
    seg_n = int(round(spec.gesture_duration_s * SAMPLE_RATE))
    trial_n = int(round(spec.trial_duration_s * SAMPLE_RATE))
    ramp_n = int(round(spec.ramp_s * SAMPLE_RATE))
    for p in range(spec.num_participants):
        child = participant_seqs[p].spawn(spec.num_sessions + 1)
        person = _ParticipantModel(spec, np.random.default_rng(child[0]))
        for s in range(1, spec.num_sessions + 1):
            rng = np.random.default_rng(child[s])
            day = spec.days_between_sessions * (s - 1)
            templates = person.session_templates(s, day)
            floor = spec.noise_floor * (1.0 + spec.noise_floor_growth_per_day * day)
            cycles = []
            for cycle_id in range(1, spec.num_cycles + 1):
                envelopes, gestures, starts = [], [], []
                for g in range(NUM_GESTURES):
                    if cycle_id == 2 and g != 0:
                        intensity = 1.0
                    else:
                        intensity = float(
                            _truncated_normal(
                                rng, spec.intensity_mean, spec.intensity_std,
                                spec.intensity_low, spec.intensity_high,
                            )
                        )
                    envelopes.append(templates[g] * intensity)
                    gestures.append(g)
                    starts.append(g * seg_n)
                total = NUM_GESTURES * seg_n
                bounds = [(st, st + seg_n) for st in starts]
                env = _ramped_envelope(envelopes, bounds, total, ramp_n)
                x = env * _carrier(rng, total, spec) + floor * _carrier(
                    rng, total, spec
                )
                cycles.append(
                    Cycle(cycle_id, _quantize(x), tuple(gestures), tuple(starts))
                )
            runs = []
            for _ in range(spec.eval_runs_per_session):
                runs.append(
                    _synth_eval_run(rng, person, templates, floor, trial_n, ramp_n)
                )
            sessions.append(
                SessionDataset(
                    participant=p,
                    session_index=s,
                    day_offset=day,
                    sample_rate=SAMPLE_RATE,
                    cycles=cycles,
                    evaluation_runs=runs,
                )
            )
    return sessions


def _synth_eval_run(rng, person, templates, floor, trial_n, ramp_n):
    spec = person.spec
    envelopes, trials = [], []
    for k in range(spec.eval_trials):
        gesture = int(rng.integers(0, NUM_GESTURES))
        level = int(rng.integers(1, 4))
        if level == 1:
            ratio = rng.uniform(spec.intensity_low, LEVEL_BOUNDS[0])
        elif level == 2:
            ratio = rng.uniform(*LEVEL_BOUNDS)
        else:
            ratio = rng.uniform(LEVEL_BOUNDS[1], spec.intensity_high)
        pitch = rng.uniform(-spec.pitch_max, spec.pitch_max)
        yaw = rng.uniform(-spec.yaw_max, spec.yaw_max)
        envelopes.append(
            person.oriented_template(templates, gesture, pitch, yaw) * ratio
        )
        trials.append(
            Trial(
                start_s=k * spec.trial_duration_s,
                gesture=gesture,
                intensity_level=level,
                pitch=float(pitch),
                yaw=float(yaw),
            )
        )
    total = spec.eval_trials * trial_n
    bounds = [(k * trial_n, (k + 1) * trial_n) for k in range(spec.eval_trials)]
    env = _ramped_envelope(envelopes, bounds, total, ramp_n)
    x = env * _carrier(rng, total, spec) + floor * _carrier(rng, total, spec)
    frame_t = np.arange(0.0, spec.eval_trials * spec.trial_duration_s, 0.02)
    cue_idx = np.minimum(
        (frame_t / spec.trial_duration_s).astype(int), spec.eval_trials - 1
    )
    measured_pitch = np.clip(
        np.array([trials[i].pitch for i in cue_idx]) + rng.normal(0, 1.0, frame_t.size),
        -spec.pitch_max, spec.pitch_max,
    )
    measured_yaw = np.clip(
        np.array([trials[i].yaw for i in cue_idx]) + rng.normal(0, 1.0, frame_t.size),
        -spec.yaw_max, spec.yaw_max,
    )
    track = np.column_stack([frame_t, measured_pitch, measured_yaw])
    return EvaluationRun(_quantize(x), tuple(trials), track, score=None)


# ---------------------------------------------------------------------------
# intensity reference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntensityReference:
    """Per-gesture MAV at maximal intensity (session 1, cycle 2)."""

    per_gesture: np.ndarray

    def value(self, gesture):
        ref = float(self.per_gesture[gesture])
        if ref <= 0:
            raise ValueError(f"zero intensity reference for gesture {gesture}")
        return ref


def build_intensity_reference(first_session, window_spec=None, sos=None):
    """Mean windowed MAV of cycle 2 per gesture, on the filtered signal."""
    window_spec = window_spec or sig.DEFAULT_WINDOW
    if sos is None:
        sos = sig.design_bandpass(sig.DEFAULT_FILTER)
    cycle = first_session.cycle(2)
    filtered = sig.filter_causal(cycle.samples, sos)
    per_gesture = np.zeros(NUM_GESTURES)
    for gesture, (start, stop) in zip(cycle.gestures, cycle.segment_bounds()):
        windows = sig.segment_windows(
            filtered[:, start:stop], window_spec, first_session.sample_rate
        )
        per_gesture[gesture] = float(
            np.mean([sig.mav_scalar(w) for w in windows])
        )
    for g in range(1, NUM_GESTURES):
        if per_gesture[g] <= 0:
            raise DataError(f"non-positive intensity reference for gesture {g}")
    return IntensityReference(per_gesture)


def intensity_ratio(window, reference: IntensityReference, gesture) -> float:
    """Window MAV as a fraction of the gesture's maximal-intensity MAV."""
    return sig.mav_scalar(window) / reference.value(gesture)


def label_intensity_level(ratio) -> int:
    """Level 1 below 25%, level 2 from 25 to 45%, level 3 above 45%."""
    if ratio < 0:
        raise ValueError("intensity ratio must be non-negative")
    if ratio < LEVEL_BOUNDS[0]:
        return 1
    if ratio <= LEVEL_BOUNDS[1]:
        return 2
    return 3


# ---------------------------------------------------------------------------
# windowed views for training/evaluation
# ---------------------------------------------------------------------------

@dataclass
class WindowSet:
    """Windowed, filtered examples plus per-window provenance."""

    x: np.ndarray                 # [N, channels, window]
    y: np.ndarray                 # [N] gesture labels
    cycle_ids: np.ndarray         # [N] source cycle (0 for evaluation runs)
    start_s: np.ndarray           # [N] window start within its recording
    since_cue_s: np.ndarray       # [N] time since the governing gesture cue
    pitch: np.ndarray
    yaw: np.ndarray
    session_index: int
    participant: int
    day_offset: float

    def __len__(self):
        return self.x.shape[0]


def _empty_context(n):
    return dict(
        since_cue_s=np.zeros(n),
        pitch=np.zeros(n),
        yaw=np.zeros(n),
    )


def prepare_training_windows(session, cycles, window_spec=None, sos=None,
                             dtype=np.float32) -> WindowSet:
    """Filter whole cycles causally, then window each gesture segment.

    ``cycles`` picks which cycle ids contribute (the maximal-intensity cycle
    2 is excluded by every standard plan).
    """
    window_spec = window_spec or sig.DEFAULT_WINDOW
    if sos is None:
        sos = sig.design_bandpass(sig.DEFAULT_FILTER)
    xs, ys, cids, starts = [], [], [], []
    window, stride = window_spec.samples(session.sample_rate)
    for cycle_id in cycles:
        cycle = session.cycle(cycle_id)
        filtered = sig.filter_causal(cycle.samples, sos).astype(dtype)
        for gesture, (start, stop) in zip(cycle.gestures, cycle.segment_bounds()):
            windows = sig.segment_windows(
                filtered[:, start:stop], window_spec, session.sample_rate
            )
            if len(windows) == 0:
                continue
            xs.append(np.ascontiguousarray(windows))
            ys.append(np.full(len(windows), gesture, dtype=np.int64))
            cids.append(np.full(len(windows), cycle_id, dtype=np.int64))
            starts.append(
                (start + sig.window_starts(stop - start, window, stride))
                / session.sample_rate
            )
    if not xs:
        raise DataError(
            f"no training windows for participant {session.participant} "
            f"session {session.session_index}"
        )
    x = np.concatenate(xs)
    n = x.shape[0]
    return WindowSet(
        x=x,
        y=np.concatenate(ys),
        cycle_ids=np.concatenate(cids),
        start_s=np.concatenate(starts),
        session_index=session.session_index,
        participant=session.participant,
        day_offset=session.day_offset,
        **_empty_context(n),
    )


def prepare_evaluation_windows(session, window_spec=None, sos=None,
                               dtype=np.float32) -> WindowSet:
    """Window the evaluation runs; labels follow the governing trial cue."""
    window_spec = window_spec or sig.DEFAULT_WINDOW
    if sos is None:
        sos = sig.design_bandpass(sig.DEFAULT_FILTER)
    window, stride = window_spec.samples(session.sample_rate)
    xs, ys, starts, since, pitches, yaws = [], [], [], [], [], []
    for run in session.evaluation_runs:
        filtered = sig.filter_causal(run.samples, sos).astype(dtype)
        windows = sig.segment_windows(filtered, window_spec, session.sample_rate)
        if len(windows) == 0:
            continue
        t0 = sig.window_starts(run.samples.shape[1], window, stride) / session.sample_rate
        cues = run.cue_times()
        idx = np.clip(np.searchsorted(cues, t0, side="right") - 1, 0, None)
        labels = np.array([run.trials[i].gesture for i in idx], dtype=np.int64)
        pitch, yaw = run.angles_at(t0)
        xs.append(np.ascontiguousarray(windows))
        ys.append(labels)
        starts.append(t0)
        since.append(t0 - cues[idx])
        pitches.append(pitch)
        yaws.append(yaw)
    if not xs:
        raise DataError(
            f"no evaluation windows for participant {session.participant} "
            f"session {session.session_index}"
        )
    x = np.concatenate(xs)
    return WindowSet(
        x=x,
        y=np.concatenate(ys),
        cycle_ids=np.zeros(x.shape[0], dtype=np.int64),
        start_s=np.concatenate(starts),
        since_cue_s=np.concatenate(since),
        pitch=np.concatenate(pitches),
        yaw=np.concatenate(yaws),
        session_index=session.session_index,
        participant=session.participant,
        day_offset=session.day_offset,
    )


# ---------------------------------------------------------------------------
# canonical on-disk format
# ---------------------------------------------------------------------------

def _session_dir(root, session):
    return Path(root) / f"p{session.participant:02d}" / f"s{session.session_index:02d}"


def _meta_lines(session):
    lines = [
        f"participant={session.participant}",
        f"session_index={session.session_index}",
        f"day_offset_days={fmt_value(float(session.day_offset))}",
        f"sample_rate_hz={fmt_value(float(session.sample_rate))}",
        f"channels={NUM_CHANNELS}",
        f"scale={fmt_value(float(INT16_SCALE))}",
        f"gestures={NUM_GESTURES}",
        "cycles=" + ",".join(str(c.cycle_id) for c in session.cycles),
    ]
    for c in session.cycles:
        prefix = f"cycle_{c.cycle_id}"
        lines.append(f"{prefix}.file={prefix}.i16")
        lines.append(f"{prefix}.samples={c.samples.shape[1]}")
        lines.append(f"{prefix}.gestures=" + ",".join(str(g) for g in c.gestures))
        lines.append(f"{prefix}.starts=" + ",".join(str(s) for s in c.starts))
    lines.append(f"eval_runs={len(session.evaluation_runs)}")
    for i, run in enumerate(session.evaluation_runs):
        prefix = f"eval_{i}"
        lines.append(f"{prefix}.file={prefix}.i16")
        lines.append(f"{prefix}.samples={run.samples.shape[1]}")
        lines.append(f"{prefix}.angles={prefix}.angles.csv")
        lines.append(
            f"{prefix}.trials="
            + ";".join(
                f"{fmt_value(t.start_s)}:{t.gesture}:{t.intensity_level}:"
                f"{fmt_value(t.pitch)}:{fmt_value(t.yaw)}"
                for t in run.trials
            )
        )
        if run.score is not None:
            lines.append(f"{prefix}.score={fmt_value(float(run.score))}")
    return lines


def _signal_bytes(samples):
    q = np.clip(
        np.round(np.asarray(samples, dtype=np.float64) * INT16_SCALE),
        -32768, 32767,
    ).astype("<i2")
    return q.tobytes()


def write_canonical(sessions, root, force=False, spec_items=None):
    """Write sessions in canonical format; returns the dataset checksum."""
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"output directory {root} is not empty (use force)")
    root.mkdir(parents=True, exist_ok=True)
    file_hashes = []
    for session in sorted(
        sessions, key=lambda s: (s.participant, s.session_index)
    ):
        sdir = _session_dir(root, session)
        sdir.mkdir(parents=True, exist_ok=True)
        payload = {"meta.txt": ("\n".join(_meta_lines(session)) + "\n").encode()}
        for c in session.cycles:
            payload[f"cycle_{c.cycle_id}.i16"] = _signal_bytes(c.samples)
        for i, run in enumerate(session.evaluation_runs):
            payload[f"eval_{i}.i16"] = _signal_bytes(run.samples)
            rows = ["time_s,pitch_deg,yaw_deg"]
            rows += [
                f"{fmt_value(float(t))},{fmt_value(float(p))},{fmt_value(float(y))}"
                for t, p, y in run.angle_track
            ]
            payload[f"eval_{i}.angles.csv"] = ("\n".join(rows) + "\n").encode()
        for name, data in payload.items():
            (sdir / name).write_bytes(data)
            rel = str((sdir / name).relative_to(root))
            file_hashes.append((rel, hashlib.sha256(data).hexdigest()))
    file_hashes.sort()
    checksum = _dataset_checksum(file_hashes)
    manifest = [f"{h} {rel}" for rel, h in file_hashes]
    manifest.append(f"dataset_checksum={checksum}")
    if spec_items:
        manifest.append("[synth_spec]")
        manifest += [f"{k}={v}" for k, v in spec_items.items()]
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return checksum


def _dataset_checksum(file_hashes):
    digest = hashlib.sha256()
    for rel, h in sorted(file_hashes):
        digest.update(f"{rel}:{h}\n".encode())
    return digest.hexdigest()


def _parse_meta(path):
    items = {}
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {i}: expected key=value")
        key, _, value = line.partition("=")
        items[key] = value
    return items


def _read_signal(path, channels, samples):
    expected = channels * samples * 2
    data = path.read_bytes()
    if len(data) < expected:
        raise DataError(
            f"{path}: truncated signal file: expected {expected} bytes, "
            f"got {len(data)} (missing from byte offset {len(data)})"
        )
    if len(data) > expected:
        raise DataError(
            f"{path}: trailing data: expected {expected} bytes, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype="<i2").reshape(channels, samples)
    return raw.astype(np.float32) / np.float32(INT16_SCALE)


def _int_list(text):
    return tuple(int(v) for v in text.split(",")) if text else ()


class LoadedDataset:
    """Sessions plus the checksum of the files they were read from."""

    def __init__(self, sessions, checksum, root):
        self.sessions = sessions
        self.checksum = checksum
        self.root = str(root)

    def plans(self):
        """Per-participant ordered session lists."""
        return by_participant(self.sessions)


def load_canonical(root) -> LoadedDataset:
    """Load and validate a canonical dataset directory."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    session_dirs = sorted(root.glob("p*/s*"))
    if not session_dirs:
        raise DataError(f"{root}: no participant/session directories found")
    sessions = []
    file_hashes = []
    for sdir in session_dirs:
        meta_path = sdir / "meta.txt"
        if not meta_path.is_file():
            raise DataError(f"{sdir}: missing meta.txt sidecar")
        meta = _parse_meta(meta_path)
        try:
            participant = int(meta["participant"])
            session_index = int(meta["session_index"])
            day_offset = float(meta["day_offset_days"])
            sample_rate = float(meta["sample_rate_hz"])
            channels = int(meta["channels"])
            gestures = int(meta["gestures"])
            cycle_ids = _int_list(meta["cycles"])
        except KeyError as err:
            raise DataError(f"{meta_path}: missing required key {err}") from err
        if channels != NUM_CHANNELS:
            raise DataError(
                f"{meta_path}: channel count {channels}, expected {NUM_CHANNELS}"
            )
        if gestures != NUM_GESTURES:
            raise DataError(
                f"{meta_path}: gesture count {gestures}, expected {NUM_GESTURES}"
            )
        cycles = []
        for cid in cycle_ids:
            prefix = f"cycle_{cid}"
            try:
                samples_n = int(meta[f"{prefix}.samples"])
                cycle_gestures = _int_list(meta[f"{prefix}.gestures"])
                starts = _int_list(meta[f"{prefix}.starts"])
                fname = meta[f"{prefix}.file"]
            except KeyError as err:
                raise DataError(
                    f"{meta_path}: missing cycle entry {err}"
                ) from err
            if len(cycle_gestures) != gestures:
                raise DataError(
                    f"{meta_path}: {prefix} gesture count "
                    f"{len(cycle_gestures)}, expected {gestures}"
                )
            if len(starts) != len(cycle_gestures) or list(starts) != sorted(starts):
                raise DataError(f"{meta_path}: {prefix} starts malformed")
            if starts and starts[-1] >= samples_n:
                raise DataError(f"{meta_path}: {prefix} starts exceed length")
            fpath = sdir / fname
            if not fpath.is_file():
                raise DataError(f"{sdir}: missing cycle file {fname}")
            cycles.append(
                Cycle(cid, _read_signal(fpath, channels, samples_n),
                      cycle_gestures, starts)
            )
        runs = []
        for i in range(int(meta.get("eval_runs", "0"))):
            prefix = f"eval_{i}"
            samples_n = int(meta[f"{prefix}.samples"])
            fpath = sdir / meta[f"{prefix}.file"]
            if not fpath.is_file():
                raise DataError(f"{sdir}: missing evaluation file {fpath.name}")
            samples = _read_signal(fpath, channels, samples_n)
            trials = []
            trials_text = meta.get(f"{prefix}.trials", "")
            for item in filter(None, trials_text.split(";")):
                parts = item.split(":")
                if len(parts) != 5:
                    raise DataError(f"{meta_path}: malformed trial {item!r}")
                trials.append(
                    Trial(float(parts[0]), int(parts[1]), int(parts[2]),
                          float(parts[3]), float(parts[4]))
                )
            angles_path = sdir / meta[f"{prefix}.angles"]
            if not angles_path.is_file():
                raise DataError(f"{sdir}: missing angle track {angles_path.name}")
            track = _read_angles(angles_path)
            score = meta.get(f"{prefix}.score")
            runs.append(
                EvaluationRun(samples, tuple(trials), track,
                              score=float(score) if score else None)
            )
        sessions.append(
            SessionDataset(participant, session_index, day_offset,
                           sample_rate, cycles, runs)
        )
        for f in sorted(sdir.iterdir()):
            rel = str(f.relative_to(root))
            file_hashes.append((rel, hashlib.sha256(f.read_bytes()).hexdigest()))
    for plist in by_participant(sessions).values():
        indices = [s.session_index for s in plist]
        if indices != sorted(set(indices)):
            raise DataError(
                f"participant {plist[0].participant}: session indices "
                f"{indices} not strictly increasing"
            )
    return LoadedDataset(sessions, _dataset_checksum(file_hashes), root)


def _read_angles(path):
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "time_s,pitch_deg,yaw_deg":
        raise DataError(f"{path}: bad angle-track header")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}: line {i}: expected 3 columns")
        rows.append([float(v) for v in parts])
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# best-effort import adapter
# ---------------------------------------------------------------------------

def import_external(src, out, force=False):
    """Convert a simple external layout to the canonical format.

    Expected source layout: ``<participant>/<session>/cycle<k>.npy`` arrays
    shaped [channels, T] (optionally ``eval<r>.npy``), with an optional
    ``day_offset.txt`` per session.  Gesture boundaries default to eleven
    equal segments per cycle unless a ``boundaries.txt`` (comma-separated
    start samples) sits next to the cycle file.
    """
    src = Path(src)
    if not src.is_dir():
        raise DataError(f"{src}: not a directory")
    sessions = []
    participants = sorted(d for d in src.iterdir() if d.is_dir())
    if not participants:
        raise DataError(f"{src}: no participant directories")
    for p_idx, pdir in enumerate(participants):
        session_dirs = sorted(d for d in pdir.iterdir() if d.is_dir())
        for s_idx, sdir in enumerate(session_dirs, start=1):
            cycle_files = sorted(sdir.glob("cycle*.npy"))
            if not cycle_files:
                raise DataError(f"{sdir}: no cycle*.npy files")
            day_file = sdir / "day_offset.txt"
            day = float(day_file.read_text().strip()) if day_file.is_file() else (
                7.0 * (s_idx - 1)
            )
            cycles = []
            for cid, cf in enumerate(cycle_files, start=1):
                arr = np.load(cf)
                if arr.ndim != 2 or arr.shape[0] != NUM_CHANNELS:
                    raise DataError(
                        f"{cf}: expected [{NUM_CHANNELS}, T] array, got {arr.shape}"
                    )
                bfile = sdir / "boundaries.txt"
                if bfile.is_file():
                    starts = _int_list(bfile.read_text().strip())
                else:
                    seg = arr.shape[1] // NUM_GESTURES
                    starts = tuple(g * seg for g in range(NUM_GESTURES))
                cycles.append(
                    Cycle(cid, _quantize(np.asarray(arr, dtype=np.float64)),
                          tuple(range(NUM_GESTURES)), starts)
                )
            sessions.append(
                SessionDataset(p_idx, s_idx, day, SAMPLE_RATE, cycles, [])
            )
    return write_canonical(sessions, out, force=force)
