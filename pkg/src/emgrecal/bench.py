"""Benchmark grid: every scheme x seed x participant, plus report emission.

Emits deterministic CSV reports (accuracy tables, fusion-vs-fine-tuning
comparisons, figure-analog data files) and per-session checkpoints.  Reruns
with an identical config produce byte-identical files: no timestamps, no
absolute paths, rows fully ordered.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, datasets as ds, evaluation as ev
from .config import RunConfig
from .kernel import backend_name
from .persist import save_model
from .training import CalibrationScheme, SessionPlan, run_calibration_scheme

WORKERS_ENV = "EMGRECAL_WORKERS"


@dataclass
class GridCell:
    scheme: CalibrationScheme
    seed: int
    participant: int
    status: str = "pending"        # completed | skipped
    note: str = ""
    result: object = None


@dataclass
class BenchmarkOutput:
    out_dir: str
    cells: list = field(default_factory=list)
    dataset_checksum: str = ""

    @property
    def all_completed(self):
        return all(c.status == "completed" for c in self.cells if c.status != "skipped")

    def completed(self):
        return [c for c in self.cells if c.status == "completed"]


def _worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _cell_key(cell):
    return (cell.scheme.value, cell.seed, cell.participant)


def _run_cell(args):
    sessions, scheme, spec_seeded, model_config = args
    plan = SessionPlan(sessions)
    return run_calibration_scheme(plan, scheme, spec_seeded, model_config)


def resolve_dataset(cfg: RunConfig, out_dir):
    """Load the configured dataset, synthesizing into the run dir if asked."""
    if cfg.dataset_path:
        return ds.load_canonical(cfg.dataset_path)
    synth_dir = Path(out_dir) / "dataset"
    sessions = ds.synthesize(cfg.synth)
    ds.write_canonical(
        sessions, synth_dir, force=True, spec_items=cfg.synth.to_items()
    )
    return ds.load_canonical(synth_dir)


def run_benchmark(cfg: RunConfig, out_dir, save_checkpoints=True) -> BenchmarkOutput:
    from dataclasses import replace

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = resolve_dataset(cfg, out_dir)
    plans = loaded.plans()
    output = BenchmarkOutput(str(out_dir), dataset_checksum=loaded.checksum)

    tasks, runnable = [], []
    for scheme in cfg.schemes:
        for seed in cfg.seeds:
            for participant in sorted(plans):
                sessions = plans[participant]
                cell = GridCell(scheme, seed, participant)
                if (
                    scheme is CalibrationScheme.DELAYED_CALIBRATION
                    and len(sessions) < 3
                ):
                    cell.status = "skipped"
                    cell.note = "needs >= 3 sessions"
                elif scheme is CalibrationScheme.TADANN and len(sessions) < 2:
                    cell.status = "skipped"
                    cell.note = "needs >= 2 sessions"
                else:
                    runnable.append(cell)
                    tasks.append(
                        (sessions, scheme, replace(cfg.train, seed=seed), cfg.model)
                    )
                output.cells.append(cell)

    workers = _worker_count()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    for cell, result in zip(runnable, results):
        cell.result = result
        cell.status = "completed"

    _emit_reports(cfg, loaded, output, save_checkpoints)
    return output


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _offline_rows(output):
    rows = []
    for cell in output.completed():
        for sr in cell.result.sessions:
            rows.append(
                (
                    cell.scheme.value, cell.seed, cell.participant,
                    sr.session_index, sr.day_offset, sr.n_test, sr.accuracy,
                )
            )
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return rows


def _eval_predictions(cfg, loaded, output):
    """Per completed cell and session: predictions on evaluation-run windows.

    Returns (rows, detail) where detail carries per-window correctness and
    context for the binned analyses.
    """
    session_lookup = {
        (s.participant, s.session_index): s for s in loaded.sessions
    }
    window_cache, reference_cache = {}, {}
    rows, detail = [], []
    for cell in output.completed():
        for sr in cell.result.sessions:
            session = session_lookup[(cell.participant, sr.session_index)]
            if not session.evaluation_runs:
                continue
            key = (cell.participant, sr.session_index)
            if key not in window_cache:
                window_cache[key] = ds.prepare_evaluation_windows(session)
            windows = window_cache[key]
            if cell.participant not in reference_cache:
                first = loaded.plans()[cell.participant][0]
                reference_cache[cell.participant] = ds.build_intensity_reference(first)
            reference = reference_cache[cell.participant]
            preds = _predict_batched(sr.model, sr.inference_key, windows.x)
            correct = preds == windows.y
            rows.append(
                (
                    cell.scheme.value, cell.seed, cell.participant,
                    sr.session_index, sr.day_offset, len(windows),
                    float(correct.sum()) / len(windows),
                )
            )
            ratios = np.array(
                [
                    ds.intensity_ratio(w, reference, g) if g != 0 else 0.0
                    for w, g in zip(windows.x, windows.y)
                ]
            )
            detail.append(
                dict(
                    scheme=cell.scheme, seed=cell.seed,
                    participant=cell.participant, session=sr.session_index,
                    correct=correct, labels=windows.y, ratios=ratios,
                    since_cue_s=windows.since_cue_s,
                    pitch=windows.pitch, yaw=windows.yaw,
                )
            )
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return rows, detail


def _predict_batched(model, inference_key, x, batch=1024):
    from .model import predict

    out = []
    for start in range(0, x.shape[0], batch):
        xb = x[start:start + batch]
        if inference_key is None:
            out.append(predict(model, xb))
        else:
            out.append(predict(model, xb, session_key=inference_key))
    return np.concatenate(out)


def _comparison_rows(rows):
    """TADANN vs fine-tuning recalibration, paired over (participant, seed)."""
    by_key = {}
    for scheme, seed, participant, session, _day, _n, acc in rows:
        by_key[(scheme, seed, participant, session)] = acc
    sessions = sorted({k[3] for k in by_key if k[3] >= 2})
    out = []
    for session in sessions:
        pairs = []
        for (scheme, seed, participant, s), acc in sorted(by_key.items()):
            if s != session or scheme != CalibrationScheme.TADANN.value:
                continue
            other = by_key.get(
                (CalibrationScheme.RECALIBRATION.value, seed, participant, s)
            )
            if other is not None:
                pairs.append((acc, other))
        if not pairs:
            continue
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        row = {
            "session": session, "n_pairs": len(pairs),
            "mean_tadann": float(a.mean()), "mean_recalibration": float(b.mean()),
            "dz": "", "statistic": "", "p_value": "", "method": "", "note": "",
        }
        try:
            row["dz"] = ev.cohens_dz(a, b)
        except ValueError as err:
            row["note"] = str(err)
        try:
            res = ev.wilcoxon_signed_rank(a, b)
            row["statistic"] = res.statistic
            row["p_value"] = res.p_value
            row["method"] = res.method
        except ValueError as err:
            if not row["note"]:
                row["note"] = str(err)
        out.append(row)
    return out


def _over_time_rows(rows):
    grouped = {}
    for scheme, _seed, _participant, session, day, _n, acc in rows:
        grouped.setdefault((scheme, session), []).append((day, acc))
    out = []
    for (scheme, session), values in sorted(grouped.items()):
        days = [v[0] for v in values]
        accs = [v[1] for v in values]
        out.append(
            (scheme, session, float(np.mean(days)), float(np.mean(accs)), len(accs))
        )
    return out


def _binned_reports(cfg, detail, out_dir):
    """Intensity and orientation analyses from the recalibration models."""
    recal = [
        d for d in detail if d["scheme"] is CalibrationScheme.RECALIBRATION
    ]
    if not recal:
        return "no recalibration runs; binned figure analogs not emitted"
    keep_key = lambda d: d["since_cue_s"] >= cfg.trim_transitions_s
    correct = np.concatenate([d["correct"][keep_key(d)] for d in recal])
    labels = np.concatenate([d["labels"][keep_key(d)] for d in recal])
    ratios = np.concatenate([d["ratios"][keep_key(d)] for d in recal])
    pitch = np.concatenate([d["pitch"][keep_key(d)] for d in recal])
    yaw = np.concatenate([d["yaw"][keep_key(d)] for d in recal])
    nonneutral = labels != 0
    intensity = ev.bin_by_intensity(
        correct[nonneutral], ratios[nonneutral],
        bin_width=cfg.intensity_bin_width,
    )
    ev.write_binned_csv(Path(out_dir) / "fig_intensity_accuracy.csv", intensity)
    orientation = ev.bin_by_orientation(
        correct, pitch, yaw,
        cell_deg=cfg.orientation_cell_deg,
        min_count=cfg.orientation_min_count,
    )
    ev.write_binned_csv(Path(out_dir) / "fig_orientation_accuracy.csv", orientation)
    return ""


def _score_rows(loaded, eval_rows):
    """Session scores vs fused-model accuracy, when scores exist in the data."""
    by_key = {}
    for scheme, seed, participant, session, _day, _n, acc in eval_rows:
        if scheme == CalibrationScheme.TADANN.value:
            by_key.setdefault((participant, session), []).append(acc)
    rows = []
    for session in loaded.sessions:
        scores = [r.score for r in session.evaluation_runs if r.score is not None]
        if not scores:
            continue
        accs = by_key.get((session.participant, session.session_index))
        if not accs:
            continue
        rows.append(
            (
                session.participant, session.session_index,
                float(np.mean(scores)), float(np.mean(accs)),
            )
        )
    return rows


def _emit_reports(cfg, loaded, output, save_checkpoints):
    out_dir = Path(output.out_dir)
    notes = []
    offline_rows = _offline_rows(output)
    ev.write_csv(
        out_dir / "accuracy_offline.csv",
        ["scheme", "seed", "participant", "session", "day", "n", "accuracy"],
        offline_rows,
    )
    _write_comparisons(
        out_dir / "comparison_tadann_vs_recalibration.csv",
        _comparison_rows(offline_rows), part="offline",
    )
    ev.write_csv(
        out_dir / "fig_accuracy_over_time_offline.csv",
        ["scheme", "session", "mean_day", "mean_accuracy", "n_runs"],
        _over_time_rows(offline_rows),
    )

    has_eval_runs = cfg.analyze_eval_runs and any(
        s.evaluation_runs for s in loaded.sessions
    )
    if has_eval_runs:
        eval_rows, detail = _eval_predictions(cfg, loaded, output)
        ev.write_csv(
            out_dir / "accuracy_evalruns.csv",
            ["scheme", "seed", "participant", "session", "day", "n", "accuracy"],
            eval_rows,
        )
        _write_comparisons(
            out_dir / "comparison_tadann_vs_recalibration_evalruns.csv",
            _comparison_rows(eval_rows), part="evalruns",
        )
        ev.write_csv(
            out_dir / "fig_accuracy_over_time_evalruns.csv",
            ["scheme", "session", "mean_day", "mean_accuracy", "n_runs"],
            _over_time_rows(eval_rows),
        )
        note = _binned_reports(cfg, detail, out_dir)
        if note:
            notes.append(note)
        score_rows = _score_rows(loaded, eval_rows)
        if score_rows:
            ev.write_csv(
                out_dir / "fig_score_vs_accuracy.csv",
                ["participant", "session", "score", "accuracy"],
                score_rows,
            )
            if len(score_rows) >= 2:
                try:
                    r = ev.pearson_r(
                        [r[2] for r in score_rows], [r[3] for r in score_rows]
                    )
                    notes.append(f"score_accuracy_pearson_r={ev.fmt(r)}")
                except ValueError:
                    pass

    days = {s.day_offset for s in loaded.sessions}
    if len(days) >= 2:
        report = ev.mav_msa_day_report(loaded.sessions)
        ev.write_csv(
            out_dir / "fig_mav_msa_days.csv",
            ["part", "metric", "day", "mean", "std"],
            [
                (s.part, s.metric, d, m, sd)
                for s in report.series
                for d, m, sd in zip(s.days, s.means, s.stds)
            ],
        )
        ev.write_csv(
            out_dir / "mav_msa_comparisons.csv",
            ["part", "metric", "day_a", "day_b", "n", "outcome",
             "statistic", "p_value"],
            [
                (c.part, c.metric, c.day_a, c.day_b, c.n, c.outcome,
                 "" if c.statistic is None else c.statistic,
                 "" if c.p_value is None else c.p_value)
                for c in report.comparisons
            ],
        )

    if save_checkpoints:
        ckpt_dir = out_dir / "checkpoints"
        hist_dir = out_dir / "histories"
        ckpt_dir.mkdir(exist_ok=True)
        hist_dir.mkdir(exist_ok=True)
        for cell in output.completed():
            for sr in cell.result.sessions:
                stem = (
                    f"{cell.scheme.value}_seed{cell.seed}"
                    f"_p{cell.participant:02d}_s{sr.session_index:02d}"
                )
                extra = {
                    "scheme": cell.scheme.value,
                    "seed": str(cell.seed),
                    "participant": str(cell.participant),
                    "session_index": str(sr.session_index),
                    "inference_key": sr.inference_key or "",
                    "test_cycle": "4",
                    "accuracy": ev.fmt(sr.accuracy),
                    "dataset_checksum": output.dataset_checksum,
                }
                for k, v in cfg.train.to_items().items():
                    extra[f"train.{k}"] = v
                save_model(ckpt_dir / f"{stem}.ckpt", sr.model, extra_config=extra)
                (hist_dir / f"{stem}.txt").write_text(
                    "\n".join(sr.history.to_lines()) + "\n"
                )

    manifest = [
        f"emgrecal_version={__version__}",
        f"conv_backend={backend_name()}",
        f"dataset_checksum={output.dataset_checksum}",
        f"schemes={','.join(s.value for s in cfg.schemes)}",
        f"seeds={','.join(str(s) for s in cfg.seeds)}",
    ]
    manifest += [f"config.{k}={v}" for k, v in sorted(cfg.raw_items.items())]
    for cell in sorted(output.cells, key=_cell_key):
        line = (
            f"run scheme={cell.scheme.value} seed={cell.seed} "
            f"participant={cell.participant} status={cell.status}"
        )
        if cell.note:
            line += f" note={cell.note}"
        manifest.append(line)
    manifest += [f"note={n}" for n in notes]
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")


def _write_comparisons(path, rows, part):
    ev.write_csv(
        path,
        ["part", "session", "n_pairs", "mean_tadann", "mean_recalibration",
         "dz", "statistic", "p_value", "method", "note"],
        [
            (part, r["session"], r["n_pairs"], r["mean_tadann"],
             r["mean_recalibration"], r["dz"], r["statistic"], r["p_value"],
             r["method"], r["note"])
            for r in rows
        ],
    )
