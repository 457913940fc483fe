"""Command-line pipeline: one subcommand per stage, artifacts plus a run manifest.

Exit codes: 0 success, 2 configuration problem, 3 data problem, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, actigraphy, deteval, environs, facs, kernels, posture, simulator, stats
from ._atomic import atomic_path, atomic_write_text
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError
from .ingest import (
    COHORT_FILE, KEYPOINT_FILE, SITES, format_frame_ts, format_number, load_patient_dir,
    parse_keypoints_jsonl, patient_dirs, patient_files, read_cohort,
)

log = logging.getLogger("wardsense")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST = "manifest.json"
MODEL_FILE = "posture_model.txt"
SEGMENTS = ("day", "night")


# ------------------------------------------------------------------------ helpers

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, float, np.integer, np.floating)):
        return format_number(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _float(text: str) -> float:
    return math.nan if text in ("", "nan") else float(text)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """One invocation: resolved config, output directory and the inputs it read."""

    def __init__(self, cfg: PipelineConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out_dir)
        self.inputs: dict[str, str] = {}

    def data_dir(self) -> Path:
        if not self.cfg.data_dir:
            raise ConfigError("data_dir is not set (use --data or the config file)")
        d = Path(self.cfg.data_dir)
        if not d.is_dir():
            raise DataError(f"data directory not found: {d}")
        return d

    def patients(self) -> list[Path]:
        dirs = patient_dirs(self.data_dir())
        if not dirs:
            raise DataError(f"no patient directories under {self.data_dir()}")
        return dirs

    def cohort(self) -> dict[str, str]:
        d = self.data_dir()
        if (d / COHORT_FILE).exists():
            self.note_input(d / COHORT_FILE, d)
        return read_cohort(d)

    def note_input(self, path, base=None) -> None:
        path = Path(path)
        key = path.relative_to(base).as_posix() if base is not None else path.name
        self.inputs[key] = _sha256(path)

    def note_patient_inputs(self, dirs, names=None) -> None:
        base = self.data_dir()
        for d in dirs:
            for f in patient_files(d):
                if names is None or f.name in names:
                    self.note_input(f, base)

    def write(self, name: str, text: str) -> Path:
        return atomic_write_text(self.out / name, text)

    def write_csv(self, name: str, header, rows) -> Path:
        return self.write(name, _csv_text(header, rows))

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def map(self, fn, tasks):
        """Ordered map over tasks on the worker pool (inline for one worker)."""
        tasks = list(tasks)
        workers = min(self.cfg.workers(), len(tasks))
        if workers <= 1:
            return [fn(t) for t in tasks]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks))

    def write_manifest(self) -> Path:
        path = self.out / MANIFEST
        previous = {}
        if path.exists():
            try:
                previous = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                previous = {}
        commands = sorted(set(previous.get("commands", [])) | {self.command})
        inputs = dict(previous.get("inputs", {}))
        inputs.update(self.inputs)
        artifacts = {
            p.relative_to(self.out).as_posix(): _sha256(p)
            for p in sorted(self.out.rglob("*"))
            if p.is_file() and p.name != MANIFEST and not p.name.startswith(".")
        }
        cfg = {k: v for k, v in self.cfg.as_dict().items() if k not in ("out_dir", "jobs")}
        return self.write_json(MANIFEST, {
            "tool": "wardsense",
            "versions": {
                "wardsense": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "kernels": kernels.BACKEND_NAME,
            },
            "commands": commands,
            "config_hash": self.cfg.digest(),
            "config": cfg,
            "inputs": dict(sorted(inputs.items())),
            "artifacts": artifacts,
        })


def _group_order(cfg: PipelineConfig, groups) -> tuple[str, str]:
    if cfg.groups:
        return cfg.group_pair()
    present = sorted(set(groups))
    if {"delirious", "non_delirious"} <= set(present):
        return ("delirious", "non_delirious")
    if len(present) != 2:
        raise DataError(f"need exactly two groups in {COHORT_FILE} (or set groups), found {present}")
    return tuple(present)


def _days(cfg, pdir, streams):
    return load_patient_dir(pdir, strict=cfg.strict, anchor_hour=cfg.anchor_hour, streams=streams)


# ------------------------------------------------------------------------- stages

def _ingest_task(args):
    cfg, pdir = args
    out = []
    for day in _days(cfg, pdir, ("epochs", "au", "keypoints", "env", "occupancy")):
        out.append((
            day.patient_id, day.day,
            *(day.observed_slots(s) for s in SITES),
            len(day.au_frames), sum(1 for f in day.au_frames if f.success),
            len(day.keypoints), len(day.env), len(day.occupancy),
        ))
    return out


def cmd_ingest(run: Run) -> None:
    dirs = run.patients()
    rows = [r for chunk in run.map(_ingest_task, [(run.cfg, d) for d in dirs]) for r in chunk]
    run.note_patient_inputs(dirs)
    header = ["patient_id", "day", *(f"{s}_observed" for s in SITES),
              "au_frames", "au_success", "keypoint_frames", "env_samples", "occupancy_frames"]
    run.write_csv("ingest_summary.csv", header, rows)


def _actigraphy_task(args):
    cfg, pdir = args
    rows, series = [], []
    for day in _days(cfg, pdir, ("epochs",)):
        for site in SITES:
            if site not in day.epochs:
                continue
            fv = actigraphy.feature_vector(day, site, min_coverage=cfg.min_coverage)
            reasons = "; ".join(f"{k}: {v}" for k, v in sorted(fv.undefined.items()))
            rows.append((day.patient_id, day.day, site, *fv.as_dict().values(), reasons))
            series.append((site, day.epochs[site]))
    return rows, series


def cmd_actigraphy(run: Run) -> None:
    dirs = run.patients()
    cohort = run.cohort()
    results = run.map(_actigraphy_task, [(run.cfg, d) for d in dirs])
    run.note_patient_inputs(dirs, {f"activity_{s}.csv" for s in SITES})
    rows, by_group = [], defaultdict(list)
    for d, (prow, series) in zip(dirs, results):
        group = cohort.get(d.name, "")
        rows.extend((r[0], group, *r[1:]) for r in prow)
        for site, s in series:
            by_group[(group, site)].append(s)
    if not rows:
        raise DataError("no activity data found")
    header = ["patient_id", "group", "day", "site", *actigraphy.FEATURE_NAMES, "undefined"]
    run.write_csv("features.csv", header, rows)
    curve_rows = []
    for (group, site) in sorted(by_group):
        curve = actigraphy.group_curve(by_group[(group, site)], run.cfg.loess_span, run.cfg.loess_degree)
        for x, v, n, fb in zip(curve.offsets, curve.values, curve.n_obs, curve.fallback):
            curve_rows.append((group, site, x, v, n, bool(fb)))
    run.write_csv("activity_curves.csv", ["group", "site", "minute", "value", "n_obs", "fallback"], curve_rows)


def _policy(cfg: PipelineConfig) -> facs.EvalPolicy:
    return facs.EvalPolicy(cfg.au_threshold, cfg.trace_threshold, cfg.strict, cfg.alias_map())


def _rules(cfg: PipelineConfig):
    if not cfg.rules_path:
        return facs.default_rules()
    text = Path(cfg.rules_path).read_text(encoding="utf-8")
    return facs.merge_rules(facs.default_rules(), facs.compile_rules(text))


def _facs_task(args):
    cfg, pdir = args
    rules, policy = _rules(cfg), _policy(cfg)
    rows = []
    for day in _days(cfg, pdir, ("au",)):
        cols = facs.AUColumns.from_frames(day.au_frames)
        try:
            freqs = facs.column_frequencies(cols, rules, policy, anchor_hour=cfg.anchor_hour)
        except facs.AUUnavailable:
            raise
        except DataError:
            freqs = [facs.ExpressionFrequency(r.name, 0, 0) for r in rules]
        n_frames = len(day.au_frames)
        n_success = sum(1 for f in day.au_frames if f.success)
        for fq in freqs:
            f = fq.n_i / fq.n if fq.n else math.nan
            rows.append((day.patient_id, day.day, fq.name, fq.n_i, fq.n, f))
        rows.append((day.patient_id, day.day, "_detection_success", n_success, n_frames,
                     n_success / n_frames if n_frames else math.nan))
    return rows


def cmd_facs(run: Run) -> None:
    dirs = run.patients()
    cohort = run.cohort()
    if run.cfg.rules_path:
        run.note_input(run.cfg.rules_path)
    results = run.map(_facs_task, [(run.cfg, d) for d in dirs])
    run.note_patient_inputs(dirs, {"au.jsonl"})
    rows = [(r[0], cohort.get(r[0], ""), *r[1:]) for chunk in results for r in chunk]
    if not rows:
        raise DataError("no AU frames found")
    run.write_csv("expressions.csv", ["patient_id", "group", "day", "expression", "n_i", "n", "f"], rows)


def _env_task(args):
    cfg, pdir = args
    rows, hourly = [], []
    for day in _days(cfg, pdir, ("env",)):
        s = environs.env_summary(day, mode=cfg.spl_mode)
        rows.append((day.patient_id, day.day, s.day_mean_db, s.night_mean_db, s.night_max_db,
                     s.night_minutes_above_35, s.night_light_mean, s.night_mean_noncompliant,
                     s.night_max_noncompliant, s.who_compliant))
        for h, (db, lux) in enumerate(zip(s.hourly_db, s.hourly_lux)):
            hourly.append((day.patient_id, day.day, h, db, lux))
    return rows, hourly


def cmd_env(run: Run) -> None:
    dirs = run.patients()
    cohort = run.cohort()
    results = run.map(_env_task, [(run.cfg, d) for d in dirs])
    run.note_patient_inputs(dirs, {"env.csv"})
    rows = [(r[0], cohort.get(r[0], ""), *r[1:]) for chunk, _ in results for r in chunk]
    hourly = [(r[0], cohort.get(r[0], ""), *r[1:]) for _, chunk in results for r in chunk]
    if not rows:
        raise DataError("no environment samples found")
    run.write_csv("env_summary.csv", [
        "patient_id", "group", "day", "day_mean_db", "night_mean_db", "night_max_db",
        "night_minutes_above_35", "night_light_mean", "night_mean_noncompliant",
        "night_max_noncompliant", "who_compliant"], rows)
    run.write_csv("env_hourly.csv", ["patient_id", "group", "day", "hour", "spl_db", "lux"], hourly)


def _visitation_task(args):
    cfg, pdir = args
    rows = []
    for day in _days(cfg, pdir, ("occupancy",)):
        for seg in SEGMENTS:
            frames = day.select(day.occupancy, seg)
            if not frames:
                continue
            d = environs.disruption_rate(frames, seg, cfg.anchor_hour, cfg.assume_patient_present)
            rows.append((day.patient_id, day.day, seg, d.disrupted_frames, d.total_frames, d.rate))
    return rows


def cmd_visitation(run: Run) -> None:
    dirs = run.patients()
    cohort = run.cohort()
    results = run.map(_visitation_task, [(run.cfg, d) for d in dirs])
    run.note_patient_inputs(dirs, {"occupancy.csv"})
    rows = [(r[0], cohort.get(r[0], ""), *r[1:]) for chunk in results for r in chunk]
    if not rows:
        raise DataError("no occupancy frames found")
    run.write_csv("disruption.csv", ["patient_id", "group", "day", "segment", "disrupted_frames",
                                     "total_frames", "rate"], rows)


# posture ---------------------------------------------------------------------

def _labelled_frames(run: Run):
    """Keypoint frames joined to ``truth/postures.csv`` labels, deterministically subsampled."""
    frames, labels = [], []
    base = run.data_dir()
    for d in run.patients():
        truth = d / "truth" / "postures.csv"
        kp = d / KEYPOINT_FILE
        if not (truth.exists() and kp.exists()):
            continue
        by_ts = {r["timestamp"]: r["label"] for r in _read_csv(truth)}
        for f in parse_keypoints_jsonl(kp, strict=run.cfg.strict):
            lab = by_ts.get(format_frame_ts(f.ts))
            if lab is not None:
                frames.append(f)
                labels.append(lab)
        run.note_input(truth, base)
        run.note_input(kp, base)
    if not frames:
        raise DataError("no labelled keypoint frames (truth/postures.csv) found")
    X = posture.feature_matrix(frames)
    usable = np.flatnonzero(~np.all(np.isnan(X), axis=1))
    rng = np.random.default_rng(np.random.SeedSequence([run.cfg.seed, 0x705]))
    if usable.size > run.cfg.posture_max_frames:
        usable = np.sort(rng.choice(usable, run.cfg.posture_max_frames, replace=False))
    X = X[usable]
    labels = [labels[i] for i in usable]
    train, test = posture.stratified_split(labels, run.cfg.test_fraction, run.cfg.seed)
    return X, labels, train, test


def _model_path(run: Run) -> Path:
    return Path(run.cfg.model_path) if run.cfg.model_path else run.out / MODEL_FILE


def cmd_posture_train(run: Run) -> None:
    X, labels, train, _ = _labelled_frames(run)
    Xtr = posture.impute_knn(X[train], run.cfg.impute_k)
    model = posture.knn_train(Xtr, [labels[i] for i in train], run.cfg.knn_k, run.cfg.minkowski_p)
    with atomic_path(run.out / MODEL_FILE) as tmp:
        posture.save_model(model, tmp)


def cmd_posture_eval(run: Run) -> None:
    path = _model_path(run)
    if not path.exists():
        raise DataError(f"posture model not found: {path} (run posture-train first)")
    model = posture.load_model(path)
    X, labels, _, test = _labelled_frames(run)
    Xte = posture.impute_knn(X[test], run.cfg.impute_k, donors=model.features)
    truth = [labels[i] for i in test]
    report = posture.evaluate(model, Xte, truth)
    run.write("confusion.txt", report.format_table())
    rows = []
    for i, t in enumerate(report.labels):
        rows.append((t, *report.counts[i], *report.percent[i]))
    header = ["true_label", *(f"n_{l}" for l in report.labels), *(f"pct_{l}" for l in report.labels)]
    run.write_csv("confusion.csv", header, rows)
    acc = float(np.trace(report.counts) / report.counts.sum())
    run.write_json("posture_metrics.json", {
        "accuracy": acc, "macro_f1": report.macro_f1, "n_test": int(len(test)),
        "k": model.k, "p": model.p,
    })


def _predict_task(args):
    cfg, pdir, model_path = args
    model = posture.load_model(model_path)
    rows, fractions = [], []
    for day in _days(cfg, pdir, ("keypoints",)):
        labels = posture.predict_frames(model, list(day.keypoints), cfg.impute_k)
        for f, lab in zip(day.keypoints, labels):
            rows.append((day.patient_id, format_frame_ts(f.ts), lab or ""))
        for seg in SEGMENTS:
            lo, hi = day.bounds(seg)
            seg_labels = [l for f, l in zip(day.keypoints, labels) if lo <= f.ts < hi]
            try:
                share = posture.posture_fractions(seg_labels)
            except DataError:
                continue
            fractions.extend((day.patient_id, day.day, seg, p, v) for p, v in share.items())
    return rows, fractions


def cmd_posture_predict(run: Run) -> None:
    path = _model_path(run)
    if not path.exists():
        raise DataError(f"posture model not found: {path} (run posture-train first)")
    dirs = run.patients()
    cohort = run.cohort()
    run.note_input(path)
    results = run.map(_predict_task, [(run.cfg, d, str(path)) for d in dirs])
    run.note_patient_inputs(dirs, {KEYPOINT_FILE})
    rows = [r for chunk, _ in results for r in chunk]
    fractions = [(r[0], cohort.get(r[0], ""), *r[1:]) for _, chunk in results for r in chunk]
    run.write_csv("postures.csv", ["patient_id", "ts", "label"], rows)
    run.write_csv("posture_fractions.csv", ["patient_id", "group", "day", "segment", "posture", "fraction"],
                  fractions)


# detection -------------------------------------------------------------------

def cmd_deteval(run: Run) -> None:
    cfg = run.cfg
    missing = [k for k in ("detections_path", "truths_path") if not getattr(cfg, k)]
    if missing:
        raise ConfigError([f"{k} is required for deteval" for k in missing])
    dets = deteval.read_boxes_csv(cfg.detections_path, require_score=True)
    truths = deteval.read_boxes_csv(cfg.truths_path)
    run.note_input(cfg.detections_path)
    run.note_input(cfg.truths_path)
    n_before = len(dets)
    if cfg.nms_threshold:
        thr = cfg.nms_threshold if cfg.nms_threshold in deteval.NMS_PRESETS else float(cfg.nms_threshold)
        by_frame = defaultdict(list)
        for fid, b in dets:
            by_frame[fid].append(b)
        dets = [(fid, b) for fid in sorted(by_frame) for b in deteval.nms_greedy(by_frame[fid], thr)]
    aps = deteval.per_frame_ap(dets, truths, cfg.iou_threshold)
    run.write_csv("detection_ap.csv", ["frame_id", "ap"], sorted(aps.items()))
    summary = {
        "map": deteval.mean_ap(aps.values()), "n_frames": len(aps), "iou_threshold": cfg.iou_threshold,
        "nms_threshold": cfg.nms_threshold or None, "n_detections": n_before, "n_after_nms": len(dets),
    }
    if cfg.gallery_path and cfg.probes_path:
        gallery = deteval.read_embeddings_csv(cfg.gallery_path)
        probes = deteval.read_embeddings_csv(cfg.probes_path)
        run.note_input(cfg.gallery_path)
        run.note_input(cfg.probes_path)
        rows = []
        for pid in sorted(probes):
            for j, emb in enumerate(probes[pid]):
                best_id, best = "", -1.0
                for gid in sorted(gallery):
                    _, score = deteval.match_patient(gallery[gid], emb, cfg.recognition_threshold)
                    if score > best:
                        best_id, best = gid, score
                rows.append((pid, j, best_id, best, best >= cfg.recognition_threshold))
        run.write_csv("matches.csv", ["probe_id", "index", "patient_id", "score", "recognized"], rows)
        summary["recognized"] = sum(1 for r in rows if r[-1])
        summary["probes"] = len(rows)
    run.write_json("deteval.json", summary)


# comparison ------------------------------------------------------------------

UPSTREAM = {
    "features.csv": "actigraphy",
    "expressions.csv": "facs",
    "env_summary.csv": "env",
    "disruption.csv": "visitation",
}


def _patient_table(out: Path, cohort: dict) -> tuple[list[str], dict[str, dict[str, float]]]:
    """Per-patient variables: feature means over days, pooled rates and frequencies."""
    sums: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    pooled: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    variables: list[str] = []

    def add_var(name):
        if name not in variables:
            variables.append(name)

    if (out / "features.csv").exists():
        for r in _read_csv(out / "features.csv"):
            for feat in actigraphy.FEATURE_NAMES:
                name = f"{r['site']}_{feat}"
                add_var(name)
                sums[r["patient_id"]][name].append(_float(r[feat]))
    if (out / "expressions.csv").exists():
        for r in _read_csv(out / "expressions.csv"):
            name = f"expr_{r['expression'].lower().replace(' ', '_').lstrip('_')}"
            add_var(name)
            acc = pooled[r["patient_id"]][name]
            acc[0] += int(r["n_i"])
            acc[1] += int(r["n"])
    if (out / "disruption.csv").exists():
        for r in _read_csv(out / "disruption.csv"):
            name = f"disruption_{r['segment']}"
            add_var(name)
            acc = pooled[r["patient_id"]][name]
            acc[0] += int(r["disrupted_frames"])
            acc[1] += int(r["total_frames"])
    if (out / "env_summary.csv").exists():
        for r in _read_csv(out / "env_summary.csv"):
            for col in ("day_mean_db", "night_mean_db", "night_max_db", "night_minutes_above_35",
                        "night_light_mean"):
                name = f"env_{col}"
                add_var(name)
                sums[r["patient_id"]][name].append(_float(r[col]))
    table: dict[str, dict[str, float]] = {}
    for pid in sorted(set(sums) | set(pooled)):
        if pid not in cohort:
            continue
        row = {}
        for name in variables:
            if name in sums[pid]:
                vals = np.array(sums[pid][name], dtype=float)
                row[name] = float(np.mean(vals[~np.isnan(vals)])) if (~np.isnan(vals)).any() else math.nan
            elif name in pooled[pid]:
                k, n = pooled[pid][name]
                row[name] = k / n if n else math.nan
            else:
                row[name] = math.nan
        table[pid] = row
    return variables, table


def cmd_compare(run: Run) -> None:
    for artifact, stage in UPSTREAM.items():
        if not (run.out / artifact).exists():
            log.info("compare: %s missing, running %s", artifact, stage)
            COMMANDS[stage](run)
    cohort = run.cohort()
    if not cohort:
        raise DataError(f"{COHORT_FILE} with patient groups is required for compare")
    variables, table = _patient_table(run.out, cohort)
    pids = sorted(table)
    groups = [cohort[p] for p in pids]
    ga, gb = _group_order(run.cfg, groups)
    keep = [i for i, g in enumerate(groups) if g in (ga, gb)]
    pids = [pids[i] for i in keep]
    groups = [groups[i] for i in keep]
    run.write_csv("patient_table.csv", ["patient_id", "group", *variables],
                  [(p, g, *(table[p][v] for v in variables)) for p, g in zip(pids, groups)])
    rows = []
    for var in variables:
        column = {var: [table[p][var] for p in pids]}
        try:
            (res,) = stats.cohort_compare(column, groups, (ga, gb), run.cfg.alpha)
        except DataError as exc:
            log.warning("compare: skipping %s (%s)", var, exc)
            continue
        rows.append((var, stats.format_iqr(res.iqr_a, 2), stats.format_iqr(res.iqr_b, 2), res.p, res.u,
                     res.n_a, res.n_b, res.significant, res.annotation, res.method))
    run.write_csv("comparison.csv", ["variable", ga, gb, "p_value", "u", "n_a", "n_b", "significant",
                                     "annotation", "method"], rows)


# report ----------------------------------------------------------------------

def _bar_rows(pooled):
    rows = []
    for key in sorted(pooled):
        k, n = pooled[key]
        if n:
            rows.append((*key, 100.0 * k / n, 100.0 * stats.proportion_se(k, n), n))
    return rows


def cmd_report(run: Run) -> None:
    out = run.out
    if not out.is_dir():
        raise DataError(f"artifact directory not found: {out}")
    sections, missing = {}, []
    rep = "report"

    def section(name, source, figure, rows_written):
        sections[name] = {"source": source, "figure": f"{rep}/{figure}", "rows": rows_written}

    if (out / "activity_curves.csv").exists():
        rows = [(r["group"], r["site"], _float(r["minute"]) / 60.0, _float(r["value"]))
                for r in _read_csv(out / "activity_curves.csv")]
        run.write_csv(f"{rep}/fig_activity_curves.csv", ["group", "site", "hour", "value"], rows)
        section("activity_curves", "activity_curves.csv", "fig_activity_curves.csv", len(rows))
    else:
        missing.append("activity_curves.csv")
    if (out / "expressions.csv").exists():
        pooled = defaultdict(lambda: [0, 0])
        for r in _read_csv(out / "expressions.csv"):
            if r["expression"].startswith("_"):
                continue
            acc = pooled[(r["group"], r["expression"])]
            acc[0] += int(r["n_i"])
            acc[1] += int(r["n"])
        rows = _bar_rows(pooled)
        run.write_csv(f"{rep}/fig_expressions.csv", ["group", "expression", "percent", "se", "n"], rows)
        section("expressions", "expressions.csv", "fig_expressions.csv", len(rows))
    else:
        missing.append("expressions.csv")
    if (out / "disruption.csv").exists():
        pooled = defaultdict(lambda: [0, 0])
        for r in _read_csv(out / "disruption.csv"):
            acc = pooled[(r["group"], r["segment"])]
            acc[0] += int(r["disrupted_frames"])
            acc[1] += int(r["total_frames"])
        rows = _bar_rows(pooled)
        run.write_csv(f"{rep}/fig_disruption.csv", ["group", "segment", "percent", "se", "n"], rows)
        section("disruption", "disruption.csv", "fig_disruption.csv", len(rows))
    else:
        missing.append("disruption.csv")
    if (out / "env_hourly.csv").exists():
        acc = defaultdict(lambda: ([], []))
        for r in _read_csv(out / "env_hourly.csv"):
            db, lux = acc[(r["group"], int(r["hour"]))]
            if r["spl_db"] not in ("", "nan"):
                db.append(float(r["spl_db"]))
            if r["lux"] not in ("", "nan"):
                lux.append(float(r["lux"]))
        rows = [(g, h, environs.mean_spl(db, run.cfg.spl_mode) if db else math.nan,
                 float(np.mean(lux)) if lux else math.nan) for (g, h), (db, lux) in sorted(acc.items())]
        run.write_csv(f"{rep}/fig_environment.csv", ["group", "hour", "spl_db", "lux"], rows)
        section("environment", "env_hourly.csv", "fig_environment.csv", len(rows))
    else:
        missing.append("env_hourly.csv")
    if (out / "posture_fractions.csv").exists():
        acc = defaultdict(list)
        for r in _read_csv(out / "posture_fractions.csv"):
            acc[(r["group"], r["segment"], r["posture"])].append(float(r["fraction"]))
        rows = [(*k, 100.0 * float(np.mean(v)), len(v)) for k, v in sorted(acc.items())]
        run.write_csv(f"{rep}/fig_postures.csv", ["group", "segment", "posture", "percent", "n"], rows)
        section("postures", "posture_fractions.csv", "fig_postures.csv", len(rows))
    else:
        missing.append("posture_fractions.csv")
    if (out / "patient_table.csv").exists():
        table = _read_csv(out / "patient_table.csv")
        variables = [c for c in (table[0] if table else {}) if c not in ("patient_id", "group")]
        rows = []
        for var in variables:
            by_group = defaultdict(list)
            for r in table:
                v = _float(r[var])
                if not math.isnan(v):
                    by_group[r["group"]].append(v)
            for g in sorted(by_group):
                vals = by_group[g]
                q25, med, q75 = stats.median_iqr(vals)
                rows.append((var, g, len(vals), min(vals), q25, med, q75, max(vals)))
        run.write_csv(f"{rep}/fig_boxplots.csv", ["variable", "group", "n", "min", "q25", "median", "q75", "max"],
                      rows)
        section("boxplots", "patient_table.csv", "fig_boxplots.csv", len(rows))
    else:
        missing.append("patient_table.csv")
    summary = {}
    if (out / "comparison.csv").exists():
        comp = _read_csv(out / "comparison.csv")
        summary["significant"] = [r["variable"] for r in comp if r["significant"] == "true"]
        summary["n_variables"] = len(comp)
    if (out / "posture_metrics.json").exists():
        summary["posture"] = json.loads((out / "posture_metrics.json").read_text(encoding="utf-8"))
    if (out / "deteval.json").exists():
        summary["detection"] = json.loads((out / "deteval.json").read_text(encoding="utf-8"))
    if not sections and not summary:
        raise DataError(f"no upstream artifacts in {out}; expected one of {', '.join(missing)}")
    run.write_json(f"{rep}/index.json", {"sections": sections, "missing": missing, "summary": summary})


# simulate --------------------------------------------------------------------

def _load_profile(name: str, seed: int):
    if Path(name).suffix in (".ini", ".cfg", ".conf") or Path(name).exists():
        return replace(simulator.load_profile(name), seed=seed)
    return simulator.preset(name, seed=seed)


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    profiles = [_load_profile(name, cfg.seed) for name in cfg.profiles()]
    if not profiles:
        raise ConfigError("sim_profiles names no profile")
    for name in cfg.profiles():
        if Path(name).exists():
            run.note_input(name)
    start = simulator.DEFAULT_START.replace(hour=cfg.anchor_hour)
    for prof in profiles:
        simulator.simulate_cohort(prof, cfg.sim_patients, cfg.sim_days, run.out, start=start,
                                  jobs=cfg.workers())


COMMANDS = {
    "ingest": cmd_ingest,
    "actigraphy": cmd_actigraphy,
    "facs": cmd_facs,
    "posture-train": cmd_posture_train,
    "posture-eval": cmd_posture_eval,
    "posture-predict": cmd_posture_predict,
    "deteval": cmd_deteval,
    "env": cmd_env,
    "visitation": cmd_visitation,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--out", metavar="DIR", help="artifact directory (data directory for simulate)")
    common.add_argument("--data", metavar="DIR", help="input directory of patient folders")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--strict", action="store_true", default=None,
                        help="reject unknown fields and uncoded AUs instead of skipping them")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes (default: CPU count)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="wardsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wardsense {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "ingest": "validate inputs and summarise stream coverage per patient-day",
        "actigraphy": "movement features and smoothed group activity curves",
        "facs": "expression frequencies from AU frames",
        "posture-train": "train the posture KNN model on labelled frames",
        "posture-eval": "confusion matrix of the model on the held-out split",
        "posture-predict": "label every keypoint frame and summarise posture shares",
        "deteval": "AP/mAP of detections, optional NMS and embedding matching",
        "env": "sound and light summaries with WHO night flags",
        "visitation": "day and night disruption rates",
        "compare": "group comparison table (runs missing upstream stages)",
        "simulate": "write a synthetic cohort",
        "report": "JSON index and plot-ready CSV series",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "deteval":
            p.add_argument("--detections", metavar="CSV")
            p.add_argument("--truths", metavar="CSV")
            p.add_argument("--gallery", metavar="CSV")
            p.add_argument("--probes", metavar="CSV")
        if name in ("posture-eval", "posture-predict"):
            p.add_argument("--model", metavar="PATH")
        if name == "facs":
            p.add_argument("--rules", metavar="PATH")
        if name == "simulate":
            p.add_argument("--profiles", metavar="LIST", help="comma-separated preset names or profile files")
            p.add_argument("--patients", type=int, metavar="N", help="patients per profile")
            p.add_argument("--days", type=int, metavar="N", help="days per patient")
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "out_dir": get("out"), "data_dir": get("data"), "seed": get("seed"), "strict": get("strict"),
        "jobs": get("jobs"), "detections_path": get("detections"), "truths_path": get("truths"),
        "gallery_path": get("gallery"), "probes_path": get("probes"), "model_path": get("model"),
        "rules_path": get("rules"), "sim_profiles": get("profiles"), "sim_patients": get("patients"),
        "sim_days": get("days"),
    }


def run(cfg: PipelineConfig, command: str) -> int:
    """Execute one subcommand and write the manifest; returns the exit status."""
    r = Run(cfg, command)
    COMMANDS[command](r)
    if r.out.is_dir():
        r.write_manifest()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "report" and args.out is None and args.config is None:
            raise ConfigError("report needs --out DIR (the artifact directory)")
        return run(cfg, args.command)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
