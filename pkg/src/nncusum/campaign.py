"""Detector x example campaigns with per-cell seeds, JSON checkpoints and CSV tables."""

from __future__ import annotations

import csv
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import ExactCusum, GaussianMoments, HotellingCusum, Mewma, Onnc, Onnr, WlCusum, WlGlr
from .config import DetectorConfig, ExampleConfig, ExperimentConfig, cell_fingerprint
from .datagen import DistributionSpec, EmpiricalSource, ingest_csv, preset_pair
from .evaluation import (
    arl_curve,
    calibrate_from_maxima,
    evaluate,
    first_crossings,
    pre_change_runs,
    run_maxima,
    type1_threshold_from_maxima,
)
from .nn_cusum import NNCusumDetector, ReferencePool, TrainingConfig, WindowConfig, estimate_drift
from .seeding import derive_seed

RESULT_COLUMNS = [
    "detector", "example", "threshold", "arl", "edd", "edd_se", "type1", "failure_rate",
    "n", "censored", "conditional_edd", "drift", "status",
]


@dataclass
class ExampleSetup:
    name: str
    pre: Any
    post: Any
    reference: np.ndarray


def build_example(config: ExperimentConfig, example: ExampleConfig) -> ExampleSetup:
    """Pre/post sources and the shared reference sample of one example.

    The reference seed depends only on the master seed and the example name,
    so every detector on an example sees the same reference data.
    """
    rng = np.random.default_rng(derive_seed(config.master_seed, "reference", example.name))
    n_ref = config.campaign.reference_size
    if example.preset is not None:
        pre, post = preset_pair(example.preset, example.dim, **example.overrides)
        return ExampleSetup(example.name, pre, post, pre.sample(n_ref, rng))
    background, target = ingest_csv(
        example.csv, example.feature_columns, example.label_column,
        example.background_label, example.target_label,
    )
    pre = EmpiricalSource(background, f"{example.name}:background")
    post = EmpiricalSource(target, f"{example.name}:target")
    return ExampleSetup(example.name, pre, post, pre.sample(n_ref, rng))


def _network_configs(p: dict[str, Any]) -> tuple[WindowConfig, TrainingConfig]:
    window = WindowConfig(**{k: p[k] for k in ("window_length", "split_ratio", "stride", "train_every", "burn_in")})
    keys = ("hidden_width", "learning_rate", "batch_size", "loss", "mode", "epochs")
    training = TrainingConfig(**{k: p[k] for k in keys}, onnr_weight=p.get("onnr_weight", 0.5))
    return window, training


def build_factory(
    detector: DetectorConfig,
    setup: ExampleSetup,
    config: ExperimentConfig,
    drift_seed=None,
):
    """``(factory, drift)`` for one cell; estimates the NN-CUSUM drift if asked."""
    p = detector.resolved()
    kind = detector.kind
    if kind == "exact_cusum":
        if not (isinstance(setup.pre, DistributionSpec) and isinstance(setup.post, DistributionSpec)):
            raise TypeError("exact CUSUM needs parametric pre- and post-change densities")
        return (lambda seed: ExactCusum(setup.pre, setup.post)), None
    if kind == "hotelling_cusum":
        proto = HotellingCusum.from_reference(setup.reference, p["regularizer"], p["epsilon"], p["holdout"])
        return (lambda seed: HotellingCusum(proto.moments, proto.offset)), None
    if kind in ("mewma", "wl_cusum", "wl_glr"):
        moments = GaussianMoments.fit(setup.reference, p["regularizer"])
        if kind == "mewma":
            return (lambda seed: Mewma(moments, p["decay"])), None
        cls = WlCusum if kind == "wl_cusum" else WlGlr
        return (lambda seed: cls(moments, p["window"])), None

    window, training = _network_configs(p)
    pool = ReferencePool(setup.reference, disjoint=p["reference_draws"] == "disjoint")
    if kind == "onnc":
        return (lambda seed: Onnc(window, training, pool, seed=seed)), None
    if kind == "onnr":
        return (lambda seed: Onnr(window, training, pool, seed=seed)), None
    drift = p["drift"]
    if drift == "estimate":
        campaign = config.campaign
        length = campaign.drift_length or campaign.horizon
        drift = estimate_drift(window, training, pool, setup.pre, campaign.drift_sequences, length, drift_seed).drift
    drift = float(drift)
    return (lambda seed: NNCusumDetector(window, training, pool, drift=drift, seed=seed)), drift


def _cell_seed(config: ExperimentConfig, detector: str, example: str, purpose: str):
    return derive_seed(config.master_seed, detector, example, purpose)


def calibrate_cell(config: ExperimentConfig, detector: DetectorConfig, setup: ExampleSetup):
    """``(factory, drift, runs, maxima, calibration)`` for one cell."""
    camp = config.campaign
    factory, drift = build_factory(detector, setup, config, _cell_seed(config, detector.name, setup.name, "drift"))
    seed = _cell_seed(config, detector.name, setup.name, "calibration")
    if camp.target_arl is not None:
        runs = pre_change_runs(factory, setup.pre, camp.cal_horizon, camp.n_calibration, seed)
        maxima = run_maxima(runs)
        calibration = calibrate_from_maxima(maxima, camp.target_arl, camp.cal_horizon, camp.tolerance)
    else:
        if camp.change_point < 1:
            raise ValueError("Type-I calibration needs change_point >= 1")
        runs = pre_change_runs(factory, setup.pre, camp.change_point, camp.n_calibration, seed)
        maxima = run_maxima(runs)
        calibration = type1_threshold_from_maxima(maxima, camp.target_type1, camp.change_point)
    return factory, drift, runs, maxima, calibration


def increment_histogram(runs, bins: int = 40) -> dict | None:
    """Common-edge histograms of pre- and post-change increments."""
    pre, post = [], []
    for run in runs:
        if run.increments is None or len(run.increments) != run.obs_index.size:
            return None
        before = run.obs_index <= run.change_point
        pre.append(run.increments[before])
        post.append(run.increments[~before])
    pre, post = np.concatenate(pre), np.concatenate(post)
    both = np.concatenate([pre, post])
    if both.size == 0:
        return None
    edges = np.histogram_bin_edges(both, bins=bins)
    return {
        "edges": edges.tolist(),
        "pre": np.histogram(pre, edges)[0].tolist(),
        "post": np.histogram(post, edges)[0].tolist(),
    }


def run_cell(config: ExperimentConfig, detector_name: str, example_name: str, evaluate_cell: bool = True) -> dict:
    """Calibrate (and, by default, evaluate) one detector on one example.

    Failures are caught and reported in the returned record.
    """
    detector = config.detector(detector_name)
    example = config.example(example_name)
    record: dict[str, Any] = {
        "detector": detector_name,
        "example": example_name,
        "fingerprint": cell_fingerprint(config, detector, example),
    }
    start = time.perf_counter()
    try:
        setup = build_example(config, example)
        factory, drift, cal_runs, maxima, calibration = calibrate_cell(config, detector, setup)
        camp = config.campaign
        record["drift"] = drift
        record["calibration"] = {
            "threshold": calibration.threshold,
            "target": calibration.target,
            "boundary": calibration.boundary,
            "fit": asdict(calibration.fit),
        }
        record["maxima"] = [float(m) for m in maxima]
        record["stopping_times"] = [float(t) for t in first_crossings(cal_runs, calibration.threshold)]
        if evaluate_cell:
            report, runs = evaluate(
                factory, setup.pre, setup.post, camp.change_point, camp.horizon,
                calibration.threshold, camp.n_sequences,
                _cell_seed(config, detector_name, example_name, "evaluation"),
                arl=calibration.fit.arl_estimate, return_runs=True,
            )
            record["report"] = report.to_dict()
            record["increment_histogram"] = increment_histogram(runs)
        record["status"] = "ok"
    except Exception as exc:  # one failing cell must not abort the campaign
        record["status"] = "error"
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["traceback"] = traceback.format_exc()
    record["wall_time_s"] = time.perf_counter() - start
    return record


def _run_cell_from_dict(raw: dict, detector_name: str, example_name: str, evaluate_cell: bool) -> dict:
    return run_cell(ExperimentConfig.from_dict(raw), detector_name, example_name, evaluate_cell)


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    tmp.replace(path)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _cell_path(out_dir: Path, detector: str, example: str) -> Path:
    return out_dir / "cells" / f"{detector}__{example}.json"


def run_campaign(
    config: ExperimentConfig,
    out_dir=None,
    workers: int | None = None,
    resume: bool = True,
    evaluate_cells: bool = True,
) -> list[dict]:
    """Run every detector x example cell, checkpointing each to JSON.

    Cells whose checkpoint exists with a matching fingerprint are loaded
    instead of recomputed. Records come back in config order whatever order
    the workers finish in.
    """
    out = Path(out_dir or config.output_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    workers = workers or config.campaign.workers
    cells = [(d.name, e.name) for d in config.detectors for e in config.examples]
    records: dict[tuple[str, str], dict] = {}
    todo = []
    for det, ex in cells:
        path = _cell_path(out, det, ex)
        if resume and path.exists():
            cached = json.loads(path.read_text(encoding="utf-8"))
            fp = cell_fingerprint(config, config.detector(det), config.example(ex))
            complete = cached.get("status") == "ok" and (not evaluate_cells or "report" in cached)
            if cached.get("fingerprint") == fp and complete:
                records[(det, ex)] = cached
                continue
        todo.append((det, ex))

    def store(record: dict) -> None:
        key = (record["detector"], record["example"])
        records[key] = record
        # wall time is kept out of the checkpoint so reruns are byte-identical
        _write_json(_cell_path(out, *key), {k: v for k, v in record.items() if k != "wall_time_s"})

    if workers > 1 and len(todo) > 1:
        raw = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell_from_dict, raw, det, ex, evaluate_cells) for det, ex in todo]
            for fut in futures:
                store(fut.result())
    else:
        for det, ex in todo:
            store(run_cell(config, det, ex, evaluate_cells))
    return [records[c] for c in cells]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if value == math.inf else ("nan" if math.isnan(value) else repr(value))
    return str(value)


def result_rows(records: list[dict]) -> list[dict[str, Any]]:
    rows = []
    for r in records:
        rep = r.get("report") or {}
        cal = r.get("calibration") or {}
        rows.append({
            "detector": r["detector"],
            "example": r["example"],
            "threshold": cal.get("threshold"),
            "arl": rep.get("arl", (cal.get("fit") or {}).get("arl_estimate")),
            "edd": rep.get("edd"),
            "edd_se": rep.get("edd_se"),
            "type1": rep.get("type1_error"),
            "failure_rate": rep.get("failure_rate"),
            "n": rep.get("n_sequences"),
            "censored": rep.get("censored_count"),
            "conditional_edd": rep.get("conditional_edd"),
            "drift": r.get("drift"),
            "status": r["status"],
        })
    return rows


def write_table(path, rows: list[dict], columns: list[str]) -> None:
    """Deterministic CSV (fixed column order, repr floats), written atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    tmp.replace(path)


def write_results(out_dir, records: list[dict]) -> None:
    """``results.csv`` (deterministic) and ``timings.csv`` (wall clock, not reproducible)."""
    out = Path(out_dir)
    write_table(out / "results.csv", result_rows(records), RESULT_COLUMNS)
    timing_rows = [{"detector": r["detector"], "example": r["example"], "wall_time_s": r.get("wall_time_s")}
                   for r in records]
    write_table(out / "timings.csv", timing_rows, ["detector", "example", "wall_time_s"])


def write_arl_curves(out_dir, records: list[dict], horizon: int, n_points: int = 12) -> None:
    """ARL-vs-threshold points per cell from the cached calibration maxima."""
    rows = []
    for r in records:
        maxima = np.asarray(r.get("maxima") or [], dtype=float)
        finite = maxima[np.isfinite(maxima)]
        if finite.size == 0:
            continue
        grid = np.quantile(finite, np.linspace(0.05, 0.95, n_points))
        for b, fit in zip(grid, arl_curve(maxima, grid, horizon).fits):
            rows.append({"detector": r["detector"], "example": r["example"], "threshold": float(b),
                         "crossing_fraction": fit.crossing_fraction, "arl": fit.arl_estimate})
    write_table(Path(out_dir) / "arl_curve.csv", rows, ["detector", "example", "threshold", "crossing_fraction", "arl"])


def write_tail_curves(out_dir, records: list[dict], horizon: int) -> None:
    """Empirical survival ``P(tau > t)`` of pre-change stopping times at the calibrated threshold."""
    rows = []
    for r in records:
        taus = np.asarray(r.get("stopping_times") or [], dtype=float)
        if taus.size == 0:
            continue
        crossed = np.sort(taus[np.isfinite(taus)])
        for t in np.unique(crossed):
            rows.append({"detector": r["detector"], "example": r["example"], "t": int(t),
                         "survival": 1.0 - np.searchsorted(crossed, t, side="right") / taus.size})
    write_table(Path(out_dir) / "tail_survival.csv", rows, ["detector", "example", "t", "survival"])


def write_histograms(out_dir, records: list[dict]) -> None:
    rows = []
    for r in records:
        hist = r.get("increment_histogram")
        if not hist:
            continue
        edges = hist["edges"]
        for j in range(len(edges) - 1):
            rows.append({"detector": r["detector"], "example": r["example"], "left": edges[j],
                         "right": edges[j + 1], "pre_count": hist["pre"][j], "post_count": hist["post"][j]})
    write_table(Path(out_dir) / "eta_histogram.csv", rows,
                ["detector", "example", "left", "right", "pre_count", "post_count"])


def env_output_dir(default: str) -> str:
    return os.environ.get("NNCUSUM_OUTPUT_DIR", default)
