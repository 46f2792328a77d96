"""Command-line entry point: ``nncusum {generate,calibrate,detect,benchmark}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import campaign as camp
from .config import ConfigError, ExperimentConfig
from .core import run_to_stop
from .datagen import CsvSchemaError, read_sequence_csv, write_csv
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CELL_FAILURES = 3

log = logging.getLogger("nncusum")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config (YAML)")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--workers", type=int, help="override campaign.workers")
    parser.add_argument("--out", help="output directory (else $NNCUSUM_OUTPUT_DIR, else config)")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nncusum", description="NN-CUSUM change detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic sequences and reference samples as CSV")
    _common(p)
    p.add_argument("--count", type=int, default=1, help="sequences per example")

    p = sub.add_parser("calibrate", help="calibrate thresholds for every detector x example cell")
    _common(p)
    p.add_argument("--no-resume", action="store_true")

    p = sub.add_parser("detect", help="run one detector over one sequence CSV")
    _common(p)
    p.add_argument("--sequence", required=True, help="CSV with feature columns and optional 0/1 label column")
    p.add_argument("--detector", help="detector name (default: first in config)")
    p.add_argument("--example", help="example providing reference data (default: first in config)")
    p.add_argument("--threshold", type=float, help="alarm threshold (default: calibrated)")

    p = sub.add_parser("benchmark", help="calibrate and evaluate every cell")
    _common(p)
    p.add_argument("--no-resume", action="store_true")
    return parser


def load_config(args) -> tuple[ExperimentConfig, Path]:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        config = replace(config, master_seed=args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        config = replace(config, campaign=replace(config.campaign, workers=args.workers))
    out = Path(args.out or camp.env_output_dir(config.output_dir))
    out.mkdir(parents=True, exist_ok=True)
    return config, out


def cmd_generate(config: ExperimentConfig, out: Path, count: int) -> int:
    c = config.campaign
    for example in config.examples:
        if example.preset is None:
            log.info("skipping %s: CSV examples are already data", example.name)
            continue
        setup = camp.build_example(config, example)
        folder = out / "data" / example.name
        folder.mkdir(parents=True, exist_ok=True)
        write_csv(folder / "reference.csv", setup.reference)
        for i in range(count):
            rng = np.random.default_rng(derive_seed(config.master_seed, "generate", example.name, i))
            parts = [setup.pre.sample(c.change_point, rng)] if c.change_point else []
            parts.append(setup.post.sample(c.horizon - c.change_point, rng))
            labels = np.r_[np.zeros(c.change_point, dtype=int), np.ones(c.horizon - c.change_point, dtype=int)]
            write_csv(folder / f"sequence_{i:03d}.csv", np.concatenate(parts), labels)
        log.info("wrote %d sequence(s) for %s", count, example.name)
    return EXIT_OK


def _failures(records) -> int:
    bad = [r for r in records if r["status"] != "ok"]
    for r in bad:
        log.error("cell %s x %s failed: %s", r["detector"], r["example"], r.get("error"))
    return EXIT_CELL_FAILURES if bad else EXIT_OK


def cmd_calibrate(config: ExperimentConfig, out: Path, resume: bool = True) -> int:
    records = camp.run_campaign(config, out, resume=resume, evaluate_cells=False)
    table: dict[str, dict] = {}
    for r in records:
        entry = {"status": r["status"]}
        if r["status"] == "ok":
            entry.update(threshold=r["calibration"]["threshold"], drift=r.get("drift"),
                         boundary=r["calibration"]["boundary"], fit=r["calibration"]["fit"])
        else:
            entry["error"] = r.get("error")
        table.setdefault(r["detector"], {})[r["example"]] = entry
    camp._write_json(out / "thresholds.json", table)
    horizon = config.campaign.cal_horizon if config.campaign.target_arl else config.campaign.change_point
    camp.write_arl_curves(out, records, horizon)
    camp.write_tail_curves(out, records, horizon)
    return _failures(records)


def _threshold_for(config, out: Path, det: str, ex: str, setup) -> float:
    path = out / "thresholds.json"
    if path.exists():
        entry = json.loads(path.read_text(encoding="utf-8")).get(det, {}).get(ex)
        if entry and entry.get("status") == "ok":
            return float(entry["threshold"])
    log.info("no stored threshold for %s x %s; calibrating", det, ex)
    return camp.calibrate_cell(config, config.detector(det), setup)[-1].threshold


def cmd_detect(config: ExperimentConfig, out: Path, sequence_path: str, det: str | None,
               ex: str | None, threshold: float | None) -> int:
    if not config.detectors or not config.examples:
        raise ConfigError("detect needs at least one detector and one example in the config")
    det = det or config.detectors[0].name
    ex = ex or config.examples[0].name
    detector_cfg, example_cfg = config.detector(det), config.example(ex)
    sequence = read_sequence_csv(sequence_path)
    setup = camp.build_example(config, example_cfg)
    if sequence.data.shape[1] != setup.reference.shape[1]:
        raise CsvSchemaError(
            f"{sequence_path}: {sequence.data.shape[1]} feature columns, reference has {setup.reference.shape[1]}"
        )
    if threshold is None:
        threshold = _threshold_for(config, out, det, ex, setup)
    factory, drift = camp.build_factory(detector_cfg, setup, config, derive_seed(config.master_seed, det, ex, "drift"))
    detector = factory(derive_seed(config.master_seed, det, ex, "detect"))
    if detector.burn_in:
        rng = np.random.default_rng(derive_seed(config.master_seed, det, ex, "detect", "burn_in"))
        detector.warm_up(setup.pre.sample(detector.burn_in, rng))
    result = run_to_stop(detector, sequence, threshold=threshold)

    stem = f"{det}__{ex}__{Path(sequence_path).stem}"
    incs = result.increments if result.increments is not None and len(result.increments) == result.statistics.size else None
    rows = [
        {"obs_index": int(o), "stat_index": j + 1, "statistic": float(s),
         "increment": None if incs is None else float(incs[j]), "alarmed": int(s > threshold)}
        for j, (o, s) in enumerate(zip(result.obs_index, result.statistics))
    ]
    camp.write_table(out / f"trajectory__{stem}.csv", rows, ["obs_index", "stat_index", "statistic", "increment", "alarmed"])
    k = sequence.change_point
    verdict = {
        "detector": det,
        "example": ex,
        "sequence": str(sequence_path),
        "threshold": threshold,
        "drift": drift,
        "alarmed": result.alarm_time is not None,
        "alarm_time": result.alarm_time,
        "stopped_at": result.stopped_at,
        "change_point": k,
        "max_statistic": result.max_statistic,
    }
    if k is not None:
        hit = result.first_crossing_after(k)
        verdict.update(
            delay=None if hit is None else hit - k,
            max_before_change=result.max_before_change,
            max_after_change=result.max_after_change,
        )
    camp._write_json(out / f"verdict__{stem}.json", verdict)
    print(json.dumps({key: verdict[key] for key in ("alarmed", "alarm_time", "threshold")}))
    return EXIT_OK


def cmd_benchmark(config: ExperimentConfig, out: Path, resume: bool = True) -> int:
    records = camp.run_campaign(config, out, resume=resume, evaluate_cells=True)
    camp.write_results(out, records)
    camp.write_histograms(out, records)
    horizon = config.campaign.cal_horizon if config.campaign.target_arl else config.campaign.change_point
    camp.write_arl_curves(out, records, horizon)
    for row in camp.result_rows(records):
        edd = row["edd"]
        log.info("%-16s %-22s b=%s EDD=%s", row["detector"], row["example"],
                 _short(row["threshold"]), _short(edd))
    return _failures(records)


def _short(value) -> str:
    if value is None:
        return "-"
    return f"{value:.4g}" if isinstance(value, float) and math.isfinite(value) else str(value)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config, out = load_config(args)
        if args.command == "generate":
            if args.count < 1:
                raise ConfigError("--count must be positive")
            return cmd_generate(config, out, args.count)
        if args.command == "calibrate":
            return cmd_calibrate(config, out, resume=not args.no_resume)
        if args.command == "detect":
            return cmd_detect(config, out, args.sequence, args.detector, args.example, args.threshold)
        return cmd_benchmark(config, out, resume=not args.no_resume)
    except (ConfigError, CsvSchemaError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
