import csv
import json

import numpy as np
import pytest
import yaml
from scipy import stats

from nncusum.cli import EXIT_CELL_FAILURES, EXIT_CONFIG, EXIT_OK, main
from nncusum.datagen import read_sequence_csv, write_csv
from nncusum.campaign import RESULT_COLUMNS

SMALL_NET = {"window_length": 40, "stride": 4, "hidden_width": 8, "batch_size": 10, "burn_in": 200}


def write_config(tmp_path, **campaign):
    cfg = {
        "master_seed": 5,
        "campaign": {"change_point": 60, "horizon": 200, "n_sequences": 3, "target_arl": 500,
                     "reference_size": 500, "drift_sequences": 2, **campaign},
        "detectors": [
            {"name": "exact", "kind": "exact_cusum"},
            {"name": "mewma", "kind": "mewma"},
            {"name": "nn", "kind": "nn_cusum", "params": SMALL_NET},
        ],
        "examples": [{"name": "g", "preset": "gaussian_mean", "dim": 4, "overrides": {"delta": 2.0}}],
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_benchmark_smoke_schema_and_byte_identical_rerun(tmp_path):
    cfg = write_config(tmp_path, n_sequences=1)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["benchmark", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["benchmark", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    rows = read_rows(a / "results.csv")
    assert list(rows[0]) == RESULT_COLUMNS
    assert [r["detector"] for r in rows] == ["exact", "mewma", "nn"]
    assert all(r["status"] == "ok" for r in rows)
    for name in ("results.csv", "eta_histogram.csv", "arl_curve.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for cell in (a / "cells").iterdir():
        assert cell.read_bytes() == (b / "cells" / cell.name).read_bytes()
    assert read_rows(a / "timings.csv")[0]["wall_time_s"]


def test_resume_reuses_cells_and_workers_do_not_change_numbers(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    first = (out / "results.csv").read_bytes()
    stamp = (out / "cells" / "nn__g.json").stat().st_mtime_ns
    assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "cells" / "nn__g.json").stat().st_mtime_ns == stamp
    par = tmp_path / "p"
    assert main(["benchmark", "--config", str(cfg), "--out", str(par), "--workers", "2"]) == EXIT_OK
    assert (par / "results.csv").read_bytes() == first


def test_calibrate_writes_threshold_table(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    assert main(["calibrate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    table = json.loads((out / "thresholds.json").read_text())
    assert set(table) == {"exact", "mewma", "nn"}
    assert table["exact"]["g"]["status"] == "ok"
    assert (out / "arl_curve.csv").exists() and (out / "tail_survival.csv").exists()


def test_generate_is_reproducible_and_respects_support(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "master_seed": 1,
        "campaign": {"change_point": 0, "horizon": 2000, "target_arl": 100},
        "examples": [{"name": "g", "preset": "gaussian_mean", "dim": 3, "overrides": {"delta": 1.5}},
                     {"name": "p", "preset": "pareto", "dim": 3}],
    }))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["generate", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    f = a / "data" / "g" / "sequence_000.csv"
    assert f.read_bytes() == (b / "data" / "g" / "sequence_000.csv").read_bytes()
    seq = read_sequence_csv(f)
    # k = 0: every row is post-change
    assert seq.change_point == 0
    assert stats.kstest(seq.data[:, 0], stats.norm(1.5).cdf).pvalue > 1e-3
    pareto = read_sequence_csv(a / "data" / "p" / "sequence_000.csv")
    assert pareto.data.min() >= 1.0


def test_detect_outputs_and_trajectory_jumps_after_change(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "master_seed": 2,
        "campaign": {"change_point": 500, "horizon": 1500, "target_arl": 1000, "reference_size": 4000,
                     "drift_sequences": 2, "drift_length": 1000},
        "detectors": [{"name": "nn", "kind": "nn_cusum",
                       "params": {"hidden_width": 32, "batch_size": 50, "burn_in": 2000}}],
        "examples": [{"name": "gmm", "preset": "gmm", "dim": 20}],
    }))
    rng = np.random.default_rng(0)
    from nncusum.datagen import build_sequence, preset_pair

    pre, post = preset_pair("gmm", dim=20)
    seq = build_sequence(pre, post, 500, 1500, seed=rng.integers(2**31))
    path = tmp_path / "seq.csv"
    write_csv(path, seq.data, seq.labels)
    out = tmp_path / "o"
    assert main(["detect", "--config", str(cfg), "--sequence", str(path), "--out", str(out),
                 "--threshold", "1e9"]) == EXIT_OK
    rows = read_rows(out / "trajectory__nn__gmm__seq.csv")
    idx = [int(r["stat_index"]) for r in rows]
    assert idx == sorted(idx) and idx[0] == 1
    assert not any(int(r["alarmed"]) for r in rows)
    verdict = json.loads((out / "verdict__nn__gmm__seq.json").read_text())
    assert verdict["alarmed"] is False
    assert verdict["max_after_change"] > 10 * verdict["max_before_change"]


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"campaign": {"horizon": -1}}))
    assert main(["benchmark", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["benchmark", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG
    # exact CUSUM has no density for a CSV example: the cell fails, the run reports it
    data = tmp_path / "d.csv"
    write_csv(data, np.random.default_rng(0).normal(size=(400, 2)), np.r_[np.zeros(300), np.ones(100)])
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "campaign": {"change_point": 20, "horizon": 60, "n_sequences": 2, "target_type1": 0.1,
                     "reference_size": 100},
        "detectors": [{"name": "exact", "kind": "exact_cusum"}, {"name": "mewma", "kind": "mewma"}],
        "examples": [{"name": "csv", "csv": str(data)}],
    }))
    out = tmp_path / "o"
    assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == EXIT_CELL_FAILURES
    rows = {r["detector"]: r for r in read_rows(out / "results.csv")}
    assert rows["exact"]["status"] == "error" and rows["mewma"]["status"] == "ok"
    seq = tmp_path / "bad_seq.csv"
    seq.write_text("x0,x1\n1,oops\n")
    assert main(["detect", "--config", str(cfg), "--sequence", str(seq), "--detector", "mewma",
                 "--out", str(out)]) == EXIT_CONFIG


def test_seed_override_and_env_output_dir(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, n_sequences=1)
    env_out = tmp_path / "env"
    monkeypatch.setenv("NNCUSUM_OUTPUT_DIR", str(env_out))
    assert main(["calibrate", "--config", str(cfg), "--seed", "9"]) == EXIT_OK
    assert (env_out / "thresholds.json").exists()
    with pytest.raises(SystemExit):
        main(["benchmark"])
