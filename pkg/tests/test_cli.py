import json

import pytest

from qkdrisk.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from qkdrisk.config import load_config, parse_c_ranges
from qkdrisk.data import load_qber_csv
from qkdrisk.errors import ConfigError

SMALL = """
[input]
n = 3000
[attack]
upsilon_e = 300
[learning]
train_folds = 3
c_range = 2-3
t_training = 5
t_test = 10
[risk]
window_size = 300
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def _run(*args):
    return main([str(a) for a in args])


def test_defaults_match_operating_point():
    cfg = load_config()
    assert cfg.profile == "30km" and cfg.n == 47768
    assert cfg.c_range == (2, 15) and cfg.t_training == 100 and cfg.t_test == 10000
    assert cfg.varsigma == 0.95 and cfg.risk.rho == 0.05
    assert cfg.risk.alpha_const == 0.002 and cfg.risk.alpha_1m == 1e-5
    assert cfg.attack is None


def test_config_layering_and_seed_override(cfg_path):
    cfg = load_config(cfg_path, seed=9)
    assert cfg.n == 3000 and cfg.seed == 9 and cfg.attack.upsilon_e == 300
    assert cfg.t_test == 10 and cfg.risk.rho == 0.05
    assert cfg.digest() == load_config(cfg_path, seed=9).digest()
    assert cfg.digest() != load_config(cfg_path, seed=8).digest()


def test_parse_c_ranges():
    assert parse_c_ranges("2-15; 20-45") == [(2, 15), (20, 45)]
    for bad in ("", "5-2", "x"):
        with pytest.raises(ConfigError):
            parse_c_ranges(bad)


def test_calibrate_keyword(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[risk]\nalpha = calibrate\n")
    assert load_config(p).risk.alpha_const is None


def test_both_sources_rejected(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[input]\nsource = simulate\ncsv = x.csv\n")
    assert _run("train", "--config", p, "--out", tmp_path / "o") == EXIT_CONFIG


def test_bad_values_exit_config(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text("[learning]\nvarsigma = 1.5\n")
    assert _run("simulate", "--config", p, "--out", tmp_path) == EXIT_CONFIG
    assert "varsigma" in capsys.readouterr().err
    assert _run("simulate", "--config", tmp_path / "missing.ini") == EXIT_CONFIG


def test_full_pipeline_and_report(tmp_path, cfg_path, capsys):
    out = tmp_path / "run"
    for stage in ("simulate", "train", "risk"):
        assert _run(stage, "--config", cfg_path, "--out", out) == EXIT_OK
    s = load_qber_csv(out / "attacked.csv")
    assert s.n == 3000 and s.attack_label.sum() > 0
    assert load_qber_csv(out / "series.csv").attack_label.sum() == 0
    rep = json.loads((out / "risk_report.json").read_text())
    assert rep["r_ref"] <= 0.25
    assert len(rep["per_window"]) == 10
    header = (out / "risk_windows.csv").read_text().splitlines()[0]
    assert header.startswith("window_index,category,eta,gamma,flag")
    rows = (out / "train_pvalues.csv").read_text().splitlines()
    assert rows[0] == "fold,category,c,p_value,d_statistic,aic"
    assert len(rows) == 1 + 3 * 2
    capsys.readouterr()
    assert _run("report", "--out", out) == EXIT_OK
    text = capsys.readouterr().out
    assert "trusted:" in text and "true_positive=" in text
    assert (out / "summary.txt").read_text() == text


def test_simulate_is_byte_identical(tmp_path, cfg_path):
    for d in ("a", "b"):
        assert _run("simulate", "--config", cfg_path, "--out", tmp_path / d, "--seed", 4) == EXIT_OK
    for name in ("series.csv", "attacked.csv", "simulate.json", "manifest_simulate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_test_stage_writes_one_table_per_range(tmp_path):
    p = tmp_path / "t.ini"
    p.write_text("[input]\nn = 800\n[learning]\nc_range = 2-2; 3-3\nt_training = 3\nt_test = 5\n")
    out = tmp_path / "r"
    assert _run("simulate", "--config", p, "--out", out) == EXIT_OK
    assert _run("test", "--config", p, "--out", out) == EXIT_OK
    summary = json.loads((out / "cv_summary.json").read_text())
    assert set(summary) == {"c2-2", "c3-3"}
    assert all(len(v["best_p_values"]) == 4 for v in summary.values())
    assert (out / "cv_pvalues_c2-2.csv").is_file() and (out / "cv_reports_c3-3.json").is_file()


def test_report_empty_dir_is_missing_stage(tmp_path, capsys):
    assert _run("report", "--out", tmp_path) == EXIT_DATA
    assert "risk" in capsys.readouterr().err
    assert _run("report", "--out", tmp_path / "nope") == EXIT_DATA


def test_missing_upstream_stage(tmp_path, cfg_path):
    assert _run("train", "--config", cfg_path, "--out", tmp_path) == EXIT_DATA
    assert _run("risk", "--config", cfg_path, "--out", tmp_path) == EXIT_DATA


def test_stale_input_detected(tmp_path, cfg_path, capsys):
    out = tmp_path / "run"
    assert _run("simulate", "--config", cfg_path, "--out", out) == EXIT_OK
    with open(out / "series.csv", "a") as fh:
        fh.write("1900000000,0.02,,,0\n")
    assert _run("train", "--config", cfg_path, "--out", out) == EXIT_DATA
    assert "changed" in capsys.readouterr().err


def test_csv_source_with_bad_rows(tmp_path, capsys):
    data = tmp_path / "log.csv"
    data.write_text("timestamp,qber\n1,0.01\n2,oops\n3,1.7\n")
    p = tmp_path / "c.ini"
    p.write_text(f"[input]\nsource = csv\ncsv = {data}\n")
    assert _run("train", "--config", p, "--out", tmp_path / "o") == EXIT_DATA
    err = capsys.readouterr().err
    assert "line 3" in err and "line 4" in err


def test_per_category_gates_need_clean_baseline(tmp_path):
    data = tmp_path / "log.csv"
    rows = "\n".join(f"{i},{0.02 + 0.001 * (i % 7)},,,{int(i % 50 == 0)}" for i in range(600))
    data.write_text("timestamp,qber,visibility,key_rate,attack_label\n" + rows + "\n")
    p = tmp_path / "c.ini"
    p.write_text(
        f"[input]\nsource = csv\ncsv = {data}\n[learning]\ntrain_folds = 2\nc_range = 2-2\n"
        "t_training = 2\nt_test = 2\n[risk]\ngate_mode = per_category\nwindow_size = 300\n"
    )
    out = tmp_path / "o"
    assert _run("train", "--config", p, "--out", out) == EXIT_OK
    assert _run("risk", "--config", p, "--out", out) == EXIT_DATA


def test_report_comparison_table(tmp_path, cfg_path, capsys):
    runs = []
    for ups in (300, 1000):
        p = tmp_path / f"u{ups}.ini"
        p.write_text(SMALL.replace("upsilon_e = 300", f"upsilon_e = {ups}"))
        out = tmp_path / f"r{ups}"
        for stage in ("simulate", "train", "risk"):
            assert _run(stage, "--config", p, "--out", out) == EXIT_OK
        runs.append(out)
    capsys.readouterr()
    assert _run("report", "--out", runs[0], "--compare", runs[1]) == EXIT_OK
    assert "mean gamma" in capsys.readouterr().out
    table = (runs[0] / "comparison.csv").read_text().splitlines()
    assert table[0] == "run,p_v,gamma_mean,r_eps,r_ref,trusted" and len(table) == 3
