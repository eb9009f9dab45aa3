"""File-based pipeline stages behind the CLI.

Each stage reads its inputs from the run directory, writes its outputs there,
and records a ``manifest_<stage>.json`` with SHA-256 digests of everything it
consumed and produced. A later stage refuses to consume a file whose digest no
longer matches the manifest of the stage that wrote it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .channel import inject_trojan_attacks, simulate_qber_series
from .config import PipelineConfig
from .data import QberSeries, load_qber_csv, partition_folds, write_qber_csv
from .errors import ConfigError, DataError
from .learner import CategorySet, algorithm2_train, algorithm3_test, cross_validate
from .risk import RiskReport, assess_windows, calibrate_gates
from .seeding import derive_seed

SERIES = "series.csv"
ATTACKED = "attacked.csv"
CATEGORIES = "categories.json"
TRAIN_TABLE = "train_pvalues.csv"
RISK_REPORT = "risk_report.json"
RISK_WINDOWS = "risk_windows.csv"
SUMMARY = "summary.txt"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _ensure_dir(out: Path) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from None
    return out


def write_manifest(out: Path, stage: str, cfg: PipelineConfig, inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    manifest = {
        "stage": stage,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "inputs": {str(Path(p).resolve()): sha256_file(Path(p)) for p in inputs},
        "outputs": {Path(p).name: sha256_file(Path(p)) for p in outputs},
    }
    path = out / f"manifest_{stage}.json"
    _dump_json(path, manifest)
    return path


def verify_upstream(out: Path, stage: str, path: Path) -> None:
    """Fail if ``path`` no longer matches what ``stage`` recorded for it."""
    mpath = out / f"manifest_{stage}.json"
    if not mpath.is_file():
        return
    recorded = json.loads(mpath.read_text(encoding="utf-8")).get("outputs", {})
    if path.name in recorded and recorded[path.name] != sha256_file(path):
        raise DataError(f"{path} changed since stage '{stage}' wrote it; rerun '{stage}'")


def _need(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise DataError(f"missing {path.name} in {path.parent}; run the '{stage}' stage first")
    return path


# -- stages ---------------------------------------------------------------


def cmd_simulate(cfg: PipelineConfig, out: Path) -> list[Path]:
    if cfg.source != "simulate":
        raise ConfigError("simulate needs [input] source = simulate")
    out = _ensure_dir(out)
    clean = simulate_qber_series(cfg.channel_profile, cfg.n, derive_seed(cfg.seed, 10), block_bits=cfg.block_bits)
    outputs = [write_qber_csv(clean, out / SERIES, labels=True)]
    meta = {"seed": cfg.seed, "n": cfg.n, "series": clean.metadata, "attacked": None}
    if cfg.attack is not None:
        attacked = inject_trojan_attacks(clean, cfg.attack, derive_seed(cfg.seed, 11))
        outputs.append(write_qber_csv(attacked, out / ATTACKED, labels=True))
        meta["attacked"] = {**attacked.metadata["attack"], "labeled_samples": int(attacked.attack_label.sum())}
    meta_path = out / "simulate.json"
    _dump_json(meta_path, meta)
    outputs.append(meta_path)
    write_manifest(out, "simulate", cfg, [], outputs)
    return outputs


def training_series(cfg: PipelineConfig, out: Path) -> tuple[QberSeries, Path]:
    if cfg.source == "csv":
        path = Path(cfg.csv)
        return load_qber_csv(path), path
    path = _need(out / SERIES, "simulate")
    verify_upstream(out, "simulate", path)
    return load_qber_csv(path, channel_tag=cfg.profile), path


def evaluation_series(cfg: PipelineConfig, out: Path) -> tuple[QberSeries, Path]:
    if cfg.source == "csv":
        path = Path(cfg.eval_csv or cfg.csv)
        return load_qber_csv(path), path
    path = out / ATTACKED if (out / ATTACKED).is_file() else _need(out / SERIES, "simulate")
    verify_upstream(out, "simulate", path)
    return load_qber_csv(path, channel_tag=cfg.profile), path


def train(cfg: PipelineConfig, series: QberSeries) -> CategorySet:
    folds = partition_folds(series, cfg.train_folds, cfg.fold_mode)
    return algorithm2_train(
        series, folds, cfg.varsigma, cfg.c_range, cfg.t_training, cfg.i_max, derive_seed(cfg.seed, 20), cfg.t_test
    )


def _write_table(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def cmd_train(cfg: PipelineConfig, out: Path) -> list[Path]:
    out = _ensure_dir(out)
    series, src = training_series(cfg, out)
    cats = train(cfg, series)
    cat_path = out / CATEGORIES
    doc = cats.to_dict()
    doc["attack_free"] = series.attack_label is None or not bool(series.attack_label.any())
    _dump_json(cat_path, doc)
    rows = [
        (s, cats.fold_assignment[s], r.c, r.p_value, r.d_statistic, r.aic)
        for cat in cats.categories
        for s, fits in sorted(cat.fold_fits.items())
        for r in fits
    ]
    rows.sort(key=lambda r: (r[0], r[2]))
    table = _write_table(out / TRAIN_TABLE, ("fold", "category", "c", "p_value", "d_statistic", "aic"), rows)
    write_manifest(out, "train", cfg, [src], [cat_path, table])
    return [cat_path, table]


def _range_tag(r) -> str:
    return f"c{r[0]}-{r[1]}"


def cmd_test(cfg: PipelineConfig, out: Path) -> list[Path]:
    out = _ensure_dir(out)
    series, src = training_series(cfg, out)
    outputs = []
    summary = {}
    for rng_ in cfg.c_ranges:
        reports = cross_validate(
            series,
            cfg.cv_folds,
            cfg.varsigma,
            rng_,
            cfg.t_training,
            cfg.t_test,
            cfg.i_max,
            mode=cfg.fold_mode,
            seed=derive_seed(cfg.seed, 30),
        )
        tag = _range_tag(rng_)
        rows = [(rep.fold, cid, c, p, a) for rep in reports for cid, c, p, a in rep.rows]
        outputs.append(_write_table(out / f"cv_pvalues_{tag}.csv", ("cv_fold", "category", "c", "p_value", "aic"), rows))
        rpath = out / f"cv_reports_{tag}.json"
        _dump_json(rpath, [rep.to_dict() for rep in reports])
        outputs.append(rpath)
        best = [rep.best_p_value for rep in reports]
        summary[tag] = {"best_p_values": best, "median_best_p_value": statistics.median(best)}
    spath = out / "cv_summary.json"
    _dump_json(spath, summary)
    outputs.append(spath)
    write_manifest(out, "test", cfg, [src], outputs)
    return outputs


def assess(cfg: PipelineConfig, trained: CategorySet, series: QberSeries, attack_free: bool = True) -> tuple[CategorySet, RiskReport]:
    """Window the evaluation series, run the test phase and score risk."""
    if cfg.risk.gate_mode == "per_category" and not attack_free:
        raise DataError("per-category gates need an attack-free baseline; the trained set saw attacks")
    n_windows = max(2, series.n // cfg.window_size)
    folds = partition_folds(series, min(n_windows, series.n), "contiguous")
    tested = algorithm3_test(series, folds, trained, cfg.varsigma, cfg.t_test, cfg.i_max, derive_seed(cfg.seed, 40))
    gates = calibrate_gates(trained, cfg.risk)
    labels = series.attack_label
    attack_counts = None if labels is None else [int(labels[np.asarray(f)].sum()) for f in folds.folds]
    qmax = [float(series.qber[np.asarray(f)].max()) for f in folds.folds]
    report = assess_windows(
        tested,
        gates,
        cfg.risk,
        folds.sizes(),
        attack_counts,
        qmax,
        weight_seed=derive_seed(cfg.seed, 41),
    )
    return tested, report


def cmd_risk(cfg: PipelineConfig, out: Path) -> list[Path]:
    out = _ensure_dir(out)
    cat_path = _need(out / CATEGORIES, "train")
    verify_upstream(out, "train", cat_path)
    doc = json.loads(cat_path.read_text(encoding="utf-8"))
    trained = CategorySet.from_dict(doc)
    series, src = evaluation_series(cfg, out)
    _, report = assess(cfg, trained, series, bool(doc.get("attack_free", True)))
    rpath = out / RISK_REPORT
    rpath.write_text(report.to_json() + "\n", encoding="utf-8")
    wpath = _write_table(
        out / RISK_WINDOWS,
        ("window_index", "category", "eta", "gamma", "flag", "attack_samples"),
        [(w.index, w.category, w.eta, w.gamma, w.flag, w.attack_samples) for w in report.per_window],
    )
    write_manifest(out, "risk", cfg, [cat_path, src], [rpath, wpath])
    return [rpath, wpath]


# -- report ---------------------------------------------------------------


def confusion_counts(per_window: Sequence[dict]) -> dict:
    tp = fp = fn = tn = 0
    for w in per_window:
        attacked = w.get("attack_samples", 0) > 0
        if w["flag"] and attacked:
            tp += 1
        elif w["flag"]:
            fp += 1
        elif attacked:
            fn += 1
        else:
            tn += 1
    return {"true_positive": tp, "false_positive": fp, "false_negative": fn, "true_negative": tn}


def _load_report(run: Path) -> dict:
    path = run / RISK_REPORT
    if not path.is_file():
        raise DataError(f"{run}: no {RISK_REPORT}; run the 'risk' stage first")
    verify_upstream(run, "risk", path)
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_report(out: Path, compare: Sequence[Path] = ()) -> tuple[str, list[Path]]:
    out = Path(out)
    if not out.is_dir():
        raise DataError(f"run directory {out} does not exist")
    rep = _load_report(out)
    windows = rep["per_window"]
    lines = [
        f"run: {out}",
        f"trusted: {rep['trusted']}  (R_eps={rep['r_eps']:.6g} <= R_ref={rep['r_ref']:.6g})",
        f"P(V)={rep['p_v']:.6g}  P(R)={rep['p_r']:.6g}  mean gamma={rep['gamma_mean']:.6g}",
        f"gate alpha={rep['gates']['alpha_const']:.6g}  alpha_1m={rep['gates']['alpha_1m']:.6g}",
        f"tau_upper={rep['tau_upper']:.6g}  Psi >= {rep['psi_lower']:.6g}  (empirical tau={rep['tau_empirical']:.6g})",
        f"windows: {len(windows)}  flagged: {sum(w['flag'] for w in windows)}",
    ]
    if any(w.get("attack_samples", 0) for w in windows):
        cm = confusion_counts(windows)
        lines.append(
            "flagged vs labeled windows: "
            + "  ".join(f"{k}={v}" for k, v in cm.items())
        )
        attacked = cm["true_positive"] + cm["false_negative"]
        lines.append(f"window recall: {cm['true_positive'] / attacked:.4g}" if attacked else "window recall: n/a")
    outputs = []
    fig = _write_table(
        out / "fig_risk_windows.csv",
        ("window_index", "category", "eta", "gamma", "beta_percent", "flag"),
        [(w["index"], w["category"], w["eta"], w["gamma"], w["gamma"] * 100.0, w["flag"]) for w in windows],
    )
    outputs.append(fig)
    if compare:
        lines.append("")
        lines.append(f"{'run':<40} {'P(V)':>12} {'mean gamma':>14} {'trusted':>8}")
        for run in (out, *map(Path, compare)):
            r = rep if run == out else _load_report(run)
            lines.append(f"{str(run):<40} {r['p_v']:>12.6g} {r['gamma_mean']:>14.6g} {str(r['trusted']):>8}")
        comp = _write_table(
            out / "comparison.csv",
            ("run", "p_v", "gamma_mean", "r_eps", "r_ref", "trusted"),
            [
                (str(run), r["p_v"], r["gamma_mean"], r["r_eps"], r["r_ref"], r["trusted"])
                for run, r in [(out, rep)] + [(Path(c), _load_report(Path(c))) for c in compare]
            ],
        )
        outputs.append(comp)
    text = "\n".join(lines) + "\n"
    spath = out / SUMMARY
    spath.write_text(text, encoding="utf-8")
    outputs.insert(0, spath)
    return text, outputs


def run_all(cfg: PipelineConfig, out: Path) -> RiskReport:
    """simulate (if configured) -> train -> risk; returns the risk report."""
    out = Path(out)
    if cfg.source == "simulate":
        cmd_simulate(cfg, out)
    cmd_train(cfg, out)
    cmd_risk(cfg, out)
    return json.loads((out / RISK_REPORT).read_text(encoding="utf-8"))
