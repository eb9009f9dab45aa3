"""Pipeline configuration: a sectioned key/value file layered over defaults."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .channel import AttackSpec, ChannelProfile, make_profile_presets
from .errors import ConfigError
from .risk import RiskConfig, RiskWeightSpec


def _default_text() -> str:
    return resources.files("qkdrisk").joinpath("default.ini").read_text(encoding="utf-8")


def parse_c_ranges(text: str) -> list[tuple[int, int]]:
    ranges = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            lo, hi = (int(v) for v in part.replace(",", "-").split("-"))
        except ValueError:
            raise ConfigError(f"bad cluster range {part!r}; expected e.g. 2-15") from None
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad cluster range {part!r}")
        ranges.append((lo, hi))
    if not ranges:
        raise ConfigError("at least one cluster range is required")
    return ranges


@dataclass(frozen=True)
class PipelineConfig:
    source: str = "simulate"
    csv: Optional[str] = None
    eval_csv: Optional[str] = None
    profile: str = "30km"
    n: int = 47768
    block_bits: int = 0
    attack: Optional[AttackSpec] = None
    train_folds: int = 5
    cv_folds: int = 4
    fold_mode: str = "contiguous"
    c_ranges: tuple = ((2, 15),)
    t_training: int = 100
    t_test: int = 10000
    i_max: int = 100
    varsigma: float = 0.95
    risk: RiskConfig = field(default_factory=RiskConfig)
    window_size: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("simulate", "csv"):
            raise ConfigError(f"input source must be 'simulate' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv:
            raise ConfigError("csv source selected but no csv path given")
        if self.source == "simulate" and self.csv:
            raise ConfigError("set exactly one input source: simulate or csv, not both")
        if self.source == "simulate" and self.profile not in make_profile_presets():
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.block_bits < 0:
            raise ConfigError("block_bits must be >= 0")
        if self.train_folds < 2 or self.cv_folds < 2:
            raise ConfigError("fold counts must be at least 2")
        if self.t_training < 1 or self.t_test < 1 or self.i_max < 1:
            raise ConfigError("trial and iteration budgets must be positive")
        if not 0.0 < self.varsigma < 1.0:
            raise ConfigError("varsigma must lie in (0, 1)")
        if self.window_size < 1:
            raise ConfigError("window_size must be positive")
        if self.fold_mode not in ("contiguous", "strided"):
            raise ConfigError(f"unknown fold mode {self.fold_mode!r}")

    @property
    def c_range(self) -> tuple:
        return self.c_ranges[0]

    @property
    def channel_profile(self) -> ChannelProfile:
        return make_profile_presets()[self.profile]

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        return self if seed is None else replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_ranges"] = [list(r) for r in self.c_ranges]
        return d

    def digest(self) -> str:
        import json

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _opt_str(v: str) -> Optional[str]:
    v = v.strip()
    return v or None


def load_config(path: Optional[str | Path] = None, seed: Optional[int] = None) -> PipelineConfig:
    """Read ``path`` over the packaged defaults. Raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(_default_text())
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return _from_parser(cp).with_seed(seed)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from None


def _from_parser(cp: configparser.ConfigParser) -> PipelineConfig:
    inp, atk, lrn, rsk, run = (cp[s] for s in ("input", "attack", "learning", "risk", "run"))
    ups = _opt_str(atk.get("upsilon_e", ""))
    attack = None
    if ups is not None:
        attack = AttackSpec(
            upsilon_e=float(ups),
            qber_low=atk.getfloat("qber_low"),
            qber_high=atk.getfloat("qber_high"),
            duration=atk.getint("duration"),
        )
    alpha_text = rsk.get("alpha").strip().lower()
    risk = RiskConfig(
        rho=rsk.getfloat("rho"),
        varsigma=lrn.getfloat("varsigma"),
        gate_mode=rsk.get("gate_mode").strip(),
        alpha_const=None if alpha_text == "calibrate" else float(alpha_text),
        alpha_1m=rsk.getfloat("alpha_1m"),
        eps_min=rsk.getfloat("eps_min"),
        eps_max=rsk.getfloat("eps_max"),
        varphi=rsk.getfloat("varphi"),
        weighting=RiskWeightSpec(
            mean_low=rsk.getfloat("weight_mean_low"),
            mean_high=rsk.getfloat("weight_mean_high"),
            m_draws=rsk.getint("m_draws"),
        ),
        per_sample_tail=rsk.getboolean("per_sample_tail"),
    )
    return PipelineConfig(
        source=inp.get("source").strip(),
        csv=_opt_str(inp.get("csv", "")),
        eval_csv=_opt_str(inp.get("eval_csv", "")),
        profile=inp.get("profile").strip(),
        n=inp.getint("n"),
        block_bits=inp.getint("block_bits"),
        attack=attack,
        train_folds=lrn.getint("train_folds"),
        cv_folds=lrn.getint("cv_folds"),
        fold_mode=lrn.get("fold_mode").strip(),
        c_ranges=tuple(parse_c_ranges(lrn.get("c_range"))),
        t_training=lrn.getint("t_training"),
        t_test=lrn.getint("t_test"),
        i_max=lrn.getint("i_max"),
        varsigma=lrn.getfloat("varsigma"),
        risk=risk,
        window_size=rsk.getint("window_size"),
        seed=run.getint("seed"),
    )
