"""Synthetic time-variant QBER channels and Poisson Trojan-horse injection."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import ABORT_QBER, QberSeries
from .errors import ConfigError
from .seeding import rng_for

DEFAULT_START = 1_600_000_000
DEFAULT_CADENCE = 10  # seconds; real logs carry their own timestamps


@dataclass(frozen=True)
class ChannelProfile:
    name: str
    regime_means: tuple
    regime_sigmas: tuple
    regime_dwell: float
    noise_floor: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "regime_means", tuple(float(x) for x in self.regime_means))
        object.__setattr__(self, "regime_sigmas", tuple(float(x) for x in self.regime_sigmas))
        if not self.regime_means or len(self.regime_means) != len(self.regime_sigmas):
            raise ConfigError(f"profile {self.name!r}: need one sigma per regime mean")
        if any(not 0.0 < m < ABORT_QBER for m in self.regime_means):
            raise ConfigError(f"profile {self.name!r}: regime means must lie in (0, {ABORT_QBER})")
        if any(s <= 0 for s in self.regime_sigmas) or self.noise_floor <= 0:
            raise ConfigError(f"profile {self.name!r}: sigmas must be positive")
        if self.regime_dwell < 1:
            raise ConfigError(f"profile {self.name!r}: regime_dwell must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime_means"] = list(self.regime_means)
        d["regime_sigmas"] = list(self.regime_sigmas)
        return d


@dataclass(frozen=True)
class AttackSpec:
    upsilon_e: float
    qber_low: float = 0.05
    qber_high: float = 0.055
    duration: int = 1

    def __post_init__(self):
        if self.upsilon_e < 1:
            raise ConfigError("upsilon_e must be at least 1 sample")
        if not 0.0 <= self.qber_low <= self.qber_high <= 1.0:
            raise ConfigError("need 0 <= qber_low <= qber_high <= 1")
        if self.duration < 1:
            raise ConfigError("attack duration must be at least 1 sample")


def make_profile_presets() -> dict:
    """Synthetic 1 m / 1 km / 30 km channels.

    The numbers are invented: they only encode that QBER level and
    variability grow with distance. Nothing here is a measured statistic.
    """
    return {
        "1m": ChannelProfile("1m", (0.006, 0.008, 0.010), (0.0010, 0.0012, 0.0015), 4000.0),
        "1km": ChannelProfile("1km", (0.012, 0.015, 0.018), (0.0015, 0.0020, 0.0025), 3000.0),
        "30km": ChannelProfile("30km", (0.020, 0.024, 0.028), (0.0025, 0.0030, 0.0035), 2000.0),
    }


def regime_path(profile: ChannelProfile, n: int, rng: np.random.Generator) -> np.ndarray:
    """Regime index per sample; each step leaves the regime with prob 1/dwell."""
    r = len(profile.regime_means)
    path = np.zeros(n, dtype=np.intp)
    start = int(rng.integers(r))
    if r == 1:
        path[:] = start
        return path
    switch = rng.random(n) < 1.0 / profile.regime_dwell
    switch[0] = False
    idx = np.flatnonzero(switch)
    # move to a different regime, uniformly among the others
    steps = rng.integers(1, r, size=idx.size)
    states = (start + np.cumsum(steps)) % r
    segment = np.cumsum(switch)
    path[:] = np.concatenate([[start], states])[segment]
    return path


def simulate_qber_series(
    profile: ChannelProfile,
    n: int,
    seed: int = 0,
    start: int = DEFAULT_START,
    cadence: int = DEFAULT_CADENCE,
    block_bits: int = 0,
) -> QberSeries:
    """Markov regime-switching Gaussian QBER stream, clamped to [0, 0.11].

    ``block_bits > 0`` rounds each value to a whole number of errors in a
    block of that many sifted bits, as a device estimating QBER per block does.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = rng_for(seed, 7)
    path = regime_path(profile, n, rng)
    means = np.asarray(profile.regime_means)[path]
    sigmas = np.maximum(np.asarray(profile.regime_sigmas), profile.noise_floor)[path]
    qber = np.clip(means + sigmas * rng.standard_normal(n), 0.0, ABORT_QBER)
    if block_bits:
        qber = np.floor(qber * block_bits + 0.5) / block_bits
    return QberSeries(
        timestamps=start + cadence * np.arange(n, dtype=np.int64),
        qber=qber,
        attack_label=np.zeros(n, dtype=bool),
        channel_tag=profile.name,
        metadata={
            "profile": profile.to_dict(),
            "seed": int(seed),
            "synthetic": True,
            "block_bits": int(block_bits),
            "regime_switches": int(np.count_nonzero(np.diff(path))),
        },
    )


def attack_onsets(n: int, upsilon_e: float, rng: np.random.Generator) -> np.ndarray:
    """Onset indices of a Poisson process with mean spacing ``upsilon_e`` samples."""
    times = []
    t = 0.0
    # draw in blocks; expected count is n / upsilon_e
    block = max(16, int(n / upsilon_e * 1.2) + 16)
    while True:
        gaps = rng.exponential(upsilon_e, block)
        arr = t + np.cumsum(gaps)
        times.append(arr)
        t = float(arr[-1])
        if t >= n:
            break
    times = np.concatenate(times)
    return np.floor(times[times < n]).astype(np.int64)


def inject_trojan_attacks(series: QberSeries, spec: AttackSpec, seed: int = 0) -> QberSeries:
    """Copy of ``series`` with attack epochs set to U[qber_low, qber_high].

    Each onset labels ``spec.duration`` consecutive samples (truncated at the
    end of the series). Overlapping events merge.
    """
    rng = rng_for(seed, 8)
    n = series.n
    onsets = attack_onsets(n, spec.upsilon_e, rng)
    hit = np.zeros(n, dtype=bool)
    for k in range(spec.duration):
        idx = onsets + k
        hit[idx[idx < n]] = True
    qber = series.qber.copy()
    qber[hit] = rng.uniform(spec.qber_low, spec.qber_high, int(hit.sum()))
    labels = hit if series.attack_label is None else (series.attack_label | hit)
    meta = dict(series.metadata)
    meta["attack"] = {
        "upsilon_e": spec.upsilon_e,
        "qber_low": spec.qber_low,
        "qber_high": spec.qber_high,
        "duration": spec.duration,
        "seed": int(seed),
        "events": int(np.unique(onsets).size),
    }
    return series.replace(qber=qber, attack_label=labels, metadata=meta)
