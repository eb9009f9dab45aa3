"""QBER series types, CSV ingestion and fold partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, CsvRowError, DataError

CSV_COLUMNS = ("timestamp", "qber", "visibility", "key_rate")

# epochs beyond these limits yield no key; they stay in the series but are flagged
VISIBILITY_FLOOR = 0.9
ABORT_QBER = 0.11


@dataclass(frozen=True)
class QberSample:
    timestamp: int
    qber: float
    visibility: Optional[float] = None
    key_rate: Optional[float] = None
    attack_label: Optional[bool] = None

    def __post_init__(self):
        if not 0.0 <= self.qber <= 1.0:
            raise DataError(f"qber {self.qber!r} outside [0, 1]")
        if self.visibility is not None and not 0.0 <= self.visibility <= 1.0:
            raise DataError(f"visibility {self.visibility!r} outside [0, 1]")
        if self.key_rate is not None and self.key_rate < 0:
            raise DataError(f"key_rate {self.key_rate!r} is negative")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class QberSeries:
    """Column-oriented, read-only QBER series.

    Missing ``visibility``/``key_rate`` entries are stored as NaN. ``attack_label``
    is ``None`` unless the series carries ground truth (simulation only).
    """

    timestamps: np.ndarray
    qber: np.ndarray
    visibility: np.ndarray = None
    key_rate: np.ndarray = None
    attack_label: Optional[np.ndarray] = None
    channel_tag: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).copy()
        q = np.asarray(self.qber, dtype=float).copy()
        n = q.shape[0]
        if ts.shape != (n,):
            raise DataError("timestamps and qber differ in length")
        vis = np.full(n, np.nan) if self.visibility is None else np.asarray(self.visibility, dtype=float).copy()
        kr = np.full(n, np.nan) if self.key_rate is None else np.asarray(self.key_rate, dtype=float).copy()
        if vis.shape != (n,) or kr.shape != (n,):
            raise DataError("optional columns must match the series length")
        if n and (np.any(~np.isfinite(q)) or q.min() < 0.0 or q.max() > 1.0):
            raise DataError("qber values must lie in [0, 1]")
        v = vis[~np.isnan(vis)]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise DataError("visibility values must lie in [0, 1]")
        k = kr[~np.isnan(kr)]
        if k.size and k.min() < 0.0:
            raise DataError("key_rate values must be non-negative")
        if n > 1 and np.any(np.diff(ts) < 0):
            raise DataError("timestamps must be non-decreasing")
        labels = None
        if self.attack_label is not None:
            labels = np.asarray(self.attack_label, dtype=bool).copy()
            if labels.shape != (n,):
                raise DataError("attack_label must match the series length")
            labels = _frozen(labels)
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "qber", _frozen(q))
        object.__setattr__(self, "visibility", _frozen(vis))
        object.__setattr__(self, "key_rate", _frozen(kr))
        object.__setattr__(self, "attack_label", labels)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n(self) -> int:
        return int(self.qber.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> list[QberSample]:
        return list(self)

    def __iter__(self) -> Iterator[QberSample]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i: int) -> QberSample:
        vis = self.visibility[i]
        kr = self.key_rate[i]
        return QberSample(
            timestamp=int(self.timestamps[i]),
            qber=float(self.qber[i]),
            visibility=None if math.isnan(vis) else float(vis),
            key_rate=None if math.isnan(kr) else float(kr),
            attack_label=None if self.attack_label is None else bool(self.attack_label[i]),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[QberSample], channel_tag: str = "") -> "QberSeries":
        samples = sorted(samples, key=lambda s: s.timestamp)
        labels = None
        if samples and all(s.attack_label is not None for s in samples):
            labels = [s.attack_label for s in samples]
        return cls(
            timestamps=[s.timestamp for s in samples],
            qber=[s.qber for s in samples],
            visibility=[np.nan if s.visibility is None else s.visibility for s in samples],
            key_rate=[np.nan if s.key_rate is None else s.key_rate for s in samples],
            attack_label=labels,
            channel_tag=channel_tag,
        )

    @property
    def abort_flags(self) -> np.ndarray:
        """True where the epoch cannot produce key (low visibility or QBER above abort)."""
        with np.errstate(invalid="ignore"):
            low_vis = self.visibility < VISIBILITY_FLOOR
        return low_vis | (self.qber > ABORT_QBER)

    def replace(self, **changes) -> "QberSeries":
        fields = dict(
            timestamps=self.timestamps,
            qber=self.qber,
            visibility=self.visibility,
            key_rate=self.key_rate,
            attack_label=self.attack_label,
            channel_tag=self.channel_tag,
            metadata=self.metadata,
        )
        fields.update(changes)
        return QberSeries(**fields)

    def take(self, idx: np.ndarray | slice) -> "QberSeries":
        return self.replace(
            timestamps=self.timestamps[idx],
            qber=self.qber[idx],
            visibility=self.visibility[idx],
            key_rate=self.key_rate[idx],
            attack_label=None if self.attack_label is None else self.attack_label[idx],
        )


@dataclass(frozen=True)
class FoldSet:
    """Index ranges into a series; ``folds[i]`` is a ``range``."""

    folds: tuple
    n: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def sizes(self) -> list[int]:
        return [len(f) for f in self.folds]

    def select(self, values: np.ndarray, i: int) -> np.ndarray:
        return np.asarray(values)[np.asarray(self.folds[i])]


def partition_folds(series_or_n, k: int, mode: str = "contiguous") -> FoldSet:
    """Split ``n`` indices into ``k`` folds whose sizes differ by at most one.

    The remainder goes to the leading folds. ``contiguous`` keeps temporal
    blocks; ``strided`` deals indices round-robin.
    """
    n = series_or_n if isinstance(series_or_n, (int, np.integer)) else len(series_or_n)
    n = int(n)
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    if k > n:
        raise ConfigError(f"fold count {k} exceeds sample count {n}")
    if mode == "contiguous":
        base, extra = divmod(n, k)
        folds, start = [], 0
        for i in range(k):
            size = base + (1 if i < extra else 0)
            folds.append(range(start, start + size))
            start += size
    elif mode == "strided":
        folds = [range(i, n, k) for i in range(k)]
    else:
        raise ConfigError(f"unknown fold mode {mode!r}")
    return FoldSet(folds=tuple(folds), n=n)


def _parse_optional(text: str) -> float:
    text = text.strip()
    return math.nan if text == "" else float(text)


def load_qber_csv(
    path: str | Path,
    schema: Optional[Mapping[str, str]] = None,
    channel_tag: str = "",
) -> QberSeries:
    """Read a QBER log.

    ``schema`` maps logical names (``timestamp``, ``qber``, ``visibility``,
    ``key_rate``, ``attack_label``) to header names in the file; unmapped names
    default to themselves. Rejected rows are collected and raised together as
    :class:`CsvRowError`.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    cols = {name: name for name in (*CSV_COLUMNS, "attack_label")}
    if schema:
        cols.update(schema)

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for required in ("timestamp", "qber"):
            if cols[required] not in header:
                raise DataError(f"{path}: missing column {cols[required]!r}")
        has = {name: cols[name] in header for name in cols}

        ts, q, vis, kr, labels = [], [], [], [], []
        errors = []
        for row in reader:
            line = reader.line_num
            try:
                t = int(row[cols["timestamp"]])
                e = float(row[cols["qber"]])
                v = _parse_optional(row[cols["visibility"]] or "") if has["visibility"] else math.nan
                r = _parse_optional(row[cols["key_rate"]] or "") if has["key_rate"] else math.nan
                a = int(row[cols["attack_label"]]) if has["attack_label"] else 0
            except (TypeError, ValueError) as exc:
                errors.append((line, f"unparseable row ({exc})"))
                continue
            if not (0.0 <= e <= 1.0):
                errors.append((line, f"qber {e!r} outside [0, 1]"))
                continue
            if not math.isnan(v) and not 0.0 <= v <= 1.0:
                errors.append((line, f"visibility {v!r} outside [0, 1]"))
                continue
            if not math.isnan(r) and r < 0:
                errors.append((line, f"key_rate {r!r} is negative"))
                continue
            ts.append(t)
            q.append(e)
            vis.append(v)
            kr.append(r)
            labels.append(bool(a))

    if errors:
        raise CsvRowError(errors)
    if not q:
        raise DataError(f"{path}: no data rows")

    order = np.argsort(np.asarray(ts, dtype=np.int64), kind="stable")
    return QberSeries(
        timestamps=np.asarray(ts, dtype=np.int64)[order],
        qber=np.asarray(q)[order],
        visibility=np.asarray(vis)[order],
        key_rate=np.asarray(kr)[order],
        attack_label=np.asarray(labels)[order] if has["attack_label"] else None,
        channel_tag=channel_tag,
    )


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_qber_csv(series: QberSeries, path: str | Path, labels: Optional[bool] = None) -> Path:
    """Write ``series`` using the ingestion schema.

    Floats are written with ``repr`` (shortest round-trip form), so reloading
    reproduces every value bit for bit. ``labels`` defaults to writing the
    ``attack_label`` column whenever the series has one.
    """
    path = Path(path)
    if labels is None:
        labels = series.attack_label is not None
    header = list(CSV_COLUMNS) + (["attack_label"] if labels else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(series.n):
            row = [
                str(int(series.timestamps[i])),
                repr(float(series.qber[i])),
                _fmt(series.visibility[i]),
                _fmt(series.key_rate[i]),
            ]
            if labels:
                lab = series.attack_label
                row.append("1" if lab is not None and lab[i] else "0")
            w.writerow(row)
    return path
