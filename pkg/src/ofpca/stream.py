"""Subject ingestion, centering and deterministic mini-batch replay.

NDJSON is the canonical format, one subject per line::

    {"id": "s1", "points": [{"loc": [0.5], "y": 1.2}, ...]}

CSV has one observation per row, ``id,loc_1,...,loc_d,y``; rows of the same
subject must be consecutive.  A header row is detected and skipped.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .model import Subject

__all__ = [
    "DataSource",
    "BatchPlan",
    "MiniBatch",
    "read_subjects",
    "write_ndjson",
    "make_batches",
    "center_subjects",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataSource:
    path: Path
    format: str | None = None
    dims: int | None = None
    declared_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        fmt = self.format
        if fmt is None:
            fmt = "csv" if self.path.suffix.lower() == ".csv" else "ndjson"
        if fmt not in ("ndjson", "csv"):
            raise ConfigError(f"unknown data format {fmt!r}")
        object.__setattr__(self, "format", fmt)


def _check_domain(subject: Subject, domain) -> None:
    if domain is None:
        return
    lo = np.array([a for a, _ in domain])
    hi = np.array([b for _, b in domain])
    bad = ~np.all((subject.locations >= lo) & (subject.locations <= hi), axis=1)
    if bad.any():
        raise DomainError(
            f"subject {subject.id!r}: location index {int(np.flatnonzero(bad)[0])} is outside the domain"
        )


def _read_ndjson(path: Path) -> Iterator[tuple[int, Subject]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid = str(rec["id"])
                pts = rec["points"]
                locs = [[float(v) for v in pt["loc"]] for pt in pts]
                ys = [float(pt["y"]) for pt in pts]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not pts:
                raise DataError(f"{path}:{lineno}: subject {sid!r} has no points")
            if len({len(l) for l in locs}) != 1:
                raise DataError(f"{path}:{lineno}: subject {sid!r} mixes location dimensions")
            yield lineno, Subject(sid, np.array(locs), np.array(ys))


def _read_csv(path: Path, dims: int | None) -> Iterator[tuple[int, Subject]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), 1) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(v) for v in rows[0][1][1:]]
        except ValueError:
            rows = rows[1:]
    current, start, locs, ys = None, 0, [], []
    seen: set[str] = set()
    for lineno, row in rows:
        width = len(row) - 2
        if dims is not None and width != dims:
            raise DataError(f"{path}:{lineno}: expected {dims} location columns, got {width}")
        if width < 1:
            raise DataError(f"{path}:{lineno}: row needs an id, at least one location and a value")
        try:
            loc = [float(v) for v in row[1:-1]]
            y = float(row[-1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        sid = row[0].strip()
        if sid != current:
            if sid in seen:
                raise DataError(f"{path}:{lineno}: rows of subject {sid!r} are not consecutive")
            if current is not None:
                yield start, Subject(current, np.array(locs), np.array(ys))
            seen.add(sid)
            current, start, locs, ys = sid, lineno, [], []
        locs.append(loc)
        ys.append(y)
    if current is not None:
        yield start, Subject(current, np.array(locs), np.array(ys))


def read_subjects(source: DataSource | str | Path, domain=None) -> list[Subject]:
    """Read all subjects in file order.

    ``domain`` (a sequence of ``(lower, upper)`` pairs), when given, is used to
    reject out-of-domain locations.
    """
    if not isinstance(source, DataSource):
        source = DataSource(source)
    if not source.path.exists():
        raise DataError(f"data file {source.path} does not exist")
    reader = _read_ndjson(source.path) if source.format == "ndjson" else _read_csv(source.path, source.dims)
    dims = source.dims if source.dims is not None else (len(domain) if domain is not None else None)
    out = []
    for lineno, subject in reader:
        if dims is None:
            dims = subject.dims
        if subject.dims != dims:
            raise DataError(f"{source.path}:{lineno}: subject {subject.id!r} has dimension {subject.dims}, expected {dims}")
        _check_domain(subject, domain)
        out.append(subject)
    if not out:
        log.warning("no subjects found in %s", source.path)
    if source.declared_count is not None and len(out) != source.declared_count:
        raise DataError(f"expected {source.declared_count} subjects, read {len(out)}")
    return out


def write_ndjson(subjects: Sequence[Subject], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in subjects:
            rec = {
                "id": s.id,
                "points": [{"loc": loc.tolist(), "y": float(y)} for loc, y in zip(s.locations, s.values)],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 5
    epochs: int = 1
    seed: int = 0
    shuffle: bool = True
    shuffle_first: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class MiniBatch:
    """Global step ``k`` (1-based, continuous across epochs) and subject indices."""

    k: int
    epoch: int
    indices: tuple[int, ...]


def make_batches(subjects: Sequence | int, plan: BatchPlan) -> list[MiniBatch]:
    """Partition each epoch into consecutive mini-batches; the final short batch is kept."""
    n = subjects if isinstance(subjects, int) else len(subjects)
    rng = np.random.default_rng(plan.seed)
    out, k = [], 1
    for epoch in range(1, plan.epochs + 1):
        shuffled = plan.shuffle_first if epoch == 1 else plan.shuffle
        order = rng.permutation(n) if shuffled else np.arange(n)
        for start in range(0, n, plan.batch_size):
            out.append(MiniBatch(k, epoch, tuple(int(i) for i in order[start:start + plan.batch_size])))
            k += 1
    return out


def center_subjects(subjects: Sequence[Subject], mode: str = "none", domain=None, bins: int = 10) -> list[Subject]:
    """Subtract a per-cell mean on a regular grid of ``bins`` cells per dimension.

    This needs a full first pass over the data, so it is not a streaming
    operation.
    """
    if mode == "none":
        return list(subjects)
    if mode != "grid-binned-mean":
        raise ConfigError(f"unknown centering mode {mode!r}")
    subjects = list(subjects)
    if not subjects:
        return subjects
    locs = np.concatenate([s.locations for s in subjects])
    ys = np.concatenate([s.values for s in subjects])
    if domain is None:
        domain = list(zip(locs.min(axis=0), locs.max(axis=0)))
    cells = _cell_index(locs, domain, bins)
    sums = np.bincount(cells, weights=ys)
    counts = np.bincount(cells)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    out, start = [], 0
    for s in subjects:
        idx = cells[start:start + s.m]
        out.append(Subject(s.id, s.locations, s.values - means[idx]))
        start += s.m
    return out


def _cell_index(locs: np.ndarray, domain, bins: int) -> np.ndarray:
    flat = np.zeros(len(locs), dtype=np.int64)
    for j, (lo, hi) in enumerate(domain):
        width = (hi - lo) or 1.0
        c = np.clip(np.floor((locs[:, j] - lo) / width * bins).astype(np.int64), 0, bins - 1)
        flat = flat * bins + c
    return flat
