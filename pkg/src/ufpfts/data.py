"""Run/size/time particle-count data: ingestion, validation, CSV output.

Counts live on a dense per-run ``(size bin, time)`` grid. Cells with no row
in the input, or with an empty / ``NA`` count, are masked.
"""
import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

OFFSET = 10.0
MISSING_TOKENS = {"", "na", "nan", "null"}


class DataError(ValueError):
    """Raised when input data cannot form a valid dataset."""


def transform_outcome(raw_count):
    """Log outcome ``ln(count + 10)``; accepts scalars or arrays."""
    raw = np.asarray(raw_count, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("particle counts must be finite")
    if np.any(raw < 0):
        raise ValueError("particle counts must be nonnegative")
    y = np.log(raw + OFFSET)
    return float(y) if y.ndim == 0 else y


def inverse_outcome(y):
    return np.exp(y) - OFFSET


class Observation(NamedTuple):
    run: int
    size_bin: int
    time: int
    raw_count: float
    window: int
    line: int = 0

    @property
    def y(self) -> float:
        return transform_outcome(self.raw_count)


@dataclass(frozen=True, eq=False)
class Run:
    id: int
    window: int
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=int)
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def t_min(self) -> int:
        return int(self.times[0])

    @property
    def t_max(self) -> int:
        return int(self.times[-1])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of runs sharing ``n_bins`` size bins.

    ``counts[i]`` is an ``(n_bins, len(runs[i].times))`` array of raw counts
    with NaN in masked cells; ``y`` and ``observed`` are derived from it.
    """

    runs: tuple
    n_bins: int
    counts: tuple
    y: tuple = field(init=False)
    observed: tuple = field(init=False)

    def __post_init__(self):
        runs = tuple(self.runs)
        counts = []
        for run, c in zip(runs, self.counts):
            c = np.array(c, dtype=float)
            if c.shape != (self.n_bins, run.times.size):
                raise DataError(f"run {run.id}: grid shape {c.shape} does not match "
                                f"({self.n_bins}, {run.times.size})")
            c.setflags(write=False)
            counts.append(c)
        if len(counts) != len(runs):
            raise DataError("one count grid is required per run")
        ys, obs = [], []
        for c in counts:
            m = ~np.isnan(c)
            yy = np.full(c.shape, np.nan)
            yy[m] = transform_outcome(c[m])
            yy.setflags(write=False)
            m.setflags(write=False)
            ys.append(yy)
            obs.append(m)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "counts", tuple(counts))
        object.__setattr__(self, "y", tuple(ys))
        object.__setattr__(self, "observed", tuple(obs))

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def windows(self) -> np.ndarray:
        return np.array([r.window for r in self.runs], dtype=int)

    def equals(self, other: "Dataset") -> bool:
        if self.n_bins != other.n_bins or self.n_runs != other.n_runs:
            return False
        for a, b, ca, cb in zip(self.runs, other.runs, self.counts, other.counts):
            if a.id != b.id or a.window != b.window:
                return False
            if not np.array_equal(a.times, b.times):
                return False
            if not np.array_equal(ca, cb, equal_nan=True):
                return False
        return True

    def observations(self):
        """Iterate over observed cells as :class:`Observation` tuples."""
        for run, c in zip(self.runs, self.counts):
            for s in range(self.n_bins):
                for k, t in enumerate(run.times):
                    if not np.isnan(c[s, k]):
                        yield Observation(run.id, s + 1, int(t), float(c[s, k]), run.window)


@dataclass(frozen=True)
class ColumnSchema:
    run: str = "run"
    window: str = "window"
    time: str = "time"
    size_bin: str = "size_bin"
    count: str = "count"


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_rejected: int = 0
    rejected: list = field(default_factory=list)   # (line number, reason)
    spans: dict = field(default_factory=dict)      # run id -> (t_min, t_max)

    def to_text(self) -> str:
        lines = [f"rows read: {self.rows_read}", f"rows rejected: {self.rows_rejected}"]
        for line, reason in self.rejected:
            lines.append(f"  line {line}: {reason}")
        for rid, (lo, hi) in sorted(self.spans.items()):
            lines.append(f"run {rid}: t in [{lo}, {hi}]")
        return "\n".join(lines)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _parse_int(text, name):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{name} {text!r} is not a number") from None
    if not math.isfinite(v) or v != int(v):
        raise ValueError(f"{name} {text!r} is not an integer")
    return int(v)


def _parse_row(row, schema, lineno):
    run = _parse_int(row[schema.run], "run")
    window = _parse_int(row[schema.window], "window")
    time = _parse_int(row[schema.time], "time")
    size_bin = _parse_int(row[schema.size_bin], "size_bin")
    text = (row[schema.count] or "").strip()
    if text.lower() in MISSING_TOKENS:
        count = math.nan
    else:
        try:
            count = float(text)
        except ValueError:
            raise ValueError(f"count {text!r} is not a number") from None
        if not math.isfinite(count) or count < 0:
            raise ValueError(f"count {text!r} must be finite and nonnegative")
    if size_bin < 1:
        raise ValueError(f"size_bin {size_bin} must be >= 1")
    return Observation(run, size_bin, time, count, window, lineno)


def load_dataset(source, schema=ColumnSchema(), n_bins=None, strict=True):
    """Read a long-format CSV into a :class:`Dataset`.

    Parameters
    ----------
    source : path, bytes, or text/binary stream
    schema : ColumnSchema
        Column names to read.
    n_bins : int, optional
        Number of size bins; inferred as the largest ``size_bin`` if omitted.
    strict : bool
        If True, any malformed row raises :class:`DataError`; otherwise such
        rows are skipped and listed in the report.

    Returns
    -------
    (Dataset, IngestReport)
    """
    fh, close = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        needed = [schema.run, schema.window, schema.time, schema.size_bin, schema.count]
        if reader.fieldnames is None:
            raise DataError("empty input: header row required")
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise DataError(f"missing required columns: {', '.join(missing)}")
        report = IngestReport()
        obs = []
        for row in reader:
            report.rows_read += 1
            lineno = reader.line_num
            try:
                if None in row.values() or None in row:
                    raise ValueError("wrong number of fields")
                obs.append(_parse_row(row, schema, lineno))
            except ValueError as exc:
                report.rows_rejected += 1
                report.rejected.append((lineno, str(exc)))
    finally:
        if close:
            fh.close()
    if strict and report.rejected:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in report.rejected)
        raise DataError(f"malformed rows: {detail}")
    return _assemble(obs, n_bins, report)


def _assemble(obs, n_bins, report):
    if not obs:
        raise DataError("no observations")
    bad_window = [o for o in obs if o.window not in (0, 1)]
    if bad_window:
        o = bad_window[0]
        raise DataError(f"line {o.line}: window label {o.window} not in {{0, 1}}")
    S = max(o.size_bin for o in obs) if n_bins is None else int(n_bins)
    over = [o for o in obs if o.size_bin > S]
    if over:
        raise DataError(f"line {over[0].line}: size_bin {over[0].size_bin} exceeds {S}")

    by_run = {}
    for o in obs:
        by_run.setdefault(o.run, []).append(o)
    runs, grids = [], []
    for rid in sorted(by_run):
        rows = by_run[rid]
        windows = {o.window for o in rows}
        if len(windows) > 1:
            raise DataError(f"run {rid}: inconsistent window labels {sorted(windows)}")
        times = np.array(sorted({o.time for o in rows}), dtype=int)
        if times[0] >= 0:
            raise DataError(f"run {rid}: no pre-engine-on (t < 0) observation")
        col = {int(t): k for k, t in enumerate(times)}
        grid = np.full((S, times.size), np.nan)
        seen = set()
        for o in rows:
            cell = (o.size_bin, o.time)
            if cell in seen:
                raise DataError(
                    f"duplicate cell (run {rid}, size_bin {o.size_bin}, time {o.time}) "
                    f"at line {o.line}")
            seen.add(cell)
            grid[o.size_bin - 1, col[o.time]] = o.raw_count
        runs.append(Run(rid, windows.pop(), times))
        grids.append(grid)
        report.spans[rid] = (int(times[0]), int(times[-1]))
    return Dataset(tuple(runs), S, tuple(grids)), report


def write_csv(ds: Dataset, dest, schema=ColumnSchema()):
    """Write ``ds`` in the long CSV format read by :func:`load_dataset`.

    Counts are written with ``repr`` so re-ingestion is exact. Masked cells
    are omitted.
    """
    close = False
    if isinstance(dest, (str, os.PathLike)):
        dest = open(dest, "w", newline="", encoding="utf-8")
        close = True
    try:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow([schema.run, schema.window, schema.time, schema.size_bin, schema.count])
        for o in ds.observations():
            w.writerow([o.run, o.window, o.time, o.size_bin, repr(o.raw_count)])
    finally:
        if close:
            dest.close()


@dataclass
class ValidationReport:
    n_bins: int
    spans: dict
    steps: dict
    missing_fraction: dict
    overall_missing_fraction: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_text(self) -> str:
        lines = [f"size bins: {self.n_bins}"]
        for rid, (lo, hi) in self.spans.items():
            lines.append(f"run {rid}: t in [{lo}, {hi}], step {self.steps[rid]}, "
                         f"missing {self.missing_fraction[rid]:.3f}")
        lines.append(f"overall missing fraction: {self.overall_missing_fraction:.3f}")
        lines.append("violations: " + ("none" if self.ok else ""))
        lines.extend(f"  {v}" for v in self.violations)
        return "\n".join(lines)


def validate(ds: Dataset) -> ValidationReport:
    """Summarize spans, time-step regularity, missingness and bin consistency."""
    spans, steps, missing, violations = {}, {}, {}, []
    total = masked = 0
    for run, c, m in zip(ds.runs, ds.counts, ds.observed):
        spans[run.id] = (run.t_min, run.t_max)
        diffs = np.unique(np.diff(run.times))
        steps[run.id] = int(diffs[0]) if diffs.size == 1 else None
        if diffs.size > 1:
            violations.append(f"run {run.id}: non-constant time step {diffs.tolist()}")
        if run.t_min >= 0:
            violations.append(f"run {run.id}: no pre-engine-on observation")
        if run.t_max < 0:
            violations.append(f"run {run.id}: no engine-on observation")
        if c.shape[0] != ds.n_bins:
            violations.append(f"run {run.id}: {c.shape[0]} size bins, expected {ds.n_bins}")
        missing[run.id] = float(1.0 - m.mean())
        total += m.size
        masked += int((~m).sum())
    return ValidationReport(ds.n_bins, spans, steps, missing,
                            masked / total if total else 0.0, violations)
