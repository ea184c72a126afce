"""Load and normalize CGM and pump CSV exports into fit-ready records.

Two schemas are supported, both UTF-8 CSV with a header row and ISO-8601
UTC timestamps:

    cgm file:   timestamp,glucose_mgdl
    pump file:  timestamp,kind,value      (kind: basal | bolus | meal)

CGM rows are sorted, deduplicated (last row wins on equal timestamps) and
resampled onto a uniform 5-minute grid anchored at the first sample. Gaps
up to 30 minutes are filled by linear interpolation; a longer gap splits
the record, the longest contiguous segment is kept, and a DataGapWarning
names every discarded span. Pump basal rows are stepwise rates holding
until the next basal row.

All times are reported in minutes since the Unix epoch so that CGM and
pump events from the same export share one axis; build_usage_record
rebases them to t=0 at the first kept CGM sample.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .twin import GlucoseTrace

CGM_GRID_MIN = 5.0
MAX_INTERPOLATED_GAP_MIN = 30.0


class IngestError(ValueError):
    """Malformed input file; message carries the offending line number."""


class DataGapWarning(UserWarning):
    pass


@dataclass
class PumpLogs:
    basal: list[tuple[float, float]] = field(default_factory=list)   # (min, U/h)
    bolus: list[tuple[float, float]] = field(default_factory=list)   # (min, U)
    meal: list[tuple[float, float]] = field(default_factory=list)    # (min, g)


@dataclass
class UsageRecord:
    """Everything the twin-fitting step consumes: a CGM trace plus the
    insulin/meal events logged by the pump over the same span, with t=0
    at the first CGM sample."""

    cgm: GlucoseTrace
    basal_log: list[tuple[float, float]] = field(default_factory=list)
    bolus_log: list[tuple[float, float]] = field(default_factory=list)
    meal_log: list[tuple[float, float]] = field(default_factory=list)

    @property
    def span_min(self) -> float:
        return self.cgm.dt * (len(self.cgm) - 1)


def _parse_timestamp(text: str, lineno: int) -> float:
    """ISO-8601 UTC timestamp to minutes since the epoch."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(raw)
    except ValueError:
        raise IngestError(f"line {lineno}: unparseable timestamp {text!r}") from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp() / 60.0


def _read_rows(path: str | Path, expected_header: list[str]):
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != expected_header:
            raise IngestError(
                f"{path}: expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}")
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return rows


def load_cgm(path: str | Path) -> GlucoseTrace:
    """Load a CGM CSV onto the uniform 5-minute grid (see module docstring)."""
    rows = _read_rows(path, ["timestamp", "glucose_mgdl"])
    points: list[tuple[float, float]] = []
    for lineno, row in rows:
        if len(row) != 2:
            raise IngestError(f"line {lineno}: expected 2 fields, got {len(row)}")
        t = _parse_timestamp(row[0], lineno)
        try:
            value = float(row[1])
        except ValueError:
            raise IngestError(f"line {lineno}: glucose is not a number: {row[1]!r}") from None
        if not (math.isfinite(value) and value >= 0):
            raise IngestError(f"line {lineno}: glucose must be finite and >= 0, got {value!r}")
        points.append((t, value))

    # sort stably, then dedup with last-wins on equal timestamps
    points.sort(key=lambda p: p[0])
    dedup: list[tuple[float, float]] = []
    for t, v in points:
        if dedup and abs(t - dedup[-1][0]) < 1e-9:
            dedup[-1] = (t, v)
        else:
            dedup.append((t, v))

    # split on gaps longer than the interpolation limit
    segments: list[list[tuple[float, float]]] = [[dedup[0]]]
    for prev, cur in zip(dedup, dedup[1:]):
        if cur[0] - prev[0] > MAX_INTERPOLATED_GAP_MIN + 1e-9:
            segments.append([cur])
        else:
            segments[-1].append(cur)
    if len(segments) > 1:
        longest = max(segments, key=lambda s: s[-1][0] - s[0][0])
        discarded = [
            f"[{s[0][0] - longest[0][0]:.1f}, {s[-1][0] - longest[0][0]:.1f}] min"
            for s in segments if s is not longest
        ]
        warnings.warn(
            f"{path}: record split by gaps > {MAX_INTERPOLATED_GAP_MIN:g} min; kept the "
            f"longest contiguous segment, discarded spans (relative to kept start): "
            + ", ".join(discarded),
            DataGapWarning, stacklevel=2)
        keep = longest
    else:
        keep = segments[0]

    times = np.array([p[0] for p in keep])
    values = np.array([p[1] for p in keep])
    t0 = times[0]
    n = int(math.floor((times[-1] - t0) / CGM_GRID_MIN + 1e-9)) + 1
    grid = t0 + CGM_GRID_MIN * np.arange(n)
    samples = np.interp(grid, times, values)
    return GlucoseTrace(t0=float(t0), dt=CGM_GRID_MIN, samples=samples)


def load_pump(path: str | Path) -> PumpLogs:
    """Load a pump CSV into per-kind, time-sorted event lists."""
    rows = _read_rows(path, ["timestamp", "kind", "value"])
    logs = PumpLogs()
    for lineno, row in rows:
        if len(row) != 3:
            raise IngestError(f"line {lineno}: expected 3 fields, got {len(row)}")
        t = _parse_timestamp(row[0], lineno)
        kind = row[1].strip().lower()
        try:
            value = float(row[2])
        except ValueError:
            raise IngestError(f"line {lineno}: value is not a number: {row[2]!r}") from None
        if not (math.isfinite(value) and value >= 0):
            raise IngestError(f"line {lineno}: value must be finite and >= 0, got {value!r}")
        if kind == "basal":
            logs.basal.append((t, value))
        elif kind == "bolus":
            logs.bolus.append((t, value))
        elif kind == "meal":
            logs.meal.append((t, value))
        else:
            raise IngestError(
                f"line {lineno}: unknown kind {row[1]!r} (expected basal, bolus or meal)")
    logs.basal.sort(key=lambda e: e[0])
    logs.bolus.sort(key=lambda e: e[0])
    logs.meal.sort(key=lambda e: e[0])
    return logs


def build_usage_record(cgm: GlucoseTrace, pump: PumpLogs) -> UsageRecord:
    """Join a CGM trace with pump logs on a shared axis rebased to t=0.

    Events outside the CGM span are dropped, except that the basal rate in
    force when the CGM starts is kept as the t=0 step.
    """
    t0, t_end = cgm.t0, cgm.end

    def rebase(events):
        return [(t - t0, v) for t, v in events if t0 - 1e-9 <= t <= t_end + 1e-9]

    basal = rebase(pump.basal)
    before = [(t, v) for t, v in pump.basal if t < t0 - 1e-9]
    if before and (not basal or basal[0][0] > 1e-9):
        basal.insert(0, (0.0, before[-1][1]))

    trace = GlucoseTrace(t0=0.0, dt=cgm.dt, samples=cgm.samples.copy(),
                         insulin_delivered=cgm.insulin_delivered.copy())
    return UsageRecord(
        cgm=trace,
        basal_log=basal,
        bolus_log=rebase(pump.bolus),
        meal_log=rebase(pump.meal),
    )


def load_usage_record(cgm_path: str | Path, pump_path: str | Path) -> UsageRecord:
    return build_usage_record(load_cgm(cgm_path), load_pump(pump_path))


def write_cgm_csv(path: str | Path, trace: GlucoseTrace, origin_min: float = 0.0) -> None:
    """Write a trace back out in the cgm schema (used for fixtures and docs)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["timestamp", "glucose_mgdl"])
        for k, value in enumerate(trace.samples):
            t_min = origin_min + trace.t0 + k * trace.dt
            stamp = datetime.fromtimestamp(t_min * 60.0, tz=timezone.utc)
            writer.writerow([stamp.isoformat().replace("+00:00", "Z"), f"{value:.6f}"])
