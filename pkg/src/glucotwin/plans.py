"""Usage plans: AID configuration segments, actions, controller semantics,
and the line-oriented plan text format.

A plan is a contiguous sequence of configuration segments covering
[0, horizon] plus discrete actions (announced meals and manual boluses).
The text format is one record per line:

    segment <start_min> <end_min> basal=<U/h> isf=<mg/dL-per-U> cr=<g-per-U> target=<mg/dL>
    meal <time_min> carbs=<g>
    bolus <time_min> units=<U>
    suspend <mg/dL>

Lines beginning with '#' are comments. parse/serialize round-trip: parsing
a serialized plan reproduces its canonical form exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace


class PlanValidationError(ValueError):
    """Plan text or structure violates the format; carries every violation."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid plan: " + "; ".join(self.violations))


class PlanCoverageError(LookupError):
    """A queried time is not covered by any plan segment."""


class PlanLintWarning(UserWarning):
    """Suspicious but accepted plan values (e.g. CR far outside 2-30 g/U)."""


@dataclass(frozen=True)
class ConfigSegment:
    """One span of AID settings; active from `start` until the next segment."""

    start: float    # min
    basal: float    # U/h
    isf: float      # mg/dL per U
    cr: float       # g per U
    target: float   # mg/dL


@dataclass(frozen=True)
class PlanAction:
    """Discrete plan event: an announced meal ("meal", grams) or a manual
    bolus ("bolus", units)."""

    time: float
    kind: str       # "meal" | "bolus"
    value: float


@dataclass(frozen=True)
class UsagePlan:
    segments: tuple[ConfigSegment, ...]
    actions: tuple[PlanAction, ...] = ()
    horizon: float = 0.0
    suspend_threshold: float | None = None

    def segment_at(self, t: float) -> ConfigSegment:
        if not self.segments:
            raise PlanCoverageError("plan has no segments")
        if t < self.segments[0].start - 1e-9 or t > self.horizon + 1e-9:
            raise PlanCoverageError(
                f"t={t:g} outside plan coverage [{self.segments[0].start:g}, {self.horizon:g}]")
        active = self.segments[0]
        for seg in self.segments[1:]:
            if seg.start <= t + 1e-9:
                active = seg
            else:
                break
        return active


def validate_plan(plan: UsagePlan) -> list[str]:
    """Structural checks; returns every violation found (empty list = valid)."""
    problems = []
    if not plan.segments:
        return ["plan must contain at least one segment"]
    if abs(plan.segments[0].start) > 1e-9:
        problems.append(f"first segment starts at {plan.segments[0].start:g}, expected 0")
    prev_start = None
    for seg in plan.segments:
        if prev_start is not None and seg.start <= prev_start:
            problems.append(f"segments not strictly ordered at start={seg.start:g}")
        prev_start = seg.start
        if seg.basal < 0:
            problems.append(f"segment at {seg.start:g}: basal must be >= 0, got {seg.basal:g}")
        if not seg.isf > 0:
            problems.append(f"segment at {seg.start:g}: isf must be > 0, got {seg.isf:g}")
        if not seg.cr > 0:
            problems.append(f"segment at {seg.start:g}: cr must be > 0, got {seg.cr:g}")
        if not (70 <= seg.target <= 200):
            problems.append(
                f"segment at {seg.start:g}: target must be in [70, 200], got {seg.target:g}")
    if not plan.horizon > plan.segments[-1].start:
        problems.append(
            f"horizon {plan.horizon:g} must exceed the last segment start "
            f"{plan.segments[-1].start:g}")
    times = [a.time for a in plan.actions]
    if times != sorted(times):
        problems.append("actions must be sorted by time")
    for a in plan.actions:
        if a.kind not in ("meal", "bolus"):
            problems.append(f"action at {a.time:g}: unknown kind {a.kind!r}")
        if not a.value > 0:
            problems.append(f"action at {a.time:g}: value must be > 0, got {a.value:g}")
        if not (0 <= a.time <= plan.horizon):
            problems.append(f"action at {a.time:g} outside plan horizon [0, {plan.horizon:g}]")
    if plan.suspend_threshold is not None and not plan.suspend_threshold > 0:
        problems.append(f"suspend threshold must be > 0, got {plan.suspend_threshold:g}")
    return problems


def canonicalize(plan: UsagePlan) -> UsagePlan:
    """Sorted-segment, sorted-action normal form (serialize emits this)."""
    segments = tuple(sorted(plan.segments, key=lambda s: s.start))
    actions = tuple(sorted(plan.actions, key=lambda a: (a.time, a.kind, a.value)))
    return replace(plan, segments=segments, actions=actions)


def bolus_dose(carbs: float, glucose: float, segment: ConfigSegment) -> float:
    """Standard bolus calculator: carb cover plus above-target correction."""
    if carbs < 0:
        raise ValueError(f"carbs must be >= 0, got {carbs!r}")
    return carbs / segment.cr + max(0.0, (glucose - segment.target) / segment.isf)


def insulin_input(plan: UsagePlan, t: float, glucose: float) -> tuple[float, tuple[float, ...]]:
    """Pump command at time t: (basal rate in uU/min, bolus events in U).

    Basal comes from the active segment (U/h scaled by 1e6/60) and is
    forced to zero while glucose is below the suspend threshold. Actions
    whose time equals t contribute boluses: announced meals through the
    bolus calculator at the current glucose, manual boluses verbatim.
    """
    seg = plan.segment_at(t)
    rate = seg.basal * (1e6 / 60.0)
    if plan.suspend_threshold is not None and glucose < plan.suspend_threshold:
        rate = 0.0
    boluses = []
    for action in plan.actions:
        if abs(action.time - t) <= 1e-9:
            if action.kind == "meal":
                boluses.append(bolus_dose(action.value, glucose, seg))
            else:
                boluses.append(action.value)
    return rate, tuple(boluses)


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def serialize_plan(plan: UsagePlan) -> str:
    plan = canonicalize(plan)
    lines = []
    segs = plan.segments
    for k, seg in enumerate(segs):
        end = segs[k + 1].start if k + 1 < len(segs) else plan.horizon
        lines.append(
            f"segment {_fmt(seg.start)} {_fmt(end)} basal={_fmt(seg.basal)} "
            f"isf={_fmt(seg.isf)} cr={_fmt(seg.cr)} target={_fmt(seg.target)}")
    if plan.suspend_threshold is not None:
        lines.append(f"suspend {_fmt(plan.suspend_threshold)}")
    for a in plan.actions:
        if a.kind == "meal":
            lines.append(f"meal {_fmt(a.time)} carbs={_fmt(a.value)}")
        else:
            lines.append(f"bolus {_fmt(a.time)} units={_fmt(a.value)}")
    return "\n".join(lines) + "\n"


def _parse_kv(token: str, key: str, where: str, problems: list[str]) -> float | None:
    prefix = key + "="
    if not token.startswith(prefix):
        problems.append(f"{where}: expected {key}=<number>, got {token!r}")
        return None
    try:
        return float(token[len(prefix):])
    except ValueError:
        problems.append(f"{where}: {key} is not a number: {token!r}")
        return None


def parse_plan(text: str) -> UsagePlan:
    """Parse plan text, reporting every violation at once on failure."""
    problems: list[str] = []
    raw_segments: list[tuple[float, float, ConfigSegment]] = []
    actions: list[PlanAction] = []
    suspend: float | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"line {lineno}"
        tokens = line.split()
        kind = tokens[0]
        if kind == "segment":
            if len(tokens) != 7:
                problems.append(f"{where}: segment needs start, end and 4 settings")
                continue
            try:
                start, end = float(tokens[1]), float(tokens[2])
            except ValueError:
                problems.append(f"{where}: segment start/end are not numbers")
                continue
            basal = _parse_kv(tokens[3], "basal", where, problems)
            isf = _parse_kv(tokens[4], "isf", where, problems)
            cr = _parse_kv(tokens[5], "cr", where, problems)
            target = _parse_kv(tokens[6], "target", where, problems)
            if None in (basal, isf, cr, target):
                continue
            if end <= start:
                problems.append(f"{where}: segment end {end:g} must exceed start {start:g}")
                continue
            if cr > 0 and not (2 <= cr <= 30):
                warnings.warn(
                    f"{where}: cr={cr:g} g/U is outside the typical clinical range [2, 30]",
                    PlanLintWarning, stacklevel=2)
            raw_segments.append((start, end, ConfigSegment(start, basal, isf, cr, target)))
        elif kind == "meal":
            if len(tokens) != 3:
                problems.append(f"{where}: meal needs time and carbs=<g>")
                continue
            try:
                t = float(tokens[1])
            except ValueError:
                problems.append(f"{where}: meal time is not a number")
                continue
            carbs = _parse_kv(tokens[2], "carbs", where, problems)
            if carbs is not None:
                actions.append(PlanAction(t, "meal", carbs))
        elif kind == "bolus":
            if len(tokens) != 3:
                problems.append(f"{where}: bolus needs time and units=<U>")
                continue
            try:
                t = float(tokens[1])
            except ValueError:
                problems.append(f"{where}: bolus time is not a number")
                continue
            units = _parse_kv(tokens[2], "units", where, problems)
            if units is not None:
                actions.append(PlanAction(t, "bolus", units))
        elif kind == "suspend":
            if len(tokens) != 2:
                problems.append(f"{where}: suspend needs a single threshold")
                continue
            if suspend is not None:
                problems.append(f"{where}: suspend given more than once")
                continue
            try:
                suspend = float(tokens[1])
            except ValueError:
                problems.append(f"{where}: suspend threshold is not a number")
        else:
            problems.append(f"{where}: unknown record {kind!r}")

    if not raw_segments and not problems:
        problems.append("plan must contain at least one segment")
    raw_segments.sort(key=lambda r: r[0])
    for (s0, e0, _), (s1, e1, _) in zip(raw_segments, raw_segments[1:]):
        if s1 < e0 - 1e-9:
            problems.append(f"segments overlap on [{s1:g}, {min(e0, e1):g}]")
        elif s1 > e0 + 1e-9:
            problems.append(f"coverage gap between segments on [{e0:g}, {s1:g}]")

    plan = None
    if raw_segments:
        plan = UsagePlan(
            segments=tuple(r[2] for r in raw_segments),
            actions=tuple(sorted(actions, key=lambda a: (a.time, a.kind, a.value))),
            horizon=raw_segments[-1][1],
            suspend_threshold=suspend,
        )
        problems.extend(validate_plan(plan))
    if problems:
        raise PlanValidationError(problems)
    return plan
