"""Plan proposal and refinement by local search.

The refinement loop mirrors a planner-in-the-loop architecture: generate a
candidate plan, simulate it on the twin, score it, and feed the score back
into the next proposal until the plan is safe or the evaluation budget runs
out. The baseline planner is hill climbing over a small move set (segment
setting tweaks, pre-event snacks, bolus edits); candidates violating the
user's feasibility constraints are rejected before any simulation runs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Protocol

from .metrics import DEFAULT_WEIGHTS, PlanQuality, ScoreWeights, evaluate_plan
from .plans import ConfigSegment, PlanAction, UsagePlan, validate_plan
from .stl import Formula
from .twin import PatientParams, Scenario, TwinState

SNACK_GRAMS = (10.0, 15.0, 20.0, 25.0, 30.0)
SNACK_LEAD_MIN = (15.0, 30.0, 45.0)
BOLUS_SIZES = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
RESTART_AFTER_STALLED = 30
MOVE_DRAWS_PER_ITERATION = 50


class InfeasibleContextError(ValueError):
    """The context's own settings violate its feasibility constraints."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__(
            "no feasible seed plan: " + "; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class FeasibilityConstraints:
    """User-preference limits a candidate plan must respect. None = unconstrained."""

    basal_min: float | None = None
    basal_max: float | None = None
    isf_min: float | None = None
    isf_max: float | None = None
    cr_min: float | None = None
    cr_max: float | None = None
    target_min: float | None = None
    target_max: float | None = None
    max_bolus_units: float | None = None
    max_boluses: int | None = None
    max_meals: int | None = None
    max_total_carbs: float | None = None


@dataclass(frozen=True)
class Violation:
    field: str
    value: float
    bound: float
    where: str

    def __str__(self) -> str:
        return f"{self.field}={self.value:g} violates bound {self.bound:g} ({self.where})"


def check_feasibility(plan: UsagePlan, constraints: FeasibilityConstraints) -> list[Violation]:
    """Every constraint violation in the plan; empty list iff feasible."""
    c = constraints
    out: list[Violation] = []
    for k, seg in enumerate(plan.segments):
        where = f"segment {k} at t={seg.start:g}"
        for name, value, lo, hi in (
            ("basal", seg.basal, c.basal_min, c.basal_max),
            ("isf", seg.isf, c.isf_min, c.isf_max),
            ("cr", seg.cr, c.cr_min, c.cr_max),
            ("target", seg.target, c.target_min, c.target_max),
        ):
            if lo is not None and value < lo:
                out.append(Violation(name, value, lo, where))
            if hi is not None and value > hi:
                out.append(Violation(name, value, hi, where))
    boluses = [a for a in plan.actions if a.kind == "bolus"]
    meals = [a for a in plan.actions if a.kind == "meal"]
    if c.max_bolus_units is not None:
        for a in boluses:
            if a.value > c.max_bolus_units:
                out.append(Violation("bolus_units", a.value, c.max_bolus_units,
                                     f"bolus at t={a.time:g}"))
    if c.max_boluses is not None and len(boluses) > c.max_boluses:
        out.append(Violation("bolus_count", len(boluses), c.max_boluses, "plan actions"))
    if c.max_meals is not None and len(meals) > c.max_meals:
        out.append(Violation("meal_count", len(meals), c.max_meals, "plan actions"))
    if c.max_total_carbs is not None:
        total = sum(a.value for a in meals)
        if total > c.max_total_carbs:
            out.append(Violation("total_carbs", total, c.max_total_carbs, "plan actions"))
    return out


@dataclass(frozen=True)
class PlanContext:
    """Everything a planner needs: the twin, the situation, and the rules."""

    params: PatientParams
    scenario: Scenario
    settings: ConfigSegment
    glucose: float
    spec: Formula
    goal: str = ""
    constraints: FeasibilityConstraints = FeasibilityConstraints()

    def initial_state(self) -> TwinState:
        return TwinState(g=self.glucose, x=0.0, i=self.params.ib, q1=0.0, q2=0.0)


def seed_plan(context: PlanContext) -> UsagePlan:
    """The status-quo plan: current settings extended over the horizon."""
    seg = replace(context.settings, start=0.0)
    return UsagePlan(segments=(seg,), actions=(), horizon=context.scenario.horizon)


@dataclass
class Iteration:
    plan: UsagePlan
    quality: PlanQuality
    feedback: str
    accepted: bool = False


@dataclass
class RefinementLog:
    iterations: list[Iteration] = field(default_factory=list)
    best_index: int | None = None
    stop_reason: str = "budget"   # safe | budget | planner-failure


def feedback_text(quality: PlanQuality) -> str:
    return (
        f"score={quality.score:.3f} robustness={quality.robustness:.3f} "
        f"tir={quality.tir:.3f} tar={quality.tar:.3f} "
        f"mean_glucose={quality.mean_glucose:.1f} "
        f"hypo_episodes={quality.hypo_episodes} severe={quality.severe_hypo_episodes}"
    )


class Planner(Protocol):
    def propose(self, context: PlanContext, history: RefinementLog) -> UsagePlan: ...


def propose(planner: Planner, context: PlanContext, history: RefinementLog) -> UsagePlan:
    return planner.propose(context, history)


# -- move set ------------------------------------------------------------------

def _event_times(scenario: Scenario) -> list[float]:
    times = [t for t, _ in scenario.meals]
    times += [start for start, _, _ in scenario.exercise]
    return sorted(set(times))


def _clamp_target(value: float) -> float:
    return min(200.0, max(70.0, value))


def _neighbor(plan: UsagePlan, context: PlanContext, rng: random.Random) -> UsagePlan | None:
    """One random single-edit neighbor; None when the drawn move is a no-op."""
    moves = ["basal", "target", "isf", "cr", "add_snack", "add_bolus"]
    if any(a.kind == "meal" for a in plan.actions):
        moves.append("remove_snack")
    boluses = [a for a in plan.actions if a.kind == "bolus"]
    if boluses:
        moves += ["remove_bolus", "resize_bolus"]
    move = rng.choice(moves)
    segs = list(plan.segments)
    k = rng.randrange(len(segs))

    if move == "basal":
        factor = rng.choice((0.9, 1.1))
        segs[k] = replace(segs[k], basal=segs[k].basal * factor)
        return replace(plan, segments=tuple(segs))
    if move == "target":
        delta = rng.choice((-10.0, 10.0))
        new_target = _clamp_target(segs[k].target + delta)
        if new_target == segs[k].target:
            return None
        segs[k] = replace(segs[k], target=new_target)
        return replace(plan, segments=tuple(segs))
    if move == "isf":
        factor = rng.choice((0.9, 1.1))
        segs[k] = replace(segs[k], isf=segs[k].isf * factor)
        return replace(plan, segments=tuple(segs))
    if move == "cr":
        factor = rng.choice((0.9, 1.1))
        segs[k] = replace(segs[k], cr=segs[k].cr * factor)
        return replace(plan, segments=tuple(segs))

    if move == "add_snack":
        events = _event_times(context.scenario)
        if not events:
            return None
        event = rng.choice(events)
        lead = rng.choice(SNACK_LEAD_MIN)
        grams = rng.choice(SNACK_GRAMS)
        action = PlanAction(max(0.0, event - lead), "meal", grams)
        return _with_action(plan, action)
    if move == "remove_snack":
        snacks = [a for a in plan.actions if a.kind == "meal"]
        return _without_action(plan, rng.choice(snacks))
    if move == "add_bolus":
        events = _event_times(context.scenario) or [0.0]
        action = PlanAction(rng.choice(events), "bolus", rng.choice(BOLUS_SIZES))
        return _with_action(plan, action)
    if move == "remove_bolus":
        return _without_action(plan, rng.choice(boluses))
    if move == "resize_bolus":
        target = rng.choice(boluses)
        new_units = target.value + rng.choice((-0.5, 0.5))
        without = _without_action(plan, target)
        if new_units <= 0:
            return without
        return _with_action(without, replace(target, value=new_units))
    return None


def _with_action(plan: UsagePlan, action: PlanAction) -> UsagePlan:
    actions = tuple(sorted(plan.actions + (action,), key=lambda a: (a.time, a.kind, a.value)))
    return replace(plan, actions=actions)


def _without_action(plan: UsagePlan, action: PlanAction) -> UsagePlan:
    actions = list(plan.actions)
    actions.remove(action)
    return replace(plan, actions=tuple(actions))


def _draw_candidate(current: UsagePlan, context: PlanContext, rng: random.Random,
                    kick: int = 1) -> UsagePlan | None:
    """A feasible, structurally valid candidate, or None if none was drawn."""
    for _ in range(MOVE_DRAWS_PER_ITERATION):
        candidate = current
        ok = True
        for _ in range(kick):
            nxt = _neighbor(candidate, context, rng)
            if nxt is None:
                ok = False
                break
            candidate = nxt
        if not ok or candidate == current:
            continue
        if validate_plan(candidate):
            continue
        if check_feasibility(candidate, context.constraints):
            continue
        return candidate
    return None


class LocalSearchPlanner:
    """Baseline planner: the seed plan first, then single-move neighbors of
    the best plan seen so far."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def propose(self, context: PlanContext, history: RefinementLog) -> UsagePlan:
        if not history.iterations:
            return seed_plan(context)
        best = history.iterations[history.best_index or 0].plan
        candidate = _draw_candidate(best, context, self.rng)
        return candidate if candidate is not None else best


def local_search_refine(context: PlanContext, budget: int, seed: int = 0,
                        dt: float = 1.0, weights: ScoreWeights = DEFAULT_WEIGHTS,
                        ) -> tuple[UsagePlan, RefinementLog]:
    """Hill climbing from the status-quo plan, stopping at the first plan
    whose robustness is non-negative (confirmed by an independent
    re-simulation) or when the budget of plan evaluations is spent.

    Moves are accepted only on a strict score increase, so the accepted
    score sequence is strictly increasing; after a stall the proposals jump
    further from the incumbent (multi-edit kicks) but the acceptance rule
    never changes. Infeasible candidates are discarded before simulation
    and consume no budget. Fully deterministic for a fixed seed.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget!r}")
    rng = random.Random(seed)
    log = RefinementLog()

    start = seed_plan(context)
    seed_violations = check_feasibility(start, context.constraints)
    if seed_violations:
        raise InfeasibleContextError(seed_violations)

    def evaluate(plan: UsagePlan) -> PlanQuality:
        _, quality = evaluate_plan(context.params, plan, context.scenario, context.spec,
                                   dt=dt, initial=context.initial_state(), weights=weights)
        return quality

    def confirmed_safe(plan: UsagePlan, quality: PlanQuality) -> bool:
        if quality.robustness < 0:
            return False
        return evaluate(plan).robustness >= 0

    quality = evaluate(start)
    log.iterations.append(Iteration(start, quality, feedback_text(quality), accepted=True))
    log.best_index = 0
    if confirmed_safe(start, quality):
        log.stop_reason = "safe"
        return start, log

    current, current_q = start, quality
    evals = 1
    stalled = 0
    dry_draws = 0
    while evals < budget:
        kick = 1 if stalled < RESTART_AFTER_STALLED else rng.choice((2, 3))
        candidate = _draw_candidate(current, context, rng, kick=kick)
        if candidate is None:
            stalled += 1
            dry_draws += 1
            if dry_draws >= 20:   # constraint box leaves no move at all
                break
            continue
        dry_draws = 0
        cand_q = evaluate(candidate)
        evals += 1
        accepted = cand_q.score > current_q.score
        log.iterations.append(
            Iteration(candidate, cand_q, feedback_text(cand_q), accepted=accepted))
        if accepted:
            current, current_q = candidate, cand_q
            log.best_index = len(log.iterations) - 1
            stalled = 0
            if confirmed_safe(candidate, cand_q):
                log.stop_reason = "safe"
                return candidate, log
        else:
            stalled += 1

    log.stop_reason = "budget"
    best = log.iterations[log.best_index or 0]
    return best.plan, log
