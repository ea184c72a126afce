"""Glycemic metrics and the scalar plan-quality score used as planner feedback.

Time in range uses the consensus 70-180 mg/dL band; an episode of
hypoglycemia (severe hypoglycemia) is a maximal run of samples below
70 (54) mg/dL sustained for at least 15 minutes, where a run of k samples
spans (k-1)*dt minutes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plans import UsagePlan
from .stl import Formula, robustness
from .twin import GlucoseTrace, PatientParams, Scenario, TwinState, simulate

TIR_LO = 70.0
TIR_HI = 180.0
HYPO_THRESHOLD = 70.0
SEVERE_HYPO_THRESHOLD = 54.0
EPISODE_MIN_DURATION = 15.0


class InvalidBandError(ValueError):
    pass


@dataclass(frozen=True)
class GlycemicStats:
    tir: float
    tar: float
    tbr: float
    mean_glucose: float
    hypo_episodes: int
    severe_hypo_episodes: int


@dataclass(frozen=True)
class PlanQuality:
    """Metric bundle for one simulated plan plus the scalar score."""

    robustness: float
    tir: float
    tar: float
    mean_glucose: float
    hypo_episodes: int
    severe_hypo_episodes: int
    score: float

    def as_dict(self) -> dict:
        return {
            "robustness": self.robustness,
            "tir": self.tir,
            "tar": self.tar,
            "mean_glucose": self.mean_glucose,
            "hypo_episodes": self.hypo_episodes,
            "severe_hypo_episodes": self.severe_hypo_episodes,
            "score": self.score,
        }


def count_episodes(samples: np.ndarray, dt: float, threshold: float,
                   min_duration: float = EPISODE_MIN_DURATION) -> int:
    """Maximal runs below threshold spanning at least min_duration minutes."""
    below = samples < threshold
    count = 0
    run = 0
    for flag in below:
        if flag:
            run += 1
        else:
            if run and (run - 1) * dt >= min_duration:
                count += 1
            run = 0
    if run and (run - 1) * dt >= min_duration:
        count += 1
    return count


def glycemic_metrics(trace: GlucoseTrace, lo: float = TIR_LO, hi: float = TIR_HI) -> GlycemicStats:
    if lo >= hi:
        raise InvalidBandError(f"band lower bound {lo!r} must be below upper bound {hi!r}")
    g = trace.samples
    tir = float(np.mean((g >= lo) & (g <= hi)))
    tar = float(np.mean(g > hi))
    tbr = float(np.mean(g < lo))
    return GlycemicStats(
        tir=tir,
        tar=tar,
        tbr=tbr,
        mean_glucose=float(np.mean(g)),
        hypo_episodes=count_episodes(g, trace.dt, HYPO_THRESHOLD),
        severe_hypo_episodes=count_episodes(g, trace.dt, SEVERE_HYPO_THRESHOLD),
    )


@dataclass(frozen=True)
class ScoreWeights:
    """Score = w_tir*tir + w_rho*min(rho, rho_cap) for safe plans; any unsafe
    plan scores penalty*rho, which is strictly below every safe score."""

    w_tir: float = 100.0
    w_rho: float = 1.0
    rho_cap: float = 50.0
    penalty: float = 100.0


DEFAULT_WEIGHTS = ScoreWeights()


def quality_score(stats: GlycemicStats, rho: float,
                  weights: ScoreWeights = DEFAULT_WEIGHTS) -> float:
    if rho < 0:
        return weights.penalty * rho
    return weights.w_tir * stats.tir + weights.w_rho * min(rho, weights.rho_cap)


def plan_quality(stats: GlycemicStats, rho: float,
                 weights: ScoreWeights = DEFAULT_WEIGHTS) -> PlanQuality:
    return PlanQuality(
        robustness=rho,
        tir=stats.tir,
        tar=stats.tar,
        mean_glucose=stats.mean_glucose,
        hypo_episodes=stats.hypo_episodes,
        severe_hypo_episodes=stats.severe_hypo_episodes,
        score=quality_score(stats, rho, weights),
    )


def evaluate_plan(params: PatientParams, plan: UsagePlan, scenario: Scenario,
                  phi: Formula, dt: float = 1.0, initial: TwinState | None = None,
                  weights: ScoreWeights = DEFAULT_WEIGHTS) -> tuple[GlucoseTrace, PlanQuality]:
    """Simulate the plan and bundle robustness, glycemic stats and score."""
    trace = simulate(params, plan, scenario, dt=dt, initial=initial)
    rho = robustness(phi, trace, t=trace.t0)
    stats = glycemic_metrics(trace)
    return trace, plan_quality(stats, rho, weights)
