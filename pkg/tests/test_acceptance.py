"""Acceptance suite: one test per release criterion, each printing a
PASS line with the measured value next to its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines. No
network access and no UI build is required by anything here.
"""

from __future__ import annotations

import random
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

import glucotwin as gt
from glucotwin.identify import FitConfig, fit, identifiability
from glucotwin.ingest import UsageRecord
from glucotwin.llm import LlmConfig, llm_refine
from glucotwin.metrics import TIR_HI, TIR_LO, GlycemicStats, quality_score
from glucotwin.search import FeasibilityConstraints, PlanContext, local_search_refine
from tests.conftest import synthetic_record_pieces
from tests.test_llm import PROSE, SAFE_PLAN_TEXT, write_transcript
from tests.test_stl import random_formula, rho_brute, sat_brute, InsufficientHorizonError
from tests.test_twin import rk4_convergence_order


def ok(line: str) -> None:
    print(f"ACCEPTANCE {line}: PASS")


def test_equilibrium_hold(params, equilibrium_plan, quiet_day):
    start = time.perf_counter()
    trace = gt.simulate(params, equilibrium_plan, quiet_day, dt=1.0)
    elapsed = time.perf_counter() - start
    deviation = float(np.max(np.abs(trace.samples - params.gb)))
    assert deviation <= 1e-6
    assert elapsed < 1.0
    ok(f"equilibrium-hold (max |G-Gb| = {deviation:.2e} <= 1e-6, {elapsed * 1e3:.0f} ms)")


def test_integrator_order(params):
    order = rk4_convergence_order(params)
    assert 3.5 <= order <= 4.5
    ok(f"integrator-order (empirical order {order:.2f} in [3.5, 4.5])")


def test_stl_oracle_equivalence():
    rng = random.Random(20240301)
    compared = 0
    sign_matches = 0
    attempts = 0
    while compared < 1000:
        attempts += 1
        assert attempts < 10000, "formula generator starved"
        phi = random_formula(rng, rng.randint(1, 4))
        n = rng.randint(2, 50)
        dt = rng.choice([1.0, 5.0])
        samples = [float(rng.randint(40, 300)) for _ in range(n)]
        trace = gt.GlucoseTrace(t0=0.0, dt=dt, samples=np.array(samples))
        i = rng.randrange(0, n)
        try:
            expected = rho_brute(phi, samples, dt, i)
        except InsufficientHorizonError:
            with pytest.raises(gt.InsufficientHorizonError):
                gt.robustness(phi, trace, i * dt)
            continue
        got = gt.robustness(phi, trace, i * dt)
        assert got == expected, "robustness differs from brute-force min/max"
        compared += 1
        if got != 0.0:
            assert (got > 0) == sat_brute(phi, samples, dt, i), \
                "robustness sign disagrees with boolean satisfaction"
            sign_matches += 1
    ok(f"stl-oracle-equivalence ({compared} cases exact, "
       f"{sign_matches}/{sign_matches} non-zero signs agree)")


def test_identification_round_trip(params, synthetic_record, fit_init):
    start = time.perf_counter()
    clean = fit(synthetic_record, fit_init, config=FitConfig(max_nfev=150))
    rel_errors = {
        name: abs(getattr(clean.params, name) - getattr(params, name)) / getattr(params, name)
        for name in ("p1", "p2", "p3", "n")
    }
    assert clean.rmse < 0.5
    assert all(err < 0.01 for err in rel_errors.values()), rel_errors

    rng = np.random.default_rng(42)
    noisy_record = UsageRecord(
        cgm=gt.GlucoseTrace(
            0.0, 5.0,
            synthetic_record.cgm.samples + rng.normal(0.0, 2.0, len(synthetic_record.cgm))),
        basal_log=synthetic_record.basal_log,
        bolus_log=synthetic_record.bolus_log,
        meal_log=synthetic_record.meal_log,
    )
    noisy = fit(noisy_record, fit_init, config=FitConfig(max_nfev=150))
    p1_err = abs(noisy.params.p1 - params.p1) / params.p1
    elapsed = time.perf_counter() - start
    assert p1_err < 0.10
    assert elapsed < 60.0
    worst = max(rel_errors.values())
    ok(f"identification-round-trip (noiseless worst rel err {worst:.2e} < 1%, "
       f"noisy p1 err {p1_err:.3f} < 10%, {elapsed:.1f} s < 60 s)")


def test_identifiability_flags(params, synthetic_record):
    report = identifiability(params, synthetic_record)
    assert report.sensitivity["alpha_ex"] == 0.0
    assert "alpha_ex" in report.unidentifiable
    ok("identifiability-flags (alpha_ex sensitivity exactly 0 on a no-exercise record)")


def test_refinement_convergence(params, exercise_hypo_fixture):
    settings, scenario, spec = exercise_hypo_fixture
    context = PlanContext(
        params=params, scenario=scenario, settings=settings, glucose=85.0, spec=spec,
        goal="run for 30 minutes within the next hour",
        constraints=FeasibilityConstraints(max_bolus_units=5.0, max_meals=3,
                                           max_total_carbs=90.0, basal_max=3.0),
    )
    start = time.perf_counter()
    best, log = local_search_refine(context, budget=500, seed=7)
    elapsed = time.perf_counter() - start
    seed_rho = log.iterations[0].quality.robustness
    assert seed_rho < 0, "the status-quo plan must violate Always(G >= 70)"
    assert log.stop_reason == "safe"
    assert len(log.iterations) <= 500
    # safety gate: independent re-simulation of the returned plan
    _, recheck = gt.evaluate_plan(params, best, scenario, spec,
                                  initial=context.initial_state())
    assert recheck.robustness >= 0
    assert elapsed < 120.0
    ok(f"refinement-convergence (seed rho {seed_rho:.2f} < 0, safe after "
       f"{len(log.iterations)} evaluations, re-check rho {recheck.robustness:.2f} >= 0, "
       f"{elapsed:.2f} s < 120 s)")


def test_metrics_hand_count():
    trace = gt.GlucoseTrace(t0=0.0, dt=5.0, samples=np.array([60.0, 100.0, 150.0, 200.0]))
    stats = gt.glycemic_metrics(trace)
    assert stats.tir == 0.5
    assert stats.tar == 0.25
    assert TIR_LO == 70.0
    assert TIR_HI == 180.0
    # a just-meeting-the-goal day (70% in range) scores exactly its TIR weight
    goal = GlycemicStats(tir=0.7, tar=0.3, tbr=0.0, mean_glucose=140.0,
                         hypo_episodes=0, severe_hypo_episodes=0)
    assert quality_score(goal, 0.0) == pytest.approx(70.0)
    ok("metrics (tir 0.5, tar 0.25 exact; band 70-180; 70% TIR goal scores 70)")


def test_penalty_dominance():
    rng = random.Random(99)
    checked = 0
    for _ in range(500):
        rho_bad = -rng.uniform(1e-9, 400.0)
        rho_good = rng.uniform(0.0, 400.0)
        bad_stats = GlycemicStats(tir=rng.random(), tar=rng.random(), tbr=0.0,
                                  mean_glucose=rng.uniform(40, 400),
                                  hypo_episodes=rng.randrange(5),
                                  severe_hypo_episodes=rng.randrange(3))
        good_stats = GlycemicStats(tir=rng.random(), tar=rng.random(), tbr=0.0,
                                   mean_glucose=rng.uniform(40, 400),
                                   hypo_episodes=rng.randrange(5),
                                   severe_hypo_episodes=rng.randrange(3))
        assert quality_score(bad_stats, rho_bad) < quality_score(good_stats, rho_good)
        checked += 1
    ok(f"penalty-dominance ({checked} random unsafe/safe pairs strictly ordered)")


def test_llm_client_on_transcripts(params, exercise_hypo_fixture, tmp_path):
    settings, scenario, spec = exercise_hypo_fixture
    context = PlanContext(
        params=params, scenario=scenario, settings=settings, glucose=85.0, spec=spec,
        constraints=FeasibilityConstraints(max_bolus_units=5.0, max_meals=3),
    )
    path = write_transcript(tmp_path / "good.jsonl", [PROSE, SAFE_PLAN_TEXT])
    best, log, counter = llm_refine(context, LlmConfig(transcript_replay=path), budget=5)
    assert counter.irrelevant == 1
    assert log.stop_reason == "safe"

    budget = 3
    path2 = write_transcript(tmp_path / "prose.jsonl", [PROSE] * budget)
    _, log2, counter2 = llm_refine(context, LlmConfig(transcript_replay=path2),
                                   budget=budget)
    assert counter2.irrelevant == budget
    assert log2.stop_reason == "budget"
    ok(f"llm-transcripts (irrelevant=1 then safe; prose-only irrelevant={budget}"
       f"=budget, stop=budget)")


def random_valid_plan(rng: random.Random) -> gt.UsagePlan:
    n_seg = rng.randint(1, 5)
    bounds = sorted(rng.sample(range(10, 1440), n_seg))
    starts = [0.0] + [float(b) for b in bounds[:-1]]
    horizon = float(bounds[-1])
    segments = tuple(
        gt.ConfigSegment(
            start=start,
            basal=round(rng.uniform(0.0, 4.0), rng.randint(0, 4)),
            isf=round(rng.uniform(10.0, 150.0), rng.randint(0, 3)),
            cr=round(rng.uniform(2.0, 30.0), rng.randint(0, 3)),
            target=round(rng.uniform(70.0, 200.0), rng.randint(0, 2)),
        )
        for start in starts
    )
    actions = tuple(
        gt.PlanAction(
            time=round(rng.uniform(0.0, horizon), rng.randint(0, 2)),
            kind=rng.choice(["meal", "bolus"]),
            value=round(rng.uniform(0.5, 120.0), rng.randint(1, 3)),
        )
        for _ in range(rng.randint(0, 6))
    )
    suspend = round(rng.uniform(54.0, 90.0), 1) if rng.random() < 0.4 else None
    return gt.UsagePlan(segments=segments, actions=actions, horizon=horizon,
                        suspend_threshold=suspend)


def test_plan_grammar_round_trip():
    rng = random.Random(1234)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(500):
            plan = random_valid_plan(rng)
            canonical = gt.canonicalize(plan)
            assert gt.validate_plan(canonical) == [], f"plan #{k} invalid"
            reparsed = gt.parse_plan(gt.serialize_plan(plan))
            assert reparsed == canonical, f"plan #{k} failed the round trip"
    ok("plan-grammar-round-trip (500 random plans, parse(serialize(p)) == canonicalize(p))")
