from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

import glucotwin as gt
from glucotwin.metrics import (
    DEFAULT_WEIGHTS, GlycemicStats, InvalidBandError, ScoreWeights,
    count_episodes, glycemic_metrics, plan_quality, quality_score,
)


def trace(samples, dt=5.0):
    return gt.GlucoseTrace(t0=0.0, dt=dt, samples=np.asarray(samples, dtype=float))


def stats_with(tir=0.0):
    return GlycemicStats(tir=tir, tar=0.0, tbr=0.0, mean_glucose=100.0,
                         hypo_episodes=0, severe_hypo_episodes=0)


class TestGlycemicMetrics:
    def test_hand_counted_band_fractions(self):
        m = glycemic_metrics(trace([60.0, 100.0, 150.0, 200.0]), 70.0, 180.0)
        assert m.tir == 0.5
        assert m.tar == 0.25
        assert m.tbr == 0.25

    def test_constant_in_range_trace(self):
        m = glycemic_metrics(trace([100.0] * 12))
        assert m.tir == 1.0
        assert m.tar == 0.0
        assert m.hypo_episodes == 0
        assert m.severe_hypo_episodes == 0
        assert m.mean_glucose == 100.0

    def test_band_edges_count_in_range(self):
        m = glycemic_metrics(trace([70.0, 180.0]))
        assert m.tir == 1.0

    def test_fractions_sum_to_one(self):
        m = glycemic_metrics(trace([60, 70, 100, 180, 181, 300, 54, 90]))
        assert m.tir + m.tar + m.tbr == pytest.approx(1.0)

    @given(st.lists(st.floats(30, 400), min_size=1, max_size=60))
    def test_fractions_sum_to_one_property(self, samples):
        m = glycemic_metrics(trace(samples))
        assert m.tir + m.tar + m.tbr == pytest.approx(1.0)

    def test_invalid_band(self):
        with pytest.raises(InvalidBandError):
            glycemic_metrics(trace([100.0]), 180.0, 70.0)


class TestEpisodes:
    def test_ten_minutes_below_is_not_an_episode(self):
        # 3 samples at dt=5 span 10 minutes: too short
        m = glycemic_metrics(trace([100, 65, 65, 65, 100], dt=5.0))
        assert m.hypo_episodes == 0

    def test_fifteen_minutes_below_is_an_episode(self):
        m = glycemic_metrics(trace([100, 65, 65, 65, 65, 100], dt=5.0))
        assert m.hypo_episodes == 1
        assert m.severe_hypo_episodes == 0

    def test_severe_threshold(self):
        m = glycemic_metrics(trace([100, 53, 53, 53, 53, 100], dt=5.0))
        assert m.hypo_episodes == 1
        assert m.severe_hypo_episodes == 1

    def test_distinct_episodes_counted_separately(self):
        samples = [65] * 4 + [100] + [65] * 4 + [100]
        assert count_episodes(np.array(samples, dtype=float), 5.0, 70.0) == 2

    def test_run_at_trace_end_counted(self):
        assert count_episodes(np.array([100.0] + [65.0] * 4), 5.0, 70.0) == 1

    def test_boundary_value_not_below(self):
        assert count_episodes(np.array([70.0] * 10), 5.0, 70.0) == 0


class TestQualityScore:
    def test_negative_robustness_penalty(self):
        assert quality_score(stats_with(tir=1.0), -5.0) == -500.0

    def test_zero_robustness_scores_tir(self):
        assert quality_score(stats_with(tir=0.7), 0.0) == pytest.approx(70.0)

    def test_robustness_capped(self):
        assert quality_score(stats_with(tir=1.0), 80.0) == pytest.approx(150.0)

    def test_monotone_in_rho(self):
        s = stats_with(tir=0.5)
        rhos = [-20.0, -1.0, 0.0, 10.0, 50.0, 80.0]
        scores = [quality_score(s, r) for r in rhos]
        assert scores == sorted(scores)

    @given(
        rho_neg=st.floats(min_value=-500.0, max_value=-1e-9),
        rho_pos=st.floats(min_value=0.0, max_value=500.0),
        tir_a=st.floats(0, 1),
        tir_b=st.floats(0, 1),
    )
    def test_penalty_dominance(self, rho_neg, rho_pos, tir_a, tir_b):
        unsafe = quality_score(stats_with(tir=tir_a), rho_neg)
        safe = quality_score(stats_with(tir=tir_b), rho_pos)
        assert unsafe < safe

    def test_custom_weights(self):
        w = ScoreWeights(w_tir=10.0, w_rho=2.0, rho_cap=5.0, penalty=1000.0)
        assert quality_score(stats_with(tir=1.0), 20.0, w) == pytest.approx(20.0)
        assert quality_score(stats_with(tir=1.0), -1.0, w) == -1000.0

    def test_plan_quality_bundles_fields(self):
        q = plan_quality(glycemic_metrics(trace([100.0] * 4)), 30.0)
        assert q.robustness == 30.0
        assert q.tir == 1.0
        assert q.score == quality_score(stats_with(tir=1.0), 30.0)
        assert set(q.as_dict()) == {
            "robustness", "tir", "tar", "mean_glucose",
            "hypo_episodes", "severe_hypo_episodes", "score",
        }


class TestEvaluatePlan:
    def test_equilibrium_evaluation(self, params, equilibrium_plan, quiet_day):
        phi = gt.parse_formula("always 0 1440 (ge 70)")
        trace_out, quality = gt.evaluate_plan(params, equilibrium_plan, quiet_day, phi)
        assert quality.robustness == pytest.approx(params.gb - 70.0)
        assert quality.tir == 1.0
        assert quality.score > 0

    def test_exercise_fixture_is_unsafe(self, params, exercise_hypo_fixture):
        settings, scenario, phi = exercise_hypo_fixture
        plan = gt.UsagePlan(segments=(settings,), horizon=scenario.horizon)
        init = gt.TwinState(g=85.0, x=0.0, i=params.ib, q1=0.0, q2=0.0)
        _, quality = gt.evaluate_plan(params, plan, scenario, phi, initial=init)
        assert quality.robustness < 0
        assert quality.score < 0
