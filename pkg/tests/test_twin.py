from __future__ import annotations

import math

import numpy as np
import pytest

import glucotwin as gt
from glucotwin.twin import DivergenceError, InvalidStateError


def make_params(**overrides) -> gt.PatientParams:
    from dataclasses import replace

    return replace(gt.NOMINAL_ADULT, **overrides)


class TestDerivatives:
    def test_equilibrium_is_fixed_point(self, params):
        state = gt.equilibrium_state(params)
        d = gt.derivatives(state, params, gt.equilibrium_basal_uU_per_min(params), 0.0)
        assert d == (0.0, 0.0, 0.0, 0.0, 0.0)

    def test_glucose_derivative_hand_value(self):
        # dG/dt = -(0.03 + 0.01)*150 + 0.03*100 = -3.0 with empty gut
        p = make_params(p1=0.03, gb=100.0)
        state = gt.TwinState(g=150.0, x=0.01, i=p.ib, q1=0.0, q2=0.0)
        d = gt.derivatives(state, p, gt.equilibrium_basal_uU_per_min(p), 0.0)
        assert d.dg == pytest.approx(-3.0, abs=1e-12)

    def test_action_derivative_hand_value(self):
        # dX/dt = -0.02*0.01 + 1e-5*(25-15) = -1e-4
        p = make_params(p2=0.02, p3=1e-5, ib=15.0)
        state = gt.TwinState(g=100.0, x=0.01, i=25.0, q1=0.0, q2=0.0)
        d = gt.derivatives(state, p, 0.0, 0.0)
        assert d.dx == pytest.approx(-1.0e-4, rel=1e-12)

    def test_non_finite_input_rejected(self, params):
        state = gt.TwinState(g=float("nan"), x=0.0, i=15.0, q1=0.0, q2=0.0)
        with pytest.raises(InvalidStateError):
            gt.derivatives(state, params, 0.0, 0.0)
        ok = gt.equilibrium_state(params)
        with pytest.raises(InvalidStateError):
            gt.derivatives(ok, params, float("inf"), 0.0)
        with pytest.raises(InvalidStateError):
            gt.derivatives(ok, params, -1.0, 0.0)


class TestStep:
    def test_fixed_point_preserved(self, params):
        state = gt.equilibrium_state(params)
        u = gt.equilibrium_basal_uU_per_min(params)
        nxt = gt.step(state, params, u, 0.0, 1.0)
        assert (nxt.g, nxt.x, nxt.i, nxt.q1, nxt.q2) == (
            state.g, state.x, state.i, state.q1, state.q2)
        assert nxt.t == state.t + 1.0

    def test_rk4_matches_taylor_expansion_on_linear_decay(self):
        # With X=0, I=Ib held by equilibrium basal and empty gut, the glucose
        # deviation D = G - Gb obeys D' = -p1*D. One RK4 step multiplies D by
        # 1 - h + h^2/2 - h^3/6 + h^4/24 with h = p1*dt; p1=0.1, dt=1, D0=100
        # gives D1 = 90.48375.
        p = make_params(p1=0.1, gb=100.0)
        state = gt.TwinState(g=200.0, x=0.0, i=p.ib, q1=0.0, q2=0.0)
        nxt = gt.step(state, p, gt.equilibrium_basal_uU_per_min(p), 0.0, 1.0)
        assert nxt.g == pytest.approx(190.48375, abs=1e-9)

    def test_dt_bounds(self, params):
        state = gt.equilibrium_state(params)
        for bad in (0.0, -1.0, 5.0001):
            with pytest.raises(ValueError):
                gt.step(state, params, 0.0, 0.0, bad)

    def test_divergence_names_component(self, params):
        state = gt.TwinState(g=100.0, x=0.0, i=1e308, q1=0.0, q2=0.0)
        with pytest.raises(DivergenceError) as err:
            s = state
            for _ in range(50):
                s = gt.step(s, params, 1e308, 0.0, 5.0)
        assert err.value.component in ("G", "X", "I", "Q1", "Q2")
        assert err.value.component in str(err.value)

    def test_step_composes_derivatives(self, params):
        # step() must be exactly the classical RK4 built from derivatives()
        import random

        rng = random.Random(3)
        for _ in range(50):
            s = gt.TwinState(
                g=rng.uniform(50, 300), x=rng.uniform(0, 0.05),
                i=rng.uniform(1, 120), q1=rng.uniform(0, 60000),
                q2=rng.uniform(0, 60000), t=0.0)
            u = rng.uniform(0, 40000)
            inten = rng.uniform(0, 1)
            dt = rng.choice([0.5, 1.0, 2.0])

            def rhs(st):
                return gt.derivatives(st, params, u, inten)

            def shift(st, h, d):
                return gt.TwinState(
                    g=st.g + h * d.dg, x=st.x + h * d.dx, i=st.i + h * d.di,
                    q1=st.q1 + h * d.dq1, q2=st.q2 + h * d.dq2, t=st.t)

            k1 = rhs(s)
            k2 = rhs(shift(s, 0.5 * dt, k1))
            k3 = rhs(shift(s, 0.5 * dt, k2))
            k4 = rhs(shift(s, dt, k3))
            f = dt / 6.0
            expect = gt.TwinState(
                g=s.g + f * (k1.dg + 2.0 * (k2.dg + k3.dg) + k4.dg),
                x=max(0.0, s.x + f * (k1.dx + 2.0 * (k2.dx + k3.dx) + k4.dx)),
                i=s.i + f * (k1.di + 2.0 * (k2.di + k3.di) + k4.di),
                q1=s.q1 + f * (k1.dq1 + 2.0 * (k2.dq1 + k3.dq1) + k4.dq1),
                q2=s.q2 + f * (k1.dq2 + 2.0 * (k2.dq2 + k3.dq2) + k4.dq2),
                t=s.t + dt)
            got = gt.step(s, params, u, inten, dt)
            assert got == expect


def rk4_convergence_order(params) -> float:
    """Empirical order on the full model against a dt=1/64 reference.

    Events sit at t=16 so they land on every grid in {4, 2, 1, 0.5, 1/64}.
    """
    basal = gt.equilibrium_basal_U_per_h(params)
    kwargs = dict(
        horizon=240.0,
        basal_steps=[(0.0, basal)],
        boluses=[(16.0, 4.0)],
        meals=[(16.0, 60.0)],
    )
    ref = gt.simulate_inputs(params, dt=1.0 / 64.0, **kwargs).trace
    errs = []
    dts = [4.0, 2.0, 1.0, 0.5]
    for dt in dts:
        tr = gt.simulate_inputs(params, dt=dt, **kwargs).trace
        stride_ref = int(round(dt / (1.0 / 64.0)))
        err = np.max(np.abs(tr.samples - ref.samples[::stride_ref]))
        errs.append(err)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    return float(slope)


class TestSimulate:
    def test_equilibrium_hold_24h(self, params, equilibrium_plan, quiet_day):
        trace = gt.simulate(params, equilibrium_plan, quiet_day, dt=1.0)
        assert len(trace) == 1441
        assert np.max(np.abs(trace.samples - params.gb)) <= 1e-6

    def test_rk4_order_on_full_model(self, params):
        order = rk4_convergence_order(params)
        assert 3.5 <= order <= 4.5

    def test_unbolused_meal_shape(self, params, equilibrium_plan):
        sc = gt.Scenario(horizon=600.0, meals=((60.0, 50.0),))
        trace = gt.simulate(params, equilibrium_plan, sc)
        g = trace.samples
        peak = int(np.argmax(g))
        assert g[peak] > params.gb + 20
        assert trace.times()[peak] > 60.0
        # single interior maximum: rises to the peak, then decays toward Gb
        rising = np.diff(g[61:peak + 1])
        falling = np.diff(g[peak:])
        assert np.all(rising >= -1e-9)
        assert np.all(falling <= 1e-9)
        assert abs(g[-1] - params.gb) < abs(g[peak] - params.gb)

    def test_exercise_depresses_glucose(self, params, equilibrium_plan):
        quiet = gt.Scenario(horizon=300.0)
        active = gt.Scenario(horizon=300.0, exercise=((60.0, 45.0, 1.0),))
        base = gt.simulate(params, equilibrium_plan, quiet).samples
        exer = gt.simulate(params, equilibrium_plan, active).samples
        assert np.array_equal(base[:61], exer[:61])
        assert np.all(exer[61:] < base[61:])

    def test_carb_mass_conservation(self, params, equilibrium_plan):
        carbs = 80.0
        sc = gt.Scenario(horizon=720.0, meals=((30.0, carbs),))
        res = gt.simulate_full(params, equilibrium_plan, sc, dt=1.0)
        absorbed = np.trapezoid(params.k_abs * res.q2, dx=1.0)
        total = absorbed + res.q1[-1] + res.q2[-1]
        assert total == pytest.approx(1000.0 * carbs, rel=1e-3)

    def test_scaled_boluses_lower_trace_pointwise(self, params):
        seg = gt.ConfigSegment(0.0, gt.equilibrium_basal_U_per_h(params), 50.0, 10.0, 120.0)
        sc = gt.Scenario(horizon=480.0, meals=((60.0, 50.0),))
        base_actions = (gt.PlanAction(60.0, "bolus", 4.0),)
        scaled_actions = (gt.PlanAction(60.0, "bolus", 6.0),)
        p_base = gt.UsagePlan(segments=(seg,), actions=base_actions, horizon=480.0)
        p_scaled = gt.UsagePlan(segments=(seg,), actions=scaled_actions, horizon=480.0)
        g_base = gt.simulate(params, p_base, sc).samples
        g_scaled = gt.simulate(params, p_scaled, sc).samples
        assert np.all(g_scaled[61:] <= g_base[61:] + 1e-12)

    def test_determinism_bit_identical(self, params, equilibrium_plan):
        sc = gt.Scenario(horizon=480.0, meals=((60.0, 50.0),), exercise=((200.0, 30.0, 0.5),))
        a = gt.simulate(params, equilibrium_plan, sc)
        b = gt.simulate(params, equilibrium_plan, sc)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.insulin_delivered, b.insulin_delivered)

    def test_plan_must_cover_scenario(self, params):
        seg = gt.ConfigSegment(0.0, 1.0, 50.0, 10.0, 120.0)
        plan = gt.UsagePlan(segments=(seg,), horizon=120.0)
        with pytest.raises(gt.PlanCoverageError):
            gt.simulate(params, plan, gt.Scenario(horizon=240.0))

    def test_suspend_blocks_basal_below_threshold(self, params):
        seg = gt.ConfigSegment(0.0, 1.0, 50.0, 10.0, 120.0)
        plan = gt.UsagePlan(segments=(seg,), horizon=240.0, suspend_threshold=90.0)
        init = gt.TwinState(g=80.0, x=0.0, i=params.ib, q1=0.0, q2=0.0)
        trace = gt.simulate(params, plan, gt.Scenario(horizon=240.0), initial=init)
        below = trace.samples[:-1] < 90.0
        assert below.any()
        assert np.all(trace.insulin_delivered[:-1][below] == 0.0)


class TestTraceHelpers:
    def test_resample_to_cgm_cadence(self, params, equilibrium_plan):
        sc = gt.Scenario(horizon=60.0, meals=((10.0, 30.0),))
        fine = gt.simulate(params, equilibrium_plan, sc, dt=1.0)
        coarse = gt.resample_trace(fine, 5.0)
        assert coarse.dt == 5.0
        assert len(coarse) == 13
        assert np.array_equal(coarse.samples, fine.samples[::5])
        assert coarse.insulin_delivered.sum() == pytest.approx(fine.insulin_delivered.sum())

    def test_resample_requires_integer_multiple(self, params, equilibrium_plan, quiet_day):
        trace = gt.simulate(params, equilibrium_plan, quiet_day, dt=1.0)
        with pytest.raises(ValueError):
            gt.resample_trace(trace, 2.5)

    def test_trace_rejects_non_finite(self):
        with pytest.raises(ValueError):
            gt.GlucoseTrace(t0=0.0, dt=5.0, samples=np.array([100.0, float("nan")]))
