from __future__ import annotations

import hypothesis
import pytest

import glucotwin as gt

hypothesis.settings.register_profile("slow_ok", deadline=None)
hypothesis.settings.load_profile("slow_ok")


@pytest.fixture(scope="session")
def params() -> gt.PatientParams:
    return gt.NOMINAL_ADULT


@pytest.fixture(scope="session")
def equilibrium_plan(params) -> gt.UsagePlan:
    seg = gt.ConfigSegment(
        start=0.0,
        basal=gt.equilibrium_basal_U_per_h(params),
        isf=50.0,
        cr=10.0,
        target=120.0,
    )
    return gt.UsagePlan(segments=(seg,), horizon=1440.0)


@pytest.fixture(scope="session")
def quiet_day() -> gt.Scenario:
    return gt.Scenario(horizon=1440.0)


def exercise_hypo_pieces():
    """The run-in-an-hour what-if: CGM 85 mg/dL, 30 min of hard exercise
    starting at t=30, 4-hour horizon, settings isf=50/cr=10/target=120."""
    settings = gt.ConfigSegment(start=0.0, basal=1.0, isf=50.0, cr=10.0, target=120.0)
    scenario = gt.Scenario(horizon=240.0, exercise=((30.0, 30.0, 1.0),))
    spec = gt.Always(0.0, 240.0, gt.GE(70.0))
    return settings, scenario, spec


@pytest.fixture(scope="session")
def exercise_hypo_fixture():
    return exercise_hypo_pieces()


def synthetic_record_pieces(truth: gt.PatientParams):
    """An informative 8-hour record simulated from known parameters:
    two meals with boluses plus basal-rate variation."""
    from glucotwin.ingest import UsageRecord

    basal_steps = [(0.0, gt.equilibrium_basal_U_per_h(truth)), (240.0, 1.3), (420.0, 0.7)]
    boluses = [(60.0, 5.0), (300.0, 6.0)]
    meals = [(60.0, 50.0), (300.0, 60.0)]
    sim = gt.simulate_inputs(truth, 480.0, basal_steps, boluses, meals, dt=1.0)
    cgm = gt.resample_trace(sim.trace, 5.0)
    record = UsageRecord(
        cgm=gt.GlucoseTrace(0.0, 5.0, cgm.samples),
        basal_log=basal_steps,
        bolus_log=boluses,
        meal_log=meals,
    )
    return record


@pytest.fixture(scope="session")
def synthetic_record(params):
    return synthetic_record_pieces(params)


@pytest.fixture(scope="session")
def flat_record(params):
    """Zero insulin delivery, zero meals: glucose relaxing from 140 to basal."""
    from glucotwin.ingest import UsageRecord

    sim = gt.simulate_inputs(
        params, 480.0, basal_steps=[(0.0, 0.0)], dt=1.0,
        initial=gt.TwinState(g=140.0, x=0.0, i=params.ib, q1=0.0, q2=0.0))
    cgm = gt.resample_trace(sim.trace, 5.0)
    return UsageRecord(cgm=gt.GlucoseTrace(0.0, 5.0, cgm.samples), basal_log=[(0.0, 0.0)])


@pytest.fixture(scope="session")
def fit_init(params):
    from dataclasses import replace

    return replace(params, p1=params.p1 * 1.3, p2=params.p2 * 0.8,
                   p3=params.p3 * 1.4, n=params.n * 0.75)
