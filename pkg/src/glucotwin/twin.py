"""Extended Bergman minimal model: parameters, state, and forward simulation.

The model couples the classic three-state minimal model (plasma glucose G,
remote insulin action X, plasma insulin I) with a two-compartment gut
(Q1 gastric, Q2 absorbing) and a multiplicative exercise uptake boost:

    dG/dt  = -(p1*(1 + alpha_ex*e(t)) + X)*G + p1*Gb + f_bio*k_abs*Q2/Vg
    dX/dt  = -p2*X + p3*(I - Ib)
    dI/dt  = -n*I + u/Vi
    dQ1/dt = -k_emp*Q1
    dQ2/dt =  k_emp*Q1 - k_abs*Q2

u is the insulin infusion in uU/min and e(t) the effective exercise
intensity, which holds at the scheduled intensity during an interval and
then decays linearly to zero over a 60-minute washout (exercise is known to
depress glucose for a while after it stops). Meals enter as impulses on Q1
(mg), boluses as impulses on I (uU/mL). The steady state with G=Gb, X=0,
I=Ib, empty gut is held exactly by the basal infusion u = n*Ib*Vi.

Everything here is a pure function over value types; a simulation is
deterministic and bit-identical across repeated calls with equal inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .plans import UsagePlan, PlanCoverageError, insulin_input

U_PER_HOUR_TO_UU_PER_MIN = 1e6 / 60.0
UU_PER_UNIT = 1e6
MG_PER_G = 1000.0
EXERCISE_WASHOUT_MIN = 60.0

PARAM_NAMES = (
    "p1", "p2", "p3", "n", "gb", "ib",
    "vi", "vg", "k_emp", "k_abs", "f_bio", "alpha_ex",
)


class InvalidStateError(ValueError):
    """A state or input component is non-finite."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state component."""

    def __init__(self, component: str, t: float):
        self.component = component
        self.t = t
        super().__init__(f"simulation diverged: {component} became non-finite at t={t:g} min")


@dataclass(frozen=True)
class PatientParams:
    """Patient-specific parameter vector for the extended minimal model.

    Units: p1, p2, n, k_emp, k_abs are rates in 1/min; p3 in 1/min per
    uU/mL; gb mg/dL; ib uU/mL; vi insulin distribution volume in mL;
    vg glucose distribution volume in dL; f_bio dimensionless in (0, 1];
    alpha_ex dimensionless >= 0.
    """

    p1: float
    p2: float
    p3: float
    n: float
    gb: float
    ib: float
    vi: float
    vg: float
    k_emp: float
    k_abs: float
    f_bio: float
    alpha_ex: float

    def validate(self) -> None:
        problems = []
        for name in ("p1", "p2", "p3", "n", "vi", "vg", "k_emp", "k_abs"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                problems.append(f"{name} must be strictly positive, got {v!r}")
        if not (0 < self.f_bio <= 1):
            problems.append(f"f_bio must be in (0, 1], got {self.f_bio!r}")
        if not (math.isfinite(self.alpha_ex) and self.alpha_ex >= 0):
            problems.append(f"alpha_ex must be >= 0, got {self.alpha_ex!r}")
        if not (50 <= self.gb <= 300):
            problems.append(f"gb must be in [50, 300] mg/dL, got {self.gb!r}")
        if not (0 < self.ib <= 100):
            problems.append(f"ib must be in (0, 100] uU/mL, got {self.ib!r}")
        if problems:
            raise ValueError("invalid patient parameters: " + "; ".join(problems))

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


#: Literature-style adult parameter set. p1/p2/p3 follow the classic minimal
#: model ranges; vi is chosen so the equilibrium basal n*ib*vi lands near
#: 1 U/h and a 1 U bolus drops glucose by roughly 50 mg/dL (ISF ~ 50).
NOMINAL_ADULT = PatientParams(
    p1=0.025,
    p2=0.025,
    p3=1.3e-5,
    n=0.09,
    gb=110.0,
    ib=15.0,
    vi=12000.0,
    vg=140.0,
    k_emp=0.035,
    k_abs=0.02,
    f_bio=0.9,
    alpha_ex=1.0,
)


@dataclass(frozen=True)
class TwinState:
    """Instantaneous physiological state of the twin."""

    g: float      # plasma glucose, mg/dL
    x: float      # remote insulin action, 1/min
    i: float      # plasma insulin, uU/mL
    q1: float     # gut compartment 1 carb mass, mg
    q2: float     # gut compartment 2 carb mass, mg
    t: float = 0.0  # time, min


class StateDerivative(NamedTuple):
    dg: float
    dx: float
    di: float
    dq1: float
    dq2: float


def equilibrium_state(params: PatientParams) -> TwinState:
    return TwinState(g=params.gb, x=0.0, i=params.ib, q1=0.0, q2=0.0, t=0.0)


def equilibrium_basal_uU_per_min(params: PatientParams) -> float:
    """Infusion rate (uU/min) that holds the equilibrium state exactly."""
    return params.n * params.ib * params.vi


def equilibrium_basal_U_per_h(params: PatientParams) -> float:
    return equilibrium_basal_uU_per_min(params) * 60.0 / UU_PER_UNIT


@dataclass(frozen=True)
class Scenario:
    """Exogenous events over a horizon: unannounced meals and exercise.

    meals: (time min, carbs g); exercise: (start min, duration min,
    intensity in [0, 1]). Events must be sorted and lie within the horizon.
    """

    horizon: float
    meals: tuple[tuple[float, float], ...] = ()
    exercise: tuple[tuple[float, float, float], ...] = ()

    def validate(self) -> None:
        problems = []
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            problems.append(f"horizon must be positive, got {self.horizon!r}")
        times = [m[0] for m in self.meals]
        if times != sorted(times):
            problems.append("meals must be sorted by time")
        starts = [e[0] for e in self.exercise]
        if starts != sorted(starts):
            problems.append("exercise intervals must be sorted by start")
        for t, carbs in self.meals:
            if not (0 <= t <= self.horizon):
                problems.append(f"meal at t={t} outside [0, {self.horizon}]")
            if not carbs > 0:
                problems.append(f"meal at t={t} has non-positive carbs {carbs}")
        for start, dur, inten in self.exercise:
            if not (0 <= start <= self.horizon):
                problems.append(f"exercise at t={start} outside [0, {self.horizon}]")
            if not dur > 0:
                problems.append(f"exercise at t={start} has non-positive duration {dur}")
            if not (0 <= inten <= 1):
                problems.append(f"exercise at t={start} has intensity {inten} outside [0, 1]")
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))


def effective_intensity(exercise: Sequence[tuple[float, float, float]], t: float,
                        washout: float = EXERCISE_WASHOUT_MIN) -> float:
    """Exercise intensity at time t including the linear post-interval washout."""
    best = 0.0
    for start, dur, inten in exercise:
        end = start + dur
        if start <= t < end:
            w = 1.0
        elif end <= t < end + washout:
            w = 1.0 - (t - end) / washout
        else:
            w = 0.0
        contrib = inten * w
        if contrib > best:
            best = contrib
    return best


@dataclass(eq=False)
class GlucoseTrace:
    """Uniformly sampled glucose trace with aligned per-interval insulin.

    insulin_delivered[k] holds the units delivered over [t_k, t_{k+1})
    (basal plus boluses applied at t_k); the last entry covers no interval
    and carries only boluses landing on the final sample.
    """

    t0: float
    dt: float
    samples: np.ndarray
    insulin_delivered: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.insulin_delivered is None:
            self.insulin_delivered = np.zeros_like(self.samples)
        else:
            self.insulin_delivered = np.asarray(self.insulin_delivered, dtype=float)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.samples.size == 0:
            raise ValueError("trace must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trace samples must all be finite")
        if self.insulin_delivered.shape != self.samples.shape:
            raise ValueError("insulin_delivered must align with samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)


def resample_trace(trace: GlucoseTrace, dt_out: float) -> GlucoseTrace:
    """Downsample to a coarser grid whose step is an integer multiple of dt.

    Insulin is summed over the coarse intervals so total delivery is kept.
    """
    ratio = dt_out / trace.dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ValueError(f"dt_out={dt_out} is not an integer multiple of dt={trace.dt}")
    if k == 1:
        return GlucoseTrace(trace.t0, trace.dt, trace.samples.copy(),
                            trace.insulin_delivered.copy())
    samples = trace.samples[::k]
    insulin = np.zeros_like(samples)
    full = trace.insulin_delivered
    for j in range(samples.size):
        insulin[j] = full[j * k: min((j + 1) * k, full.size)].sum()
    return GlucoseTrace(trace.t0, dt_out, samples, insulin)


def _deriv(g, x, i, q1, q2, p1, p2, p3, n, gb, ib, vi, vg, kemp, kabs, fbio, boost, u):
    # boost = alpha_ex * effective intensity; u in uU/min.
    # The glucose equation couples to max(X, 0): remote action cannot remove
    # less than zero glucose, and letting transiently negative X (I below Ib)
    # feed the G term would create glucose out of nothing. X's own dynamics
    # stay linear; the simulation clamps X at step boundaries.
    # Operation order mirrors the inlined stages in _rk4 so both paths are
    # bit-identical.
    xg = x if x > 0.0 else 0.0
    ra = (fbio * kabs / vg) * q2
    return (
        -(p1 * (1.0 + boost) + xg) * g + p1 * gb + ra,
        -p2 * x + p3 * (i - ib),
        -n * i + u / vi,
        -kemp * q1,
        kemp * q1 - kabs * q2,
    )


def derivatives(state: TwinState, params: PatientParams, u_insulin: float,
                exercise_intensity: float = 0.0) -> StateDerivative:
    """Model right-hand side at one instant; inputs must be finite, u >= 0."""
    vals = (state.g, state.x, state.i, state.q1, state.q2, u_insulin, exercise_intensity)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidStateError(f"non-finite state or input: {vals!r}")
    if u_insulin < 0:
        raise InvalidStateError(f"insulin infusion must be >= 0, got {u_insulin!r}")
    p = params
    boost = p.alpha_ex * exercise_intensity
    return StateDerivative(*_deriv(
        state.g, state.x, state.i, state.q1, state.q2,
        p.p1, p.p2, p.p3, p.n, p.gb, p.ib, p.vi, p.vg,
        p.k_emp, p.k_abs, p.f_bio, boost, u_insulin))


def _rk4(g, x, i, q1, q2, p1, p2, p3, n, gb, ib, vi, vg, kemp, kabs, fbio, boost, u, dt):
    # classical RK4 with inputs held constant over the step; the stage math
    # inlines _deriv because this sits inside the fitting/search hot loops
    p1b = p1 * (1.0 + boost)
    p1gb = p1 * gb
    uvi = u / vi
    fkv = fbio * kabs / vg
    xg = x if x > 0.0 else 0.0
    a1 = -(p1b + xg) * g + p1gb + fkv * q2
    b1 = -p2 * x + p3 * (i - ib)
    c1 = -n * i + uvi
    d1 = -kemp * q1
    e1 = kemp * q1 - kabs * q2
    h = 0.5 * dt
    g2 = g + h * a1
    x2 = x + h * b1
    i2 = i + h * c1
    q12 = q1 + h * d1
    q22 = q2 + h * e1
    xg2 = x2 if x2 > 0.0 else 0.0
    a2 = -(p1b + xg2) * g2 + p1gb + fkv * q22
    b2 = -p2 * x2 + p3 * (i2 - ib)
    c2 = -n * i2 + uvi
    d2 = -kemp * q12
    e2 = kemp * q12 - kabs * q22
    g3 = g + h * a2
    x3 = x + h * b2
    i3 = i + h * c2
    q13 = q1 + h * d2
    q23 = q2 + h * e2
    xg3 = x3 if x3 > 0.0 else 0.0
    a3 = -(p1b + xg3) * g3 + p1gb + fkv * q23
    b3 = -p2 * x3 + p3 * (i3 - ib)
    c3 = -n * i3 + uvi
    d3 = -kemp * q13
    e3 = kemp * q13 - kabs * q23
    g4 = g + dt * a3
    x4 = x + dt * b3
    i4 = i + dt * c3
    q14 = q1 + dt * d3
    q24 = q2 + dt * e3
    xg4 = x4 if x4 > 0.0 else 0.0
    a4 = -(p1b + xg4) * g4 + p1gb + fkv * q24
    b4 = -p2 * x4 + p3 * (i4 - ib)
    c4 = -n * i4 + uvi
    d4 = -kemp * q14
    e4 = kemp * q14 - kabs * q24
    s = dt / 6.0
    return (
        g + s * (a1 + 2.0 * (a2 + a3) + a4),
        x + s * (b1 + 2.0 * (b2 + b3) + b4),
        i + s * (c1 + 2.0 * (c2 + c3) + c4),
        q1 + s * (d1 + 2.0 * (d2 + d3) + d4),
        q2 + s * (e1 + 2.0 * (e2 + e3) + e4),
    )


_COMPONENTS = ("G", "X", "I", "Q1", "Q2")


def _check_finite(g, x, i, q1, q2, t):
    for name, v in zip(_COMPONENTS, (g, x, i, q1, q2)):
        if not math.isfinite(v):
            raise DivergenceError(name, t)


def step(state: TwinState, params: PatientParams, u_insulin: float,
         exercise_intensity: float, dt: float) -> TwinState:
    """One fixed-step RK4 update; X is clamped at zero after the update."""
    if not (0 < dt <= 5):
        raise ValueError(f"dt must be in (0, 5] min, got {dt!r}")
    p = params
    boost = p.alpha_ex * exercise_intensity
    g, x, i, q1, q2 = _rk4(
        state.g, state.x, state.i, state.q1, state.q2,
        p.p1, p.p2, p.p3, p.n, p.gb, p.ib, p.vi, p.vg,
        p.k_emp, p.k_abs, p.f_bio, boost, u_insulin, dt)
    _check_finite(g, x, i, q1, q2, state.t + dt)
    if x < 0.0:
        x = 0.0
    return TwinState(g=g, x=x, i=i, q1=q1, q2=q2, t=state.t + dt)


def _event_index(time: float, dt: float) -> int:
    """Grid index at which an off-grid event takes effect (next grid point)."""
    return int(math.ceil(time / dt - 1e-9))


@dataclass(eq=False)
class SimResult:
    """Full simulation output: glucose trace plus state trajectories."""

    trace: GlucoseTrace
    g: np.ndarray
    x: np.ndarray
    i: np.ndarray
    q1: np.ndarray
    q2: np.ndarray


def simulate_full(params: PatientParams, plan: UsagePlan, scenario: Scenario,
                  dt: float = 1.0, initial: TwinState | None = None) -> SimResult:
    """Step the twin over the scenario horizon under the plan's control.

    At each grid point: apply meal impulses (scenario meals and plan
    meal announcements both add 1000*carbs mg to Q1), apply boluses from
    the plan (announcement boluses computed by the controller at current
    glucose, manual boluses verbatim), record the sample, then deliver
    basal over the next interval (zero while glucose is below the plan's
    suspend threshold) and advance one RK4 step.
    """
    params.validate()
    scenario.validate()
    if plan.horizon + 1e-9 < scenario.horizon:
        raise PlanCoverageError(
            f"plan covers [0, {plan.horizon:g}] but scenario horizon is {scenario.horizon:g}")

    n_steps = int(round(scenario.horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - scenario.horizon) > 1e-6:
        raise ValueError(f"horizon {scenario.horizon!r} is not a multiple of dt={dt!r}")

    # Snap plan action times and scenario meals onto the step grid.
    snapped = replace(plan, actions=tuple(
        replace(a, time=_event_index(a.time, dt) * dt) for a in plan.actions))
    carbs_at: dict[int, float] = {}
    for t_meal, carbs in scenario.meals:
        k = _event_index(t_meal, dt)
        carbs_at[k] = carbs_at.get(k, 0.0) + carbs
    for action in snapped.actions:
        if action.kind == "meal":
            k = _event_index(action.time, dt)
            carbs_at[k] = carbs_at.get(k, 0.0) + action.value

    boost_at = [params.alpha_ex * effective_intensity(scenario.exercise, k * dt)
                for k in range(n_steps)]

    state = initial if initial is not None else equilibrium_state(params)
    g, x, i, q1, q2 = state.g, state.x, state.i, state.q1, state.q2
    p = params
    n_samp = n_steps + 1
    gs = np.empty(n_samp)
    xs = np.empty(n_samp)
    is_ = np.empty(n_samp)
    q1s = np.empty(n_samp)
    q2s = np.empty(n_samp)
    delivered = np.zeros(n_samp)

    for k in range(n_samp):
        t = k * dt
        if k in carbs_at:
            q1 += MG_PER_G * carbs_at[k]
        rate_uU_min, boluses = insulin_input(snapped, min(t, plan.horizon), g)
        bolus_units = sum(boluses)
        if bolus_units > 0.0:
            i += bolus_units * UU_PER_UNIT / p.vi
            delivered[k] += bolus_units
        gs[k], xs[k], is_[k], q1s[k], q2s[k] = g, x, i, q1, q2
        if k == n_steps:
            break
        delivered[k] += rate_uU_min * dt / UU_PER_UNIT
        g, x, i, q1, q2 = _rk4(g, x, i, q1, q2,
                               p.p1, p.p2, p.p3, p.n, p.gb, p.ib, p.vi, p.vg,
                               p.k_emp, p.k_abs, p.f_bio, boost_at[k], rate_uU_min, dt)
        _check_finite(g, x, i, q1, q2, (k + 1) * dt)
        if x < 0.0:
            x = 0.0

    trace = GlucoseTrace(t0=0.0, dt=dt, samples=gs, insulin_delivered=delivered)
    return SimResult(trace=trace, g=gs, x=xs, i=is_, q1=q1s, q2=q2s)


def simulate(params: PatientParams, plan: UsagePlan, scenario: Scenario,
             dt: float = 1.0, initial: TwinState | None = None) -> GlucoseTrace:
    return simulate_full(params, plan, scenario, dt=dt, initial=initial).trace


def simulate_inputs(params: PatientParams, horizon: float,
                    basal_steps: Sequence[tuple[float, float]] = (),
                    boluses: Sequence[tuple[float, float]] = (),
                    meals: Sequence[tuple[float, float]] = (),
                    exercise: Sequence[tuple[float, float, float]] = (),
                    dt: float = 1.0, initial: TwinState | None = None) -> SimResult:
    """Open-loop simulation from logged inputs, without any controller logic.

    basal_steps are (time, U/h) rows holding until the next row; the first
    row's rate is extended back to t=0. Boluses (time, U) and meals
    (time, g) are impulses. This is the path used when replaying recorded
    pump data, where insulin delivery is a known input rather than a
    plan to interpret.
    """
    params.validate()
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-6:
        raise ValueError(f"horizon {horizon!r} is not a multiple of dt={dt!r}")

    rate_uU = np.zeros(n_steps)
    if basal_steps:
        rows = sorted(basal_steps)
        times = np.array([r[0] for r in rows])
        rates = np.array([r[1] for r in rows]) * U_PER_HOUR_TO_UU_PER_MIN
        idx = np.searchsorted(times, np.arange(n_steps) * dt, side="right") - 1
        rate_uU = rates[np.clip(idx, 0, len(rows) - 1)]

    bolus_at: dict[int, float] = {}
    for t_b, units in boluses:
        k = _event_index(t_b, dt)
        bolus_at[k] = bolus_at.get(k, 0.0) + units
    carbs_at: dict[int, float] = {}
    for t_m, carbs in meals:
        k = _event_index(t_m, dt)
        carbs_at[k] = carbs_at.get(k, 0.0) + carbs
    boost_at = [params.alpha_ex * effective_intensity(exercise, k * dt)
                for k in range(n_steps)]

    state = initial if initial is not None else equilibrium_state(params)
    g, x, i, q1, q2 = state.g, state.x, state.i, state.q1, state.q2
    p = params
    n_samp = n_steps + 1
    gs = np.empty(n_samp)
    xs = np.empty(n_samp)
    is_ = np.empty(n_samp)
    q1s = np.empty(n_samp)
    q2s = np.empty(n_samp)
    delivered = np.zeros(n_samp)

    for k in range(n_samp):
        if k in carbs_at:
            q1 += MG_PER_G * carbs_at[k]
        if k in bolus_at:
            i += bolus_at[k] * UU_PER_UNIT / p.vi
            delivered[k] += bolus_at[k]
        gs[k], xs[k], is_[k], q1s[k], q2s[k] = g, x, i, q1, q2
        if k == n_steps:
            break
        u = rate_uU[k]
        delivered[k] += u * dt / UU_PER_UNIT
        g, x, i, q1, q2 = _rk4(g, x, i, q1, q2,
                               p.p1, p.p2, p.p3, p.n, p.gb, p.ib, p.vi, p.vg,
                               p.k_emp, p.k_abs, p.f_bio, boost_at[k], u, dt)
        _check_finite(g, x, i, q1, q2, (k + 1) * dt)
        if x < 0.0:
            x = 0.0

    trace = GlucoseTrace(t0=0.0, dt=dt, samples=gs, insulin_delivered=delivered)
    return SimResult(trace=trace, g=gs, x=xs, i=is_, q1=q1s, q2=q2s)
