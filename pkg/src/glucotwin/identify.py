"""Digital-twin learning: recover patient parameters from usage records.

Fitting is bound-constrained nonlinear least squares on the residual
between the simulated and observed CGM, single-shooting the model at a
1-minute internal step under the logged basal/bolus/meal inputs, with
finite-difference gradients and multi-start (the supplied initial guess
plus starts sampled inside the bounds). Only the supplied record is used;
no operation asks for signals beyond what the device already logs.

Identifiability diagnostics perturb each parameter by a relative central
difference and report scaled sensitivity norms of the simulated CGM plus
the condition number of the normalized sensitivity Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .ingest import UsageRecord
from .twin import PARAM_NAMES, PatientParams, TwinState, simulate_inputs

DEFAULT_FREE = ("p1", "p2", "p3", "n", "alpha_ex")

#: Box constraints wide enough to cover published minimal-model ranges.
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "p1": (0.005, 0.1),
    "p2": (0.005, 0.1),
    "p3": (1e-6, 1e-4),
    "n": (0.02, 0.3),
    "gb": (60.0, 250.0),
    "ib": (2.0, 60.0),
    "vi": (4000.0, 30000.0),
    "vg": (60.0, 300.0),
    "k_emp": (0.005, 0.1),
    "k_abs": (0.005, 0.1),
    "f_bio": (0.3, 1.0),
    "alpha_ex": (0.0, 3.0),
}

MIN_RECORD_SPAN_MIN = 360.0
UNIDENTIFIABLE_RATIO = 1e-8


class RecordTooShortError(ValueError):
    pass


class FitError(RuntimeError):
    """Every optimizer start failed (diverged or non-finite objective)."""


@dataclass(frozen=True)
class FitConfig:
    free: tuple[str, ...] = DEFAULT_FREE
    n_starts: int = 8
    seed: int = 0
    dt: float = 1.0
    max_nfev: int = 400


@dataclass(frozen=True)
class IdentifiabilityReport:
    """Scaled per-parameter sensitivity of the simulated CGM.

    sensitivity[k] = || dy/d theta_k * theta_k ||_2 over the CGM samples
    (absolute dy/d theta_k when theta_k = 0); parameters whose norm falls
    below UNIDENTIFIABLE_RATIO of the largest are flagged. The condition
    number is taken over the Gram matrix of the unit-normalized nonzero
    sensitivity columns.
    """

    sensitivity: dict[str, float]
    condition_number: float
    unidentifiable: tuple[str, ...]


@dataclass(frozen=True)
class FitResult:
    params: PatientParams
    rmse: float
    n_iterations: int
    identifiability: IdentifiabilityReport
    converged: bool


def _record_initial(record: UsageRecord, params: PatientParams) -> TwinState:
    return TwinState(g=float(record.cgm.samples[0]), x=0.0, i=params.ib, q1=0.0, q2=0.0)


def _simulated_cgm(record: UsageRecord, params: PatientParams, dt: float) -> np.ndarray:
    """Model CGM at the record's sample times under the logged inputs."""
    stride_f = record.cgm.dt / dt
    stride = int(round(stride_f))
    if stride < 1 or abs(stride_f - stride) > 1e-9:
        raise ValueError(f"cgm dt {record.cgm.dt} is not a multiple of simulation dt {dt}")
    res = simulate_inputs(
        params,
        horizon=record.span_min,
        basal_steps=record.basal_log,
        boluses=record.bolus_log,
        meals=record.meal_log,
        dt=dt,
        initial=_record_initial(record, params),
    )
    return res.g[::stride]


def residuals(record: UsageRecord, params: PatientParams, dt: float = 1.0) -> np.ndarray:
    """Simulated minus observed CGM at the record's sample times."""
    return _simulated_cgm(record, params, dt) - record.cgm.samples


def rmse_of(record: UsageRecord, params: PatientParams, dt: float = 1.0) -> float:
    r = residuals(record, params, dt)
    return float(np.sqrt(np.mean(r * r)))


def _sample_start(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    out = np.empty_like(lo)
    for k, (a, b) in enumerate(zip(lo, hi)):
        if a > 0 and b / a > 100:
            out[k] = math.exp(rng.uniform(math.log(a), math.log(b)))
        else:
            out[k] = rng.uniform(a, b)
    return out


def fit(record: UsageRecord, init: PatientParams,
        bounds: dict[str, tuple[float, float]] | None = None,
        config: FitConfig = FitConfig()) -> FitResult:
    """Fit the free parameters to the record; returns the best start's result."""
    if record.span_min < MIN_RECORD_SPAN_MIN:
        raise RecordTooShortError(
            f"record spans {record.span_min:g} min; need at least {MIN_RECORD_SPAN_MIN:g}")
    init.validate()
    free = config.free
    box = dict(DEFAULT_BOUNDS)
    box.update(bounds or {})
    lo = np.array([box[name][0] for name in free])
    hi = np.array([box[name][1] for name in free])
    x_init = np.array([getattr(init, name) for name in free])
    if np.any(x_init < lo) or np.any(x_init > hi):
        raise ValueError("initial guess lies outside the parameter bounds")

    observed = record.cgm.samples

    def fun(x: np.ndarray) -> np.ndarray:
        candidate = replace(init, **dict(zip(free, x)))
        return _simulated_cgm(record, candidate, config.dt) - observed

    rng = np.random.default_rng(config.seed)
    starts = [x_init] + [_sample_start(rng, lo, hi) for _ in range(config.n_starts - 1)]

    best = None
    for x0 in starts:
        try:
            res = least_squares(
                fun, x0, bounds=(lo, hi), method="trf",
                x_scale=np.maximum(np.abs(x_init), 1e-3 * (hi - lo)),
                ftol=1e-12, xtol=1e-12, gtol=1e-12,
                max_nfev=config.max_nfev,
            )
        except (ValueError, RuntimeError, FloatingPointError):
            continue
        if not math.isfinite(res.cost):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("all optimizer starts diverged or produced a non-finite objective")

    fitted = replace(init, **dict(zip(free, best.x)))
    report = identifiability(fitted, record, dt=config.dt)
    return FitResult(
        params=fitted,
        rmse=rmse_of(record, fitted, config.dt),
        n_iterations=int(best.nfev),
        identifiability=report,
        converged=bool(best.status > 0),
    )


def identifiability(params: PatientParams, record: UsageRecord,
                    names: tuple[str, ...] = PARAM_NAMES, rel_step: float = 1e-4,
                    dt: float = 1.0) -> IdentifiabilityReport:
    """Central-difference output sensitivity of the simulated CGM."""
    columns = []
    sensitivity: dict[str, float] = {}
    for name in names:
        theta = getattr(params, name)
        h = rel_step * abs(theta) if theta != 0 else rel_step
        hi = _simulated_cgm(record, replace(params, **{name: theta + h}), dt)
        lo = _simulated_cgm(record, replace(params, **{name: theta - h}), dt)
        dy = (hi - lo) / (2.0 * h)
        scale = abs(theta) if theta != 0 else 1.0
        col = dy * scale
        columns.append(col)
        sensitivity[name] = float(np.linalg.norm(col))

    largest = max(sensitivity.values(), default=0.0)
    flagged = tuple(
        name for name in names
        if sensitivity[name] <= UNIDENTIFIABLE_RATIO * largest
    )
    nonzero = [c for c in columns if np.linalg.norm(c) > 0.0]
    if len(nonzero) < 2:
        cond = float("inf") if not nonzero else 1.0
    else:
        unit = np.stack([c / np.linalg.norm(c) for c in nonzero], axis=1)
        cond = float(np.linalg.cond(unit.T @ unit))
    return IdentifiabilityReport(
        sensitivity=sensitivity,
        condition_number=cond,
        unidentifiable=flagged,
    )
