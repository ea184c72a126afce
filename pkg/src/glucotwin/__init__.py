"""glucotwin: digital-twin engine for T1D insulin management.

Simulates patient-specific glucose-insulin dynamics under AID usage plans,
monitors quantitative STL safety specifications over the resulting traces,
fits twin parameters to CGM/pump records, and searches for safe plans.
"""

from .twin import (
    PatientParams,
    TwinState,
    Scenario,
    GlucoseTrace,
    NOMINAL_ADULT,
    derivatives,
    step,
    simulate,
    simulate_full,
    simulate_inputs,
    equilibrium_state,
    equilibrium_basal_U_per_h,
    equilibrium_basal_uU_per_min,
    resample_trace,
)
from .plans import (
    ConfigSegment,
    PlanAction,
    UsagePlan,
    bolus_dose,
    insulin_input,
    parse_plan,
    serialize_plan,
    canonicalize,
    validate_plan,
    PlanValidationError,
    PlanCoverageError,
    PlanLintWarning,
)
from .stl import (
    GE,
    LE,
    Not,
    And,
    Or,
    Always,
    Eventually,
    robustness,
    parse_formula,
    serialize_formula,
    InsufficientHorizonError,
)
from .metrics import (
    GlycemicStats,
    PlanQuality,
    ScoreWeights,
    glycemic_metrics,
    quality_score,
    plan_quality,
    evaluate_plan,
)

__version__ = "0.1.0"
