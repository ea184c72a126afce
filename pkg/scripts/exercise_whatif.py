"""The run-in-an-hour what-if, end to end on the nominal twin.

Seeds the planner with the user's current settings (CGM 85 mg/dL, a 30-min
run starting in 30 min), shows that the status-quo plan dips below 70 mg/dL,
then lets local search repair it and renders both traces to SVG.

Usage: python scripts/exercise_whatif.py [outdir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import glucotwin as gt
from glucotwin.report import trace_to_svg
from glucotwin.search import (
    FeasibilityConstraints, PlanContext, local_search_refine, seed_plan,
)


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")
    outdir.mkdir(parents=True, exist_ok=True)

    params = gt.NOMINAL_ADULT
    context = PlanContext(
        params=params,
        scenario=gt.Scenario(horizon=240.0, exercise=((30.0, 30.0, 1.0),)),
        settings=gt.ConfigSegment(start=0.0, basal=1.0, isf=50.0, cr=10.0, target=120.0),
        glucose=85.0,
        spec=gt.parse_formula("always 0 240 (ge 70)"),
        goal="run for 30 minutes within the next hour",
        constraints=FeasibilityConstraints(max_bolus_units=5.0, max_meals=3,
                                           max_total_carbs=90.0, basal_max=3.0),
    )

    status_quo = seed_plan(context)
    trace0, q0 = gt.evaluate_plan(params, status_quo, context.scenario, context.spec,
                                  initial=context.initial_state())
    print(f"status quo: robustness {q0.robustness:.2f}, min G "
          f"{trace0.samples.min():.1f} mg/dL, score {q0.score:.1f}")

    best, log = local_search_refine(context, budget=500, seed=7)
    for k, it in enumerate(log.iterations):
        marker = "*" if it.accepted else " "
        print(f"  {marker} iter {k:3d}: {it.feedback}")
    print(f"stop: {log.stop_reason} after {len(log.iterations)} evaluations")

    trace1, q1 = gt.evaluate_plan(params, best, context.scenario, context.spec,
                                  initial=context.initial_state())
    print(f"refined: robustness {q1.robustness:.2f}, min G "
          f"{trace1.samples.min():.1f} mg/dL, score {q1.score:.1f}")
    print("refined plan:")
    print(gt.serialize_plan(best), end="")

    (outdir / "status_quo.svg").write_text(
        trace_to_svg(trace0, title="status quo: exercise-induced hypo"))
    (outdir / "refined.svg").write_text(
        trace_to_svg(trace1, title="refined plan: snack before exercise"))
    (outdir / "refined_plan.txt").write_text(gt.serialize_plan(best))
    print(f"wrote {outdir}/status_quo.svg, {outdir}/refined.svg, "
          f"{outdir}/refined_plan.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
