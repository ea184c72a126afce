"""Regenerate the sample files in data/ from the nominal twin.

The CGM/pump CSVs are a synthetic but realistic 8-hour day (two meals with
boluses, basal changes) in exactly the schemas the `fit` command ingests;
the plan/scenario/context/spec files demo every text dialect the CLI reads.
"""

from __future__ import annotations

import csv
import sys
from datetime import datetime, timezone
from pathlib import Path

import glucotwin as gt
from glucotwin.ingest import write_cgm_csv

ORIGIN_MIN = 28514880.0   # 2024-03-15T00:00:00Z in minutes since the epoch


def stamp(minute: float) -> str:
    return datetime.fromtimestamp((ORIGIN_MIN + minute) * 60.0, tz=timezone.utc) \
        .isoformat().replace("+00:00", "Z")


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    outdir.mkdir(parents=True, exist_ok=True)
    params = gt.NOMINAL_ADULT

    basal_steps = [(0.0, gt.equilibrium_basal_U_per_h(params)), (240.0, 1.3), (420.0, 0.7)]
    boluses = [(60.0, 5.0), (300.0, 6.0)]
    meals = [(60.0, 50.0), (300.0, 60.0)]
    sim = gt.simulate_inputs(params, 480.0, basal_steps, boluses, meals, dt=1.0)
    cgm = gt.resample_trace(sim.trace, 5.0)
    write_cgm_csv(outdir / "sample_cgm.csv", cgm, origin_min=ORIGIN_MIN)

    with open(outdir / "sample_pump.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["timestamp", "kind", "value"])
        rows = [(t, "basal", v) for t, v in basal_steps]
        rows += [(t, "bolus", v) for t, v in boluses]
        rows += [(t, "meal", v) for t, v in meals]
        for t, kind, value in sorted(rows):
            writer.writerow([stamp(t), kind, f"{value:g}"])

    (outdir / "sample_plan.txt").write_text(
        "# one day, constant settings, lunch announced to the controller\n"
        f"segment 0 1440 basal={gt.equilibrium_basal_U_per_h(params):.3f} "
        "isf=50 cr=10 target=120\n"
        "meal 720 carbs=60\n"
        "suspend 70\n")
    (outdir / "sample_scenario.txt").write_text(
        "# quiet day with an unannounced afternoon snack\n"
        "horizon 1440\n"
        "meal 900 carbs=20\n")
    (outdir / "sample_context.txt").write_text(
        "# what-if: 30-minute run starting in 30 minutes, CGM 85 mg/dL\n"
        "glucose 85\n"
        "settings basal=1.0 isf=50 cr=10 target=120\n"
        "horizon 240\n"
        "exercise 30 30 intensity=1.0\n"
        "spec always 0 240 (ge 70)\n"
        "goal run for 30 minutes within the next hour\n"
        "constraint max_bolus_units=5\n"
        "constraint max_meals=3\n"
        "constraint max_total_carbs=90\n")
    (outdir / "sample_spec.txt").write_text("always 0 1440 (ge 70)\n")
    (outdir / "sample_twin.json").write_text(
        __import__("json").dumps(params.as_dict(), indent=2, sort_keys=True) + "\n")

    print(f"wrote sample files to {outdir}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
