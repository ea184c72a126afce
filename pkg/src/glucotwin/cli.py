"""Command-line front door: fit, simulate, evaluate, refine, report, serve.

Scenario and refinement-context files use the same line-oriented dialect as
plan files:

    # scenario file
    horizon 240
    meal 60 carbs=50
    exercise 30 30 intensity=1.0

    # context file: scenario records plus
    glucose 85
    settings basal=1.0 isf=50 cr=10 target=120
    spec always 0 240 (ge 70)
    goal run for 30 minutes within the next hour
    constraint max_bolus_units=5

`evaluate` exits 0 iff the plan's robustness is non-negative, so it works
as a scriptable safety gate. Errors print one machine-parseable line to
stderr (`glucotwin: <code>: <message>`) and exit 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .identify import FitConfig, FitError, RecordTooShortError, fit
from .ingest import IngestError, load_usage_record
from .llm import LlmConfig, PlannerFailure, llm_refine
from .metrics import evaluate_plan
from .plans import ConfigSegment, PlanValidationError, parse_plan, serialize_plan
from .report import trace_to_svg
from .search import (
    FeasibilityConstraints, InfeasibleContextError, PlanContext, local_search_refine,
)
from .service import log_to_json, make_server
from .stl import FormulaSyntaxError, parse_formula
from .twin import (
    GlucoseTrace, NOMINAL_ADULT, PatientParams, Scenario, TwinState, simulate,
)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# -- text dialects -------------------------------------------------------------

def _kv(token: str, key: str, where: str) -> float:
    prefix = key + "="
    if not token.startswith(prefix):
        raise CliError("invalid-input", f"{where}: expected {key}=<number>, got {token!r}")
    try:
        return float(token[len(prefix):])
    except ValueError:
        raise CliError("invalid-input", f"{where}: {key} is not a number") from None


def parse_scenario_text(text: str) -> Scenario:
    horizon = None
    meals: list[tuple[float, float]] = []
    exercise: list[tuple[float, float, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"line {lineno}"
        tokens = line.split()
        if tokens[0] == "horizon" and len(tokens) == 2:
            horizon = float(tokens[1])
        elif tokens[0] == "meal" and len(tokens) == 3:
            meals.append((float(tokens[1]), _kv(tokens[2], "carbs", where)))
        elif tokens[0] == "exercise" and len(tokens) == 4:
            exercise.append((float(tokens[1]), float(tokens[2]),
                             _kv(tokens[3], "intensity", where)))
        else:
            raise CliError("invalid-input", f"{where}: unknown scenario record {line!r}")
    if horizon is None:
        raise CliError("invalid-input", "scenario file must declare a horizon")
    scenario = Scenario(horizon=horizon,
                        meals=tuple(sorted(meals)),
                        exercise=tuple(sorted(exercise)))
    try:
        scenario.validate()
    except ValueError as exc:
        raise CliError("invalid-input", str(exc)) from None
    return scenario


def parse_context_text(text: str, params: PatientParams) -> PlanContext:
    glucose = None
    settings = None
    spec = None
    goal = ""
    constraints: dict[str, float] = {}
    scenario_lines: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"line {lineno}"
        tokens = line.split()
        head = tokens[0]
        if head in ("horizon", "meal", "exercise"):
            scenario_lines.append(line)
        elif head == "glucose" and len(tokens) == 2:
            glucose = float(tokens[1])
        elif head == "settings" and len(tokens) == 5:
            settings = ConfigSegment(
                start=0.0,
                basal=_kv(tokens[1], "basal", where),
                isf=_kv(tokens[2], "isf", where),
                cr=_kv(tokens[3], "cr", where),
                target=_kv(tokens[4], "target", where),
            )
        elif head == "spec":
            try:
                spec = parse_formula(line[len("spec"):].strip())
            except FormulaSyntaxError as exc:
                raise CliError("invalid-input", f"{where}: {exc}") from None
        elif head == "goal":
            goal = line[len("goal"):].strip()
        elif head == "constraint" and len(tokens) == 2:
            key, _, value = tokens[1].partition("=")
            try:
                constraints[key] = float(value)
            except ValueError:
                raise CliError("invalid-input", f"{where}: bad constraint {tokens[1]!r}") from None
        else:
            raise CliError("invalid-input", f"{where}: unknown context record {line!r}")
    for name, value in (("glucose", glucose), ("settings", settings), ("spec", spec)):
        if value is None:
            raise CliError("invalid-input", f"context file must declare {name}")
    scenario = parse_scenario_text("\n".join(scenario_lines))
    count_fields = {"max_boluses", "max_meals"}
    try:
        feas = FeasibilityConstraints(**{
            k: (int(v) if k in count_fields else v) for k, v in constraints.items()})
    except TypeError as exc:
        raise CliError("invalid-input", f"unknown constraint: {exc}") from None
    return PlanContext(params=params, scenario=scenario, settings=settings,
                       glucose=glucose, spec=spec, goal=goal, constraints=feas)


# -- file helpers --------------------------------------------------------------

def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as handle:
            return handle.read()
    except OSError as exc:
        raise CliError("io-error", f"cannot read {path}: {exc}") from None


def load_twin_file(path: str) -> PatientParams:
    """Accepts a fit report (with a "params" key) or a bare params object."""
    try:
        payload = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise CliError("invalid-input", f"{path} is not valid JSON: {exc}") from None
    obj = payload.get("params", payload) if isinstance(payload, dict) else None
    if not isinstance(obj, dict):
        raise CliError("invalid-input", f"{path} does not contain twin parameters")
    try:
        params = PatientParams(**obj)
        params.validate()
    except (TypeError, ValueError) as exc:
        raise CliError("invalid-input", f"bad twin parameters in {path}: {exc}") from None
    return params


def load_plan_file(path: str):
    try:
        return parse_plan(_read(path))
    except PlanValidationError as exc:
        raise CliError("plan-invalid", "; ".join(exc.violations)) from None


def write_trace_csv(path: str, trace: GlucoseTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t_min", "glucose_mgdl", "insulin_U"])
        for k in range(len(trace)):
            writer.writerow([
                f"{trace.t0 + k * trace.dt:g}",
                f"{trace.samples[k]:.6f}",
                f"{trace.insulin_delivered[k]:.6f}",
            ])


def read_trace_csv(path: str) -> GlucoseTrace:
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["t_min", "glucose_mgdl"]:
                raise CliError("invalid-input",
                               f"{path}: expected header t_min,glucose_mgdl,insulin_U")
            for row in reader:
                if row:
                    rows.append((float(row[0]), float(row[1]),
                                 float(row[2]) if len(row) > 2 else 0.0))
    except OSError as exc:
        raise CliError("io-error", f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise CliError("invalid-input", f"{path}: {exc}") from None
    if len(rows) < 2:
        raise CliError("invalid-input", f"{path}: need at least two samples")
    t = [r[0] for r in rows]
    dt = t[1] - t[0]
    if any(abs((b - a) - dt) > 1e-6 for a, b in zip(t, t[1:])):
        raise CliError("invalid-input", f"{path}: samples are not uniformly spaced")
    return GlucoseTrace(t0=t[0], dt=dt,
                        samples=np.array([r[1] for r in rows]),
                        insulin_delivered=np.array([r[2] for r in rows]))


def fit_report_json(result) -> dict:
    return {
        "params": result.params.as_dict(),
        "rmse": result.rmse,
        "n_iterations": result.n_iterations,
        "converged": result.converged,
        "identifiability": {
            "sensitivity": result.identifiability.sensitivity,
            "condition_number": result.identifiability.condition_number,
            "unidentifiable": list(result.identifiability.unidentifiable),
        },
    }


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    try:
        record = load_usage_record(args.cgm, args.pump)
    except IngestError as exc:
        raise CliError("ingest-error", str(exc)) from None
    init = load_twin_file(args.init) if args.init else NOMINAL_ADULT
    bounds = None
    if args.bounds:
        raw = json.loads(_read(args.bounds))
        bounds = {k: (float(v[0]), float(v[1])) for k, v in raw.items()}
    config = FitConfig(n_starts=args.starts, seed=args.seed, max_nfev=args.max_nfev)
    try:
        result = fit(record, init, bounds=bounds, config=config)
    except (RecordTooShortError, FitError, ValueError) as exc:
        raise CliError("fit-failed", str(exc)) from None
    report = fit_report_json(result)
    with open(args.output, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"rmse {result.rmse:.4f} mg/dL over {len(record.cgm)} samples "
          f"({'converged' if result.converged else 'not converged'})")
    width = max(len(n) for n in report["identifiability"]["sensitivity"])
    for name, value in report["identifiability"]["sensitivity"].items():
        flag = "  UNIDENTIFIABLE" if name in report["identifiability"]["unidentifiable"] else ""
        print(f"  {name:<{width}}  sensitivity {value:12.4e}{flag}")
    print(f"wrote {args.output}")
    return 0


def _initial_state(params: PatientParams, glucose: float | None) -> TwinState | None:
    if glucose is None:
        return None
    return TwinState(g=glucose, x=0.0, i=params.ib, q1=0.0, q2=0.0)


def cmd_simulate(args) -> int:
    params = load_twin_file(args.twin)
    plan = load_plan_file(args.plan)
    scenario = parse_scenario_text(_read(args.scenario))
    trace = simulate(params, plan, scenario, dt=args.dt,
                     initial=_initial_state(params, args.glucose))
    write_trace_csv(args.output, trace)
    print(f"wrote {args.output} ({len(trace)} samples at dt={trace.dt:g} min)")
    return 0


def cmd_evaluate(args) -> int:
    params = load_twin_file(args.twin)
    plan = load_plan_file(args.plan)
    scenario = parse_scenario_text(_read(args.scenario))
    try:
        phi = parse_formula(_read(args.spec))
    except FormulaSyntaxError as exc:
        raise CliError("invalid-input", f"bad spec: {exc}") from None
    _, quality = evaluate_plan(params, plan, scenario, phi, dt=args.dt,
                               initial=_initial_state(params, args.glucose))
    print(json.dumps(quality.as_dict(), indent=2, sort_keys=True))
    return 0 if quality.robustness >= 0 else 1


def cmd_refine(args) -> int:
    params = load_twin_file(args.twin)
    context = parse_context_text(_read(args.context), params)
    if args.planner == "local":
        try:
            best, log = local_search_refine(context, budget=args.budget, seed=args.seed)
        except InfeasibleContextError as exc:
            raise CliError("infeasible-context", str(exc)) from None
        extra = {}
    else:
        config = LlmConfig(
            base_url=args.llm_base_url or "",
            model=args.llm_model or "",
            transcript_replay=args.transcript,
            transcript_record=args.record_transcript,
        )
        try:
            best, log, counter = llm_refine(context, config, budget=args.budget)
        except PlannerFailure as exc:
            raise CliError("planner-failure", str(exc)) from None
        extra = {"hallucination": {"queries": counter.queries,
                                   "irrelevant": counter.irrelevant}}
    with open(args.output, "w", encoding="utf-8") as handle:
        handle.write(serialize_plan(best))
    if args.log:
        payload = log_to_json(log) | extra
        with open(args.log, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    best_q = log.iterations[log.best_index].quality if log.iterations else None
    rho = f"{best_q.robustness:.3f}" if best_q else "n/a"
    print(f"stop={log.stop_reason} evaluations={len(log.iterations)} "
          f"robustness={rho} wrote {args.output}")
    return 0


def cmd_report(args) -> int:
    trace = read_trace_csv(args.trace)
    svg = trace_to_svg(trace, title=args.title)
    with open(args.output, "w", encoding="utf-8") as handle:
        handle.write(svg)
    print(f"wrote {args.output}")
    return 0


def cmd_serve(args) -> int:
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise CliError("invalid-input", f"--addr must be HOST:PORT, got {args.addr!r}")
    server = make_server(host, int(port), args.store, workers=args.workers,
                         ui_dir=args.ui_dir)
    print(f"listening on http://{host}:{server.server_port} "
          f"(store: {args.store}{', ui: ' + args.ui_dir if args.ui_dir else ''})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glucotwin",
        description="Digital-twin toolkit for T1D usage-plan design and review.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit twin parameters to CGM + pump CSV records")
    p.add_argument("--cgm", required=True)
    p.add_argument("--pump", required=True)
    p.add_argument("--bounds", help="JSON file {param: [lo, hi]}")
    p.add_argument("--init", help="twin JSON to start from (default: nominal adult)")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-nfev", type=int, default=400)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a plan and write a trace CSV")
    p.add_argument("--twin", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--glucose", type=float, help="initial CGM reading (mg/dL)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate",
                       help="score a plan; exit 0 iff robustness >= 0")
    p.add_argument("--twin", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--spec", required=True, help="file holding the safety formula")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--glucose", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("refine", help="search for a safe plan")
    p.add_argument("--twin", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--planner", choices=("local", "llm"), default="local")
    p.add_argument("--budget", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transcript", help="replay transcript for the llm planner")
    p.add_argument("--record-transcript", help="record exchanges to this file")
    p.add_argument("--llm-base-url")
    p.add_argument("--llm-model")
    p.add_argument("--log", help="write the refinement log JSON here")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("report", help="render a trace CSV to a static SVG")
    p.add_argument("--trace", required=True)
    p.add_argument("--title", default="")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP JSON API")
    p.add_argument("--addr", default="127.0.0.1:8787")
    p.add_argument("--store", required=True)
    p.add_argument("--ui-dir", help="serve built review-console assets from here")
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"glucotwin: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 2


if __name__ == "__main__":
    sys.exit(main())
