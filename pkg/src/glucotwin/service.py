"""HTTP JSON API over twins, simulation, evaluation, refinement and review.

Routes (JSON bodies, UTF-8):

    POST /twins          {"params": {...}} or {"record": {...}, "init": {...}}
    GET  /twins          list twin records
    GET  /twins/{id}
    POST /simulate       {"twin_id", "plan", "scenario", "dt"?}
    POST /evaluate       {"twin_id", "plan", "scenario", "spec", "dt"?}
    POST /refine         {"twin_id", "context", "planner": "local"|"llm",
                          "budget", "seed"?, "llm"?, "fit"? ...} -> {"job_id"}
    GET  /jobs/{id}
    POST /decisions      {"twin_id", "plan", "verdict", "note"}
    GET  /decisions?twin_id=...

Plans travel as plan text, scenarios/contexts as plain JSON objects. All
errors are structured {"code", "message", "details"}; stack traces never
go on the wire. GET requests never mutate the store. Refinement runs on
the background job pool and is polled via /jobs.
"""

from __future__ import annotations

import json
import mimetypes
import traceback
from dataclasses import asdict, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .identify import FitConfig, fit
from .ingest import UsageRecord
from .llm import LlmConfig, PlannerFailure, llm_refine
from .metrics import PlanQuality, evaluate_plan, glycemic_metrics
from .plans import PlanValidationError, parse_plan, serialize_plan
from .search import (
    FeasibilityConstraints, PlanContext, RefinementLog, local_search_refine,
)
from .stl import parse_formula
from .store import AppendOnlyStore, JobQueue
from .twin import GlucoseTrace, PatientParams, Scenario, TwinState


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details if details is not None else []


def _require(body: dict, key: str):
    if key not in body:
        raise ApiError(400, "bad-request", f"missing required field {key!r}")
    return body[key]


def params_from_json(obj: dict) -> PatientParams:
    try:
        params = PatientParams(**obj)
        params.validate()
    except (TypeError, ValueError) as exc:
        raise ApiError(400, "invalid-params", str(exc)) from None
    return params


def scenario_from_json(obj: dict) -> Scenario:
    try:
        scenario = Scenario(
            horizon=float(obj["horizon"]),
            meals=tuple((float(t), float(c)) for t, c in obj.get("meals", [])),
            exercise=tuple((float(s), float(d), float(i))
                           for s, d, i in obj.get("exercise", [])),
        )
        scenario.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, "invalid-scenario", f"bad scenario: {exc}") from None
    return scenario


def record_from_json(obj: dict) -> UsageRecord:
    try:
        cgm = obj["cgm"]
        trace = GlucoseTrace(t0=float(cgm.get("t0", 0.0)), dt=float(cgm["dt"]),
                             samples=cgm["samples"])
        return UsageRecord(
            cgm=trace,
            basal_log=[(float(t), float(v)) for t, v in obj.get("basal_log", [])],
            bolus_log=[(float(t), float(v)) for t, v in obj.get("bolus_log", [])],
            meal_log=[(float(t), float(v)) for t, v in obj.get("meal_log", [])],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, "invalid-record", f"bad usage record: {exc}") from None


def constraints_from_json(obj: dict) -> FeasibilityConstraints:
    try:
        return FeasibilityConstraints(**obj)
    except TypeError as exc:
        raise ApiError(400, "invalid-constraints", str(exc)) from None


def plan_from_text(text: str):
    try:
        return parse_plan(text)
    except PlanValidationError as exc:
        raise ApiError(422, "plan-invalid", "plan text failed validation",
                       details=exc.violations) from None


def formula_from_text(text: str):
    try:
        return parse_formula(text)
    except ValueError as exc:
        raise ApiError(400, "invalid-spec", str(exc)) from None


def trace_to_json(trace: GlucoseTrace) -> dict:
    return {
        "t0": trace.t0,
        "dt": trace.dt,
        "samples": [float(v) for v in trace.samples],
        "insulin_delivered": [float(v) for v in trace.insulin_delivered],
    }


def quality_to_json(quality: PlanQuality) -> dict:
    return quality.as_dict()


def log_to_json(log: RefinementLog) -> dict:
    return {
        "iterations": [
            {
                "plan": serialize_plan(it.plan),
                "quality": quality_to_json(it.quality),
                "feedback": it.feedback,
                "accepted": it.accepted,
            }
            for it in log.iterations
        ],
        "best_index": log.best_index,
        "stop_reason": log.stop_reason,
    }


def context_from_json(params: PatientParams, obj: dict) -> PlanContext:
    from .plans import ConfigSegment

    settings = obj.get("settings")
    if not isinstance(settings, dict):
        raise ApiError(400, "invalid-context", "context needs a settings object")
    try:
        segment = ConfigSegment(
            start=0.0,
            basal=float(settings["basal"]),
            isf=float(settings["isf"]),
            cr=float(settings["cr"]),
            target=float(settings["target"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, "invalid-context", f"bad settings: {exc}") from None
    return PlanContext(
        params=params,
        scenario=scenario_from_json(_require(obj, "scenario")),
        settings=segment,
        glucose=float(_require(obj, "glucose")),
        spec=formula_from_text(_require(obj, "spec")),
        goal=str(obj.get("goal", "")),
        constraints=constraints_from_json(obj.get("constraints", {})),
    )


class ServiceState:
    def __init__(self, store_path, workers: int = 2, ui_dir: str | None = None):
        self.store = AppendOnlyStore(store_path)
        self.jobs = JobQueue(self.store, workers=workers)
        self.ui_dir = Path(ui_dir).resolve() if ui_dir else None

    # -- twins -----------------------------------------------------------

    def _twin_params(self, twin_id: str) -> PatientParams:
        record = self.store.get("twin", twin_id)
        if record is None:
            raise ApiError(404, "twin-not-found", f"no twin with id {twin_id!r}")
        return params_from_json(record["params"])

    def create_twin(self, body: dict) -> tuple[int, dict]:
        if "params" in body:
            params = params_from_json(body["params"])
            record = self.store.append("twin", {
                "params": params.as_dict(),
                "provenance": "manual",
            })
            return 201, record
        if "record" in body:
            usage = record_from_json(body["record"])
            init = params_from_json(body["init"]) if "init" in body \
                else params_from_json(_default_init())
            config = FitConfig(**body.get("fit", {}))
            try:
                result = fit(usage, init, bounds=body.get("bounds"), config=config)
            except ValueError as exc:
                raise ApiError(400, "fit-failed", str(exc)) from None
            record = self.store.append("twin", {
                "params": result.params.as_dict(),
                "provenance": {
                    "fit": {
                        "rmse": result.rmse,
                        "n_iterations": result.n_iterations,
                        "converged": result.converged,
                        "identifiability": {
                            "sensitivity": result.identifiability.sensitivity,
                            "condition_number": result.identifiability.condition_number,
                            "unidentifiable": list(result.identifiability.unidentifiable),
                        },
                    }
                },
            })
            return 201, record
        raise ApiError(400, "bad-request", "body must contain 'params' or 'record'")

    # -- simulation / evaluation ------------------------------------------

    def simulate(self, body: dict) -> tuple[int, dict]:
        params = self._twin_params(_require(body, "twin_id"))
        plan = plan_from_text(_require(body, "plan"))
        scenario = scenario_from_json(_require(body, "scenario"))
        dt = float(body.get("dt", 1.0))
        initial = None
        if "glucose" in body:
            initial = TwinState(g=float(body["glucose"]), x=0.0, i=params.ib,
                                q1=0.0, q2=0.0)
        from .twin import simulate as run

        trace = run(params, plan, scenario, dt=dt, initial=initial)
        stats = glycemic_metrics(trace)
        return 200, {"trace": trace_to_json(trace), "metrics": asdict(stats)}

    def evaluate(self, body: dict) -> tuple[int, dict]:
        params = self._twin_params(_require(body, "twin_id"))
        plan = plan_from_text(_require(body, "plan"))
        scenario = scenario_from_json(_require(body, "scenario"))
        phi = formula_from_text(_require(body, "spec"))
        dt = float(body.get("dt", 1.0))
        initial = None
        if "glucose" in body:
            initial = TwinState(g=float(body["glucose"]), x=0.0, i=params.ib,
                                q1=0.0, q2=0.0)
        trace, quality = evaluate_plan(params, plan, scenario, phi, dt=dt, initial=initial)
        return 200, {"quality": quality_to_json(quality), "trace": trace_to_json(trace)}

    # -- refinement jobs ---------------------------------------------------

    def refine(self, body: dict) -> tuple[int, dict]:
        params = self._twin_params(_require(body, "twin_id"))
        context = context_from_json(params, _require(body, "context"))
        planner = body.get("planner", "local")
        budget = int(_require(body, "budget"))
        seed = int(body.get("seed", 0))
        if planner == "local":
            def job() -> dict:
                best, log = local_search_refine(context, budget=budget, seed=seed)
                return {"best_plan": serialize_plan(best), "log": log_to_json(log)}
        elif planner == "llm":
            llm_cfg = LlmConfig(**body.get("llm", {}))

            def job() -> dict:
                try:
                    best, log, counter = llm_refine(context, llm_cfg, budget=budget)
                except PlannerFailure as exc:
                    return {
                        "error": str(exc),
                        "log": log_to_json(exc.log),
                        "hallucination": {"queries": exc.counter.queries,
                                          "irrelevant": exc.counter.irrelevant},
                    }
                return {
                    "best_plan": serialize_plan(best),
                    "log": log_to_json(log),
                    "hallucination": {"queries": counter.queries,
                                      "irrelevant": counter.irrelevant},
                }
        else:
            raise ApiError(400, "bad-request", f"unknown planner {planner!r}")
        job_id = self.jobs.submit(job)
        return 202, {"job_id": job_id}

    def get_job(self, job_id: str) -> tuple[int, dict]:
        record = self.store.get("job", job_id)
        if record is None:
            raise ApiError(404, "job-not-found", f"no job with id {job_id!r}")
        return 200, record

    # -- decisions ---------------------------------------------------------

    def create_decision(self, body: dict) -> tuple[int, dict]:
        twin_id = _require(body, "twin_id")
        if self.store.get("twin", twin_id) is None:
            raise ApiError(404, "twin-not-found", f"no twin with id {twin_id!r}")
        verdict = _require(body, "verdict")
        if verdict not in ("approved", "rejected"):
            raise ApiError(400, "bad-request",
                           "verdict must be 'approved' or 'rejected'")
        note = str(_require(body, "note")).strip()
        if not note:
            raise ApiError(400, "bad-request", "a reviewer note is required")
        plan_text = _require(body, "plan")
        plan_from_text(plan_text)   # decisions only record valid plans
        record = self.store.append("decision", {
            "twin_id": twin_id,
            "plan": plan_text,
            "verdict": verdict,
            "note": note,
        })
        return 201, record


def _default_init() -> dict:
    from .twin import NOMINAL_ADULT

    return NOMINAL_ADULT.as_dict()


class ApiHandler(BaseHTTPRequestHandler):
    state: ServiceState = None  # injected by make_server
    protocol_version = "HTTP/1.1"

    # -- plumbing ---------------------------------------------------------

    def log_message(self, *args):
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, "bad-request", f"body is not valid JSON: {exc}")
        if not isinstance(body, dict):
            raise ApiError(400, "bad-request", "body must be a JSON object")
        return body

    def _dispatch(self, handler) -> None:
        try:
            status, payload = handler()
        except ApiError as exc:
            self._send_json(exc.status, {
                "code": exc.code, "message": exc.message, "details": exc.details})
        except Exception as exc:
            traceback.print_exc()
            self._send_json(500, {
                "code": "internal-error", "message": str(exc), "details": []})
        else:
            self._send_json(status, payload)

    # -- routing ----------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        state = self.state
        if parts[:1] == ["twins"] and len(parts) == 2:
            self._dispatch(lambda: self._get_twin(parts[1]))
        elif parts == ["twins"]:
            self._dispatch(lambda: (200, {"twins": state.store.list("twin")}))
        elif parts[:1] == ["jobs"] and len(parts) == 2:
            self._dispatch(lambda: state.get_job(parts[1]))
        elif parts == ["decisions"]:
            query = parse_qs(url.query)
            filters = {}
            if "twin_id" in query:
                filters["twin_id"] = query["twin_id"][0]
            self._dispatch(
                lambda: (200, {"decisions": state.store.list("decision", **filters)}))
        elif state.ui_dir and (parts[:1] == ["ui"] or not parts):
            self._serve_static(parts[1:] if parts else [])
        else:
            self._dispatch(lambda: (_raise_not_found()))

    def _get_twin(self, twin_id: str):
        record = self.state.store.get("twin", twin_id)
        if record is None:
            raise ApiError(404, "twin-not-found", f"no twin with id {twin_id!r}")
        return 200, record

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        state = self.state
        routes = {
            ("twins",): state.create_twin,
            ("simulate",): state.simulate,
            ("evaluate",): state.evaluate,
            ("refine",): state.refine,
            ("decisions",): state.create_decision,
        }
        handler = routes.get(tuple(parts))
        if handler is None:
            self._dispatch(_raise_not_found)
        else:
            def run():
                return handler(self._read_body())
            self._dispatch(run)

    # -- static UI ---------------------------------------------------------

    def _serve_static(self, parts: list[str]) -> None:
        root = self.state.ui_dir
        target = (root / Path(*parts)) if parts else (root / "index.html")
        target = target.resolve()
        if root not in target.parents and target != root:
            self._send_json(404, {"code": "not-found", "message": "outside ui dir",
                                  "details": []})
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            self._send_json(404, {"code": "not-found", "message": "no such asset",
                                  "details": []})
            return
        body = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def _raise_not_found():
    raise ApiError(404, "not-found", "no such route")


def make_server(host: str, port: int, store_path, workers: int = 2,
                ui_dir: str | None = None) -> ThreadingHTTPServer:
    state = ServiceState(store_path, workers=workers, ui_dir=ui_dir)
    handler = type("BoundApiHandler", (ApiHandler,), {"state": state})
    server = ThreadingHTTPServer((host, port), handler)
    server.state = state
    return server
