from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request

import pytest

import glucotwin as gt
from glucotwin.service import make_server
from tests.test_llm import SAFE_PLAN_TEXT, write_transcript

PLAN_TEXT = "segment 0 1440 basal={b} isf=50 cr=10 target=120\n"
EXERCISE_SCENARIO = {"horizon": 240, "exercise": [[30, 30, 1.0]]}


@pytest.fixture()
def server(tmp_path):
    srv = make_server("127.0.0.1", 0, tmp_path / "store.jsonl", workers=2)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()


@pytest.fixture()
def base(server):
    return f"http://127.0.0.1:{server.server_port}"


def request(base, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode())


def make_twin(base, params=None):
    payload = {"params": (params or gt.NOMINAL_ADULT).as_dict()}
    status, body = request(base, "POST", "/twins", payload)
    assert status == 201
    return body["id"]


class TestTwins:
    def test_create_and_fetch_manual_twin(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "GET", f"/twins/{twin_id}")
        assert status == 200
        assert body["provenance"] == "manual"
        assert body["params"]["gb"] == gt.NOMINAL_ADULT.gb

    def test_unknown_twin_404(self, base):
        status, body = request(base, "GET", "/twins/nope")
        assert status == 404
        assert body["code"] == "twin-not-found"

    def test_invalid_params_rejected(self, base):
        bad = gt.NOMINAL_ADULT.as_dict() | {"p1": -1.0}
        status, body = request(base, "POST", "/twins", {"params": bad})
        assert status == 400
        assert body["code"] == "invalid-params"

    def test_create_twin_by_fitting_record(self, base, synthetic_record, fit_init):
        payload = {
            "record": {
                "cgm": {"t0": 0.0, "dt": 5.0,
                        "samples": [float(v) for v in synthetic_record.cgm.samples]},
                "basal_log": synthetic_record.basal_log,
                "bolus_log": synthetic_record.bolus_log,
                "meal_log": synthetic_record.meal_log,
            },
            "init": fit_init.as_dict(),
            "fit": {"n_starts": 1, "max_nfev": 60},
        }
        status, body = request(base, "POST", "/twins", payload)
        assert status == 201
        assert body["provenance"]["fit"]["rmse"] < 0.5
        assert "alpha_ex" in body["provenance"]["fit"]["identifiability"]["unidentifiable"]

    def test_list_twins(self, base):
        a = make_twin(base)
        b = make_twin(base)
        status, body = request(base, "GET", "/twins")
        assert status == 200
        ids = {t["id"] for t in body["twins"]}
        assert {a, b} <= ids


class TestSimulateEvaluate:
    def test_equilibrium_simulation(self, base, params):
        twin_id = make_twin(base)
        plan = PLAN_TEXT.format(b=gt.equilibrium_basal_U_per_h(params))
        status, body = request(base, "POST", "/simulate", {
            "twin_id": twin_id, "plan": plan, "scenario": {"horizon": 1440}})
        assert status == 200
        samples = body["trace"]["samples"]
        assert len(samples) == 1441
        assert max(abs(s - params.gb) for s in samples) <= 1e-6
        assert body["metrics"]["tir"] == 1.0

    def test_plan_validation_errors_as_422(self, base):
        twin_id = make_twin(base)
        bad_plan = ("segment 0 60 basal=1 isf=50 cr=10 target=120\n"
                    "segment 90 120 basal=1 isf=50 cr=10 target=120\n")
        status, body = request(base, "POST", "/simulate", {
            "twin_id": twin_id, "plan": bad_plan, "scenario": {"horizon": 60}})
        assert status == 422
        assert body["code"] == "plan-invalid"
        assert any("gap" in v for v in body["details"])
        # the details are exactly the parser's violation strings
        with pytest.raises(gt.PlanValidationError) as err:
            gt.parse_plan(bad_plan)
        assert body["details"] == err.value.violations

    def test_evaluate_exercise_fixture_unsafe(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "POST", "/evaluate", {
            "twin_id": twin_id,
            "plan": "segment 0 240 basal=1 isf=50 cr=10 target=120\n",
            "scenario": EXERCISE_SCENARIO,
            "spec": "always 0 240 (ge 70)",
            "glucose": 85.0,
        })
        assert status == 200
        assert body["quality"]["robustness"] < 0
        assert body["quality"]["score"] < 0
        assert len(body["trace"]["samples"]) == 241

    def test_evaluate_parity_with_library(self, base, params):
        twin_id = make_twin(base)
        plan_text = "segment 0 240 basal=1 isf=50 cr=10 target=120\nmeal 15 carbs=25\n"
        status, body = request(base, "POST", "/evaluate", {
            "twin_id": twin_id, "plan": plan_text, "scenario": EXERCISE_SCENARIO,
            "spec": "always 0 240 (ge 70)", "glucose": 85.0,
        })
        assert status == 200
        plan = gt.parse_plan(plan_text)
        scenario = gt.Scenario(horizon=240.0, exercise=((30.0, 30.0, 1.0),))
        initial = gt.TwinState(g=85.0, x=0.0, i=params.ib, q1=0.0, q2=0.0)
        trace, quality = gt.evaluate_plan(
            params, plan, scenario, gt.parse_formula("always 0 240 (ge 70)"),
            initial=initial)
        assert body["quality"] == quality.as_dict()
        assert body["trace"]["samples"] == [float(v) for v in trace.samples]


def wait_for_job(base, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status, body = request(base, "GET", f"/jobs/{job_id}")
        assert status == 200
        if body["status"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise AssertionError("job did not finish in time")


REFINE_CONTEXT = {
    "glucose": 85.0,
    "settings": {"basal": 1.0, "isf": 50.0, "cr": 10.0, "target": 120.0},
    "scenario": EXERCISE_SCENARIO,
    "spec": "always 0 240 (ge 70)",
    "goal": "run for 30 minutes within the next hour",
    "constraints": {"max_bolus_units": 5.0, "max_meals": 3},
}


class TestRefineJobs:
    def test_local_refinement_job(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "POST", "/refine", {
            "twin_id": twin_id, "context": REFINE_CONTEXT,
            "planner": "local", "budget": 300, "seed": 7,
        })
        assert status == 202
        job = wait_for_job(base, body["job_id"])
        assert job["status"] == "done"
        log = job["result"]["log"]
        assert log["stop_reason"] == "safe"
        assert log["iterations"][0]["quality"]["robustness"] < 0
        best = gt.parse_plan(job["result"]["best_plan"])
        assert best.horizon == 240.0

    def test_llm_refinement_job_via_transcript(self, base, tmp_path):
        twin_id = make_twin(base)
        transcript = write_transcript(tmp_path / "replay.jsonl",
                                      ["no plan here", SAFE_PLAN_TEXT])
        status, body = request(base, "POST", "/refine", {
            "twin_id": twin_id, "context": REFINE_CONTEXT,
            "planner": "llm", "budget": 4,
            "llm": {"transcript_replay": transcript},
        })
        assert status == 202
        job = wait_for_job(base, body["job_id"])
        assert job["status"] == "done"
        assert job["result"]["hallucination"] == {"queries": 2, "irrelevant": 1}
        assert job["result"]["log"]["stop_reason"] == "safe"

    def test_unknown_job_404(self, base):
        status, body = request(base, "GET", "/jobs/nope")
        assert status == 404
        assert body["code"] == "job-not-found"

    def test_unknown_planner_rejected(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "POST", "/refine", {
            "twin_id": twin_id, "context": REFINE_CONTEXT,
            "planner": "quantum", "budget": 3})
        assert status == 400


class TestDecisions:
    def test_approve_and_list(self, base):
        twin_id = make_twin(base)
        plan = PLAN_TEXT.format(b=1.0)
        status, body = request(base, "POST", "/decisions", {
            "twin_id": twin_id, "plan": plan, "verdict": "approved",
            "note": "safe for the planned run"})
        assert status == 201
        status, listing = request(base, "GET", f"/decisions?twin_id={twin_id}")
        assert status == 200
        assert [d["id"] for d in listing["decisions"]] == [body["id"]]
        assert listing["decisions"][0]["note"] == "safe for the planned run"

    def test_note_required(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "POST", "/decisions", {
            "twin_id": twin_id, "plan": PLAN_TEXT.format(b=1.0),
            "verdict": "approved", "note": "  "})
        assert status == 400

    def test_same_payload_twice_creates_two_records(self, base):
        twin_id = make_twin(base)
        payload = {"twin_id": twin_id, "plan": PLAN_TEXT.format(b=1.0),
                   "verdict": "rejected", "note": "too aggressive overnight"}
        _, first = request(base, "POST", "/decisions", payload)
        _, second = request(base, "POST", "/decisions", payload)
        assert first["id"] != second["id"]
        _, listing = request(base, "GET", f"/decisions?twin_id={twin_id}")
        assert len(listing["decisions"]) == 2

    def test_decision_for_missing_twin_404(self, base):
        status, body = request(base, "POST", "/decisions", {
            "twin_id": "nope", "plan": PLAN_TEXT.format(b=1.0),
            "verdict": "approved", "note": "x"})
        assert status == 404


class TestStatelessness:
    def test_gets_never_mutate_the_store(self, base, server):
        twin_id = make_twin(base)
        request(base, "POST", "/decisions", {
            "twin_id": twin_id, "plan": PLAN_TEXT.format(b=1.0),
            "verdict": "approved", "note": "ok"})
        before = server.state.store.snapshot()
        request(base, "GET", "/twins")
        request(base, "GET", f"/twins/{twin_id}")
        request(base, "GET", f"/decisions?twin_id={twin_id}")
        request(base, "GET", "/twins/missing")
        request(base, "GET", "/jobs/missing")
        after = server.state.store.snapshot()
        assert before == after

    def test_store_survives_restart(self, base, server, tmp_path):
        twin_id = make_twin(base)
        from glucotwin.store import AppendOnlyStore

        reopened = AppendOnlyStore(server.state.store.path)
        assert reopened.get("twin", twin_id) is not None


class TestErrors:
    def test_unknown_route(self, base):
        status, body = request(base, "POST", "/frobnicate", {})
        assert status == 404
        assert body["code"] == "not-found"

    def test_malformed_json(self, base):
        req = urllib.request.Request(
            base + "/twins", data=b"{not json", method="POST",
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req) as resp:
                status, body = resp.status, json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            status, body = exc.code, json.loads(exc.read().decode())
        assert status == 400
        assert body["code"] == "bad-request"

    def test_missing_fields_flagged(self, base):
        twin_id = make_twin(base)
        status, body = request(base, "POST", "/evaluate", {"twin_id": twin_id})
        assert status == 400
        assert "plan" in body["message"]
