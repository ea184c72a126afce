"""LLM-backed planner client with prompt feedback and transcript replay.

The client speaks to any chat-completion HTTP endpoint (configurable base
URL, model name, bearer token read from an environment variable). Every
request/response pair can be recorded to a JSONL transcript and replayed
byte-for-byte later, so the refinement loop is testable with no network.

Each response is pushed through the plan parser; responses that fail to
parse or that violate the feasibility constraints count as irrelevant (the
hallucination metric is irrelevant responses per query) and trigger a
corrective back-prompt. Parsed, feasible plans are simulated and scored,
and the quality line is embedded in the next prompt. The loop stops at the
first plan with non-negative robustness or when the query budget is spent;
a best-effort unsafe result is never labeled safe.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .metrics import DEFAULT_WEIGHTS, ScoreWeights, evaluate_plan
from .plans import PlanValidationError, UsagePlan, parse_plan, serialize_plan
from .search import (
    Iteration, PlanContext, RefinementLog, check_feasibility, feedback_text, seed_plan,
)
from .stl import serialize_formula

PLAN_RECORD_KEYWORDS = ("segment", "meal", "bolus", "suspend")


class TransportError(RuntimeError):
    pass


class PlannerFailure(RuntimeError):
    """The planner endpoint failed for good; carries the partial log."""

    def __init__(self, message: str, log: RefinementLog, counter: "HallucinationCounter"):
        super().__init__(message)
        self.log = log
        self.counter = counter


@dataclass
class HallucinationCounter:
    """Irrelevant responses (unparseable or infeasible) per queries issued."""

    queries: int = 0
    irrelevant: int = 0

    @property
    def per_100_queries(self) -> float:
        return 100.0 * self.irrelevant / self.queries if self.queries else 0.0


@dataclass(frozen=True)
class LlmConfig:
    base_url: str = ""
    model: str = ""
    token_env: str = "GLUCOTWIN_LLM_TOKEN"
    timeout_s: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    transcript_record: str | None = None
    transcript_replay: str | None = None


class HttpTransport:
    """Blocking chat-completion POST with simple bounded retries."""

    def __init__(self, config: LlmConfig):
        if not config.base_url:
            raise ValueError("base_url is required for the HTTP transport")
        self.config = config

    def complete(self, messages: list[dict]) -> str:
        cfg = self.config
        payload = json.dumps({
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for _ in range(cfg.retries + 1):
            request = urllib.request.Request(url, data=payload, headers=headers)
            try:
                with urllib.request.urlopen(request, timeout=cfg.timeout_s) as response:
                    body = json.loads(response.read().decode("utf-8"))
                return body["choices"][0]["message"]["content"]
            except (urllib.error.URLError, OSError, KeyError, IndexError,
                    json.JSONDecodeError) as exc:
                last_error = exc
        raise TransportError(f"endpoint failed after {cfg.retries + 1} attempts: {last_error}")


class ReplayTransport:
    """Replays recorded responses in order; raises when the file runs dry."""

    def __init__(self, path: str):
        self.responses: list[str] = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                self.responses.append(json.loads(line)["response"])
        self.cursor = 0

    def complete(self, messages: list[dict]) -> str:
        if self.cursor >= len(self.responses):
            raise TransportError(
                f"replay transcript exhausted after {self.cursor} responses")
        text = self.responses[self.cursor]
        self.cursor += 1
        return text


class RecordingTransport:
    """Wraps a transport, appending each exchange to a JSONL transcript."""

    def __init__(self, inner, path: str):
        self.inner = inner
        self.path = path

    def complete(self, messages: list[dict]) -> str:
        response = self.inner.complete(messages)
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps({"request": messages, "response": response},
                                    sort_keys=True) + "\n")
        return response


def make_transport(config: LlmConfig):
    transport = (ReplayTransport(config.transcript_replay) if config.transcript_replay
                 else HttpTransport(config))
    if config.transcript_record:
        return RecordingTransport(transport, config.transcript_record)
    return transport


# -- prompt construction -------------------------------------------------------

GRAMMAR_HELP = """\
Respond ONLY with plan records, one per line, no prose:
segment <start_min> <end_min> basal=<U/h> isf=<mg/dL-per-U> cr=<g-per-U> target=<mg/dL>
meal <time_min> carbs=<g>
bolus <time_min> units=<U>
suspend <mg/dL>
Segments must be contiguous from 0 and cover the whole horizon."""


def _scenario_lines(context: PlanContext) -> str:
    lines = [f"horizon {context.scenario.horizon:g} min"]
    for t, carbs in context.scenario.meals:
        lines.append(f"unannounced meal at {t:g} min: {carbs:g} g")
    for start, dur, inten in context.scenario.exercise:
        lines.append(f"exercise at {start:g} min for {dur:g} min, intensity {inten:g}")
    return "\n".join(lines)


def _constraint_lines(context: PlanContext) -> str:
    c = context.constraints
    parts = []
    for name, value in (
        ("basal between", (c.basal_min, c.basal_max)),
        ("isf between", (c.isf_min, c.isf_max)),
        ("cr between", (c.cr_min, c.cr_max)),
        ("target between", (c.target_min, c.target_max)),
    ):
        lo, hi = value
        if lo is not None or hi is not None:
            parts.append(f"{name} {lo if lo is not None else '-inf'} and "
                         f"{hi if hi is not None else 'inf'}")
    if c.max_bolus_units is not None:
        parts.append(f"no bolus above {c.max_bolus_units:g} U")
    if c.max_boluses is not None:
        parts.append(f"at most {c.max_boluses} boluses")
    if c.max_meals is not None:
        parts.append(f"at most {c.max_meals} snacks")
    if c.max_total_carbs is not None:
        parts.append(f"at most {c.max_total_carbs:g} g of snack carbs in total")
    return "; ".join(parts) if parts else "none"


def build_context_prompt(context: PlanContext) -> str:
    return (
        f"Design an insulin usage plan for the horizon below.\n"
        f"Current CGM reading: {context.glucose:g} mg/dL\n"
        f"Current settings: basal={context.settings.basal:g} U/h, "
        f"isf={context.settings.isf:g}, cr={context.settings.cr:g}, "
        f"target={context.settings.target:g}\n"
        f"Goal: {context.goal or 'keep glucose safe'}\n"
        f"Scenario:\n{_scenario_lines(context)}\n"
        f"Safety specification (robustness must be >= 0): "
        f"{serialize_formula(context.spec)}\n"
        f"Feasibility constraints: {_constraint_lines(context)}\n\n"
        f"{GRAMMAR_HELP}"
    )


def extract_plan_text(response: str) -> str:
    """Keep only lines that look like plan records (LLMs love prose)."""
    kept = []
    for line in response.splitlines():
        stripped = line.strip()
        if stripped.startswith("```"):
            continue
        word = stripped.split(" ", 1)[0] if stripped else ""
        if word in PLAN_RECORD_KEYWORDS or stripped.startswith("#"):
            kept.append(stripped)
    return "\n".join(kept)


class LlmPlanner:
    """Single-shot planner interface over a transport."""

    def __init__(self, config: LlmConfig):
        self.config = config
        self.transport = make_transport(config)

    def propose(self, context: PlanContext, history: RefinementLog) -> UsagePlan:
        messages = [{"role": "user", "content": build_context_prompt(context)}]
        if history.iterations:
            last = history.iterations[-1]
            messages.append({"role": "user",
                             "content": f"Previous plan evaluation: {last.feedback}. "
                                        f"Improve the plan."})
        try:
            response = self.transport.complete(messages)
        except TransportError as exc:
            raise PlannerFailure(str(exc), history, HallucinationCounter(1, 0)) from exc
        return parse_plan(extract_plan_text(response))


def llm_refine(context: PlanContext, config: LlmConfig, budget: int,
               dt: float = 1.0, weights: ScoreWeights = DEFAULT_WEIGHTS,
               ) -> tuple[UsagePlan, RefinementLog, HallucinationCounter]:
    """Query/parse/simulate/back-prompt loop against the configured endpoint.

    Budget counts queries. Returns the first confirmed-safe plan, else the
    best-scoring evaluated plan (stop_reason "budget"); when nothing ever
    parsed, the status-quo seed plan is returned as the fallback.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget!r}")
    transport = make_transport(config)
    counter = HallucinationCounter()
    log = RefinementLog()
    messages = [{"role": "user", "content": build_context_prompt(context)}]

    def evaluate(plan: UsagePlan):
        _, quality = evaluate_plan(context.params, plan, context.scenario, context.spec,
                                   dt=dt, initial=context.initial_state(), weights=weights)
        return quality

    for _ in range(budget):
        try:
            response = transport.complete(messages)
        except TransportError as exc:
            log.stop_reason = "planner-failure"
            raise PlannerFailure(str(exc), log, counter) from exc
        counter.queries += 1
        messages.append({"role": "assistant", "content": response})

        try:
            plan = parse_plan(extract_plan_text(response))
        except PlanValidationError as exc:
            counter.irrelevant += 1
            messages.append({
                "role": "user",
                "content": "That response could not be parsed as a plan: "
                           + "; ".join(exc.violations[:5])
                           + ". " + GRAMMAR_HELP,
            })
            continue
        if plan.horizon + 1e-9 < context.scenario.horizon:
            counter.irrelevant += 1
            messages.append({
                "role": "user",
                "content": f"The plan must cover the full horizon of "
                           f"{context.scenario.horizon:g} min. " + GRAMMAR_HELP,
            })
            continue
        violations = check_feasibility(plan, context.constraints)
        if violations:
            counter.irrelevant += 1
            messages.append({
                "role": "user",
                "content": "The plan violates feasibility constraints: "
                           + "; ".join(str(v) for v in violations)
                           + ". Produce a plan that respects them. " + GRAMMAR_HELP,
            })
            continue

        quality = evaluate(plan)
        log.iterations.append(Iteration(plan, quality, feedback_text(quality)))
        if log.best_index is None or quality.score > log.iterations[log.best_index].quality.score:
            log.best_index = len(log.iterations) - 1
        if quality.robustness >= 0 and evaluate(plan).robustness >= 0:
            log.stop_reason = "safe"
            return plan, log, counter
        messages.append({
            "role": "user",
            "content": f"The plan is not safe yet. Evaluation: {feedback_text(quality)}. "
                       f"Propose an improved plan. " + GRAMMAR_HELP,
        })

    log.stop_reason = "budget"
    if log.best_index is not None:
        return log.iterations[log.best_index].plan, log, counter
    return seed_plan(context), log, counter
