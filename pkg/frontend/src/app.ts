// Review console wiring: twin picker, scenario editor, plan table editor,
// what-if evaluation, refinement jobs, and approve/reject records.
//
// All glycemic numbers on screen come from service responses (the metrics
// panel renders raw body tokens); this file only moves data between the
// DOM and the API client.

import { ApiClient } from "./api";
import { traceChartSvg } from "./chart";
import {
  ActionRow,
  PlanDraft,
  SegmentRow,
  actionOwner,
  exportPlan,
  importPlan,
  mapViolations,
  segmentOwner,
} from "./planText";
import { decisionListHtml, iterationListHtml, metricsPanelHtml } from "./panels";
import { qualityTokens } from "./rawjson";
import type { RefineContext, ScenarioJson, TwinRecord } from "./types";

const api = new ApiClient("");

const $ = <T extends HTMLElement>(selector: string): T => {
  const node = document.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
};

// ---- state -------------------------------------------------------------

const draft: PlanDraft = {
  segments: [{ start: "0", end: "240", basal: "1.0", isf: "50", cr: "10", target: "120" }],
  actions: [],
  suspend: "",
};
let twins: TwinRecord[] = [];
let currentJob: string | null = null;
let jobTimer: number | undefined;

// ---- service status banner ----------------------------------------------

function showBanner(message: string): void {
  const banner = $("#banner");
  banner.textContent = "";
  banner.append(message + " ");
  const retry = document.createElement("button");
  retry.textContent = "retry";
  retry.addEventListener("click", () => {
    banner.hidden = true;
    void refreshTwins();
  });
  banner.append(retry);
  banner.hidden = false;
}

function handleFailure(status: number, message: string): void {
  if (status === 0) {
    showBanner("Service unreachable.");
  } else {
    setStatus(`error: ${message}`);
  }
}

function setStatus(text: string): void {
  $("#status").textContent = text;
}

// ---- twins ---------------------------------------------------------------

async function refreshTwins(): Promise<void> {
  const result = await api.listTwins();
  if (!result.ok) {
    handleFailure(result.status, result.error.message);
    return;
  }
  twins = result.body.twins;
  const picker = $("#twin-picker") as unknown as HTMLSelectElement;
  const previous = picker.value;
  picker.innerHTML = "";
  for (const twin of twins) {
    const option = document.createElement("option");
    option.value = twin.id;
    option.textContent = `${twin.id.slice(0, 8)} (${
      twin.provenance === "manual" ? "manual" : "fitted"
    })`;
    picker.append(option);
  }
  if (previous && twins.some((t) => t.id === previous)) picker.value = previous;
  $("#banner").hidden = true;
  await refreshDecisions();
}

function selectedTwin(): string {
  return ($("#twin-picker") as unknown as HTMLSelectElement).value;
}

// ---- scenario editor ------------------------------------------------------

function scenarioFromForm(): ScenarioJson {
  const horizon = Number(($("#horizon") as unknown as HTMLInputElement).value);
  const meals: Array<[number, number]> = [];
  for (const row of document.querySelectorAll<HTMLElement>("#meal-rows .event-row")) {
    const [time, carbs] = Array.from(row.querySelectorAll("input")).map((i) => Number(i.value));
    if (Number.isFinite(time) && Number.isFinite(carbs)) meals.push([time!, carbs!]);
  }
  const exercise: Array<[number, number, number]> = [];
  for (const row of document.querySelectorAll<HTMLElement>("#exercise-rows .event-row")) {
    const [start, duration, intensity] = Array.from(row.querySelectorAll("input"))
      .map((i) => Number(i.value));
    if ([start, duration, intensity].every(Number.isFinite)) {
      exercise.push([start!, duration!, intensity!]);
    }
  }
  return { horizon, meals, exercise };
}

function addEventRow(containerId: string, fields: Array<[string, string]>): void {
  const row = document.createElement("div");
  row.className = "event-row";
  for (const [placeholder, value] of fields) {
    const input = document.createElement("input");
    input.placeholder = placeholder;
    input.value = value;
    input.size = 6;
    row.append(input);
  }
  const remove = document.createElement("button");
  remove.textContent = "x";
  remove.addEventListener("click", () => row.remove());
  row.append(remove);
  $(`#${containerId}`).append(row);
}

// ---- plan table editor -----------------------------------------------------

const SEGMENT_FIELDS: Array<keyof SegmentRow> = ["start", "end", "basal", "isf", "cr", "target"];

function renderPlanEditor(): void {
  const body = $("#segment-rows");
  body.innerHTML = "";
  draft.segments.forEach((segment, index) => {
    const tr = document.createElement("tr");
    tr.dataset.owner = segmentOwner(index);
    for (const field of SEGMENT_FIELDS) {
      const td = document.createElement("td");
      const input = document.createElement("input");
      input.value = segment[field];
      input.size = 6;
      input.addEventListener("input", () => {
        segment[field] = input.value;
      });
      td.append(input);
      tr.append(td);
    }
    const td = document.createElement("td");
    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.addEventListener("click", () => {
      draft.segments.splice(index, 1);
      renderPlanEditor();
    });
    td.append(remove);
    tr.append(td);
    const errors = document.createElement("tr");
    errors.className = "row-errors";
    errors.dataset.errorsFor = segmentOwner(index);
    errors.innerHTML = `<td colspan="7"></td>`;
    body.append(tr, errors);
  });

  const actions = $("#action-rows");
  actions.innerHTML = "";
  draft.actions.forEach((action, index) => {
    const tr = document.createElement("tr");
    tr.dataset.owner = actionOwner(index);
    const kind = document.createElement("td");
    const select = document.createElement("select");
    for (const value of ["meal", "bolus"]) {
      const option = document.createElement("option");
      option.value = value;
      option.textContent = value;
      select.append(option);
    }
    select.value = action.kind;
    select.addEventListener("change", () => {
      action.kind = select.value as ActionRow["kind"];
    });
    kind.append(select);
    tr.append(kind);
    for (const field of ["time", "value"] as const) {
      const td = document.createElement("td");
      const input = document.createElement("input");
      input.value = action[field];
      input.size = 6;
      input.addEventListener("input", () => {
        action[field] = input.value;
      });
      td.append(input);
      tr.append(td);
    }
    const td = document.createElement("td");
    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.addEventListener("click", () => {
      draft.actions.splice(index, 1);
      renderPlanEditor();
    });
    td.append(remove);
    tr.append(td);
    const errors = document.createElement("tr");
    errors.className = "row-errors";
    errors.dataset.errorsFor = actionOwner(index);
    errors.innerHTML = `<td colspan="4"></td>`;
    actions.append(tr, errors);
  });
}

function clearRowErrors(): void {
  for (const row of document.querySelectorAll<HTMLElement>(".row-errors")) {
    const cell = row.firstElementChild as HTMLElement;
    cell.textContent = "";
  }
  $("#general-errors").textContent = "";
}

function showViolations(violations: string[], owners: string[]): void {
  clearRowErrors();
  const mapped = mapViolations(violations, owners);
  for (const [owner, messages] of Object.entries(mapped.byOwner)) {
    const row = document.querySelector<HTMLElement>(`[data-errors-for="${owner}"]`);
    if (row) (row.firstElementChild as HTMLElement).textContent = messages.join("; ");
  }
  $("#general-errors").textContent = mapped.general.join("; ");
}

// ---- evaluate --------------------------------------------------------------

async function runEvaluate(): Promise<void> {
  clearRowErrors();
  let exported;
  try {
    exported = exportPlan(draft);
  } catch (error) {
    $("#general-errors").textContent = String(error);
    return;
  }
  const scenario = scenarioFromForm();
  ($("#plan-text") as unknown as HTMLTextAreaElement).value = exported.text;
  setStatus("evaluating...");
  const result = await api.evaluate({
    twin_id: selectedTwin(),
    plan: exported.text,
    scenario,
    spec: ($("#spec") as unknown as HTMLInputElement).value,
    glucose: Number(($("#glucose") as unknown as HTMLInputElement).value),
  });
  if (!result.ok) {
    if (result.status === 422) {
      showViolations(result.error.details, exported.owners);
      setStatus("plan has validation errors");
    } else {
      handleFailure(result.status, result.error.message);
    }
    return;
  }
  $("#metrics").innerHTML = metricsPanelHtml(qualityTokens(result.raw));
  $("#chart").innerHTML = traceChartSvg(result.body.trace, { scenario });
  setStatus("evaluation complete");
}

// ---- refinement -------------------------------------------------------------

function refineContext(): RefineContext {
  const segment = draft.segments[0];
  return {
    glucose: Number(($("#glucose") as unknown as HTMLInputElement).value),
    settings: {
      basal: Number(segment?.basal ?? "1"),
      isf: Number(segment?.isf ?? "50"),
      cr: Number(segment?.cr ?? "10"),
      target: Number(segment?.target ?? "120"),
    },
    scenario: scenarioFromForm(),
    spec: ($("#spec") as unknown as HTMLInputElement).value,
    goal: ($("#goal") as unknown as HTMLInputElement).value,
  };
}

async function requestRefinement(): Promise<void> {
  const planner = ($("#planner") as unknown as HTMLSelectElement).value as "local" | "llm";
  const budget = Number(($("#budget") as unknown as HTMLInputElement).value);
  const seed = Number(($("#seed") as unknown as HTMLInputElement).value);
  const result = await api.refine({
    twin_id: selectedTwin(),
    context: refineContext(),
    planner,
    budget,
    seed,
  });
  if (!result.ok) {
    handleFailure(result.status, result.error.message);
    return;
  }
  currentJob = result.body.job_id;
  setStatus(`refinement job ${currentJob} submitted`);
  if (jobTimer) window.clearInterval(jobTimer);
  jobTimer = window.setInterval(() => void pollJob(), 500);
}

async function pollJob(): Promise<void> {
  if (!currentJob) return;
  const result = await api.job(currentJob);
  if (!result.ok) {
    handleFailure(result.status, result.error.message);
    return;
  }
  const job = result.body;
  if (job.result?.log) {
    $("#iterations").innerHTML = iterationListHtml(
      job.result.log.iterations, job.result.log.best_index);
  }
  setStatus(`refinement ${job.status}`);
  if (job.status === "done" || job.status === "failed") {
    if (jobTimer) window.clearInterval(jobTimer);
    jobTimer = undefined;
    if (job.status === "done" && job.result?.best_plan) {
      $("#use-best").removeAttribute("disabled");
      $("#use-best").dataset.plan = job.result.best_plan;
      setStatus(`refinement ${job.result.log.stop_reason === "safe" ? "found a safe plan" :
        "stopped at budget"}`);
    }
  }
}

function useBestPlan(): void {
  const text = $("#use-best").dataset.plan;
  if (!text) return;
  const loaded = importPlan(text);
  draft.segments = loaded.segments;
  draft.actions = loaded.actions;
  draft.suspend = loaded.suspend;
  ($("#suspend") as unknown as HTMLInputElement).value = loaded.suspend;
  renderPlanEditor();
  void runEvaluate();
}

// ---- decisions ---------------------------------------------------------------

async function recordDecision(verdict: "approved" | "rejected"): Promise<void> {
  const note = ($("#note") as unknown as HTMLTextAreaElement).value.trim();
  if (!note) {
    $("#general-errors").textContent = "a reviewer note is required to record a decision";
    return;
  }
  let exported;
  try {
    exported = exportPlan(draft);
  } catch (error) {
    $("#general-errors").textContent = String(error);
    return;
  }
  const result = await api.decide({
    twin_id: selectedTwin(),
    plan: exported.text,
    verdict,
    note,
  });
  if (!result.ok) {
    handleFailure(result.status, result.error.message);
    return;
  }
  setStatus(`decision recorded: ${verdict}`);
  ($("#note") as unknown as HTMLTextAreaElement).value = "";
  await refreshDecisions();
}

async function refreshDecisions(): Promise<void> {
  const twin = selectedTwin();
  if (!twin) return;
  const result = await api.decisions(twin);
  if (result.ok) {
    $("#decision-history").innerHTML = decisionListHtml(result.body.decisions);
  }
}

// ---- boot ----------------------------------------------------------------------

function boot(): void {
  renderPlanEditor();
  $("#refresh-twins").addEventListener("click", () => void refreshTwins());
  $("#twin-picker").addEventListener("change", () => void refreshDecisions());
  $("#add-meal").addEventListener("click", () =>
    addEventRow("meal-rows", [["time min", "60"], ["carbs g", "40"]]));
  $("#add-exercise").addEventListener("click", () =>
    addEventRow("exercise-rows", [["start min", "30"], ["duration", "30"], ["intensity", "1.0"]]));
  $("#add-segment").addEventListener("click", () => {
    const last = draft.segments[draft.segments.length - 1];
    draft.segments.push({
      start: last?.end ?? "0",
      end: String(Number(last?.end ?? "0") + 240),
      basal: last?.basal ?? "1.0",
      isf: last?.isf ?? "50",
      cr: last?.cr ?? "10",
      target: last?.target ?? "120",
    });
    renderPlanEditor();
  });
  $("#add-action").addEventListener("click", () => {
    draft.actions.push({ kind: "meal", time: "0", value: "15" });
    renderPlanEditor();
  });
  $("#suspend").addEventListener("input", () => {
    draft.suspend = ($("#suspend") as unknown as HTMLInputElement).value;
  });
  $("#simulate").addEventListener("click", () => void runEvaluate());
  $("#refine").addEventListener("click", () => void requestRefinement());
  $("#use-best").addEventListener("click", useBestPlan);
  $("#approve").addEventListener("click", () => void recordDecision("approved"));
  $("#reject").addEventListener("click", () => void recordDecision("rejected"));
  void refreshTwins();
}

document.addEventListener("DOMContentLoaded", boot);
