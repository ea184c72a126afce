// Pure HTML builders for the metrics panel, refinement stream and decision
// history. Kept DOM-free so the parity contract is unit-testable: every
// number shown comes verbatim from a service response.

import type { QualityKey } from "./rawjson";
import type { DecisionRecord, IterationJson } from "./types";

const esc = (text: string): string =>
  text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

const METRIC_LABELS: Record<QualityKey, string> = {
  robustness: "STL robustness (mg/dL)",
  tir: "time in range 70-180",
  tar: "time above range",
  mean_glucose: "mean glucose (mg/dL)",
  hypo_episodes: "hypoglycemia episodes",
  severe_hypo_episodes: "severe hypoglycemia episodes",
  score: "plan quality score",
};

/** Renders raw response tokens verbatim; `tokens` comes from qualityTokens(). */
export function metricsPanelHtml(tokens: Record<QualityKey, string>): string {
  const rows = (Object.keys(METRIC_LABELS) as QualityKey[])
    .map((key) => {
      const danger = key === "robustness" && tokens[key].startsWith("-");
      return (
        `<div class="metric${danger ? " metric-danger" : ""}">` +
        `<span class="metric-label">${METRIC_LABELS[key]}</span>` +
        `<span class="metric-value" data-key="${key}">${esc(tokens[key])}</span></div>`
      );
    })
    .join("");
  return (
    `<div class="metrics-grid">${rows}</div>` +
    `<p class="risk-note">Projected risk for this plan: time in range, mean glucose ` +
    `and hypoglycemia counts above are simulated by the patient's twin; a negative ` +
    `robustness means the safety specification is violated.</p>`
  );
}

export function iterationListHtml(iterations: IterationJson[], bestIndex: number | null): string {
  if (!iterations.length) return `<p class="muted">no evaluations yet</p>`;
  const items = iterations
    .map((iteration, index) => {
      const classes = ["iteration"];
      if (iteration.accepted) classes.push("accepted");
      if (index === bestIndex) classes.push("best");
      return `<li class="${classes.join(" ")}">#${index + 1} ${esc(iteration.feedback)}</li>`;
    })
    .join("");
  return `<ol class="iterations">${items}</ol>`;
}

export function decisionListHtml(decisions: DecisionRecord[]): string {
  if (!decisions.length) return `<p class="muted">no decisions recorded for this twin</p>`;
  const items = decisions
    .map(
      (decision) =>
        `<li class="decision decision-${decision.verdict}">` +
        `<span class="verdict">${decision.verdict}</span> ` +
        `<span class="when">${esc(decision.created_at)}</span>` +
        `<blockquote>${esc(decision.note)}</blockquote>` +
        `<pre class="plan">${esc(decision.plan)}</pre></li>`,
    )
    .join("");
  return `<ul class="decisions">${items}</ul>`;
}
