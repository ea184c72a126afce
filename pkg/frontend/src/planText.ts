// Plan table editor <-> plan text format.
//
// The editor works on string-valued rows (raw form fields). Exported text
// follows the service grammar exactly, one record per line:
//
//   segment <start> <end> basal=<U/h> isf=<...> cr=<...> target=<...>
//   meal <time> carbs=<g>
//   bolus <time> units=<U>
//   suspend <mg/dL>
//
// Validation beyond "is this field a number" is the service's job: the
// 422 body from POST /simulate lists violations, which mapViolations
// attaches back to the offending editor row via line numbers.

export interface SegmentRow {
  start: string;
  end: string;
  basal: string;
  isf: string;
  cr: string;
  target: string;
}

export interface ActionRow {
  kind: "meal" | "bolus";
  time: string;
  value: string;
}

export interface PlanDraft {
  segments: SegmentRow[];
  actions: ActionRow[];
  suspend: string; // empty = no suspend record
}

export interface ExportedPlan {
  text: string;
  /** owner id of each emitted line, aligned with 1-based line numbers */
  owners: string[];
}

export function segmentOwner(index: number): string {
  return `segment-${index}`;
}

export function actionOwner(index: number): string {
  return `action-${index}`;
}

function numeric(raw: string): string | null {
  const text = raw.trim();
  if (!text) return null;
  return Number.isFinite(Number(text)) ? text : null;
}

/** Builds grammar-conformant text; rows with non-numeric fields throw. */
export function exportPlan(draft: PlanDraft): ExportedPlan {
  const lines: string[] = [];
  const owners: string[] = [];
  draft.segments.forEach((row, index) => {
    const fields = [row.start, row.end, row.basal, row.isf, row.cr, row.target]
      .map(numeric);
    if (fields.some((f) => f === null)) {
      throw new Error(`segment row ${index + 1} has a non-numeric field`);
    }
    const [start, end, basal, isf, cr, target] = fields as string[];
    lines.push(`segment ${start} ${end} basal=${basal} isf=${isf} cr=${cr} target=${target}`);
    owners.push(segmentOwner(index));
  });
  if (draft.suspend.trim()) {
    const threshold = numeric(draft.suspend);
    if (threshold === null) throw new Error("suspend threshold is not a number");
    lines.push(`suspend ${threshold}`);
    owners.push("suspend");
  }
  draft.actions.forEach((row, index) => {
    const time = numeric(row.time);
    const value = numeric(row.value);
    if (time === null || value === null) {
      throw new Error(`action row ${index + 1} has a non-numeric field`);
    }
    const key = row.kind === "meal" ? "carbs" : "units";
    lines.push(`${row.kind} ${time} ${key}=${value}`);
    owners.push(actionOwner(index));
  });
  return { text: lines.join("\n") + "\n", owners };
}

/** Loads plan text (e.g. a refined plan) back into editor rows. */
export function importPlan(text: string): PlanDraft {
  const draft: PlanDraft = { segments: [], actions: [], suspend: "" };
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    const tokens = line.split(/\s+/);
    const value = (token: string) => token.split("=")[1] ?? "";
    if (tokens[0] === "segment" && tokens.length === 7) {
      draft.segments.push({
        start: tokens[1] ?? "",
        end: tokens[2] ?? "",
        basal: value(tokens[3] ?? ""),
        isf: value(tokens[4] ?? ""),
        cr: value(tokens[5] ?? ""),
        target: value(tokens[6] ?? ""),
      });
    } else if ((tokens[0] === "meal" || tokens[0] === "bolus") && tokens.length === 3) {
      draft.actions.push({
        kind: tokens[0],
        time: tokens[1] ?? "",
        value: value(tokens[2] ?? ""),
      });
    } else if (tokens[0] === "suspend" && tokens.length === 2) {
      draft.suspend = tokens[1] ?? "";
    }
    // unknown records are dropped; the service re-validates on submit
  }
  return draft;
}

export interface MappedViolations {
  /** owner id -> violation messages for that editor row */
  byOwner: Record<string, string[]>;
  /** violations that name no parseable line */
  general: string[];
}

/** Attach service violations ("line N: ...") to the rows that emitted them. */
export function mapViolations(violations: string[], owners: string[]): MappedViolations {
  const byOwner: Record<string, string[]> = {};
  const general: string[] = [];
  for (const violation of violations) {
    const match = violation.match(/^line (\d+): ?(.*)$/);
    const lineNo = match ? Number(match[1]) : NaN;
    const owner = Number.isInteger(lineNo) ? owners[lineNo - 1] : undefined;
    if (owner && match) {
      (byOwner[owner] ??= []).push(match[2] ?? violation);
    } else {
      general.push(violation);
    }
  }
  return { byOwner, general };
}
