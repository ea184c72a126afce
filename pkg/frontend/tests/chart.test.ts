import { describe, expect, it } from "vitest";

import { subLevelRuns, traceChartSvg } from "../src/chart";
import type { TraceJson } from "../src/types";

const trace: TraceJson = {
  t0: 0,
  dt: 5,
  samples: [85, 80, 68, 65, 72, 120, 150],
  insulin_delivered: [0, 0, 0, 0, 0, 0, 0],
};

describe("subLevelRuns", () => {
  it("finds contiguous sub-threshold runs", () => {
    expect(subLevelRuns(trace.samples, 70)).toEqual([[2, 3]]);
    expect(subLevelRuns([60, 60, 80, 50], 70)).toEqual([[0, 1], [3, 3]]);
    expect(subLevelRuns([100, 100], 70)).toEqual([]);
  });

  it("boundary value is not below", () => {
    expect(subLevelRuns([70, 70], 70)).toEqual([]);
  });
});

describe("traceChartSvg", () => {
  it("draws the band, the trace and the hypo shading", () => {
    const svg = traceChartSvg(trace);
    expect(svg).toContain('class="band"');
    expect(svg).toContain('class="hypo-run"');
    const points = svg.match(/<polyline class="trace" points="([^"]+)"/)?.[1];
    expect(points).toBeDefined();
    expect(points!.split(" ")).toHaveLength(trace.samples.length);
  });

  it("marks scenario events", () => {
    const svg = traceChartSvg(trace, {
      scenario: { horizon: 30, meals: [[10, 40]], exercise: [[15, 10, 1.0]] },
    });
    expect(svg).toContain('class="meal-marker"');
    expect(svg).toContain('class="exercise-marker"');
  });

  it("omits markers without a scenario", () => {
    const svg = traceChartSvg(trace);
    expect(svg).not.toContain("meal-marker");
    expect(svg).not.toContain("exercise-marker");
  });

  it("skips hypo shading when the trace stays in range", () => {
    const safe = { ...trace, samples: [100, 110, 120] };
    expect(traceChartSvg(safe)).not.toContain("hypo-run");
  });
});
