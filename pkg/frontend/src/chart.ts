// SVG glucose chart: shaded 70-180 target band, the trace polyline,
// sub-70 excursions highlighted, and meal/exercise event markers.
// Pure string building so it is testable without a DOM.

import type { ScenarioJson, TraceJson } from "./types";

export interface ChartOptions {
  width?: number;
  height?: number;
  lo?: number;
  hi?: number;
  scenario?: ScenarioJson;
}

const fmt = (x: number): string => {
  const s = x.toFixed(2);
  return s.replace(/\.?0+$/, "") || "0";
};

interface Scales {
  sx: (t: number) => number;
  sy: (v: number) => number;
  plotLeft: number;
  plotTop: number;
  plotWidth: number;
  plotHeight: number;
}

function makeScales(trace: TraceJson, width: number, height: number,
                    yLo: number, yHi: number): Scales {
  const plotLeft = 52;
  const plotTop = 24;
  const plotWidth = width - plotLeft - 14;
  const plotHeight = height - plotTop - 32;
  const t0 = trace.t0;
  const t1 = trace.t0 + trace.dt * (trace.samples.length - 1) || t0 + 1;
  return {
    sx: (t) => plotLeft + (plotWidth * (t - t0)) / (t1 - t0),
    sy: (v) => plotTop + (plotHeight * (yHi - v)) / (yHi - yLo),
    plotLeft,
    plotTop,
    plotWidth,
    plotHeight,
  };
}

/** Contiguous [startIndex, endIndex] runs of samples strictly below `level`. */
export function subLevelRuns(samples: number[], level: number): Array<[number, number]> {
  const runs: Array<[number, number]> = [];
  let start = -1;
  samples.forEach((value, index) => {
    if (value < level) {
      if (start < 0) start = index;
    } else if (start >= 0) {
      runs.push([start, index - 1]);
      start = -1;
    }
  });
  if (start >= 0) runs.push([start, samples.length - 1]);
  return runs;
}

export function traceChartSvg(trace: TraceJson, options: ChartOptions = {}): string {
  const width = options.width ?? 860;
  const height = options.height ?? 300;
  const lo = options.lo ?? 70;
  const hi = options.hi ?? 180;
  const samples = trace.samples;
  const yLo = Math.min(40, Math.min(...samples) - 10);
  const yHi = Math.max(260, Math.max(...samples) + 10);
  const { sx, sy, plotLeft, plotTop, plotWidth, plotHeight } =
    makeScales(trace, width, height, yLo, yHi);

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" class="glucose-chart">`,
    `<rect x="0" y="0" width="${width}" height="${height}" fill="white"/>`,
    `<rect class="band" x="${fmt(plotLeft)}" y="${fmt(sy(hi))}" width="${fmt(plotWidth)}" ` +
      `height="${fmt(sy(lo) - sy(hi))}" fill="#d7ecd9"/>`,
  ];

  // sub-70 excursions shaded red behind the trace
  for (const [startIdx, endIdx] of subLevelRuns(samples, lo)) {
    const x0 = sx(trace.t0 + startIdx * trace.dt);
    const x1 = sx(trace.t0 + endIdx * trace.dt);
    parts.push(
      `<rect class="hypo-run" x="${fmt(x0)}" y="${fmt(plotTop)}" ` +
        `width="${fmt(Math.max(x1 - x0, 1))}" height="${fmt(plotHeight)}" ` +
        `fill="#f6c8c8" opacity="0.7"/>`,
    );
  }

  // event markers from the scenario
  const scenario = options.scenario;
  if (scenario) {
    for (const [time] of scenario.meals) {
      parts.push(
        `<line class="meal-marker" x1="${fmt(sx(time))}" y1="${fmt(plotTop)}" ` +
          `x2="${fmt(sx(time))}" y2="${fmt(plotTop + plotHeight)}" ` +
          `stroke="#c98a2b" stroke-dasharray="4 3"/>`,
      );
    }
    for (const [start, duration] of scenario.exercise) {
      const x0 = sx(start);
      const x1 = sx(start + duration);
      parts.push(
        `<rect class="exercise-marker" x="${fmt(x0)}" y="${fmt(plotTop)}" ` +
          `width="${fmt(x1 - x0)}" height="6" fill="#7d9bd1"/>`,
      );
    }
  }

  // hourly grid
  const tEnd = trace.t0 + trace.dt * (samples.length - 1);
  for (let t = Math.ceil(trace.t0 / 60) * 60; t <= tEnd; t += 60) {
    parts.push(
      `<line x1="${fmt(sx(t))}" y1="${fmt(plotTop)}" x2="${fmt(sx(t))}" ` +
        `y2="${fmt(plotTop + plotHeight)}" stroke="#eeeeee"/>`,
      `<text x="${fmt(sx(t))}" y="${height - 10}" font-size="10" ` +
        `text-anchor="middle" fill="#666">${fmt(t)}</text>`,
    );
  }
  for (const level of [54, 70, 120, 180, 250]) {
    if (level >= yLo && level <= yHi) {
      parts.push(
        `<text x="${plotLeft - 6}" y="${fmt(sy(level) + 3)}" font-size="10" ` +
          `text-anchor="end" fill="#666">${level}</text>`,
      );
    }
  }

  const points = samples
    .map((value, index) => `${fmt(sx(trace.t0 + index * trace.dt))},${fmt(sy(value))}`)
    .join(" ");
  parts.push(
    `<polyline class="trace" points="${points}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>`,
    `</svg>`,
  );
  return parts.join("\n");
}
