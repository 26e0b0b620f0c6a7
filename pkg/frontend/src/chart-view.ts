import type { DqdvResponse, PlotDataResponse } from "./types.js";

// chart.js is loaded as a UMD bundle; only the config objects are built here
// so they stay testable without a canvas.

const PALETTE = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

export interface ChartConfigLike {
  type: string;
  data: { datasets: unknown[] };
  options: Record<string, unknown>;
}

/** Dual-axis line chart: axis-1 series on the left y scale, axis-2 series
 * on the right. */
export function buildPlotConfig(payload: PlotDataResponse): ChartConfigLike {
  const hasRightAxis = payload.series.some((s) => s.axis === 2);
  const datasets = payload.series.map((series, k) => ({
    label: `${series.project_label} · ${series.variable}`,
    data: series.x.map((x, i) => ({ x, y: series.y[i] })),
    parsing: false,
    borderColor: PALETTE[k % PALETTE.length],
    backgroundColor: PALETTE[k % PALETTE.length],
    borderDash: series.axis === 2 ? [6, 3] : undefined,
    pointRadius: series.x.length > 200 ? 0 : 2,
    yAxisID: series.axis === 2 ? "y2" : "y",
  }));
  const scales: Record<string, unknown> = {
    x: {
      type: "linear",
      title: { display: true, text: payload.x_variable },
    },
    y: {
      type: "linear",
      position: "left",
      title: {
        display: true,
        text: payload.series.find((s) => s.axis === 1)?.variable ?? "",
      },
    },
  };
  if (hasRightAxis) {
    scales.y2 = {
      type: "linear",
      position: "right",
      grid: { drawOnChartArea: false },
      title: {
        display: true,
        text: payload.series.find((s) => s.axis === 2)?.variable ?? "",
      },
    };
  }
  const title = (payload.formatting as { title?: string }).title;
  return {
    type: "line",
    data: { datasets },
    options: {
      animation: false,
      responsive: true,
      plugins: {
        legend: { position: "bottom" },
        title: title ? { display: true, text: title } : { display: false },
      },
      scales,
    },
  };
}

/** One line per selected cycle, voltage on x, dQ/dV on y. */
export function buildDqdvConfig(payload: DqdvResponse): ChartConfigLike {
  const datasets = payload.curves.map((curve, k) => ({
    label: `cycle ${curve.cycle}`,
    data: curve.voltage.map((v, i) => ({ x: v, y: curve.dqdv[i] })),
    parsing: false,
    borderColor: PALETTE[k % PALETTE.length],
    backgroundColor: PALETTE[k % PALETTE.length],
    pointRadius: 0,
  }));
  return {
    type: "line",
    data: { datasets },
    options: {
      animation: false,
      responsive: true,
      plugins: { legend: { position: "bottom" } },
      scales: {
        x: { type: "linear", title: { display: true, text: "Voltage (V)" } },
        y: { type: "linear", title: { display: true, text: "dQ/dV (Ah/V)" } },
      },
    },
  };
}
