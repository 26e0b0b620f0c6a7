import type {
  CycleSelectorSpec,
  PlotDataRequest,
  TemplateCreateRequest,
} from "./types.js";

/** What the plot composer UI holds: selected projects, one x variable, up
 * to two y variables, a cycle selector, and the template name for saving.
 * A second y variable is only meaningful once the first is chosen. */
export interface PlotBuilderState {
  projectIds: string[];
  x: string | null;
  y1: string | null;
  y2: string | null;
  selector: CycleSelectorSpec;
  templateName: string;
}

export function emptyState(): PlotBuilderState {
  return {
    projectIds: [],
    x: null,
    y1: null,
    y2: null,
    selector: { mode: "all" },
    templateName: "",
  };
}

/** y2 without y1 is never representable: choosing y2 first promotes it,
 * clearing y1 promotes y2 down. */
export function withY1(state: PlotBuilderState,
                       y1: string | null): PlotBuilderState {
  if (y1 === null) {
    return { ...state, y1: state.y2, y2: null };
  }
  return { ...state, y1 };
}

export function withY2(state: PlotBuilderState,
                       y2: string | null): PlotBuilderState {
  if (state.y1 === null && y2 !== null) {
    return { ...state, y1: y2, y2: null };
  }
  return { ...state, y2 };
}

export function validateState(state: PlotBuilderState): string[] {
  const problems: string[] = [];
  if (state.projectIds.length === 0) {
    problems.push("select at least one project");
  }
  if (!state.x) {
    problems.push("select an x variable");
  }
  if (!state.y1) {
    problems.push("select a y variable");
  }
  if (state.y2 !== null && state.y1 === null) {
    problems.push("a second y variable requires a first");
  }
  problems.push(...validateSelector(state.selector));
  return problems;
}

export function validateSelector(selector: CycleSelectorSpec): string[] {
  const problems: string[] = [];
  switch (selector.mode) {
    case "all":
      break;
    case "interval":
      if (!selector.start || selector.start < 1 ||
          !selector.step || selector.step < 1) {
        problems.push("interval start and step must be >= 1");
      }
      break;
    case "explicit":
      if (!selector.indices || selector.indices.length === 0) {
        problems.push("list at least one cycle");
      }
      break;
    case "range":
      if (selector.lo === undefined || selector.hi === undefined ||
          selector.lo < 1 || selector.lo > selector.hi) {
        problems.push("range needs 1 <= lo <= hi");
      }
      break;
    default:
      problems.push("unknown selector mode");
  }
  return problems;
}

/** The exact /api/plot-data body for a valid state. */
export function buildPlotRequest(state: PlotBuilderState,
                                 maxPoints = 2000): PlotDataRequest {
  const problems = validateState(state);
  if (problems.length) {
    throw new Error(problems.join("; "));
  }
  const body: PlotDataRequest = {
    project_ids: [...state.projectIds],
    x: state.x,
    y1: state.y1,
    max_points: maxPoints,
  };
  if (state.y2 !== null) {
    body.y2 = state.y2;
  }
  return body;
}

/** The /api/templates body that reproduces this state later. */
export function buildTemplateRequest(
  state: PlotBuilderState,
  plotKind: "cycle_stats" | "voltage_profile" = "cycle_stats",
): TemplateCreateRequest {
  if (!state.templateName.trim()) {
    throw new Error("template name is required");
  }
  const selectorProblems = validateSelector(state.selector);
  if (selectorProblems.length) {
    throw new Error(selectorProblems.join("; "));
  }
  return {
    name: state.templateName,
    plot_kind: plotKind,
    selector: normalizeSelector(state.selector),
    x: state.x,
    y1: state.y1,
    y2: state.y2,
    formatting: {},
  };
}

function normalizeSelector(selector: CycleSelectorSpec): CycleSelectorSpec {
  switch (selector.mode) {
    case "interval":
      return { mode: "interval", start: selector.start, step: selector.step };
    case "explicit":
      return { mode: "explicit", indices: [...(selector.indices ?? [])] };
    case "range":
      return { mode: "range", lo: selector.lo, hi: selector.hi };
    default:
      return { mode: "all" };
  }
}
