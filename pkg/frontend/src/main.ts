import { ApiClient, ApiError } from "./api.js";
import { buildDqdvConfig, buildPlotConfig } from "./chart-view.js";
import {
  PlotBuilderState,
  buildPlotRequest,
  buildTemplateRequest,
  emptyState,
  validateState,
  withY1,
  withY2,
} from "./plot-builder.js";
import { buildProjectGroups } from "./projects.js";
import { ChunkedUploader } from "./upload.js";
import type { ProjectRow, VariableInfo } from "./types.js";

declare const Chart: new (ctx: HTMLCanvasElement, config: unknown) => {
  destroy(): void;
};

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

function getApi(): ApiClient {
  const base = localStorage.getItem("cb.baseUrl") ?? "";
  const key = localStorage.getItem("cb.apiKey") ?? "";
  return new ApiClient(base || window.location.origin, key);
}

function banner(message: string, isError = true): void {
  const el = $("banner");
  el.textContent = message;
  el.className = isError ? "banner error" : "banner info";
  el.hidden = !message;
}

async function guarded<T>(work: () => Promise<T>): Promise<T | undefined> {
  try {
    banner("");
    return await work();
  } catch (error) {
    banner(error instanceof ApiError ? error.message : String(error));
    return undefined;
  }
}

// ---------------------------------------------------------------------------
// projects tab
// ---------------------------------------------------------------------------

let cachedRows: ProjectRow[] = [];

async function refreshProjects(): Promise<void> {
  const filter = ($("project-filter") as HTMLInputElement).value;
  const result = await guarded(() => getApi().listProjects(filter));
  if (!result) return;  // fetch failures leave the previous table in place
  cachedRows = result.projects;
  renderProjectTable();
  renderProjectPicker();
}

function renderProjectTable(): void {
  const body = $("project-rows");
  body.innerHTML = "";
  for (const group of buildProjectGroups(cachedRows)) {
    const header = document.createElement("tr");
    header.className = "group-row";
    header.innerHTML = `<td colspan="8">Project: ${group.name}</td>`;
    body.appendChild(header);
    for (const view of group.rows) {
      const tr = document.createElement("tr");
      tr.className = `status-${view.color}`;
      if (view.tooltip) tr.title = view.tooltip;
      tr.innerHTML = [
        "", view.row.file_name, view.row.test_name, view.row.test_type,
        view.fileSizeText, String(view.row.channel),
        String(view.row.num_cycles),
        view.row.created_at ? new Date(view.row.created_at).toLocaleString() : "",
      ].map((cell) => `<td>${cell}</td>`).join("");
      body.appendChild(tr);
    }
  }
}

// ---------------------------------------------------------------------------
// upload tab
// ---------------------------------------------------------------------------

function uploadFormValid(): boolean {
  const name = ($("upload-name") as HTMLInputElement).value.trim();
  const files = ($("upload-files") as HTMLInputElement).files;
  return Boolean(name) && Boolean(files && files.length);
}

function refreshUploadButton(): void {
  ($("upload-go") as HTMLButtonElement).disabled = !uploadFormValid();
}

async function startUpload(): Promise<void> {
  const name = ($("upload-name") as HTMLInputElement).value.trim();
  const files = ($("upload-files") as HTMLInputElement).files;
  if (!name || !files) return;
  const list = $("upload-progress");
  list.innerHTML = "";
  const api = getApi();
  for (const file of Array.from(files)) {
    const row = document.createElement("li");
    row.textContent = `${file.name}: queued`;
    list.appendChild(row);
    const uploader = new ChunkedUploader(api, {
      onProgress: (p) => {
        row.textContent =
          `${file.name}: ${(p.fraction * 100).toFixed(0)}% ` +
          `(${p.sentChunks}/${p.totalChunks} chunks)`;
      },
    });
    const job = await guarded(() => uploader.upload(file, file.name, name));
    if (!job) {
      row.textContent = `${file.name}: upload failed`;
      continue;
    }
    row.textContent = `${file.name}: parsing (job ${job.job_id.slice(0, 8)})`;
    void watchJob(job.job_id, row, file.name);
  }
}

async function watchJob(jobId: string, row: HTMLElement,
                        fileName: string): Promise<void> {
  const api = getApi();
  for (;;) {
    const job = await guarded(() => api.jobStatus(jobId));
    if (!job) return;
    if (job.state === "Succeeded") {
      row.textContent = `${fileName}: done (${job.result_project_ids.length} channel(s))`;
      await refreshProjects();
      return;
    }
    if (job.state === "Failed") {
      row.textContent = `${fileName}: failed - ${job.error}`;
      await refreshProjects();
      return;
    }
    await new Promise((r) => setTimeout(r, 500));
  }
}

// ---------------------------------------------------------------------------
// plot tab
// ---------------------------------------------------------------------------

let builder: PlotBuilderState = emptyState();
let activeChart: { destroy(): void } | null = null;
let variables: VariableInfo[] = [];

function renderProjectPicker(): void {
  const container = $("plot-projects");
  container.innerHTML = "";
  for (const row of cachedRows.filter((r) => r.status === "Ready")) {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.value = row.id;
    box.checked = builder.projectIds.includes(row.id);
    box.addEventListener("change", () => {
      builder = {
        ...builder,
        projectIds: box.checked
          ? [...builder.projectIds, row.id]
          : builder.projectIds.filter((id) => id !== row.id),
      };
      refreshPlotControls();
    });
    label.appendChild(box);
    label.append(` ${row.name} (ch ${row.channel})`);
    container.appendChild(label);
  }
}

function fillVariableSelect(select: HTMLSelectElement, domain?: string,
                            allowEmpty = false): void {
  select.innerHTML = "";
  if (allowEmpty) {
    select.appendChild(new Option("(none)", ""));
  }
  for (const v of variables) {
    if (domain && v.domain !== domain) continue;
    select.appendChild(new Option(v.label, v.id));
  }
}

async function loadVariables(): Promise<void> {
  const result = await guarded(() => getApi().variables());
  if (!result) return;
  variables = result;
  fillVariableSelect($("plot-x") as HTMLSelectElement, "cycle");
  fillVariableSelect($("plot-y1") as HTMLSelectElement, "cycle");
  fillVariableSelect($("plot-y2") as HTMLSelectElement, "cycle", true);
  ($("plot-x") as HTMLSelectElement).value = "cycle_index";
  builder = { ...builder, x: "cycle_index" };
}

function refreshPlotControls(): void {
  const problems = validateState(builder);
  ($("plot-go") as HTMLButtonElement).disabled = problems.length > 0;
  ($("plot-save") as HTMLButtonElement).disabled =
    problems.length > 0 || !builder.templateName.trim();
  const y2 = $("plot-y2") as HTMLSelectElement;
  y2.disabled = builder.y1 === null;  // y2 needs y1 first
  $("plot-problems").textContent = problems.join("; ");
}

async function drawPlot(): Promise<void> {
  const payload = await guarded(() => getApi().plotData(buildPlotRequest(builder)));
  if (!payload) return;
  activeChart?.destroy();
  activeChart = new Chart($("plot-canvas") as HTMLCanvasElement,
                          buildPlotConfig(payload));
}

async function saveTemplate(): Promise<void> {
  const made = await guarded(() =>
    getApi().createTemplate(buildTemplateRequest(builder)));
  if (made) banner(`saved template ${made.name}`, false);
}

// ---------------------------------------------------------------------------
// dQ/dV tab
// ---------------------------------------------------------------------------

let dqdvChart: { destroy(): void } | null = null;

async function drawDqdv(): Promise<void> {
  const project = ($("dqdv-project") as HTMLSelectElement).value;
  const cyclesText = ($("dqdv-cycles") as HTMLInputElement).value;
  const cycles = cyclesText.split(",").map((s) => parseInt(s.trim(), 10))
    .filter((n) => Number.isFinite(n) && n >= 1);
  if (!project || cycles.length === 0) {
    banner("pick a project and at least one cycle");
    return;
  }
  const direction = ($("dqdv-direction") as HTMLSelectElement).value as
    "charge" | "discharge";
  const dv = parseFloat(($("dqdv-dv") as HTMLInputElement).value) || 0.005;
  const payload = await guarded(() => getApi().dqdv({
    project_id: project, cycles, direction, dv,
    smooth_window: 0, with_peaks: false,
  }));
  if (!payload) return;
  dqdvChart?.destroy();
  dqdvChart = new Chart($("dqdv-canvas") as HTMLCanvasElement,
                        buildDqdvConfig(payload));
}

function renderDqdvPicker(): void {
  const select = $("dqdv-project") as HTMLSelectElement;
  select.innerHTML = "";
  for (const row of cachedRows.filter((r) => r.status === "Ready")) {
    select.appendChild(new Option(
      `${row.name} (ch ${row.channel}, ${row.num_cycles} cycles)`, row.id));
  }
}

// ---------------------------------------------------------------------------
// wiring
// ---------------------------------------------------------------------------

function showTab(name: string): void {
  for (const section of document.querySelectorAll<HTMLElement>("[data-tab]")) {
    section.hidden = section.dataset.tab !== name;
  }
  if (name === "dqdv") renderDqdvPicker();
}

export function boot(): void {
  ($("settings-url") as HTMLInputElement).value =
    localStorage.getItem("cb.baseUrl") ?? "";
  ($("settings-key") as HTMLInputElement).value =
    localStorage.getItem("cb.apiKey") ?? "";
  $("settings-save").addEventListener("click", () => {
    localStorage.setItem("cb.baseUrl",
                         ($("settings-url") as HTMLInputElement).value.trim());
    localStorage.setItem("cb.apiKey",
                         ($("settings-key") as HTMLInputElement).value.trim());
    void refreshProjects();
    void loadVariables();
  });
  for (const button of document.querySelectorAll<HTMLElement>("[data-tab-button]")) {
    button.addEventListener("click", () =>
      showTab(button.dataset.tabButton as string));
  }
  $("project-refresh").addEventListener("click", () => void refreshProjects());
  $("project-filter").addEventListener("input", () => void refreshProjects());

  $("upload-name").addEventListener("input", refreshUploadButton);
  $("upload-files").addEventListener("change", refreshUploadButton);
  $("upload-go").addEventListener("click", () => void startUpload());

  $("plot-x").addEventListener("change", (e) => {
    builder = { ...builder, x: (e.target as HTMLSelectElement).value || null };
    refreshPlotControls();
  });
  $("plot-y1").addEventListener("change", (e) => {
    builder = withY1(builder, (e.target as HTMLSelectElement).value || null);
    refreshPlotControls();
  });
  $("plot-y2").addEventListener("change", (e) => {
    builder = withY2(builder, (e.target as HTMLSelectElement).value || null);
    refreshPlotControls();
  });
  $("plot-template-name").addEventListener("input", (e) => {
    builder = { ...builder,
                templateName: (e.target as HTMLInputElement).value };
    refreshPlotControls();
  });
  $("plot-go").addEventListener("click", () => void drawPlot());
  $("plot-save").addEventListener("click", () => void saveTemplate());
  $("dqdv-go").addEventListener("click", () => void drawDqdv());

  showTab("projects");
  refreshUploadButton();
  refreshPlotControls();
  void refreshProjects();
  void loadVariables();
}

boot();
