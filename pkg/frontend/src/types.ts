// Payload shapes of the HTTP API this app consumes.

export interface ProjectRow {
  id: string;
  name: string;
  file_name: string;
  test_name: string;
  test_type: string;
  file_size: number;
  channel: number;
  num_cycles: number;
  created_at: string | null;
  status: "Pending" | "Processing" | "Ready" | "Failed";
  error: string;
  processing_message: string;
  organization_id: string | null;
}

export interface UploadDeclareResponse {
  upload_id: string;
  chunk_size: number;
  n_chunks: number;
}

export interface JobResponse {
  job_id: string;
  project_id: string;
  state: "Queued" | "Running" | "Succeeded" | "Failed";
  error: string;
  result_project_ids: string[];
}

export interface CycleSelectorSpec {
  mode: "all" | "interval" | "explicit" | "range";
  start?: number;
  step?: number;
  indices?: number[];
  lo?: number;
  hi?: number;
}

export interface PlotDataRequest {
  project_ids: string[];
  x?: string | null;
  y1?: string | null;
  y2?: string | null;
  template_id?: string | null;
  max_points?: number;
}

export interface SeriesPayload {
  project_id: string;
  project_label: string;
  variable: string;
  axis: 1 | 2;
  x: number[];
  y: (number | null)[];
}

export interface PlotDataResponse {
  x_variable: string;
  series: SeriesPayload[];
  formatting: Record<string, unknown>;
}

export interface TemplateCreateRequest {
  name: string;
  plot_kind: "cycle_stats" | "voltage_profile";
  selector: CycleSelectorSpec;
  x?: string | null;
  y1?: string | null;
  y2?: string | null;
  formatting?: Record<string, unknown>;
}

export interface TemplateResponse {
  template_id: string;
  name: string;
  plot_kind: string;
  selector: CycleSelectorSpec;
  x: string | null;
  y1: string | null;
  y2: string | null;
  formatting: Record<string, unknown>;
}

export interface VariableInfo {
  id: string;
  domain: "cycle" | "point";
  label: string;
}

export interface DqdvRequest {
  project_id: string;
  cycles: number[];
  direction: "charge" | "discharge";
  dv?: number;
  smooth_window?: number;
  with_peaks?: boolean;
}

export interface DqdvCurvePayload {
  cycle: number;
  direction: string;
  voltage: number[];
  dqdv: number[];
  peaks: { position: number; intensity: number; prominence: number }[];
}

export interface DqdvResponse {
  project_id: string;
  curves: DqdvCurvePayload[];
}
