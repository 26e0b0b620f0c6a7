import type {
  DqdvRequest,
  DqdvResponse,
  JobResponse,
  PlotDataRequest,
  PlotDataResponse,
  ProjectRow,
  TemplateCreateRequest,
  TemplateResponse,
  UploadDeclareResponse,
  VariableInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed wrapper over the HTTP API; every number the UI shows comes
 * from these responses. */
export class ApiClient {
  constructor(
    private baseUrl: string,
    private apiKey: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown,
                           raw?: ArrayBuffer | Uint8Array): Promise<T> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.apiKey}`,
    };
    let payload: BodyInit | undefined;
    if (raw !== undefined) {
      headers["Content-Type"] = "application/octet-stream";
      payload = raw instanceof Uint8Array
        ? raw.slice().buffer as ArrayBuffer
        : raw;
    } else if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      payload = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: payload,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = await response.json();
        detail = typeof doc.detail === "string" ? doc.detail : JSON.stringify(doc);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return response.json() as Promise<T>;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/api/health");
  }

  listProjects(filter?: string): Promise<{ projects: ProjectRow[] }> {
    const q = filter ? `?filter=${encodeURIComponent(filter)}` : "";
    return this.request("GET", `/api/projects${q}`);
  }

  declareUpload(fileName: string, projectName: string, declaredSize: number,
                chunkSize?: number,
                metadata?: Record<string, unknown>): Promise<UploadDeclareResponse> {
    return this.request("POST", "/api/uploads", {
      file_name: fileName,
      project_name: projectName,
      declared_size: declaredSize,
      chunk_size: chunkSize ?? null,
      metadata: metadata ?? {},
    });
  }

  putChunk(uploadId: string, n: number, data: ArrayBuffer | Uint8Array,
           digest: string): Promise<{ received: boolean[]; complete: boolean }> {
    return this.request(
      "PUT", `/api/uploads/${uploadId}/chunks/${n}?digest=${digest}`,
      undefined, data);
  }

  completeUpload(uploadId: string): Promise<JobResponse> {
    return this.request("POST", `/api/uploads/${uploadId}/complete`);
  }

  jobStatus(jobId: string): Promise<JobResponse> {
    return this.request("GET", `/api/jobs/${jobId}`);
  }

  plotData(body: PlotDataRequest): Promise<PlotDataResponse> {
    return this.request("POST", "/api/plot-data", body);
  }

  variables(): Promise<VariableInfo[]> {
    return this.request("GET", "/api/variables");
  }

  createTemplate(body: TemplateCreateRequest): Promise<TemplateResponse> {
    return this.request("POST", "/api/templates", body);
  }

  listTemplates(): Promise<TemplateResponse[]> {
    return this.request("GET", "/api/templates");
  }

  dqdv(body: DqdvRequest): Promise<DqdvResponse> {
    return this.request("POST", "/api/dqdv", body);
  }
}
