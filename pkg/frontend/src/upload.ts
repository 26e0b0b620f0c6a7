import type { ApiClient } from "./api.js";
import type { JobResponse } from "./types.js";

export interface UploadProgress {
  fileName: string;
  sentChunks: number;
  totalChunks: number;
  fraction: number;
}

export interface UploaderOptions {
  chunkSize?: number;
  concurrency?: number;
  retries?: number;
  retryDelayMs?: number;
  onProgress?: (progress: UploadProgress) => void;
}

const DEFAULT_CHUNK_SIZE = 8 * 1024 * 1024;

async function sha256Hex(data: ArrayBuffer): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", data);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

/** Chunked uploader: slices the file, sends chunks with bounded
 * concurrency, and retries transient failures.  Chunk PUTs are idempotent
 * server-side, so a retried chunk never duplicates data. */
export class ChunkedUploader {
  private chunkSize: number;
  private concurrency: number;
  private retries: number;
  private retryDelayMs: number;
  private onProgress?: (p: UploadProgress) => void;

  constructor(private api: ApiClient, options: UploaderOptions = {}) {
    this.chunkSize = options.chunkSize ?? DEFAULT_CHUNK_SIZE;
    this.concurrency = options.concurrency ?? 4;
    this.retries = options.retries ?? 3;
    this.retryDelayMs = options.retryDelayMs ?? 300;
    this.onProgress = options.onProgress;
  }

  async upload(file: Blob, fileName: string, projectName: string,
               metadata?: Record<string, unknown>): Promise<JobResponse> {
    if (!projectName.trim()) {
      throw new Error("a project name is required");
    }
    const declared = await this.api.declareUpload(
      fileName, projectName, file.size, this.chunkSize, metadata);
    const total = declared.n_chunks;
    let sent = 0;

    const sendChunk = async (n: number): Promise<void> => {
      const start = n * declared.chunk_size;
      const end = Math.min(file.size, start + declared.chunk_size);
      const bytes = await file.slice(start, end).arrayBuffer();
      const digest = await sha256Hex(bytes);
      let lastError: unknown;
      for (let attempt = 0; attempt <= this.retries; attempt++) {
        try {
          await this.api.putChunk(declared.upload_id, n, bytes, digest);
          sent += 1;
          this.onProgress?.({
            fileName,
            sentChunks: sent,
            totalChunks: total,
            fraction: sent / total,
          });
          return;
        } catch (error) {
          lastError = error;
          await sleep(this.retryDelayMs * 2 ** attempt);
        }
      }
      throw lastError;
    };

    // bounded concurrency over the chunk indices
    const queue = Array.from({ length: total }, (_, n) => n);
    const workers = Array.from(
      { length: Math.min(this.concurrency, total) },
      async () => {
        for (;;) {
          const n = queue.shift();
          if (n === undefined) return;
          await sendChunk(n);
        }
      });
    await Promise.all(workers);
    return this.api.completeUpload(declared.upload_id);
  }
}
