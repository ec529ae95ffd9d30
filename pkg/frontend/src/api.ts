/** Typed client for the session service REST API.
 *
 * Every method resolves with parsed JSON on 2xx and rejects with
 * ApiRequestError carrying the server's {code, reason, retriable} envelope
 * otherwise.  The fetch implementation is injectable for tests.
 */

import type {
  BeamTraceDoc,
  ErrorBody,
  JobDoc,
  SessionDoc,
  StepResponse,
} from "./types.js";

export class ApiRequestError extends Error {
  readonly status: number;
  readonly code: string;
  readonly reason: string;
  readonly retriable: boolean;

  constructor(status: number, body: ErrorBody) {
    super(`${body.code}: ${body.reason}`);
    this.name = "ApiRequestError";
    this.status = status;
    this.code = body.code;
    this.reason = body.reason;
    this.retriable = body.retriable ?? false;
  }
}

export interface StepOptions {
  n?: number;
  seed?: number;
  replace?: boolean;
}

export interface BeamOptions {
  k?: number;
  n?: number;
  seed?: number;
}

export interface PollOptions {
  /** First wait between polls; later waits back off by 1.5x. */
  initialMs?: number;
  /** Backoff ceiling. */
  maxMs?: number;
  /** Give up after this long. */
  timeoutMs?: number;
  /** Injectable sleeper, for tests. */
  sleep?: (ms: number) => Promise<void>;
  /** Called with each non-terminal poll result. */
  onUpdate?: (job: JobDoc) => void;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  /** Absolute URL for a server-relative media path. */
  mediaUrl(path: string): string {
    if (/^https?:/.test(path)) return path;
    return this.baseUrl + (path.startsWith("/") ? path : `/${path}`);
  }

  async health(): Promise<{ status: string; sessions: number }> {
    return this.request("GET", "/healthz");
  }

  async createSession(image: Blob, filename = "background.png"): Promise<{ id: string }> {
    const form = new FormData();
    // Wrap plain blobs in a File: some FormData implementations ignore the
    // filename argument of append(), and the server reads the part filename.
    const file =
      image instanceof File ? image : new File([image], filename, { type: image.type });
    form.append("image", file);
    return this.request("POST", "/api/sessions", { body: form });
  }

  async getSession(sessionId: string): Promise<SessionDoc> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  async requestCandidates(
    sessionId: string,
    instruction: string,
    options: StepOptions = {},
  ): Promise<StepResponse> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/steps`, {
      json: { instruction, ...options },
    });
  }

  async selectCandidate(sessionId: string, candidateId: string): Promise<SessionDoc> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/select`, {
      json: { candidate_id: candidateId },
    });
  }

  async startBeam(
    sessionId: string,
    instructions: string[],
    options: BeamOptions = {},
  ): Promise<{ job_id: string }> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(sessionId)}/beam`, {
      json: { instructions, ...options },
    });
  }

  async getJob(jobId: string): Promise<JobDoc> {
    return this.request("GET", `/api/jobs/${encodeURIComponent(jobId)}`);
  }

  /** Polls a beam job to a terminal state: 1s interval backing off to 5s. */
  async pollJob(jobId: string, options: PollOptions = {}): Promise<JobDoc> {
    const initial = options.initialMs ?? 1000;
    const max = options.maxMs ?? 5000;
    const timeout = options.timeoutMs ?? 10 * 60 * 1000;
    const sleep = options.sleep ?? defaultSleep;
    const started = Date.now();
    let wait = initial;
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.status === "done" || job.status === "failed") return job;
      options.onUpdate?.(job);
      if (Date.now() - started > timeout) {
        throw new Error(`beam job ${jobId} still ${job.status} after ${timeout}ms`);
      }
      await sleep(wait);
      wait = Math.min(max, wait * 1.5);
    }
  }

  async fetchTrace(traceUrl: string): Promise<BeamTraceDoc> {
    return this.request("GET", traceUrl);
  }

  /** Raw bytes of a media asset (candidate image, trace PNG). */
  async fetchMedia(path: string): Promise<Uint8Array> {
    const response = await this.fetchFn(this.mediaUrl(path));
    if (!response.ok) {
      throw new ApiRequestError(response.status, {
        code: "media-failed",
        reason: `GET ${path} -> ${response.status}`,
      });
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  private async request<T>(
    method: string,
    path: string,
    options: { json?: unknown; body?: BodyInit } = {},
  ): Promise<T> {
    const init: RequestInit = { method };
    if (options.json !== undefined) {
      init.body = JSON.stringify(options.json);
      init.headers = { "content-type": "application/json" };
    } else if (options.body !== undefined) {
      init.body = options.body;
    }
    const response = await this.fetchFn(this.mediaUrl(path), init);
    if (!response.ok) {
      let body: ErrorBody;
      try {
        body = (await response.json()) as ErrorBody;
      } catch {
        body = { code: "http-error", reason: `HTTP ${response.status}` };
      }
      throw new ApiRequestError(response.status, body);
    }
    return (await response.json()) as T;
  }
}
