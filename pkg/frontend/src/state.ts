/** Session state: one server document plus in-flight flags.
 *
 * The rendered view is a pure function of (document, flags) — deriveView
 * never consults anything else, so a commit acknowledgment (which replaces
 * the document wholesale with pending cleared) can never leave a stale
 * candidate grid behind.  All mutations run through SessionStore, which
 * serializes them with a busy flag: while one request is in flight every
 * other mutation is refused without touching the network.
 */

import { ApiRequestError } from "./api.js";
import type { BeamOptions, PollOptions, StepOptions } from "./api.js";
import type { JobDoc, SessionDoc, StepResponse } from "./types.js";

/** The slice of the API client the store depends on (stubbed in tests). */
export interface SessionApi {
  mediaUrl(path: string): string;
  createSession(image: Blob, filename?: string): Promise<{ id: string }>;
  getSession(sessionId: string): Promise<SessionDoc>;
  requestCandidates(
    sessionId: string,
    instruction: string,
    options?: StepOptions,
  ): Promise<StepResponse>;
  selectCandidate(sessionId: string, candidateId: string): Promise<SessionDoc>;
  startBeam(
    sessionId: string,
    instructions: string[],
    options?: BeamOptions,
  ): Promise<{ job_id: string }>;
  pollJob(jobId: string, options?: PollOptions): Promise<JobDoc>;
}

export interface ErrorInfo {
  message: string;
  /** Server said retrying may help (502 backend-unavailable). */
  retriable: boolean;
  /** A pending set already exists; offer replace=true. */
  offerReplace: boolean;
}

export interface BeamJobInfo {
  jobId: string;
  status: JobDoc["status"];
  traceUrl: string | null;
  error: string | null;
}

export interface Flags {
  busy: boolean;
  error: ErrorInfo | null;
  beamJob: BeamJobInfo | null;
}

export interface CandidateView {
  id: string;
  imageUrl: string;
  score: number;
  rank: number;
}

export interface TimelineStepView {
  index: number;
  instruction: string;
  imageUrl: string;
  score: number;
  seed: number;
  alternatives: number;
}

export interface SessionView {
  phase: "empty" | "active";
  sessionId: string | null;
  backgroundUrl: string | null;
  currentImageUrl: string | null;
  steps: TimelineStepView[];
  pendingInstruction: string | null;
  candidates: CandidateView[];
  busy: boolean;
  error: ErrorInfo | null;
  beamJob: BeamJobInfo | null;
  /** Inputs accept a new mutation right now. */
  canSubmit: boolean;
}

export const EMPTY_FLAGS: Flags = { busy: false, error: null, beamJob: null };

/** Pure projection: same (doc, flags) in, same view out, no hidden state. */
export function deriveView(doc: SessionDoc | null, flags: Flags): SessionView {
  if (doc === null) {
    return {
      phase: "empty",
      sessionId: null,
      backgroundUrl: null,
      currentImageUrl: null,
      steps: [],
      pendingInstruction: null,
      candidates: [],
      busy: flags.busy,
      error: flags.error,
      beamJob: flags.beamJob,
      canSubmit: false,
    };
  }
  const candidates = (doc.pending?.candidates ?? []).map((c, i) => ({
    id: c.id,
    imageUrl: c.url,
    score: c.score,
    rank: i + 1,
  }));
  return {
    phase: "active",
    sessionId: doc.id,
    backgroundUrl: doc.background_url,
    currentImageUrl: doc.current_image_url,
    steps: doc.steps.map((s, i) => ({
      index: i,
      instruction: s.instruction,
      imageUrl: s.url,
      score: s.score,
      seed: s.seed,
      alternatives: s.alternatives.length,
    })),
    pendingInstruction: doc.pending?.instruction ?? null,
    candidates,
    busy: flags.busy,
    error: flags.error,
    beamJob: flags.beamJob,
    canSubmit: !flags.busy,
  };
}

function toErrorInfo(err: unknown): ErrorInfo {
  if (err instanceof ApiRequestError) {
    return {
      message: `${err.reason} (${err.code})`,
      retriable: err.retriable,
      offerReplace: err.code === "pending-exists",
    };
  }
  const message = err instanceof Error ? err.message : String(err);
  return { message, retriable: true, offerReplace: false };
}

type Listener = (view: SessionView) => void;

export class SessionStore {
  private doc: SessionDoc | null = null;
  private flags: Flags = { ...EMPTY_FLAGS };
  private listeners: Listener[] = [];
  /** Remembered so the retry affordance can resend the exact request. */
  private lastStep: { instruction: string; n: number } | null = null;

  constructor(private readonly client: SessionApi) {}

  get view(): SessionView {
    return deriveView(this.doc, this.flags);
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    const view = this.view;
    for (const listener of this.listeners) listener(view);
  }

  mediaUrl(path: string): string {
    return this.client.mediaUrl(path);
  }

  /** Uploads a background and adopts the fresh session. */
  async createSession(image: Blob, filename = "background.png"): Promise<boolean> {
    return this.mutate(async () => {
      const { id } = await this.client.createSession(image, filename);
      this.doc = await this.client.getSession(id);
    });
  }

  /** Requests a candidate set.  Empty instructions never reach the network. */
  async requestCandidates(
    instruction: string,
    n: number,
    options: { replace?: boolean } = {},
  ): Promise<boolean> {
    const trimmed = instruction.trim();
    if (!trimmed) {
      this.flags = {
        ...this.flags,
        error: { message: "type an instruction first", retriable: false, offerReplace: false },
      };
      this.notify();
      return false;
    }
    const id = this.doc?.id;
    if (!id) return false;
    this.lastStep = { instruction: trimmed, n };
    return this.mutate(async () => {
      await this.client.requestCandidates(id, trimmed, {
        n,
        replace: options.replace ?? false,
      });
      this.doc = await this.client.getSession(id);
    });
  }

  /** Re-sends the last step request; used by retry and replace-pending. */
  async retryLastStep(options: { replace?: boolean } = {}): Promise<boolean> {
    if (!this.lastStep) return false;
    return this.requestCandidates(this.lastStep.instruction, this.lastStep.n, options);
  }

  /** Commits one pending candidate; the server answer replaces the doc. */
  async commit(candidateId: string): Promise<boolean> {
    const id = this.doc?.id;
    if (!id) return false;
    return this.mutate(
      async () => {
        this.doc = await this.client.selectCandidate(id, candidateId);
      },
      // A stale commit (double click, swept pending) must converge back to
      // what the server believes, so refetch on conflict.
      async () => {
        this.doc = await this.client.getSession(id);
      },
    );
  }

  async refresh(): Promise<boolean> {
    const id = this.doc?.id;
    if (!id) return false;
    return this.mutate(async () => {
      this.doc = await this.client.getSession(id);
    });
  }

  /** Starts a beam job and polls it to a terminal state (1s -> 5s backoff). */
  async runBeam(
    instructions: string[],
    options: { k?: number; n?: number; seed?: number; pollInitialMs?: number } = {},
  ): Promise<boolean> {
    const id = this.doc?.id;
    if (!id) return false;
    return this.mutate(async () => {
      const { job_id } = await this.client.startBeam(id, instructions, {
        k: options.k,
        n: options.n,
        seed: options.seed,
      });
      this.flags = {
        ...this.flags,
        beamJob: { jobId: job_id, status: "queued", traceUrl: null, error: null },
      };
      this.notify();
      const job = await this.client.pollJob(job_id, {
        initialMs: options.pollInitialMs ?? 1000,
        onUpdate: (update) => {
          this.flags = {
            ...this.flags,
            beamJob: {
              jobId: job_id,
              status: update.status,
              traceUrl: update.trace_url ?? null,
              error: update.error ?? null,
            },
          };
          this.notify();
        },
      });
      this.flags = {
        ...this.flags,
        beamJob: {
          jobId: job_id,
          status: job.status,
          traceUrl: job.trace_url ?? null,
          error: job.error ?? null,
        },
      };
      if (job.status === "failed") {
        throw new ApiRequestError(502, {
          code: "beam-failed",
          reason: job.error ?? "beam search failed",
          retriable: true,
        });
      }
    });
  }

  clearError(): void {
    this.flags = { ...this.flags, error: null };
    this.notify();
  }

  /** Runs one mutation under the busy flag; refused while one is in flight. */
  private async mutate(
    action: () => Promise<void>,
    onConflict?: () => Promise<void>,
  ): Promise<boolean> {
    if (this.flags.busy) return false;
    this.flags = { ...this.flags, busy: true, error: null };
    this.notify();
    try {
      await action();
      this.flags = { ...this.flags, busy: false, error: null };
      return true;
    } catch (err) {
      const conflict =
        err instanceof ApiRequestError && (err.status === 409 || err.status === 404);
      if (conflict && onConflict) {
        try {
          await onConflict();
        } catch {
          // keep the original error if even the refetch fails
        }
      }
      this.flags = { ...this.flags, busy: false, error: toErrorInfo(err) };
      return false;
    } finally {
      this.notify();
    }
  }
}
