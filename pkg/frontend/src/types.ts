/** Wire types for the session service REST API. */

export interface CandidateDoc {
  id: string;
  url: string;
  score: number;
}

export interface AlternativeDoc extends CandidateDoc {
  seed: number;
}

export interface CommittedStepDoc {
  instruction: string;
  candidate_id: string;
  seed: number;
  score: number;
  url: string;
  alternatives: AlternativeDoc[];
}

export interface PendingDoc {
  instruction: string;
  candidates: CandidateDoc[];
}

export interface SessionDoc {
  id: string;
  created_at: number;
  updated_at: number;
  background_url: string;
  current_image_url: string;
  steps: CommittedStepDoc[];
  pending: PendingDoc | null;
}

export interface StepResponse {
  candidates: CandidateDoc[];
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobDoc {
  status: JobStatus;
  trace_url?: string;
  error?: string;
}

export interface ErrorBody {
  code: string;
  reason: string;
  retriable?: boolean;
}

export interface BeamTraceCandidateDoc {
  index: number;
  parent_beam: number;
  parent_history: number[];
  seed: number;
  score: number;
  path: string;
}

export interface BeamTraceStepDoc {
  step_index: number;
  instruction: string;
  cumulative_prompt: string;
  survivor_indices: number[];
  candidates: BeamTraceCandidateDoc[];
}

export interface BeamTraceDoc {
  instructions: string[];
  k: number;
  n: number;
  seed: number;
  steps: BeamTraceStepDoc[];
  final?: { path: string; score: number; history: number[]; step_index: number };
}
