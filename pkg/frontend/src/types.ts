// Payload shapes mirrored from the HTTP API. The console never computes
// scores, costs or lint results itself; these are display contracts only.

export interface RunSummary {
  run_id: string;
  status: 'created' | 'running' | 'waiting_for_human' | 'complete' | 'halted';
  current_stage: string;
  pending_checkpoint_count: number;
  created_at: string;
}

export interface RunDetail extends RunSummary {
  completed_stages: string[];
  paper_kind: string;
  tool_mode: string;
  strategy: string;
  warnings: string[];
  error: string | null;
  hallucination_event_count: number;
}

export interface IdeaCandidate {
  statement: string;
  rationale: string;
  novelty: number;
  selected: boolean;
}

export interface SectionPayload {
  kind: string;
  body: string;
  cited_keys: string[];
  revision: number;
}

export interface Checkpoint {
  id: string;
  run_id: string;
  stage: string;
  payload: {
    kind: 'candidates' | 'section';
    candidate_type?: 'ideas' | 'tools' | 'references';
    items?: unknown[];
    section?: SectionPayload;
    diff?: string;
  };
  state: 'pending' | 'approved' | 'edited' | 'rejected';
  decision_note: string | null;
  edited_body: string | null;
  decided_at: string | null;
}

export interface DecisionBody {
  decision: 'approve' | 'edit' | 'reject';
  edited_body?: string;
  note?: string;
  decision_token?: string;
}

export interface StageUsage {
  stage: string;
  calls: number;
  input_tokens: number;
  output_tokens: number;
  wall_ms: number;
  cost_usd: string;
}

export interface TelemetrySummary {
  run_id: string;
  total_cost_usd: string;
  total_wall_ms: number;
  total_input_tokens: number;
  total_output_tokens: number;
  stages: StageUsage[];
  cumulative_tokens: number[];
}

export interface RunEvent {
  type: string;
  run_id: string;
  seq: number;
  at: string;
  stage?: string;
  checkpoint_id?: string;
  decision?: string;
}

export interface ManuscriptView {
  run_id: string;
  status: string;
  in_progress: boolean;
  sections: SectionPayload[];
  tex?: string;
  bib?: string;
}
