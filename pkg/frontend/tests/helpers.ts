// Shared test doubles: scripted fetch and a controllable event stream.

import type { FetchLike } from '../src/api';
import type { StreamFactory, StreamHandle } from '../src/sse';
import type { RunEvent } from '../src/types';

export interface CapturedRequest {
  url: string;
  method: string;
  body: string | null;
}

export type RouteHandler = (request: CapturedRequest) => { status?: number; json: unknown };

export function makeFetch(routes: Record<string, RouteHandler>): {
  fetchImpl: FetchLike;
  captured: CapturedRequest[];
} {
  const captured: CapturedRequest[] = [];
  const fetchImpl: FetchLike = async (input, init) => {
    const request: CapturedRequest = {
      url: input,
      method: init?.method ?? 'GET',
      body: typeof init?.body === 'string' ? init.body : null,
    };
    captured.push(request);
    const key = `${request.method} ${input}`;
    const handler = routes[key] ?? routes[input];
    if (!handler) {
      return new Response(JSON.stringify({ detail: 'not found' }), { status: 404 });
    }
    const result = handler(request);
    return new Response(JSON.stringify(result.json), { status: result.status ?? 200 });
  };
  return { fetchImpl, captured };
}

export class FakeStream {
  handles: Array<{ url: string; closed: boolean }> = [];
  private onEvent: ((event: RunEvent) => void) | null = null;
  private onError: (() => void) | null = null;

  factory: StreamFactory = (url, onEvent, onError): StreamHandle => {
    const record = { url, closed: false };
    this.handles.push(record);
    this.onEvent = onEvent;
    this.onError = onError;
    return { close: () => (record.closed = true) };
  };

  emit(event: Partial<RunEvent> & { type: string }): void {
    this.onEvent?.({ run_id: 'r', seq: 1, at: 't', ...event } as RunEvent);
  }

  fail(): void {
    this.onError?.();
  }
}

export function telemetryPayload(overrides: Record<string, unknown> = {}) {
  return {
    run_id: 'r-1',
    total_cost_usd: '0.001234',
    total_wall_ms: 420,
    total_input_tokens: 900,
    total_output_tokens: 1234,
    stages: [
      { stage: 'ideation', calls: 1, input_tokens: 100, output_tokens: 300, wall_ms: 40, cost_usd: '0.000300' },
      { stage: 'abstract', calls: 2, input_tokens: 800, output_tokens: 934, wall_ms: 380, cost_usd: '0.000934' },
    ],
    cumulative_tokens: [400, 2134],
    ...overrides,
  };
}

export function runDetailPayload(overrides: Record<string, unknown> = {}) {
  return {
    run_id: 'r-1',
    status: 'running',
    current_stage: 'abstract',
    pending_checkpoint_count: 0,
    created_at: 't0',
    completed_stages: ['ideation', 'title'],
    paper_kind: 'review',
    tool_mode: 'with_tool',
    strategy: 'zero_shot',
    warnings: [],
    error: null,
    hallucination_event_count: 0,
    ...overrides,
  };
}

export function sectionCheckpoint(body: string, diff = '') {
  return {
    id: 'cp-7',
    run_id: 'r-1',
    stage: 'abstract',
    payload: {
      kind: 'section' as const,
      section: { kind: 'abstract', body, cited_keys: [], revision: 0 },
      diff,
    },
    state: 'pending' as const,
    decision_note: null,
    edited_body: null,
    decided_at: null,
  };
}

export function candidatesCheckpoint(items: unknown[]) {
  return {
    id: 'cp-3',
    run_id: 'r-1',
    stage: 'ideation',
    payload: { kind: 'candidates' as const, candidate_type: 'ideas' as const, items },
    state: 'pending' as const,
    decision_note: null,
    edited_body: null,
    decided_at: null,
  };
}
