// Thin typed client over the run service. All mutations go through
// postDecision; the console cannot bypass checkpoint states.

import type {
  Checkpoint,
  DecisionBody,
  ManuscriptView,
  RunDetail,
  RunSummary,
  TelemetrySummary,
} from './types';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`API error ${status}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail: unknown = null;
      try {
        detail = (await response.json()).detail;
      } catch {
        // non-JSON error body; status alone is enough
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.request('/runs');
  }

  getRun(runId: string): Promise<RunDetail> {
    return this.request(`/runs/${runId}`);
  }

  getCheckpoints(runId: string): Promise<Checkpoint[]> {
    return this.request(`/runs/${runId}/checkpoints`);
  }

  async pendingCheckpoints(runId: string): Promise<Checkpoint[]> {
    const checkpoints = await this.getCheckpoints(runId);
    return checkpoints.filter((c) => c.state === 'pending');
  }

  postDecision(checkpointId: string, body: DecisionBody): Promise<Checkpoint> {
    return this.request(`/checkpoints/${checkpointId}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  getTelemetry(runId: string): Promise<TelemetrySummary> {
    return this.request(`/runs/${runId}/telemetry`);
  }

  getManuscript(runId: string): Promise<ManuscriptView> {
    return this.request(`/runs/${runId}/manuscript`);
  }
}
