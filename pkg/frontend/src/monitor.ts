// Live run monitor: stage/cost/time dashboard fed by the event stream.
//
// Every displayed number comes verbatim from the telemetry endpoint; the
// monitor never computes costs itself. On stream loss it degrades to
// 5-second polling, and any (re)connect reconstructs state from GETs, so
// missed events can never desynchronize the totals.

import { ApiClient } from './api';
import type { StreamFactory, StreamHandle } from './sse';
import type { RunDetail, RunEvent, StageUsage, TelemetrySummary } from './types';

export const POLL_INTERVAL_MS = 5000;

type Scheduler = (callback: () => void, ms: number) => unknown;
type Canceller = (handle: unknown) => void;

export interface CostBar {
  stage: string;
  costUsd: string; // verbatim API string, byte-comparable
  outputTokens: number;
  wallMs: number;
}

export class RunMonitorModel {
  telemetry: TelemetrySummary | null = null;
  detail: RunDetail | null = null;
  connected = false;
  polling = false;
  private stream: StreamHandle | null = null;
  private pollHandle: unknown = null;

  constructor(
    private readonly api: ApiClient,
    readonly runId: string,
    private readonly streamFactory: StreamFactory,
    private readonly schedule: Scheduler = (cb, ms) => setTimeout(cb, ms),
    private readonly cancel: Canceller = (h) => clearTimeout(h as number),
  ) {}

  async connect(): Promise<void> {
    await this.refresh(); // reconstruct before consuming live events
    this.stopPolling();
    this.stream = this.streamFactory(
      `/runs/${this.runId}/events`,
      (event) => void this.onEvent(event),
      () => this.onStreamLoss(),
    );
    this.connected = true;
  }

  disconnect(): void {
    this.stream?.close();
    this.stream = null;
    this.connected = false;
    this.stopPolling();
  }

  // State is always rebuilt from the GET endpoints, never from event
  // payloads, so a reconnecting client shows exactly what the API holds.
  async refresh(): Promise<void> {
    const [telemetry, detail] = await Promise.all([
      this.api.getTelemetry(this.runId),
      this.api.getRun(this.runId),
    ]);
    this.telemetry = telemetry;
    this.detail = detail;
  }

  private async onEvent(event: RunEvent): Promise<void> {
    if (
      event.type === 'stage_completed' ||
      event.type === 'run_completed' ||
      event.type === 'run_halted' ||
      event.type === 'checkpoint_created' ||
      event.type === 'checkpoint_decided'
    ) {
      await this.refresh();
    }
  }

  private onStreamLoss(): void {
    this.connected = false;
    this.stream?.close();
    this.stream = null;
    this.startPolling();
  }

  private startPolling(): void {
    if (this.polling) return;
    this.polling = true;
    const tick = async () => {
      if (!this.polling) return;
      await this.refresh();
      this.pollHandle = this.schedule(tick, POLL_INTERVAL_MS);
    };
    this.pollHandle = this.schedule(tick, POLL_INTERVAL_MS);
  }

  private stopPolling(): void {
    this.polling = false;
    if (this.pollHandle !== null) {
      this.cancel(this.pollHandle);
      this.pollHandle = null;
    }
  }

  // --- render data ---------------------------------------------------

  get totalCostUsd(): string {
    return this.telemetry?.total_cost_usd ?? '0.000000';
  }

  get totalWallMs(): number {
    return this.telemetry?.total_wall_ms ?? 0;
  }

  costBars(): CostBar[] {
    return (this.telemetry?.stages ?? []).map((stage: StageUsage) => ({
      stage: stage.stage,
      costUsd: stage.cost_usd,
      outputTokens: stage.output_tokens,
      wallMs: stage.wall_ms,
    }));
  }

  cumulativeTokenCurve(): number[] {
    return this.telemetry?.cumulative_tokens ?? [];
  }

  get haltedBanner(): string | null {
    if (this.detail?.status !== 'halted') return null;
    return this.detail.error ?? `run halted at ${this.detail.current_stage}`;
  }
}
