// Console-wide view state: run list, selection, pending checkpoint queue,
// non-destructive error banners. Conflicts (409) and missing resources
// (404) refresh the queue instead of mutating anything locally.

import { ApiClient, ApiError } from './api';
import { ChecklistModel } from './checklist';
import { SectionEditorModel } from './editor';
import type { Checkpoint, RunSummary } from './types';

export interface Banner {
  kind: 'conflict' | 'missing' | 'error';
  message: string;
}

export class ConsoleState {
  runs: RunSummary[] = [];
  selectedRunId: string | null = null;
  queue: Checkpoint[] = [];
  banners: Banner[] = [];

  constructor(private readonly api: ApiClient) {}

  async refreshRuns(): Promise<void> {
    this.runs = await this.api.listRuns();
  }

  async selectRun(runId: string): Promise<void> {
    this.selectedRunId = runId;
    await this.refreshQueue();
  }

  async refreshQueue(): Promise<void> {
    if (!this.selectedRunId) {
      this.queue = [];
      return;
    }
    this.queue = await this.api.pendingCheckpoints(this.selectedRunId);
  }

  openChecklist(checkpoint: Checkpoint): ChecklistModel {
    return new ChecklistModel(this.api, checkpoint);
  }

  openEditor(checkpoint: Checkpoint): SectionEditorModel {
    return new SectionEditorModel(this.api, checkpoint);
  }

  // Wrap a decision call so stale checkpoints surface as banners and the
  // queue re-syncs, per the no-optimistic-updates rule.
  async submitDecision<T>(action: () => Promise<T>): Promise<T | null> {
    try {
      const result = await action();
      await this.refreshQueue();
      return result;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.banners.push({ kind: 'conflict', message: 'Checkpoint was decided elsewhere.' });
        await this.refreshQueue();
        return null;
      }
      if (error instanceof ApiError && error.status === 404) {
        this.banners.push({ kind: 'missing', message: 'Checkpoint no longer exists.' });
        await this.refreshQueue();
        return null;
      }
      throw error;
    }
  }

  dismissBanner(index: number): void {
    this.banners.splice(index, 1);
  }
}
