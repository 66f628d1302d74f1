// Idea/tool/reference checklist: multi-select with a submit guard.
// Submission posts an Edit whose body is exactly the selected subset.

import { ApiClient } from './api';
import type { Checkpoint } from './types';

export class ChecklistModel {
  private readonly selected = new Set<number>();
  submitting = false;

  constructor(
    private readonly api: ApiClient,
    readonly checkpoint: Checkpoint,
  ) {
    if (checkpoint.payload.kind !== 'candidates') {
      throw new Error('checklist requires a candidates payload');
    }
  }

  get items(): unknown[] {
    return this.checkpoint.payload.items ?? [];
  }

  toggle(index: number): void {
    if (index < 0 || index >= this.items.length) {
      throw new Error(`index ${index} out of range`);
    }
    if (this.selected.has(index)) {
      this.selected.delete(index);
    } else {
      this.selected.add(index);
    }
  }

  isSelected(index: number): boolean {
    return this.selected.has(index);
  }

  selectedIndices(): number[] {
    return [...this.selected].sort((a, b) => a - b);
  }

  // Zero selected disables submission.
  get canSubmit(): boolean {
    return this.selected.size > 0 && !this.submitting;
  }

  async submitSelection(): Promise<Checkpoint> {
    if (!this.canSubmit) {
      throw new Error('nothing selected');
    }
    this.submitting = true;
    try {
      // no optimistic update: state changes only after a 2xx
      return await this.api.postDecision(this.checkpoint.id, {
        decision: 'edit',
        edited_body: JSON.stringify(this.selectedIndices()),
      });
    } finally {
      this.submitting = false;
    }
  }

  async approveAll(): Promise<Checkpoint> {
    return this.api.postDecision(this.checkpoint.id, { decision: 'approve' });
  }
}
