// Section editor: editable buffer plus diff against the previous revision.
// Edited text is posted byte-for-byte; approve/reject require a clean
// buffer so typed changes are never silently discarded.

import { ApiClient } from './api';
import { DiffLine, diffLines } from './diff';
import type { Checkpoint } from './types';

export class SectionEditorModel {
  private buffer: string;
  private pristine: string;

  constructor(
    private readonly api: ApiClient,
    readonly checkpoint: Checkpoint,
  ) {
    const section = checkpoint.payload.section;
    if (checkpoint.payload.kind !== 'section' || !section) {
      throw new Error('editor requires a section payload');
    }
    this.buffer = section.body;
    this.pristine = section.body;
  }

  get body(): string {
    return this.buffer;
  }

  get dirty(): boolean {
    return this.buffer !== this.pristine;
  }

  setBody(text: string): void {
    this.buffer = text;
  }

  revert(): void {
    this.buffer = this.pristine;
  }

  // Diff of the draft against its previous revision, as sent by the API.
  revisionDiff(): string {
    return this.checkpoint.payload.diff ?? '';
  }

  // Live diff of the buffer against the draft under review.
  bufferDiff(): DiffLine[] {
    return diffLines(this.pristine, this.buffer);
  }

  // A decision other than Edit is only submittable on a clean buffer.
  get canApprove(): boolean {
    return !this.dirty;
  }

  canReject(note: string): boolean {
    return !this.dirty && note.trim().length > 0;
  }

  get canSubmitEdit(): boolean {
    return this.dirty;
  }

  async approve(): Promise<Checkpoint> {
    if (!this.canApprove) {
      throw new Error('buffer has unsubmitted changes');
    }
    return this.api.postDecision(this.checkpoint.id, { decision: 'approve' });
  }

  async reject(note: string): Promise<Checkpoint> {
    if (!this.canReject(note)) {
      throw new Error('reject requires a clean buffer and a note');
    }
    return this.api.postDecision(this.checkpoint.id, { decision: 'reject', note });
  }

  async submitEdit(): Promise<Checkpoint> {
    if (!this.canSubmitEdit) {
      throw new Error('no changes to submit');
    }
    const decided = await this.api.postDecision(this.checkpoint.id, {
      decision: 'edit',
      edited_body: this.buffer, // exact buffer bytes, no normalization
    });
    this.pristine = this.buffer; // clean only after the 2xx
    return decided;
  }
}
