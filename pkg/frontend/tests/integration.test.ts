// Cross-stack checks against the real service. Gated on SERVICE_URL;
// run via scripts/integration.sh, which boots the backend with the
// offline mock gateway and fixture providers.

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { ChecklistModel } from '../src/checklist';
import { SectionEditorModel } from '../src/editor';
import { RunMonitorModel } from '../src/monitor';
import type { Checkpoint } from '../src/types';

const SERVICE_URL = process.env.SERVICE_URL ?? '';

const runConfig = {
  topic: 'console integration drafting run',
  paper_kind: 'review',
  tool_mode: 'with_tool',
  strategy: 'zs',
  generator_model: 'mock-model',
  reviewer_model: 'mock-model',
  n_max: 6,
  top_n: 10,
  random_seed: 7,
  auto_approve: false,
  context_budget: { total_tokens: 2000 },
};

async function waitFor<T>(probe: () => Promise<T | null>, timeoutMs = 30000): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const value = await probe();
    if (value !== null) return value;
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
  throw new Error('timed out waiting for condition');
}

describe.skipIf(!SERVICE_URL)('console against the live service', () => {
  it('drives a run end to end with byte-faithful decisions', async () => {
    const api = new ApiClient(SERVICE_URL);
    const runId = `console-${Date.now()}`;
    const created = await fetch(`${SERVICE_URL}/runs`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ config: runConfig, run_id: runId }),
    });
    expect(created.status).toBe(201);

    const nextPending = () =>
      waitFor(async () => {
        const pending = await api.pendingCheckpoints(runId);
        return pending.length ? pending[0] : null;
      });

    // 1. idea checklist: selection arrives as exactly the chosen ids
    const ideasCheckpoint = await nextPending();
    expect(ideasCheckpoint.payload.candidate_type).toBe('ideas');
    const checklist = new ChecklistModel(api, ideasCheckpoint);
    checklist.toggle(0);
    checklist.toggle(2);
    const decidedChecklist = await checklist.submitSelection();
    expect(decidedChecklist.state).toBe('edited');
    expect(JSON.parse(decidedChecklist.edited_body!)).toEqual([0, 2]);

    // 2. edit a section draft with awkward bytes, byte-identical round trip
    const exactBody = 'Edited from console\t tabbed\n\n  double-spaced üñíçode ±';
    let editedKind: string | null = null;
    let done = false;
    while (!done) {
      const detail = await waitFor(async () => {
        const response = await fetch(`${SERVICE_URL}/runs/${runId}`);
        const body = await response.json();
        if (body.status === 'complete' || body.status === 'halted') return body;
        if (body.status === 'waiting_for_human') return body;
        return null;
      });
      if (detail.status === 'complete' || detail.status === 'halted') {
        done = true;
        break;
      }
      const checkpoint: Checkpoint = await nextPending();
      if (checkpoint.payload.kind === 'section' && checkpoint.stage === 'results' && !editedKind) {
        const editor = new SectionEditorModel(api, checkpoint);
        editor.setBody(exactBody);
        const decided = await editor.submitEdit();
        expect(decided.edited_body).toBe(exactBody);
        editedKind = checkpoint.payload.section!.kind;
      } else if (checkpoint.payload.kind === 'candidates') {
        await new ChecklistModel(api, checkpoint).approveAll();
      } else {
        const editor = new SectionEditorModel(api, checkpoint);
        await editor.approve();
      }
    }

    const manuscript = await api.getManuscript(runId);
    expect(manuscript.status).toBe('complete');
    const edited = manuscript.sections.find((s) => s.kind === editedKind);
    expect(edited?.body).toBe(exactBody);

    // 3. monitor totals equal the telemetry endpoint byte-for-byte
    const monitor = new RunMonitorModel(api, runId, () => ({ close: () => {} }));
    await monitor.connect();
    monitor.disconnect();
    await monitor.connect(); // reconnect reconstructs from GETs
    const raw = await (await fetch(`${SERVICE_URL}/runs/${runId}/telemetry`)).json();
    expect(monitor.totalCostUsd).toBe(raw.total_cost_usd);
    expect(monitor.cumulativeTokenCurve()).toEqual(raw.cumulative_tokens);
    expect(monitor.costBars().map((b) => b.costUsd)).toEqual(
      raw.stages.map((s: { cost_usd: string }) => s.cost_usd),
    );
  }, 120000);
});
