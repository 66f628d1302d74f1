// DOM shell: wires the models to a minimal three-pane layout
// (runs | checkpoint queue | monitor). All logic lives in the models.

import { ApiClient } from './api';
import { RunMonitorModel } from './monitor';
import { browserStreamFactory } from './sse';
import { ConsoleState } from './state';
import type { Checkpoint, IdeaCandidate } from './types';

const api = new ApiClient('');
const state = new ConsoleState(api);
let monitor: RunMonitorModel | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderBanners(root: HTMLElement): void {
  const host = el('div', 'banners');
  state.banners.forEach((banner, index) => {
    const row = el('div', `banner banner-${banner.kind}`, banner.message);
    const close = el('button', 'banner-close', 'dismiss');
    close.onclick = () => {
      state.dismissBanner(index);
      render(root);
    };
    row.appendChild(close);
    host.appendChild(row);
  });
  root.appendChild(host);
}

function renderRunList(root: HTMLElement): void {
  const panel = el('section', 'runs');
  panel.appendChild(el('h2', undefined, 'Runs'));
  for (const run of state.runs) {
    const row = el(
      'button',
      `run-row status-${run.status}`,
      `${run.run_id} · ${run.status} · ${run.current_stage} · ${run.pending_checkpoint_count} pending`,
    );
    row.onclick = async () => {
      await state.selectRun(run.run_id);
      monitor?.disconnect();
      monitor = new RunMonitorModel(api, run.run_id, browserStreamFactory);
      await monitor.connect();
      render(root);
    };
    panel.appendChild(row);
  }
  root.appendChild(panel);
}

function renderChecklist(host: HTMLElement, root: HTMLElement, checkpoint: Checkpoint): void {
  const model = state.openChecklist(checkpoint);
  const list = el('div', 'checklist');
  model.items.forEach((item, index) => {
    const label = el('label', 'checklist-item');
    const box = el('input') as HTMLInputElement;
    box.type = 'checkbox';
    box.onchange = () => {
      model.toggle(index);
      submit.disabled = !model.canSubmit;
    };
    label.appendChild(box);
    const idea = item as Partial<IdeaCandidate>;
    label.appendChild(
      el('span', undefined, typeof item === 'string' ? item : (idea.statement ?? JSON.stringify(item))),
    );
    list.appendChild(label);
  });
  const submit = el('button', 'submit', 'Submit selection') as HTMLButtonElement;
  submit.disabled = true; // zero selected
  submit.onclick = async () => {
    await state.submitDecision(() => model.submitSelection());
    render(root);
  };
  const approve = el('button', 'approve', 'Approve all');
  approve.onclick = async () => {
    await state.submitDecision(() => model.approveAll());
    render(root);
  };
  host.append(list, submit, approve);
}

function renderEditor(host: HTMLElement, root: HTMLElement, checkpoint: Checkpoint): void {
  const model = state.openEditor(checkpoint);
  const revisionDiff = el('pre', 'diff', model.revisionDiff() || '(first revision)');
  const textarea = el('textarea', 'editor-buffer') as HTMLTextAreaElement;
  textarea.value = model.body;
  const note = el('input', 'reject-note') as HTMLInputElement;
  note.placeholder = 'rejection note (required to reject)';

  const approve = el('button', 'approve', 'Approve') as HTMLButtonElement;
  const submitEdit = el('button', 'submit-edit', 'Submit edit') as HTMLButtonElement;
  const reject = el('button', 'reject', 'Reject') as HTMLButtonElement;

  const sync = () => {
    model.setBody(textarea.value);
    approve.disabled = !model.canApprove;
    submitEdit.disabled = !model.canSubmitEdit;
    reject.disabled = !model.canReject(note.value);
  };
  textarea.oninput = sync;
  note.oninput = sync;
  sync();

  approve.onclick = async () => {
    await state.submitDecision(() => model.approve());
    render(root);
  };
  submitEdit.onclick = async () => {
    await state.submitDecision(() => model.submitEdit());
    render(root);
  };
  reject.onclick = async () => {
    await state.submitDecision(() => model.reject(note.value));
    render(root);
  };
  host.append(revisionDiff, textarea, note, approve, submitEdit, reject);
}

function renderQueue(root: HTMLElement): void {
  const panel = el('section', 'queue');
  panel.appendChild(el('h2', undefined, 'Pending checkpoints'));
  for (const checkpoint of state.queue) {
    const card = el('div', 'checkpoint');
    card.appendChild(el('h3', undefined, `${checkpoint.stage} · ${checkpoint.id}`));
    if (checkpoint.payload.kind === 'candidates') {
      renderChecklist(card, root, checkpoint);
    } else {
      renderEditor(card, root, checkpoint);
    }
    panel.appendChild(card);
  }
  root.appendChild(panel);
}

function renderMonitor(root: HTMLElement): void {
  if (!monitor) return;
  const panel = el('section', 'monitor');
  panel.appendChild(el('h2', undefined, `Monitor · ${monitor.runId}`));
  const halted = monitor.haltedBanner;
  if (halted) panel.appendChild(el('div', 'banner banner-error', halted));
  panel.appendChild(el('div', 'totals', `total cost $${monitor.totalCostUsd} · ${monitor.totalWallMs} ms`));
  const bars = el('div', 'cost-bars');
  const maxTokens = Math.max(1, ...monitor.costBars().map((b) => b.outputTokens));
  for (const bar of monitor.costBars()) {
    const row = el('div', 'cost-bar');
    const fill = el('span', 'fill');
    fill.style.width = `${(100 * bar.outputTokens) / maxTokens}%`;
    row.appendChild(fill);
    row.appendChild(el('span', 'label', `${bar.stage} $${bar.costUsd} (${bar.outputTokens} tok)`));
    bars.appendChild(row);
  }
  panel.appendChild(bars);
  panel.appendChild(
    el('div', 'curve', `cumulative tokens: ${monitor.cumulativeTokenCurve().join(' → ') || 'n/a'}`),
  );
  root.appendChild(panel);
}

function render(root: HTMLElement): void {
  root.replaceChildren();
  renderBanners(root);
  renderRunList(root);
  renderQueue(root);
  renderMonitor(root);
}

export async function boot(): Promise<void> {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  await state.refreshRuns();
  render(root);
  setInterval(async () => {
    await state.refreshRuns();
    if (state.selectedRunId) await state.refreshQueue();
    render(root);
  }, 5000);
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  void boot();
}
