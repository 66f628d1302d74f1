import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { ChecklistModel } from '../src/checklist';
import { candidatesCheckpoint, makeFetch } from './helpers';

const ideas = [0, 1, 2, 3, 4].map((i) => ({
  statement: `Idea ${i}`,
  rationale: 'r',
  novelty: 0.5,
  selected: false,
}));

describe('idea checklist', () => {
  it('posts exactly the selected indices', async () => {
    const { fetchImpl, captured } = makeFetch({
      'POST /checkpoints/cp-3/decision': () => ({
        json: { ...candidatesCheckpoint(ideas), state: 'edited' },
      }),
    });
    const model = new ChecklistModel(new ApiClient('', fetchImpl), candidatesCheckpoint(ideas));
    model.toggle(1);
    model.toggle(3);
    await model.submitSelection();

    const posted = JSON.parse(captured[0].body!);
    expect(posted.decision).toBe('edit');
    expect(JSON.parse(posted.edited_body)).toEqual([1, 3]);
  });

  it('disables submission with zero selected', async () => {
    const { fetchImpl, captured } = makeFetch({});
    const model = new ChecklistModel(new ApiClient('', fetchImpl), candidatesCheckpoint(ideas));
    expect(model.canSubmit).toBe(false);
    await expect(model.submitSelection()).rejects.toThrow(/nothing selected/);
    model.toggle(2);
    model.toggle(2); // toggled back off
    expect(model.canSubmit).toBe(false);
    expect(captured).toHaveLength(0);
  });

  it('selection order does not matter, indices are sorted', async () => {
    const { fetchImpl, captured } = makeFetch({
      'POST /checkpoints/cp-3/decision': () => ({
        json: { ...candidatesCheckpoint(ideas), state: 'edited' },
      }),
    });
    const model = new ChecklistModel(new ApiClient('', fetchImpl), candidatesCheckpoint(ideas));
    model.toggle(4);
    model.toggle(0);
    await model.submitSelection();
    expect(JSON.parse(JSON.parse(captured[0].body!).edited_body)).toEqual([0, 4]);
  });

  it('rejects out-of-range toggles', () => {
    const { fetchImpl } = makeFetch({});
    const model = new ChecklistModel(new ApiClient('', fetchImpl), candidatesCheckpoint(ideas));
    expect(() => model.toggle(9)).toThrow(/out of range/);
  });

  it('refuses non-candidate payloads', () => {
    const { fetchImpl } = makeFetch({});
    const sectionLike = {
      ...candidatesCheckpoint(ideas),
      payload: { kind: 'section' as const },
    };
    expect(() => new ChecklistModel(new ApiClient('', fetchImpl), sectionLike)).toThrow();
  });
});
