// Event-stream subscription with injectable transport so tests (and the
// polling fallback) never need a real EventSource.

import type { RunEvent } from './types';

export interface StreamHandle {
  close(): void;
}

export type StreamFactory = (
  url: string,
  onEvent: (event: RunEvent) => void,
  onError: () => void,
) => StreamHandle;

// Browser transport backed by EventSource.
export const browserStreamFactory: StreamFactory = (url, onEvent, onError) => {
  const source = new EventSource(url);
  source.onmessage = (message) => {
    try {
      onEvent(JSON.parse(message.data) as RunEvent);
    } catch {
      // malformed event payloads are dropped, state is rebuilt via GETs
    }
  };
  source.onerror = () => onError();
  return { close: () => source.close() };
};
