// Event-feed polling: one cursor, one interval, stale on any failure.

import type { GatewayClient } from "./api";
import type { DashboardState } from "./dashboard";
import { applyFeed, markStale } from "./dashboard";

export const DEFAULT_POLL_MS = 1000;

export function startPolling(
  client: GatewayClient,
  state: DashboardState,
  onChange: () => void,
  intervalMs: number = DEFAULT_POLL_MS,
): () => void {
  let stopped = false;

  async function poll(): Promise<void> {
    try {
      const feed = await client.events(state.cursor);
      applyFeed(state, feed.events);
    } catch {
      markStale(state);
    }
    if (!stopped) onChange();
  }

  void poll();
  const timer = setInterval(() => void poll(), intervalMs);
  return () => {
    stopped = true;
    clearInterval(timer);
  };
}
