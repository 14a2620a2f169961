// Dashboard view model. State is derived exclusively from the event feed
// and GET responses; the portal never invents a state. Connection loss
// flips a staleness flag instead of guessing.

import type { Deployment, EventRecord } from "./types";

export interface DeploymentView {
  id: string;
  state: string;
  nodes: Record<string, string>;
  chains: Record<string, number>; // chain id -> epoch
  replanning: boolean;
}

export interface DashboardState {
  cursor: number;
  stale: boolean;
  locked: boolean; // one in-flight mutation at a time
  deployments: Record<string, DeploymentView>;
}

export function initialState(): DashboardState {
  return { cursor: 0, stale: false, locked: false, deployments: {} };
}

function view(state: DashboardState, depId: string): DeploymentView {
  let v = state.deployments[depId];
  if (!v) {
    v = { id: depId, state: "DRAFT", nodes: {}, chains: {}, replanning: false };
    state.deployments[depId] = v;
  }
  return v;
}

/** Seed or refresh a view from a GET /deployments/{id} body. */
export function absorbDeployment(state: DashboardState, dep: Deployment): void {
  const v = view(state, dep.id);
  v.state = dep.state;
  v.nodes = { ...dep.node_states };
  v.chains = Object.fromEntries(
    Object.entries(dep.chains).map(([cid, c]) => [cid, c.epoch]),
  );
}

/** Fold one server event into the view model. Unknown kinds are ignored. */
export function applyEvent(state: DashboardState, event: EventRecord): void {
  if (event.seq > state.cursor) {
    state.cursor = event.seq;
  }
  const depId = event.deployment_id;
  if (!depId) return;
  const v = view(state, depId);
  switch (event.kind) {
    case "DeploymentStateChanged": {
      const next = event.data["state"];
      if (typeof next === "string") {
        v.state = next;
      }
      break;
    }
    case "NodeStateChanged": {
      const next = event.data["state"];
      if (event.node_id && typeof next === "string") {
        v.nodes[event.node_id] = next;
      }
      break;
    }
    case "NodeTornDown": {
      if (event.node_id) delete v.nodes[event.node_id];
      break;
    }
    case "ReplanStarted":
      v.replanning = true;
      break;
    case "ReplanSucceeded":
    case "ReplanFailed":
      v.replanning = false;
      break;
    case "ChainRecompiled": {
      const chainId = event.data["chain_id"];
      const epoch = event.data["epoch"];
      if (typeof chainId === "string" && typeof epoch === "number") {
        v.chains[chainId] = epoch;
      }
      break;
    }
    default:
      break; // heartbeats, registrations, planning detail: nothing to render
  }
}

export function applyFeed(state: DashboardState, events: EventRecord[]): void {
  for (const event of events) {
    applyEvent(state, event);
  }
  state.stale = false;
}

export function markStale(state: DashboardState): void {
  state.stale = true;
}

/** Canvas locks when a mutation is posted ... */
export function lock(state: DashboardState): void {
  state.locked = true;
}

/** ... and unlocks only once the awaited epoch is observed. */
export function unlockIfEpoch(
  state: DashboardState,
  depId: string,
  chainId: string,
  awaitedEpoch: number,
): boolean {
  const v = state.deployments[depId];
  if (v && (v.chains[chainId] ?? 0) >= awaitedEpoch) {
    state.locked = false;
    return true;
  }
  return false;
}
