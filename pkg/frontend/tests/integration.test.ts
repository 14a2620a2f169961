// End-to-end transparency against a LIVE gateway: the portal session and an
// equivalent raw-API script must leave the server in the same state.
// Skipped unless ZTPOM_GATEWAY_URL points at a running gateway.

import { describe, expect, it } from "vitest";
import { GatewayClient } from "../src/api";
import { WorkflowDraft } from "../src/workflow";
import { absorbDeployment, applyFeed, initialState } from "../src/dashboard";
import type { CatalogEntry, Deployment } from "../src/types";

const base = process.env.ZTPOM_GATEWAY_URL;

async function driveAgents(client: GatewayClient, dep: Deployment): Promise<void> {
  // speak the agent protocol over the wire so the deployment can go ACTIVE
  const tokens: Record<string, string> = {};
  for (const [node, provider] of Object.entries(dep.placements).sort()) {
    const resp = await fetch(`${base}/agent/hello`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ deployment: dep.id, node, provider }),
    });
    tokens[node] = (await resp.json()).token;
  }
  const now = (await client.events(0)).now;
  await client.tick(now + 1);
  for (const token of Object.values(tokens)) {
    await fetch(`${base}/agent/recipe?token=${token}`);
  }
  await client.tick(now + 2);
  for (const token of Object.values(tokens)) {
    await fetch(`${base}/agent/status`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token, phase: "READY", payload: {} }),
    });
  }
}

function shape(dep: Deployment) {
  // identifier-independent view of the server state
  return {
    state: dep.state,
    nodes: Object.fromEntries(
      Object.entries(dep.node_states).map(([n, s]) => [n, s]),
    ),
    epochs: Object.values(dep.chains).map((c) => c.epoch),
    placements: Object.entries(dep.placements)
      .map(([n, p]) => `${n}@${p}`)
      .sort(),
  };
}

describe.skipIf(!base)("live gateway transparency", () => {
  it("portal session and raw API script converge to the same state", async () => {
    const stamp = Date.now().toString(36);
    const portal = new GatewayClient(base!);

    // -- portal-side session: compose 3 functions, deploy, drive agents, reorder
    const catalogue = (await portal.catalogue()) as CatalogEntry[];
    const byType = new Map(catalogue.map((e) => [e.service_type, e]));
    const draft = new WorkflowDraft();
    for (const t of ["transcode", "color-grade", "overlay"]) {
      const entry = byType.get(t);
      expect(entry, `catalogue missing ${t}`).toBeDefined();
      draft.addFromOffer(entry!);
    }
    const doc = draft.toBlueprint({
      blueprintId: `portal-${stamp}`,
      source: { domain: "C", mac: "0a:00:00:00:00:01" },
      sink: { domain: "C", mac: "0a:00:00:00:00:02" },
      qos: { max_latency_ms: 80, max_jitter_ms: null, min_bandwidth_mbps: 100 },
    });
    const ref = await portal.registerBlueprint(doc);
    let dep = await portal.createDeployment(ref.id);
    await driveAgents(portal, dep);
    dep = await portal.getDeployment(dep.id);
    expect(dep.state).toBe("ACTIVE");
    dep = await portal.rechain(dep.id, `portal-${stamp}-chain`, [
      "overlay",
      "color-grade",
      "transcode",
    ]);

    // dashboard reflects the transition within one poll
    const dash = initialState();
    absorbDeployment(dash, await portal.getDeployment(dep.id));
    const feed = await portal.events(0);
    applyFeed(dash, feed.events);
    expect(dash.deployments[dep.id]!.state).toBe("ACTIVE");
    expect(dash.deployments[dep.id]!.chains[`portal-${stamp}-chain`]).toBe(2);

    // -- the same session as a raw API script
    const api = new GatewayClient(base!);
    const scriptDoc = structuredClone(doc);
    scriptDoc.id = `script-${stamp}`;
    scriptDoc.name = scriptDoc.id;
    scriptDoc.chains[0]!.id = `script-${stamp}-chain`;
    const ref2 = await api.registerBlueprint(scriptDoc);
    let dep2 = await api.createDeployment(ref2.id);
    await driveAgents(api, dep2);
    dep2 = await api.rechain(dep2.id, `script-${stamp}-chain`, [
      "overlay",
      "color-grade",
      "transcode",
    ]);

    expect(shape(dep2)).toEqual(shape(await portal.getDeployment(dep.id)));

    await portal.teardown(dep.id);
    await api.teardown(dep2.id);
  }, 30000);
});
