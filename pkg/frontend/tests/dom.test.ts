// Smoke test for the DOM layer: boot the page against a faked gateway and
// click through add / reorder / deploy.

import { beforeEach, describe, expect, it, vi } from "vitest";
import type { CatalogEntry, Deployment } from "../src/types";

const offers: CatalogEntry[] = ["transcode", "overlay"].map((t, i) => ({
  offer_id: `o${i}`,
  provider_id: "csp-a",
  service_type: t,
  region: "eu",
  price_per_hour: 2,
  availability_tier: 3,
  min_bandwidth_mbps: 100,
  max_bandwidth_mbps: 5000,
  api_endpoint: "https://example",
  cert_fingerprint: "ab".repeat(32),
}));

const deployment: Deployment = {
  id: "dep-1",
  blueprint_id: "portal-app",
  version: 1,
  owner: "customer",
  state: "PROVISIONING",
  placements: { transcode: "csp-a", overlay: "csp-a" },
  node_states: { transcode: "PENDING", overlay: "PENDING" },
  chains: { "portal-app-chain": { epoch: 1, hops: [] } },
};

function installFakeFetch(): void {
  vi.stubGlobal("fetch", async (input: string, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    const reply = (body: unknown) => new Response(JSON.stringify(body), { status: 200 });
    if (method === "GET" && input.startsWith("/catalogue")) return reply(offers);
    if (method === "GET" && input.startsWith("/events")) return reply({ events: [], latest: 0, now: 0 });
    if (method === "POST" && input === "/blueprints") return reply({ id: "portal-app", version: 1 });
    if (method === "POST" && input === "/deployments") return reply(deployment);
    if (method === "GET" && input === "/deployments/dep-1") return reply(deployment);
    if (input.endsWith("/rules")) return new Response("@C match(...)", { status: 200 });
    return reply({});
  });
}

const PAGE = `
  <span id="stale" hidden></span><div id="message"></div>
  <table><tbody id="catalogue-body"></tbody></table>
  <ol id="canvas-list"></ol><code id="chain-preview"></code>
  <input id="bp-id" value="portal-app" />
  <input id="src-domain" value="C" /><input id="src-mac" value="0a:00:00:00:00:01" />
  <input id="sink-domain" value="C" /><input id="sink-mac" value="0a:00:00:00:00:02" />
  <input id="qos-latency" value="80" /><input id="qos-bw" value="100" />
  <button id="deploy"></button>
  <select id="dep-picker"></select><button id="refresh"></button>
  <div id="dep-panel"></div>
  <input id="rechain-order" /><button id="rechain"></button>
  <pre id="rules"></pre>
`;

async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("portal page", () => {
  beforeEach(() => {
    vi.useRealTimers();
    document.body.innerHTML = PAGE;
    installFakeFetch();
  });

  it("renders the catalogue and composes a chain through clicks", async () => {
    const { boot } = await import("../src/main");
    boot();
    await flush();
    const rows = document.querySelectorAll("#catalogue-body tr");
    expect(rows.length).toBe(2);

    (rows[0]!.querySelector("button") as HTMLButtonElement).click();
    (rows[1]!.querySelector("button") as HTMLButtonElement).click();
    expect(document.getElementById("chain-preview")!.textContent).toBe(
      "transcode → overlay",
    );

    // move overlay first via its up-arrow
    const cards = document.querySelectorAll("#canvas-list li");
    const upButton = cards[1]!.querySelectorAll("button")[0] as HTMLButtonElement;
    upButton.click();
    expect(document.getElementById("chain-preview")!.textContent).toBe(
      "overlay → transcode",
    );

    (document.getElementById("deploy") as HTMLButtonElement).click();
    await flush();
    expect(document.getElementById("message")!.textContent).toContain("dep-1");
  });
});
