// DOM wiring: catalogue browser, workflow canvas, deployment dashboard,
// rule inspector, runtime re-chaining. All server interaction goes through
// GatewayClient; all state through the workflow/dashboard models.

import "./styles.css";
import { ApiError, GatewayClient } from "./api";
import {
  absorbDeployment,
  initialState,
  lock,
  unlockIfEpoch,
} from "./dashboard";
import { startPolling } from "./poller";
import { WorkflowDraft } from "./workflow";
import type { CatalogEntry } from "./types";

const client = new GatewayClient();
const draft = new WorkflowDraft();
const dash = initialState();

let selectedDeployment: string | null = null;
let awaitedEpoch: { depId: string; chainId: string; epoch: number } | null = null;
let catalogueCache: CatalogEntry[] = [];

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

function flash(message: string, isError = false): void {
  const box = $("message");
  box.textContent = message;
  box.className = isError ? "msg error" : "msg";
}

// -- catalogue ---------------------------------------------------------------

async function loadCatalogue(): Promise<void> {
  try {
    catalogueCache = await client.catalogue();
  } catch (err) {
    flash(`catalogue unavailable: ${String(err)}`, true);
    return;
  }
  const tbody = $("catalogue-body");
  tbody.replaceChildren(
    ...catalogueCache.map((entry) => {
      const row = document.createElement("tr");
      const add = document.createElement("button");
      add.textContent = "add";
      add.onclick = () => {
        draft.addFromOffer(entry);
        renderCanvas();
      };
      for (const text of [
        entry.service_type,
        entry.provider_id,
        entry.region,
        `${entry.price_per_hour}/h`,
        `tier ${entry.availability_tier}`,
      ]) {
        const td = document.createElement("td");
        td.textContent = text;
        row.appendChild(td);
      }
      const actions = document.createElement("td");
      actions.appendChild(add);
      row.appendChild(actions);
      return row;
    }),
  );
}

// -- workflow canvas -----------------------------------------------------------

function renderCanvas(): void {
  const list = $("canvas-list");
  list.replaceChildren(
    ...draft.cards.map((card, index) => {
      const item = document.createElement("li");
      item.className = "card";
      const label = document.createElement("span");
      label.textContent = `${index + 1}. ${card.id}`;
      const badge = document.createElement("span");
      badge.className = "badge provider";
      badge.textContent = card.providerHint;
      const up = document.createElement("button");
      up.textContent = "↑";
      up.disabled = dash.locked || index === 0;
      up.onclick = () => {
        draft.move(index, index - 1);
        renderCanvas();
      };
      const down = document.createElement("button");
      down.textContent = "↓";
      down.disabled = dash.locked || index === draft.cards.length - 1;
      down.onclick = () => {
        draft.move(index, index + 1);
        renderCanvas();
      };
      const remove = document.createElement("button");
      remove.textContent = "×";
      remove.disabled = dash.locked;
      remove.onclick = () => {
        draft.remove(index);
        renderCanvas();
      };
      item.append(label, badge, up, down, remove);
      return item;
    }),
  );
  $("chain-preview").textContent = draft.order().join(" → ") || "(empty)";
}

function deployForm() {
  const field = (id: string) => ($(id) as HTMLInputElement).value.trim();
  return {
    blueprintId: field("bp-id") || "portal-app",
    source: { domain: field("src-domain"), mac: field("src-mac") },
    sink: { domain: field("sink-domain"), mac: field("sink-mac") },
    qos: {
      max_latency_ms: field("qos-latency") ? Number(field("qos-latency")) : null,
      max_jitter_ms: null,
      min_bandwidth_mbps: Number(field("qos-bw") || "100"),
    },
  };
}

async function deploy(): Promise<void> {
  const problems = draft.validate();
  if (problems.length > 0) {
    flash(`cannot deploy: ${problems.join("; ")}`, true);
    return;
  }
  if (dash.locked) {
    flash("another operation is in flight", true);
    return;
  }
  lock(dash);
  renderAll();
  try {
    const doc = draft.toBlueprint(deployForm());
    const ref = await client.registerBlueprint(doc);
    const dep = await client.createDeployment(ref.id);
    absorbDeployment(dash, dep);
    selectedDeployment = dep.id;
    flash(`deployed ${dep.id} (${dep.state})`);
  } catch (err) {
    flash(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err), true);
  } finally {
    dash.locked = false;
    renderAll();
  }
}

// -- dashboard -------------------------------------------------------------------

function stateBadge(state: string): HTMLElement {
  const badge = document.createElement("span");
  badge.className = `badge state-${state.toLowerCase()}`;
  badge.textContent = state;
  return badge;
}

function renderDashboard(): void {
  $("stale").hidden = !dash.stale;
  const picker = $("dep-picker") as HTMLSelectElement;
  const ids = Object.keys(dash.deployments).sort();
  const current = selectedDeployment;
  picker.replaceChildren(
    ...ids.map((id) => {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      opt.selected = id === current;
      return opt;
    }),
  );

  const panel = $("dep-panel");
  if (!selectedDeployment || !dash.deployments[selectedDeployment]) {
    panel.replaceChildren();
    return;
  }
  const v = dash.deployments[selectedDeployment]!;
  const header = document.createElement("div");
  header.append(stateBadge(v.state));
  if (v.replanning) {
    const spin = document.createElement("span");
    spin.className = "badge replanning";
    spin.textContent = "replanning…";
    header.append(spin);
  }
  const nodes = document.createElement("ul");
  nodes.className = "nodes";
  for (const [node, state] of Object.entries(v.nodes).sort()) {
    const li = document.createElement("li");
    li.textContent = `${node} `;
    li.append(stateBadge(state));
    nodes.append(li);
  }
  const chains = document.createElement("ul");
  chains.className = "chains";
  for (const [chain, epoch] of Object.entries(v.chains).sort()) {
    const li = document.createElement("li");
    li.textContent = `${chain} @ epoch ${epoch}`;
    chains.append(li);
  }
  panel.replaceChildren(header, nodes, chains);
}

async function refreshSelected(): Promise<void> {
  if (!selectedDeployment) return;
  try {
    absorbDeployment(dash, await client.getDeployment(selectedDeployment));
    await loadRules();
  } catch (err) {
    flash(String(err), true);
  }
  renderAll();
}

async function loadRules(): Promise<void> {
  if (!selectedDeployment) return;
  try {
    // rendered verbatim: the inspector shows exactly what the server said
    $("rules").textContent = await client.rulesText(selectedDeployment);
  } catch {
    $("rules").textContent = "(rules unavailable)";
  }
}

// -- re-chaining --------------------------------------------------------------------

async function rechain(): Promise<void> {
  if (!selectedDeployment) {
    flash("pick a deployment first", true);
    return;
  }
  const v = dash.deployments[selectedDeployment];
  const chainId = Object.keys(v?.chains ?? {}).sort()[0];
  if (!v || !chainId) {
    flash("deployment has no chains", true);
    return;
  }
  if (v.state !== "ACTIVE") {
    flash(`re-chaining requires ACTIVE, deployment is ${v.state}`, true);
    return;
  }
  const orderField = $("rechain-order") as HTMLInputElement;
  const order = orderField.value
    .split(",")
    .map((s) => s.trim())
    .filter(Boolean);
  if (order.length === 0) {
    flash("give a comma-separated function order", true);
    return;
  }
  lock(dash);
  awaitedEpoch = { depId: v.id, chainId, epoch: (v.chains[chainId] ?? 0) + 1 };
  renderAll();
  try {
    const dep = await client.rechain(v.id, chainId, order);
    absorbDeployment(dash, dep);
    flash(`rechained ${chainId}; waiting for epoch ${awaitedEpoch.epoch}`);
  } catch (err) {
    dash.locked = false;
    awaitedEpoch = null;
    flash(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err), true);
  }
  renderAll();
}

// -- wiring --------------------------------------------------------------------------

function renderAll(): void {
  renderCanvas();
  renderDashboard();
  ($("deploy") as HTMLButtonElement).disabled = dash.locked;
  ($("rechain") as HTMLButtonElement).disabled = dash.locked;
}

function onFeedChange(): void {
  if (awaitedEpoch && unlockIfEpoch(dash, awaitedEpoch.depId, awaitedEpoch.chainId, awaitedEpoch.epoch)) {
    flash(`epoch ${awaitedEpoch.epoch} live`);
    awaitedEpoch = null;
    void loadRules();
  }
  renderAll();
}

export function boot(): void {
  $("deploy").onclick = () => void deploy();
  $("rechain").onclick = () => void rechain();
  ($("dep-picker") as HTMLSelectElement).onchange = (event) => {
    selectedDeployment = (event.target as HTMLSelectElement).value || null;
    void refreshSelected();
  };
  $("refresh").onclick = () => void refreshSelected();
  void loadCatalogue();
  startPolling(client, dash, onFeedChange);
  renderAll();
}

if (
  typeof document !== "undefined" &&
  import.meta.env.MODE !== "test" &&
  document.getElementById("deploy")
) {
  boot();
}
