// Workflow canvas model: an ordered list of function cards that is, by
// construction, the chain order the server will receive. All reordering
// goes through this module so the canvas and the submitted chain can
// never disagree.

import type { BlueprintDoc, CatalogEntry, Endpoint, QoSDemand } from "./types";

export interface FunctionCard {
  id: string; // node id in the submitted blueprint, unique on the canvas
  serviceType: string;
  providerHint: string; // provider badge from the offer the card came from
  vcpu: number;
  memGb: number;
}

export interface DeployForm {
  blueprintId: string;
  source: Endpoint;
  sink: Endpoint;
  qos: QoSDemand;
}

export class WorkflowDraft {
  cards: FunctionCard[] = [];
  private counters = new Map<string, number>();

  addFromOffer(offer: CatalogEntry): FunctionCard {
    const n = (this.counters.get(offer.service_type) ?? 0) + 1;
    this.counters.set(offer.service_type, n);
    const card: FunctionCard = {
      id: n === 1 ? offer.service_type : `${offer.service_type}-${n}`,
      serviceType: offer.service_type,
      providerHint: offer.provider_id,
      vcpu: 1,
      memGb: 1,
    };
    this.cards.push(card);
    return card;
  }

  remove(index: number): void {
    this.cards.splice(index, 1);
  }

  move(from: number, to: number): void {
    if (from === to || from < 0 || from >= this.cards.length) return;
    const clamped = Math.max(0, Math.min(this.cards.length - 1, to));
    const [card] = this.cards.splice(from, 1);
    this.cards.splice(clamped, 0, card!);
  }

  /** Canvas order; identical to the chain order that would be submitted. */
  order(): string[] {
    return this.cards.map((c) => c.id);
  }

  /** Mirrors the server-side blueprint invariants before submission. */
  validate(): string[] {
    const problems: string[] = [];
    if (this.cards.length === 0) {
      problems.push("chain must contain at least one function");
    }
    const seen = new Set<string>();
    for (const card of this.cards) {
      if (seen.has(card.id)) {
        problems.push(`duplicate function entry ${card.id}`);
      }
      seen.add(card.id);
      if (card.vcpu < 1) problems.push(`${card.id}: vcpu must be >= 1`);
      if (card.memGb <= 0) problems.push(`${card.id}: mem_gb must be > 0`);
    }
    return problems;
  }

  toBlueprint(form: DeployForm): BlueprintDoc {
    const problems = this.validate();
    if (problems.length > 0) {
      throw new Error(problems.join("; "));
    }
    return {
      id: form.blueprintId,
      name: form.blueprintId,
      version: 1,
      nodes: this.cards.map((card) => ({
        id: card.id,
        service_type: card.serviceType,
        image_ref: "video-fn",
        vcpu: card.vcpu,
        mem_gb: card.memGb,
        params: {},
        placement: {},
      })),
      chains: [
        {
          id: `${form.blueprintId}-chain`,
          source: form.source,
          functions: this.order(),
          sink: form.sink,
          qos: form.qos,
        },
      ],
    };
  }
}
