"""One-process composition of fabric, marketplace, provisioner, and simulator.

Every wire endpoint and CLI subcommand is a thin adapter over this
service; it owns no protocol logic of its own. Simulation scenarios run
against a sandboxed copy of the fabric so probing a deployment's chains
never disturbs live reservations.
"""

from __future__ import annotations

import copy
import json
from dataclasses import replace
from pathlib import Path

from .. import agent as agent_mod
from .. import blueprint as bp_mod
from .. import dataplane, fabric, sfc
from ..blueprint import Blueprint, ProviderProfile
from ..errors import ZtpomError
from ..marketplace import CatalogEntry, Marketplace, ServiceRequest, TrustRegistry
from ..provisioner import Deployment, DeploymentState, Provisioner
from .config import GatewayConfig
from .persist import read_snapshot, write_snapshot
from ..provisioner import plan_from_dict, plan_to_dict


class GatewayError(ZtpomError):
    code = "gateway-error"


class GatewayService:
    def __init__(self, cfg: GatewayConfig) -> None:
        self.cfg = cfg
        if cfg.topology_path is None:
            self.topo = fabric.FabricTopology()
        else:
            self.topo = fabric.load_topology(cfg.topology_path.read_text(encoding="utf-8"))
        self.trust = TrustRegistry()
        self.market = Marketplace(self.trust, latency_weight=cfg.broker_lambda)
        self.provisioner = Provisioner(
            self.topo,
            self.market,
            heartbeat_interval=cfg.heartbeat_interval_ticks,
            miss_threshold=cfg.miss_threshold,
            seed=cfg.seed,
            default_owner=cfg.default_owner,
        )
        self.last_flow_results: dict = {}  # chain_id -> [flow result dicts]
        if cfg.catalogue_path is not None:
            self._load_catalogue(json.loads(cfg.catalogue_path.read_text(encoding="utf-8")))

    def _load_catalogue(self, seed_doc: dict) -> None:
        for party, fingerprint in seed_doc.get("certs", {}).items():
            self.trust.register_cert(party, fingerprint)
        for a, b in seed_doc.get("trust", []):
            self.trust.confirm_trust(a, b)
            self.trust.confirm_trust(b, a)
        for p in seed_doc.get("providers", []):
            self.provisioner.register_provider(
                ProviderProfile(
                    provider_id=p["provider_id"],
                    domain_id=p["domain_id"],
                    image_map=dict(p.get("image_map", {})),
                    address_block=p.get("address_block", "10.0.0.0/16"),
                    mac_prefix=p.get("mac_prefix", "02:00:00:00"),
                    fn_delay_ms={k: float(v) for k, v in p.get("fn_delay_ms", {}).items()},
                    capacity=dict(p.get("capacity", {"vcpu": 64, "mem_gb": 256.0})),
                    defaults=dict(p.get("defaults", {})),
                )
            )
        for entry in seed_doc.get("offers", []):
            self.market.publish_offer(CatalogEntry.from_dict(entry))

    # -- blueprints -----------------------------------------------------------

    def register_blueprint(self, doc) -> dict:
        if isinstance(doc, str):
            bp = bp_mod.parse_blueprint(doc)
        else:
            bp = bp_mod.blueprint_from_dict(doc)
        self.provisioner.register_blueprint(bp)
        return {"id": bp.id, "version": bp.version}

    def get_blueprint(self, blueprint_id: str) -> dict:
        return bp_mod.blueprint_to_dict(self.provisioner.blueprint(blueprint_id))

    # -- deployments ------------------------------------------------------------

    def create_deployment(self, blueprint_id: str, owner: str | None = None) -> dict:
        dep = self.provisioner.plan_deployment(blueprint_id, owner=owner)
        self.provisioner.start_provisioning(dep.id)
        return dep.to_public_dict()

    def get_deployment(self, dep_id: str) -> dict:
        return self.provisioner.deployment(dep_id).to_public_dict()

    def list_deployments(self) -> list:
        return [d.to_public_dict() for d in self.provisioner.deployments.values()]

    def update_deployment(self, dep_id: str, version: int) -> dict:
        return self.provisioner.request_update(dep_id, version).to_public_dict()

    def rechain_deployment(self, dep_id: str, chain_id: str, order: list) -> dict:
        """Reorder a chain at runtime: registers the reordered blueprint as
        the next version and drives the usual update path."""
        dep = self.provisioner.deployment(dep_id)
        bp = self.provisioner.blueprint(dep.blueprint_id, dep.version)
        chain = bp.chain(chain_id)
        new_chain = replace(chain, functions=tuple(order))
        new_bp = Blueprint(
            id=bp.id,
            name=bp.name,
            version=bp.version + 1,
            nodes=bp.nodes,
            chains=tuple(new_chain if c.id == chain_id else c for c in bp.chains),
        )
        self.provisioner.register_blueprint(new_bp)
        return self.provisioner.request_update(dep_id, new_bp.version).to_public_dict()

    def teardown_deployment(self, dep_id: str) -> dict:
        return self.provisioner.teardown(dep_id).to_public_dict()

    def deployment_rules(self, dep_id: str) -> str:
        dep = self.provisioner.deployment(dep_id)
        blocks = []
        for chain_id in sorted(dep.chain_plans):
            plan = dep.chain_plans[chain_id]
            blocks.append(f"# chain {chain_id} epoch {plan.epoch}")
            blocks.append(sfc.plan_text(plan))
        return "\n".join(blocks) + ("\n" if blocks else "")

    def deployment_flows(self, dep_id: str) -> dict:
        dep = self.provisioner.deployment(dep_id)
        return {
            chain_id: self.last_flow_results.get(chain_id, [])
            for chain_id in sorted(dep.chain_plans)
        }

    # -- agent wire -------------------------------------------------------------

    def agent_hello(self, payload: dict) -> dict:
        return self.provisioner.handle_discovery(payload)

    def agent_recipe(self, token: str) -> dict:
        return agent_mod.recipe_to_dict(self.provisioner.handle_fetch(token))

    def agent_status(self, payload: dict) -> dict:
        return self.provisioner.handle_status(payload.get("token", ""), payload)

    def tick(self, now: int) -> list:
        return [e.to_dict() for e in self.provisioner.tick(now)]

    def events_since(self, seq: int) -> dict:
        events = [e.to_dict() for e in self.provisioner.events_since(seq)]
        return {
            "events": events,
            "latest": self.provisioner.event_counter,
            "now": self.provisioner.now,
        }

    # -- catalogue / trust --------------------------------------------------------

    def catalogue_search(self, filters: dict) -> list:
        req = ServiceRequest(
            requester_id=filters.get("requester", ""),
            service_type=filters.get("service_type"),
            region=filters.get("region"),
            max_price=float(filters["max_price"]) if filters.get("max_price") else None,
            min_tier=int(filters["min_tier"]) if filters.get("min_tier") else None,
            min_bandwidth_mbps=(
                float(filters["min_bandwidth_mbps"])
                if filters.get("min_bandwidth_mbps")
                else None
            ),
        )
        return [e.to_dict() for e in self.market.search(req)]

    def publish_offer(self, doc: dict) -> dict:
        offer_id = self.market.publish_offer(CatalogEntry.from_dict(doc))
        return {"offer_id": offer_id}

    def trust_confirm(self, party: str, peer: str) -> dict:
        record = self.trust.confirm_trust(party, peer)
        return self._trust_dict(record)

    def trust_status(self, a: str, b: str) -> dict:
        return self._trust_dict(self.trust.trust_status(a, b))

    @staticmethod
    def _trust_dict(record) -> dict:
        return {
            "party_a": record.party_a,
            "party_b": record.party_b,
            "a_confirmed": record.a_confirmed,
            "b_confirmed": record.b_confirmed,
            "established": record.established,
        }

    def topology_doc(self) -> dict:
        doc = fabric.topology_to_dict(self.topo)
        doc["reservations"] = fabric.state_to_dict(self.topo)
        return doc

    # -- simulation ----------------------------------------------------------------

    def _find_chain(self, chain_id: str, dep_id: str | None) -> Deployment:
        candidates = [
            d
            for d in self.provisioner.deployments.values()
            if chain_id in d.chain_plans and (dep_id is None or d.id == dep_id)
        ]
        if not candidates:
            raise GatewayError(f"no deployment carries chain {chain_id!r}")
        if len(candidates) > 1:
            raise GatewayError(f"chain {chain_id!r} is ambiguous; pass a deployment id")
        return candidates[0]

    def _fn_delays(self) -> dict:
        delays: dict = {}
        for dep in self.provisioner.deployments.values():
            try:
                bp = self.provisioner.blueprint(dep.blueprint_id, dep.version)
            except ZtpomError:
                continue
            for node_id, provider_id in dep.placements.items():
                profile = self.provisioner.profiles.get(provider_id)
                if profile is None:
                    continue
                try:
                    node = bp.node(node_id)
                except ZtpomError:
                    continue
                delay = float(profile.fn_delay_ms.get(node.service_type, 0.0))
                for plan in dep.chain_plans.values():
                    for hop in plan.hops:
                        if hop.node_id == node_id:
                            delays[hop.mac] = delay
                delays.setdefault(node_id, delay)
        return delays

    def run_scenario(self, script: list, dep_id: str | None = None) -> dict:
        """Run a timed scenario against a sandbox copy of the fabric.

        Ops: install {chain}, inject {chain, count, start, gap},
        rechain {chain, order}, cutover {chain, at}, run_until {tick}.
        """
        sandbox = copy.deepcopy(self.topo)
        sim = dataplane.Simulator(sandbox, fn_delays=self._fn_delays(), seed=self.cfg.seed)
        updates: dict = {}
        results: list = []
        for i, action in enumerate(script):
            op = action.get("op")
            if op == "install":
                dep = self._find_chain(action["chain"], dep_id)
                sim.install(dep.chain_plans[action["chain"]])
            elif op == "inject":
                sim.inject(
                    dataplane.FlowSpec(
                        chain_id=action["chain"],
                        count=int(action.get("count", 1)),
                        start_tick=int(action.get("start", 0)),
                        gap_ticks=int(action.get("gap", 1)),
                    )
                )
            elif op == "rechain":
                chain_id = action["chain"]
                dep = self._find_chain(chain_id, dep_id)
                bp = self.provisioner.blueprint(dep.blueprint_id, dep.version)
                chain = bp.chain(chain_id)
                new_spec = replace(chain, functions=tuple(action["order"]))
                active = None
                for key in sorted(sim.plans, reverse=True):
                    if key[0] == chain_id:
                        active = sim.plans[key]
                        break
                if active is None:
                    raise GatewayError(f"scenario action {i}: chain {chain_id!r} not installed")
                placement_map = self.provisioner._placement_map(dep, bp)
                update = sfc.rechain(active, new_spec, placement_map, sandbox)
                updates[chain_id] = update
                sim.install(update.new_plan)
            elif op == "cutover":
                chain_id = action["chain"]
                if chain_id not in updates:
                    raise GatewayError(f"scenario action {i}: no rechain staged for {chain_id!r}")
                sim.cutover(updates[chain_id], int(action["at"]))
            elif op == "run_until":
                results = sim.run_until(int(action["tick"]))
            else:
                raise GatewayError(f"scenario action {i}: unknown op {op!r}")
        payload = {
            "seed": sim.seed,
            "now": sim.now,
            "released": [list(k) for k in sim.released],
            "results": [r.to_dict() for r in results],
        }
        for result in payload["results"]:
            self.last_flow_results.setdefault(result["chain_id"], [])
        grouped: dict = {}
        for result in payload["results"]:
            grouped.setdefault(result["chain_id"], []).append(result)
        self.last_flow_results.update(grouped)
        return payload

    # -- agents at desk scale ----------------------------------------------------------

    def run_agents(self, dep_id: str, max_rounds: int = 50) -> dict:
        """Drive simulated agents for every placed node until the deployment
        settles; the CLI's zero-touch path."""
        dep = self.provisioner.deployment(dep_id)
        registry = agent_mod.InProcessRegistry(self.provisioner)
        handles = [
            agent_mod.spawn(
                agent_mod.AgentConfig(provider_id=provider_id),
                dep.id,
                node_id,
                registry,
            )
            for node_id, provider_id in sorted(dep.placements.items())
        ]
        start = self.provisioner.now
        for round_no in range(1, max_rounds + 1):
            self.provisioner.tick(start + round_no)
            for handle in handles:
                agent_mod.step(handle, start + round_no)
            if dep.state in (
                DeploymentState.ACTIVE,
                DeploymentState.FAILED,
                DeploymentState.TORN_DOWN,
            ):
                break
        return dep.to_public_dict()

    # -- persistence ----------------------------------------------------------------------

    def snapshot_doc(self) -> dict:
        return {
            "format": 1,
            "provisioner": self.provisioner.to_snapshot(),
            "fabric": fabric.state_to_dict(self.topo),
            "marketplace": {
                "latency_weight": self.market.latency_weight,
                "offers": [e.to_dict() for e in self.market.search()],
            },
            "trust": {
                "certs": dict(sorted(self.trust.certs.items())),
                "records": [
                    {
                        "party_a": r.party_a,
                        "party_b": r.party_b,
                        "a_confirmed": r.a_confirmed,
                        "b_confirmed": r.b_confirmed,
                    }
                    for _, r in sorted(self.trust.records.items())
                ],
            },
            "flows": {k: v for k, v in sorted(self.last_flow_results.items())},
        }

    def restore_doc(self, doc: dict) -> None:
        fabric.restore_state(self.topo, doc["fabric"])
        self.trust.certs = dict(doc["trust"]["certs"])
        self.trust.records = {}
        for r in doc["trust"]["records"]:
            key = (r["party_a"], r["party_b"])
            from ..marketplace import TrustRecord

            self.trust.records[key] = TrustRecord(
                party_a=r["party_a"],
                party_b=r["party_b"],
                a_confirmed=r["a_confirmed"],
                b_confirmed=r["b_confirmed"],
            )
        self.market.latency_weight = doc["marketplace"]["latency_weight"]
        self.market.offers = {}
        for entry in doc["marketplace"]["offers"]:
            self.market.offers[entry["offer_id"]] = CatalogEntry.from_dict(entry)
        self.provisioner.restore(doc["provisioner"])
        self.last_flow_results = dict(doc.get("flows", {}))

    def snapshot(self) -> Path:
        path = self.cfg.snapshot_path
        if path is None:
            raise GatewayError("no persistence_dir configured")
        write_snapshot(path, self.snapshot_doc())
        return path

    def restore(self) -> None:
        path = self.cfg.snapshot_path
        if path is None:
            raise GatewayError("no persistence_dir configured")
        self.restore_doc(read_snapshot(path))

    def restore_if_present(self) -> bool:
        path = self.cfg.snapshot_path
        if path is None or not path.exists():
            return False
        self.restore_doc(read_snapshot(path))
        return True


__all__ = ["GatewayService", "GatewayError", "plan_to_dict", "plan_from_dict"]
