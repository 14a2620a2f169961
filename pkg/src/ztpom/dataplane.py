"""Deterministic discrete-event simulator for compiled chains.

Installs chain plans, injects packet flows, and walks each packet hop by
hop applying the plans' VLAN/MAC rewrite rules, so the compiled rules --
not the compiler's intent -- decide where traffic goes. Packets bind to
a chain epoch at injection time; a cutover only redirects packets
injected at or after its tick, in-flight traffic finishes under the old
epoch, and the old plan's resources are released automatically once its
last packet drains (make-before-break).

Event processing order is fixed to (time, domain, flow, seq); identical
scripts always produce identical results.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from . import sfc as sfc_mod
from .errors import ZtpomError
from .fabric import FabricTopology
from .sfc import LOCAL, ChainPlan, ChainUpdate, FlowRule


class SimError(ZtpomError):
    code = "sim-error"


class SeparationViolationError(SimError):
    code = "separation-violation"


class UnknownChainError(SimError):
    code = "unknown-chain"


@dataclass(frozen=True)
class FlowSpec:
    chain_id: str
    count: int
    start_tick: int = 0
    gap_ticks: int = 1


@dataclass
class Packet:
    flow_id: str
    seq: int
    chain_id: str
    epoch: int
    vlan: int | None = None
    dst_mac: str = ""
    trace: list = field(default_factory=list)
    latency_ms: float = 0.0
    inject_tick: int = 0


@dataclass(frozen=True)
class PacketReport:
    seq: int
    trace: tuple
    latency_ms: float
    final_dst_mac: str
    epoch: int


@dataclass(frozen=True)
class LossReport:
    seq: int
    reason: str
    at_domain: str


@dataclass(frozen=True)
class FlowResult:
    flow_id: str
    chain_id: str
    injected: int
    delivered: int
    packets: tuple
    losses: tuple
    in_flight: int
    link_peak_flows: dict

    def to_dict(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "chain_id": self.chain_id,
            "injected": self.injected,
            "delivered": self.delivered,
            "packets": [
                {
                    "seq": p.seq,
                    "trace": list(p.trace),
                    "latency_ms": p.latency_ms,
                    "final_dst_mac": p.final_dst_mac,
                    "epoch": p.epoch,
                }
                for p in self.packets
            ],
            "losses": [
                {"seq": l.seq, "reason": l.reason, "at_domain": l.at_domain} for l in self.losses
            ],
            "in_flight": self.in_flight,
            "link_peak_flows": dict(sorted(self.link_peak_flows.items())),
        }


@dataclass
class _FlowState:
    spec: FlowSpec
    delivered: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    in_flight: int = 0
    links_used: set = field(default_factory=set)


class _PendingRelease:
    def __init__(self, plan: ChainPlan, remaining: int) -> None:
        self.plan = plan
        self.remaining = remaining


class Simulator:
    """Single-threaded event loop over one fabric topology.

    ``fn_delays`` maps function node ids to per-packet processing delay
    in ms; unlisted functions process instantly.
    """

    def __init__(self, topo: FabricTopology, fn_delays: dict | None = None, seed: int = 0) -> None:
        self.topo = topo
        self.fn_delays = dict(fn_delays or {})
        self.seed = seed
        self.now: float = 0.0
        self.plans: dict = {}  # (chain_id, epoch) -> ChainPlan
        self.rules: dict = {}  # (chain_id, epoch) -> {(vlan, dst): [(ingress, rule)]}
        self.epoch_timeline: dict = {}  # chain_id -> [(from_tick, epoch)]
        self.last_cutover_at: dict = {}  # chain_id -> tick
        self.pending_release: dict = {}  # (chain_id, epoch) -> _PendingRelease
        self.released: list = []  # (chain_id, epoch) in release order
        self.flows: dict = {}
        self.packets: dict = {}
        self._events: list = []
        self._flow_seq = 0
        self._link_active: dict = {}  # link_id -> {flow_id: packet count}
        self._link_peaks: dict = {}  # link_id -> peak distinct flows

    # -- plan management ----------------------------------------------------

    def install(self, plan: ChainPlan) -> None:
        key = (plan.chain_id, plan.epoch)
        if key in self.plans:
            return  # idempotent for the same epoch
        for rule in plan.rules:
            if rule.at_domain not in self.topo.domains:
                raise SimError(f"rule targets unknown domain {rule.at_domain!r}")
        violations = sfc_mod.audit_separation(list(self.plans.values()) + [plan], self.topo)
        if violations:
            raise SeparationViolationError(
                f"plan {plan.chain_id!r}@{plan.epoch} conflicts: {violations[0].detail}"
            )
        index: dict = {}
        for rule in plan.rules:
            index.setdefault((rule.match_vlan, rule.match_dst), []).append(
                (rule.match_ingress, rule)
            )
        self.plans[key] = plan
        self.rules[key] = index
        timeline = self.epoch_timeline.setdefault(plan.chain_id, [])
        if not timeline:
            timeline.append((float("-inf"), plan.epoch))

    def is_installed(self, chain_id: str, epoch: int) -> bool:
        return (chain_id, epoch) in self.plans

    def cutover(self, update: ChainUpdate, at_tick: int) -> None:
        """Switch injection to the new epoch at ``at_tick``; the old epoch
        drains and is then released back to the fabric."""
        old_key = (update.chain_id, update.old_epoch)
        new_key = (update.chain_id, update.new_epoch)
        if old_key not in self.plans or new_key not in self.plans:
            raise UnknownChainError(
                f"cutover requires both epochs installed: {old_key} and {new_key}"
            )
        if at_tick < self.now:
            raise SimError(f"cutover at {at_tick} is in the past (now={self.now})")
        if at_tick < self.last_cutover_at.get(update.chain_id, float("-inf")):
            raise SimError(f"cutover at {at_tick} precedes an already-scheduled cutover")

        self.epoch_timeline[update.chain_id].append((at_tick, update.new_epoch))
        self.last_cutover_at[update.chain_id] = at_tick

        remaining = sum(
            1
            for (t, _d, flow_id, _s, kind, _v) in self._events
            if kind == "inject"
            and self.flows[flow_id].spec.chain_id == update.chain_id
            and self._timeline_epoch(update.chain_id, t) == update.old_epoch
        )
        remaining += sum(
            1
            for pkt in self.packets.values()
            if pkt is not None and pkt.chain_id == update.chain_id and pkt.epoch == update.old_epoch
        )
        pending = _PendingRelease(self.plans[old_key], remaining)
        self.pending_release[old_key] = pending
        if remaining == 0:
            self._release_epoch(old_key)

    def _release_epoch(self, key: tuple) -> None:
        pending = self.pending_release.pop(key)
        sfc_mod.release_chain(pending.plan, self.topo)
        del self.plans[key]
        del self.rules[key]
        self.released.append(key)

    # -- injection ----------------------------------------------------------

    def inject(self, spec: FlowSpec) -> str:
        if spec.chain_id not in self.epoch_timeline:
            raise UnknownChainError(f"no installed plan for chain {spec.chain_id!r}")
        if spec.count < 1:
            raise SimError("flow must carry at least one packet")
        if spec.start_tick < self.now:
            raise SimError(f"flow start {spec.start_tick} is in the past (now={self.now})")
        self._flow_seq += 1
        flow_id = f"fl-{self._flow_seq}"
        self.flows[flow_id] = _FlowState(spec=spec)
        for i in range(spec.count):
            t = float(spec.start_tick + i * spec.gap_ticks)
            heapq.heappush(self._events, (t, "", flow_id, i, "inject", ""))
        return flow_id

    def _timeline_epoch(self, chain_id: str, tick: float):
        epoch = None
        for from_tick, ep in self.epoch_timeline[chain_id]:
            if from_tick <= tick:
                epoch = ep
        return epoch

    def _epoch_for(self, chain_id: str, tick: float) -> int:
        epoch = self._timeline_epoch(chain_id, tick)
        if epoch is None or (chain_id, epoch) not in self.plans:
            raise UnknownChainError(f"no active epoch for chain {chain_id!r} at {tick}")
        return epoch

    # -- event loop ----------------------------------------------------------

    def run_until(self, tick: int) -> list:
        """Process all events up to and including ``tick``; returns one
        FlowResult snapshot per flow, ordered by flow id."""
        if tick < self.now:
            raise SimError(f"run_until({tick}) would move time backwards (now={self.now})")
        while self._events and self._events[0][0] <= tick:
            t, domain, flow_id, seq, kind, via_link = heapq.heappop(self._events)
            self.now = max(self.now, t)
            if kind == "inject":
                self._handle_inject(t, flow_id, seq)
            else:
                self._handle_arrival(t, domain, flow_id, seq, via_link)
        self.now = max(self.now, float(tick))
        return self.results()

    def _handle_inject(self, t: float, flow_id: str, seq: int) -> None:
        flow = self.flows[flow_id]
        chain_id = flow.spec.chain_id
        epoch = self._epoch_for(chain_id, t)
        plan = self.plans[(chain_id, epoch)]
        pkt = Packet(
            flow_id=flow_id,
            seq=seq,
            chain_id=chain_id,
            epoch=epoch,
            vlan=None,
            dst_mac=plan.original_dst_mac,
            inject_tick=int(t),
        )
        self.packets[(flow_id, seq)] = pkt
        flow.in_flight += 1
        self._process_at(t, plan.source_domain, pkt, ingress=None)

    def _handle_arrival(self, t: float, domain: str, flow_id: str, seq: int, via_link: str) -> None:
        pkt = self.packets.get((flow_id, seq))
        if pkt is None:
            return
        self._link_exit(via_link, flow_id)
        self._process_at(t, domain, pkt, ingress=via_link)

    def _match(self, plan_key: tuple, ingress: str | None, vlan: int | None, dst: str):
        candidates = self.rules[plan_key].get((vlan, dst), [])
        for rule_ingress, rule in candidates:
            if rule_ingress is not None and rule_ingress == ingress:
                return rule
        for rule_ingress, rule in candidates:
            if rule_ingress is None:
                return rule
        return None

    def _process_at(self, t: float, domain: str, pkt: Packet, ingress: str | None) -> None:
        """Run the packet through the rule pipeline at one domain; either it
        departs on a link (next arrival scheduled), is delivered, or lost."""
        plan_key = (pkt.chain_id, pkt.epoch)
        plan = self.plans.get(plan_key)
        if plan is None:
            self._lose(pkt, "epoch-released", domain)
            return
        ttl = 4 * (len(plan.hops) + len(plan.segments)) + 16
        while True:
            ttl -= 1
            if ttl <= 0:
                self._lose(pkt, "ttl-exceeded", domain)
                return
            rule = self._match(plan_key, ingress, pkt.vlan, pkt.dst_mac)
            if rule is None:
                self._lose(pkt, "no-rule", domain)
                return
            hop = plan.hop_at(domain, rule.match_dst)
            if hop is not None:
                pkt.trace.append(hop.node_id)
                delay = float(self.fn_delays.get(hop.node_id, 0.0))
                pkt.latency_ms += delay
                t += delay
            if rule.set_vlan is not None:
                pkt.vlan = rule.set_vlan
            if rule.set_dst is not None:
                pkt.dst_mac = rule.set_dst
            if rule.out == LOCAL:
                if pkt.dst_mac == plan.original_dst_mac and domain == plan.sink_domain:
                    self._deliver(pkt)
                    return
                ingress = None
                continue
            link = self.topo.link(rule.out)
            self._link_enter(rule.out, pkt.flow_id)
            pkt.latency_ms += link.latency_ms
            arrival = t + link.latency_ms
            heapq.heappush(
                self._events,
                (arrival, link.other_end(domain), pkt.flow_id, pkt.seq, "arrive", rule.out),
            )
            return

    # -- accounting ----------------------------------------------------------

    def _link_enter(self, link_id: str, flow_id: str) -> None:
        active = self._link_active.setdefault(link_id, {})
        active[flow_id] = active.get(flow_id, 0) + 1
        distinct = len(active)
        if distinct > self._link_peaks.get(link_id, 0):
            self._link_peaks[link_id] = distinct
        self.flows[flow_id].links_used.add(link_id)

    def _link_exit(self, link_id: str, flow_id: str) -> None:
        active = self._link_active.get(link_id, {})
        if flow_id in active:
            active[flow_id] -= 1
            if active[flow_id] <= 0:
                del active[flow_id]

    def _finish(self, pkt: Packet) -> None:
        flow = self.flows[pkt.flow_id]
        flow.in_flight -= 1
        self.packets[(pkt.flow_id, pkt.seq)] = None
        key = (pkt.chain_id, pkt.epoch)
        pending = self.pending_release.get(key)
        if pending is not None:
            pending.remaining -= 1
            if pending.remaining <= 0:
                self._release_epoch(key)

    def _deliver(self, pkt: Packet) -> None:
        self.flows[pkt.flow_id].delivered.append(
            PacketReport(
                seq=pkt.seq,
                trace=tuple(pkt.trace),
                latency_ms=pkt.latency_ms,
                final_dst_mac=pkt.dst_mac,
                epoch=pkt.epoch,
            )
        )
        self._finish(pkt)

    def _lose(self, pkt: Packet, reason: str, domain: str) -> None:
        self.flows[pkt.flow_id].losses.append(
            LossReport(seq=pkt.seq, reason=reason, at_domain=domain)
        )
        self._finish(pkt)

    def results(self) -> list:
        out = []
        for flow_id in sorted(self.flows):
            flow = self.flows[flow_id]
            peaks = {
                link: self._link_peaks.get(link, 0)
                for link in sorted(flow.links_used)
            }
            out.append(
                FlowResult(
                    flow_id=flow_id,
                    chain_id=flow.spec.chain_id,
                    injected=flow.spec.count,
                    delivered=len(flow.delivered),
                    packets=tuple(sorted(flow.delivered, key=lambda p: p.seq)),
                    losses=tuple(sorted(flow.losses, key=lambda l: l.seq)),
                    in_flight=flow.in_flight,
                    link_peak_flows=peaks,
                )
            )
        return out


# --------------------------------------------------------------------------
# Scenario scripts


def run_script(sim: Simulator, script: list, plans: dict, updates: dict | None = None) -> dict:
    """Execute a timed action list against a simulator.

    Actions: {"op": "install", "plan": name}, {"op": "inject", "chain": id,
    "count": n, "start": t, "gap": g}, {"op": "cutover", "update": name,
    "at": t}, {"op": "run_until", "tick": t}. ``plans``/``updates`` name the
    compiled artifacts the script refers to.
    """
    updates = updates or {}
    flow_ids = []
    results: list = []
    for i, action in enumerate(script):
        op = action.get("op")
        if op == "install":
            name = action["plan"]
            if name not in plans:
                raise SimError(f"script action {i}: unknown plan {name!r}")
            sim.install(plans[name])
        elif op == "inject":
            flow_ids.append(
                sim.inject(
                    FlowSpec(
                        chain_id=action["chain"],
                        count=int(action.get("count", 1)),
                        start_tick=int(action.get("start", 0)),
                        gap_ticks=int(action.get("gap", 1)),
                    )
                )
            )
        elif op == "cutover":
            name = action["update"]
            if name not in updates:
                raise SimError(f"script action {i}: unknown update {name!r}")
            sim.cutover(updates[name], int(action["at"]))
        elif op == "run_until":
            results = sim.run_until(int(action["tick"]))
        else:
            raise SimError(f"script action {i}: unknown op {op!r}")
    return {
        "seed": sim.seed,
        "now": sim.now,
        "flows": flow_ids,
        "released": [list(key) for key in sim.released],
        "results": [r.to_dict() for r in results],
    }
