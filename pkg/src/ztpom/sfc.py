"""Service-function chain compiler: VLAN stitching plus MAC rewriting.

A chain spec plus node placements compiles to per-segment QoS paths,
per-link VLAN allocations (lowest free id on each link), and a flow-rule
set that rewrites the destination MAC hop by hop: the source classifier
retags traffic toward the first function, every hop rule forwards to the
next function, and the sink-side rule restores the original destination
MAC before local delivery. Distinct chains never share a (link, VLAN)
pair, which is what keeps them separate on the wire.

Re-chaining is make-before-break: the replacement plan is fully compiled
and holds its own VLANs/bandwidth while the old epoch stays installed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from . import fabric as fabric_mod
from .blueprint import ChainSpec
from .errors import ZtpomError
from .fabric import FabricTopology, NoFeasiblePathError, Reservation

LOCAL = "local"


class ChainCompileError(ZtpomError):
    code = "chain-compile-error"


class SegmentInfeasibleError(ChainCompileError):
    code = "segment-infeasible"

    def __init__(self, segment_index: int, src: str, dst: str, cause: NoFeasiblePathError) -> None:
        super().__init__(
            f"segment {segment_index} ({src} -> {dst}): {cause}",
            segment=segment_index,
            binding_constraint=cause.binding_constraint,
        )
        self.segment_index = segment_index
        self.cause = cause


class MacCollisionError(ChainCompileError):
    code = "mac-collision"


class PlanStateError(ZtpomError):
    code = "plan-state-error"


class Hop(NamedTuple):
    node_id: str
    domain: str
    mac: str


@dataclass(frozen=True)
class Segment:
    """One leg between consecutive waypoints; empty link list = same domain."""

    src_domain: str
    dst_domain: str
    link_vlans: tuple  # ((link_id, vlan_id), ...) in traversal order

    @property
    def link_ids(self) -> tuple:
        return tuple(link for link, _ in self.link_vlans)


@dataclass(frozen=True)
class FlowRule:
    at_domain: str
    match_ingress: str | None
    match_vlan: int | None
    match_dst: str
    set_vlan: int | None = None
    set_dst: str | None = None
    out: str = LOCAL

    @property
    def match_key(self) -> tuple:
        return (self.at_domain, self.match_ingress, self.match_vlan, self.match_dst)


@dataclass(frozen=True)
class ChainPlan:
    chain_id: str
    epoch: int
    hops: tuple
    segments: tuple
    rules: tuple
    original_dst_mac: str
    reservations: tuple = field(default_factory=tuple, compare=False)

    @property
    def source_domain(self) -> str:
        return self.segments[0].src_domain

    @property
    def sink_domain(self) -> str:
        return self.segments[-1].dst_domain

    @property
    def link_vlan_pairs(self) -> list:
        return [pair for seg in self.segments for pair in seg.link_vlans]

    def hop_at(self, domain: str, mac: str):
        for hop in self.hops:
            if hop.domain == domain and hop.mac == mac:
                return hop
        return None


@dataclass(frozen=True)
class ChainUpdate:
    chain_id: str
    old_epoch: int
    new_epoch: int
    new_plan: ChainPlan
    cutover: str = "make-before-break"


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    plan_ids: tuple


def rule_text(rule: FlowRule) -> str:
    vlan = "-" if rule.match_vlan is None else str(rule.match_vlan)
    actions = []
    if rule.set_vlan is not None:
        actions.append(f"set_vlan({rule.set_vlan})")
    if rule.set_dst is not None:
        actions.append(f"set_dst({rule.set_dst})")
    actions.append(f"out({rule.out})")
    return f"@{rule.at_domain} match(vlan={vlan},dst={rule.match_dst}) -> " + ",".join(actions)


def plan_text(plan: ChainPlan) -> str:
    """Diagnostic rendering, one rule per line in traversal order."""
    return "\n".join(rule_text(r) for r in plan.rules)


# --------------------------------------------------------------------------
# Compilation


def _rollback(topo: FabricTopology, vlans: list, reservations: list) -> None:
    for link_id, vid in reversed(vlans):
        fabric_mod.release_vlan(topo, link_id, vid)
    for res in reversed(reservations):
        fabric_mod.release(topo, res)


def compile_chain(
    spec: ChainSpec, placements: dict, topo: FabricTopology, epoch: int = 1
) -> ChainPlan:
    """Compile a chain into paths, VLAN allocations, and flow rules.

    ``placements`` maps each function node id to a (domain, mac) pair.
    Allocation is atomic: on any failure every VLAN and bandwidth
    reservation taken so far is returned before the error propagates.
    """
    hops = []
    for node_id in spec.functions:
        if node_id not in placements:
            raise ChainCompileError(f"chain {spec.id!r}: function {node_id!r} not placed")
        domain, mac = placements[node_id]
        if domain not in topo.domains:
            raise ChainCompileError(f"chain {spec.id!r}: unknown domain {domain!r}")
        hops.append(Hop(node_id=node_id, domain=domain, mac=mac))
    for endpoint, name in ((spec.source, "source"), (spec.sink, "sink")):
        if endpoint.domain not in topo.domains:
            raise ChainCompileError(f"chain {spec.id!r}: unknown {name} domain {endpoint.domain!r}")

    macs_seen = [h.mac for h in hops]
    if len(set(macs_seen)) != len(macs_seen) or spec.sink.mac in macs_seen:
        raise MacCollisionError(
            f"chain {spec.id!r}: function/sink MACs must be pairwise distinct"
        )

    waypoints = [spec.source.domain] + [h.domain for h in hops] + [spec.sink.domain]

    taken_vlans: list = []
    reservations: list = []
    segments: list = []
    try:
        for i in range(len(waypoints) - 1):
            src, dst = waypoints[i], waypoints[i + 1]
            if src == dst:
                segments.append(Segment(src_domain=src, dst_domain=dst, link_vlans=()))
                continue
            try:
                path = fabric_mod.compute_path(topo, src, dst, spec.qos)
            except NoFeasiblePathError as exc:
                raise SegmentInfeasibleError(i, src, dst, exc) from exc
            reservations.append(fabric_mod.commit_path(topo, path, spec.qos.min_bandwidth_mbps))
            link_vlans = []
            for link_id in path.link_ids:
                vid = fabric_mod.allocate_vlan(topo, link_id)
                taken_vlans.append((link_id, vid))
                link_vlans.append((link_id, vid))
            segments.append(Segment(src_domain=src, dst_domain=dst, link_vlans=tuple(link_vlans)))
        rules = _emit_rules(spec, hops, segments, topo)
    except ZtpomError:
        _rollback(topo, taken_vlans, reservations)
        raise

    return ChainPlan(
        chain_id=spec.id,
        epoch=epoch,
        hops=tuple(hops),
        segments=tuple(segments),
        rules=tuple(rules),
        original_dst_mac=spec.sink.mac,
        reservations=tuple(reservations),
    )


def _domain_seq(topo: FabricTopology, segment: Segment) -> list:
    """Domains visited along a segment, starting at src_domain."""
    seq = [segment.src_domain]
    for link_id, _ in segment.link_vlans:
        seq.append(topo.link(link_id).other_end(seq[-1]))
    return seq


def _emit_rules(spec: ChainSpec, hops: list, segments: list, topo: FabricTopology) -> list:
    rules: list = []
    seen_keys: set = set()

    def emit(rule: FlowRule) -> None:
        if rule.match_key in seen_keys:
            raise ChainCompileError(
                f"chain {spec.id!r}: ambiguous match {rule.match_key} at {rule.at_domain}"
            )
        seen_keys.add(rule.match_key)
        rules.append(rule)

    k = len(hops)

    def segment_entry_actions(s: int) -> dict:
        """set_vlan/out for stepping onto segment s from its origin domain."""
        seg = segments[s]
        if seg.link_vlans:
            first_link, first_vlan = seg.link_vlans[0]
            return {"set_vlan": first_vlan, "out": first_link}
        return {"out": LOCAL}

    def emit_transits(s: int, carried_mac: str) -> None:
        seg = segments[s]
        domains = _domain_seq(topo, seg)
        for j in range(1, len(seg.link_vlans)):
            prev_link, prev_vlan = seg.link_vlans[j - 1]
            next_link, next_vlan = seg.link_vlans[j]
            emit(
                FlowRule(
                    at_domain=domains[j],
                    match_ingress=prev_link,
                    match_vlan=prev_vlan,
                    match_dst=carried_mac,
                    set_vlan=next_vlan,
                    out=next_link,
                )
            )

    # carried dst MAC on segment s: next function's MAC, or the last
    # function's own MAC on the final leg toward the sink
    def carried(s: int) -> str:
        return hops[s].mac if s < k else hops[k - 1].mac

    # a tag survives intra-domain handoffs, so each hop matches the vlan the
    # packet actually carries: the last tag set on any earlier segment
    carried_vlan = None

    entry = segment_entry_actions(0)
    emit(
        FlowRule(
            at_domain=spec.source.domain,
            match_ingress=None,
            match_vlan=None,
            match_dst=spec.sink.mac,
            set_dst=hops[0].mac,
            set_vlan=entry.get("set_vlan"),
            out=entry["out"],
        )
    )
    emit_transits(0, carried(0))
    if segments[0].link_vlans:
        carried_vlan = segments[0].link_vlans[-1][1]

    for s in range(1, k + 1):
        hop = hops[s - 1]
        prev_seg = segments[s - 1]
        in_link = prev_seg.link_vlans[-1][0] if prev_seg.link_vlans else None
        entry = segment_entry_actions(s)
        if s < k:
            new_dst = hops[s].mac
        elif not segments[s].link_vlans:
            new_dst = spec.sink.mac  # sink is local: restore here
        else:
            new_dst = None  # keep own MAC; sink-side rule restores
        emit(
            FlowRule(
                at_domain=hop.domain,
                match_ingress=in_link,
                match_vlan=carried_vlan,
                match_dst=hop.mac,
                set_dst=new_dst,
                set_vlan=entry.get("set_vlan"),
                out=entry["out"],
            )
        )
        emit_transits(s, carried(s))
        if segments[s].link_vlans:
            carried_vlan = segments[s].link_vlans[-1][1]

    final_seg = segments[k]
    if final_seg.link_vlans:
        last_link, last_vlan = final_seg.link_vlans[-1]
        emit(
            FlowRule(
                at_domain=spec.sink.domain,
                match_ingress=last_link,
                match_vlan=last_vlan,
                match_dst=hops[k - 1].mac,
                set_dst=spec.sink.mac,
                out=LOCAL,
            )
        )
    return rules


# --------------------------------------------------------------------------
# Release / re-chain / audit


def release_chain(plan: ChainPlan, topo: FabricTopology) -> None:
    """Return every VLAN and bandwidth reservation the plan holds.

    All-or-nothing: verifies the plan is still active before touching
    anything, so a double release fails cleanly.
    """
    for link_id, vid in plan.link_vlan_pairs:
        if vid not in topo.allocated_vlans.get(link_id, set()):
            raise PlanStateError(
                f"plan {plan.chain_id!r}@{plan.epoch} unknown or already released "
                f"(vlan {vid} on {link_id!r} not held)"
            )
    for res in plan.reservations:
        if res.id not in topo.reservations:
            raise PlanStateError(
                f"plan {plan.chain_id!r}@{plan.epoch} unknown or already released "
                f"(reservation {res.id!r} not held)"
            )
    for link_id, vid in plan.link_vlan_pairs:
        fabric_mod.release_vlan(topo, link_id, vid)
    for res in plan.reservations:
        fabric_mod.release(topo, res)


def rechain(
    active: ChainPlan, new_spec: ChainSpec, placements: dict, topo: FabricTopology
) -> ChainUpdate:
    """Compile the next epoch while the active plan keeps its resources.

    If compilation fails the active plan is untouched; cutover (and the
    release of the old epoch) is the data plane's call.
    """
    if new_spec.id != active.chain_id:
        raise ChainCompileError(
            f"rechain id mismatch: plan {active.chain_id!r} vs spec {new_spec.id!r}"
        )
    new_plan = compile_chain(new_spec, placements, topo, epoch=active.epoch + 1)
    return ChainUpdate(
        chain_id=active.chain_id,
        old_epoch=active.epoch,
        new_epoch=new_plan.epoch,
        new_plan=new_plan,
    )


def audit_separation(plans: list, topo: FabricTopology | None = None) -> list:
    """Empty iff no (link, VLAN) pair is claimed twice and every VLAN
    action targets a value inside the egress link's pool."""
    violations: list = []
    claims: dict = {}
    for plan in plans:
        key = (plan.chain_id, plan.epoch)
        for link_id, vid in plan.link_vlan_pairs:
            if (link_id, vid) in claims and claims[(link_id, vid)] != key:
                violations.append(
                    Violation(
                        kind="vlan-overlap",
                        detail=f"link {link_id!r} vlan {vid} claimed twice",
                        plan_ids=(claims[(link_id, vid)], key),
                    )
                )
            claims.setdefault((link_id, vid), key)

    if topo is not None:
        for plan in plans:
            key = (plan.chain_id, plan.epoch)
            for rule in plan.rules:
                if rule.set_vlan is None or rule.out == LOCAL:
                    continue
                lo, hi = topo.link(rule.out).vlan_pool
                if not lo <= rule.set_vlan <= hi:
                    violations.append(
                        Violation(
                            kind="vlan-out-of-pool",
                            detail=(
                                f"rule at {rule.at_domain} sets vlan {rule.set_vlan} outside "
                                f"pool [{lo}, {hi}] of link {rule.out!r}"
                            ),
                            plan_ids=(key,),
                        )
                    )
    return violations
