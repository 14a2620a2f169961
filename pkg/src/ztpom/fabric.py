"""Multi-domain network fabric: topology, QoS path computation, admission.

Domains interconnect through links carrying latency/jitter/capacity plus a
per-link VLAN pool. Path search minimizes total latency under additive
latency/jitter bounds and a min-bandwidth bottleneck constraint, with
deterministic tie-breaking: fewer hops, then smallest domain-id
sequence, then lower jitter and smallest link-id sequence (the last two
only matter for parallel links). Bandwidth admission is hard: a commit
either fits on every link of the path or changes nothing.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

from .blueprint import QoSDemand
from .errors import ZtpomError

DOMAIN_KINDS = ("csp", "nren", "campus", "ocx")
VLAN_MIN, VLAN_MAX = 2, 4094


class TopologyError(ZtpomError):
    code = "topology-error"


class PathError(ZtpomError):
    code = "path-error"


class NoFeasiblePathError(PathError):
    """No simple path satisfies the demand; names the constraint that bound
    the best infeasible candidate (or "connectivity" if none exists)."""

    code = "no-feasible-path"

    def __init__(self, src: str, dst: str, binding_constraint: str, candidate=None) -> None:
        desc = f" (best candidate {'-'.join(candidate)})" if candidate else ""
        super().__init__(
            f"no feasible path {src} -> {dst}: binding constraint {binding_constraint}{desc}",
            binding_constraint=binding_constraint,
        )
        self.binding_constraint = binding_constraint
        self.candidate = candidate


class InsufficientResidualError(ZtpomError):
    code = "insufficient-residual"

    def __init__(self, link_id: str, wanted: float, residual: float) -> None:
        super().__init__(
            f"link {link_id!r}: requested {wanted} mbps exceeds residual {residual} mbps",
            link=link_id,
        )
        self.link_id = link_id


class ReservationError(ZtpomError):
    code = "reservation-error"


class VlanPoolExhausted(ZtpomError):
    code = "vlan-pool-exhausted"

    def __init__(self, link_id: str) -> None:
        super().__init__(f"link {link_id!r}: VLAN pool exhausted", link=link_id)
        self.link_id = link_id


@dataclass(frozen=True)
class Domain:
    id: str
    kind: str = "csp"
    provider_ids: tuple = ()


@dataclass(frozen=True)
class LinkSpec:
    id: str
    endpoints: tuple
    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    capacity_mbps: float = 1000.0
    vlan_pool: tuple = (100, 199)

    def other_end(self, domain_id: str) -> str:
        a, b = self.endpoints
        return b if domain_id == a else a


@dataclass(frozen=True)
class Path:
    link_ids: tuple
    domains: tuple
    total_latency_ms: float
    total_jitter_ms: float
    bottleneck_mbps: float

    @property
    def hops(self) -> int:
        return len(self.link_ids)


@dataclass(frozen=True)
class Reservation:
    id: str
    link_ids: tuple
    bandwidth_mbps: float


@dataclass
class FabricTopology:
    """Domains, links, and the mutable reservation state on top of them."""

    domains: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    committed: dict = field(default_factory=dict)
    allocated_vlans: dict = field(default_factory=dict)
    reservations: dict = field(default_factory=dict)
    res_seq: int = 0

    def link(self, link_id: str) -> LinkSpec:
        try:
            return self.links[link_id]
        except KeyError:
            raise TopologyError(f"unknown link {link_id!r}") from None

    def residual_mbps(self, link_id: str) -> float:
        return self.link(link_id).capacity_mbps - self.committed.get(link_id, 0.0)

    def links_at(self, domain_id: str) -> list:
        return [l for l in self.links.values() if domain_id in l.endpoints]

    def domain_of_provider(self, provider_id: str):
        for d in self.domains.values():
            if provider_id in d.provider_ids:
                return d.id
        return None


def load_topology(doc: str) -> FabricTopology:
    """Load a topology document; reservations start empty."""
    try:
        raw = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return topology_from_dict(raw)


def topology_from_dict(raw: dict) -> FabricTopology:
    topo = FabricTopology()
    for d in raw.get("domains", []):
        kind = d.get("kind", "csp")
        if kind not in DOMAIN_KINDS:
            raise TopologyError(f"domain {d.get('id')!r}: unknown kind {kind!r}")
        dom = Domain(id=str(d["id"]), kind=kind, provider_ids=tuple(d.get("providers", [])))
        if dom.id in topo.domains:
            raise TopologyError(f"duplicate domain id {dom.id!r}")
        topo.domains[dom.id] = dom

    for l in raw.get("links", []):
        link_id = str(l["id"])
        endpoints = tuple(str(e) for e in l["endpoints"])
        if len(endpoints) != 2 or endpoints[0] == endpoints[1]:
            raise TopologyError(f"link {link_id!r}: endpoints must be two distinct domains")
        for e in endpoints:
            if e not in topo.domains:
                raise TopologyError(f"link {link_id!r}: dangling endpoint {e!r}")
        lo, hi = l.get("vlan_pool", [100, 199])
        if not (VLAN_MIN <= lo <= hi <= VLAN_MAX):
            raise TopologyError(f"link {link_id!r}: invalid vlan_pool [{lo}, {hi}]")
        if link_id in topo.links:
            raise TopologyError(f"duplicate link id {link_id!r}")
        capacity = float(l.get("capacity_mbps", 1000.0))
        if capacity <= 0:
            raise TopologyError(f"link {link_id!r}: capacity must be positive")
        topo.links[link_id] = LinkSpec(
            id=link_id,
            endpoints=endpoints,
            latency_ms=float(l.get("latency_ms", 0.0)),
            jitter_ms=float(l.get("jitter_ms", 0.0)),
            capacity_mbps=capacity,
            vlan_pool=(int(lo), int(hi)),
        )
    return topo


def topology_to_dict(topo: FabricTopology) -> dict:
    return {
        "domains": [
            {"id": d.id, "kind": d.kind, "providers": list(d.provider_ids)}
            for d in topo.domains.values()
        ],
        "links": [
            {
                "id": l.id,
                "endpoints": list(l.endpoints),
                "latency_ms": l.latency_ms,
                "jitter_ms": l.jitter_ms,
                "capacity_mbps": l.capacity_mbps,
                "vlan_pool": list(l.vlan_pool),
            }
            for l in topo.links.values()
        ],
    }


# --------------------------------------------------------------------------
# Path computation

_Label = tuple  # (latency, hops, domain_seq, jitter, link_seq)


def _search(topo: FabricTopology, src: str, dst: str, qos: QoSDemand | None):
    """Label-correcting search over simple domain paths.

    Keeps Pareto-incomparable (latency, jitter, hops) labels per domain;
    when qos is None the search is unconstrained and bandwidth is ignored.
    Returns the best label at dst under (latency, hops, domain_seq) order,
    or None.
    """
    if qos is None:
        usable = lambda link: True  # noqa: E731
        max_lat = max_jit = math.inf
    else:
        usable = lambda link: topo.residual_mbps(link.id) >= qos.min_bandwidth_mbps  # noqa: E731
        max_lat, max_jit = qos.max_latency_ms, qos.max_jitter_ms

    adjacency: dict[str, list[LinkSpec]] = {d: [] for d in topo.domains}
    for link in topo.links.values():
        if usable(link):
            a, b = link.endpoints
            adjacency[a].append(link)
            adjacency[b].append(link)

    start = (0.0, 0, (src,), 0.0, ())
    frontier: list[_Label] = [start]
    settled: dict[str, list[tuple]] = {d: [] for d in topo.domains}
    best = None

    def dominated(at: str, lat: float, jit: float, hops: int, seq: tuple) -> bool:
        for olat, ojit, ohops, oseq in settled[at]:
            if olat <= lat and ojit <= jit and ohops <= hops:
                if olat < lat or ojit < jit or ohops < hops or oseq <= seq:
                    return True
        return False

    while frontier:
        lat, hops, seq, jit, link_seq = heapq.heappop(frontier)
        at = seq[-1]
        if best is not None and (lat, hops, seq) >= best[:3]:
            continue
        if dominated(at, lat, jit, hops, seq):
            continue
        settled[at].append((lat, jit, hops, seq))
        if at == dst:
            if best is None or (lat, hops, seq) < best[:3]:
                best = (lat, hops, seq, jit, link_seq)
            continue
        for link in adjacency[at]:
            nxt = link.other_end(at)
            if nxt in seq:
                continue
            nlat = lat + link.latency_ms
            njit = jit + link.jitter_ms
            if nlat > max_lat or njit > max_jit:
                continue
            heapq.heappush(
                frontier, (nlat, hops + 1, seq + (nxt,), njit, link_seq + (link.id,))
            )
    return best


def _path_from_label(topo: FabricTopology, label) -> Path:
    lat, hops, seq, jit, link_seq = label
    bottleneck = min((topo.residual_mbps(l) for l in link_seq), default=math.inf)
    return Path(
        link_ids=tuple(link_seq),
        domains=tuple(seq),
        total_latency_ms=lat,
        total_jitter_ms=jit,
        bottleneck_mbps=bottleneck,
    )


def compute_path(topo: FabricTopology, src_domain: str, dst_domain: str, qos: QoSDemand) -> Path:
    """Best feasible simple path, or NoFeasiblePathError naming the
    constraint that rules out the best infeasible candidate."""
    if src_domain == dst_domain:
        raise PathError(f"source and destination are both {src_domain!r}")
    for d in (src_domain, dst_domain):
        if d not in topo.domains:
            raise TopologyError(f"unknown domain {d!r}")

    label = _search(topo, src_domain, dst_domain, qos)
    if label is not None:
        return _path_from_label(topo, label)

    unconstrained = _search(topo, src_domain, dst_domain, None)
    if unconstrained is None:
        raise NoFeasiblePathError(src_domain, dst_domain, "connectivity")
    candidate = _path_from_label(topo, unconstrained)
    if candidate.total_latency_ms > qos.max_latency_ms:
        binding = "max_latency_ms"
    elif candidate.total_jitter_ms > qos.max_jitter_ms:
        binding = "max_jitter_ms"
    else:
        binding = "min_bandwidth_mbps"
    raise NoFeasiblePathError(src_domain, dst_domain, binding, candidate.domains)


# --------------------------------------------------------------------------
# Admission state


def commit_path(topo: FabricTopology, path: Path, bw_mbps: float) -> Reservation:
    """Reserve bandwidth on every link of the path, atomically."""
    if bw_mbps <= 0:
        raise ReservationError(f"bandwidth must be positive, got {bw_mbps}")
    for link_id in path.link_ids:
        residual = topo.residual_mbps(link_id)
        if residual < bw_mbps:
            raise InsufficientResidualError(link_id, bw_mbps, residual)
    for link_id in path.link_ids:
        topo.committed[link_id] = topo.committed.get(link_id, 0.0) + bw_mbps
    topo.res_seq += 1
    res = Reservation(id=f"res-{topo.res_seq}", link_ids=path.link_ids, bandwidth_mbps=bw_mbps)
    topo.reservations[res.id] = res
    return res


def release(topo: FabricTopology, reservation: Reservation) -> None:
    """Return the reservation's bandwidth; a second release is an error."""
    if reservation.id not in topo.reservations:
        raise ReservationError(f"unknown or already-released reservation {reservation.id!r}")
    del topo.reservations[reservation.id]
    for link_id in reservation.link_ids:
        topo.committed[link_id] = topo.committed.get(link_id, 0.0) - reservation.bandwidth_mbps
        if math.isclose(topo.committed[link_id], 0.0, abs_tol=1e-9):
            del topo.committed[link_id]


def allocate_vlan(topo: FabricTopology, link_id: str) -> int:
    """Lowest free VLAN id in the link's pool."""
    link = topo.link(link_id)
    taken = topo.allocated_vlans.setdefault(link_id, set())
    lo, hi = link.vlan_pool
    for vid in range(lo, hi + 1):
        if vid not in taken:
            taken.add(vid)
            return vid
    raise VlanPoolExhausted(link_id)


def release_vlan(topo: FabricTopology, link_id: str, vlan_id: int) -> None:
    taken = topo.allocated_vlans.get(link_id, set())
    if vlan_id not in taken:
        raise ReservationError(f"vlan {vlan_id} not allocated on link {link_id!r}")
    taken.discard(vlan_id)
    if not taken:
        topo.allocated_vlans.pop(link_id, None)


def state_to_dict(topo: FabricTopology) -> dict:
    """Reservation state only; the static topology lives in its own file."""
    return {
        "committed": {k: topo.committed[k] for k in sorted(topo.committed)},
        "allocated_vlans": {
            k: sorted(v) for k, v in sorted(topo.allocated_vlans.items()) if v
        },
        "reservations": {
            rid: {"link_ids": list(r.link_ids), "bandwidth_mbps": r.bandwidth_mbps}
            for rid, r in sorted(topo.reservations.items())
        },
        "res_seq": topo.res_seq,
    }


def restore_state(topo: FabricTopology, doc: dict) -> None:
    topo.committed = {k: float(v) for k, v in doc["committed"].items()}
    topo.allocated_vlans = {k: set(v) for k, v in doc["allocated_vlans"].items()}
    topo.reservations = {
        rid: Reservation(
            id=rid, link_ids=tuple(r["link_ids"]), bandwidth_mbps=float(r["bandwidth_mbps"])
        )
        for rid, r in doc["reservations"].items()
    }
    topo.res_seq = int(doc["res_seq"])


def audit_topology(topo: FabricTopology) -> list:
    """Invariant sweep: committed within [0, capacity], VLANs within pools,
    reservations consistent with per-link committed totals."""
    problems = []
    per_link: dict[str, float] = {}
    for res in topo.reservations.values():
        for link_id in res.link_ids:
            per_link[link_id] = per_link.get(link_id, 0.0) + res.bandwidth_mbps
    for link_id, link in topo.links.items():
        committed = topo.committed.get(link_id, 0.0)
        if committed < -1e-9 or committed > link.capacity_mbps + 1e-9:
            problems.append(f"link {link_id}: committed {committed} outside [0, capacity]")
        if not math.isclose(committed, per_link.get(link_id, 0.0), abs_tol=1e-6):
            problems.append(f"link {link_id}: committed {committed} != reservation sum")
        lo, hi = link.vlan_pool
        for vid in topo.allocated_vlans.get(link_id, set()):
            if not lo <= vid <= hi:
                problems.append(f"link {link_id}: vlan {vid} outside pool [{lo}, {hi}]")
    for link_id in topo.committed:
        if link_id not in topo.links:
            problems.append(f"committed bandwidth on unknown link {link_id}")
    return problems
