"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the production algorithms: path
feasibility is exhaustive simple-path enumeration, broker feasibility is
a plain filter pipeline. They exist to check the real implementations,
so they must stay dumb.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from ztpom import fabric
from ztpom.blueprint import (
    Blueprint,
    ChainSpec,
    Endpoint,
    NodeSpec,
    ProviderProfile,
    QoSDemand,
)
from ztpom.marketplace import CatalogEntry, Marketplace, TrustRegistry

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

FP_A = "aaaa510e" * 8
FP_B = "bbbb510e" * 8
FP_C = "cccc510e" * 8
FP_CUSTOMER = "c0ffee00" * 8


def t3_doc() -> dict:
    return json.loads((FIXTURES / "t3.json").read_text())


def make_t3() -> fabric.FabricTopology:
    return fabric.load_topology(json.dumps(t3_doc()))


def make_endpoint(domain: str, tail: int) -> Endpoint:
    return Endpoint(domain=domain, mac=f"0a:00:00:00:00:{tail:02x}")


def make_blueprint(node_specs, chains=(), bp_id="app", version=1) -> Blueprint:
    return Blueprint(
        id=bp_id, name=bp_id, version=version, nodes=tuple(node_specs), chains=tuple(chains)
    )


def make_profile(provider_id: str, domain_id: str, prefix_byte: str, **kw) -> ProviderProfile:
    defaults = dict(
        image_map={"img": f"img-{provider_id}"},
        address_block=f"10.{int(prefix_byte, 16) % 200}.0.0/16",
        mac_prefix=f"02:{prefix_byte}:00:00",
        fn_delay_ms={},
        capacity={"vcpu": 64, "mem_gb": 256.0},
    )
    defaults.update(kw)
    return ProviderProfile(provider_id=provider_id, domain_id=domain_id, **defaults)


def trusted_market(*providers, requester="customer", latency_weight=0.1) -> Marketplace:
    """Marketplace where the requester already trusts every given provider."""
    trust = TrustRegistry()
    trust.register_cert(requester, FP_CUSTOMER)
    fps = {"csp-a": FP_A, "csp-b": FP_B, "csp-c": FP_C}
    market = Marketplace(trust, latency_weight=latency_weight)
    for provider in providers:
        trust.register_cert(provider, fps.get(provider, FP_C))
        trust.confirm_trust(requester, provider)
        trust.confirm_trust(provider, requester)
    return market


def offer(
    offer_id,
    provider_id,
    service_type,
    price=1.0,
    region="eu",
    tier=3,
    min_bw=10,
    max_bw=10000,
    fingerprint=None,
) -> CatalogEntry:
    fps = {"csp-a": FP_A, "csp-b": FP_B, "csp-c": FP_C}
    return CatalogEntry(
        offer_id=offer_id,
        provider_id=provider_id,
        service_type=service_type,
        region=region,
        price_per_hour=price,
        availability_tier=tier,
        min_bandwidth_mbps=min_bw,
        max_bandwidth_mbps=max_bw,
        api_endpoint=f"https://{provider_id}.example/api",
        cert_fingerprint=fingerprint or fps.get(provider_id, FP_C),
    )


class Env:
    """Complete orchestration environment for protocol tests."""

    def __init__(self, topo, market, prov):
        self.topo = topo
        self.market = market
        self.prov = prov


def standard_env(seed=0, heartbeat_interval=5, miss_threshold=3, extra_offers=()) -> Env:
    """T3 fabric, two trusted CSPs with profiles, offers for the usual types."""
    from ztpom.provisioner import Provisioner

    topo = make_t3()
    market = trusted_market("csp-a", "csp-b")
    for o in [
        offer("a-transcode", "csp-a", "transcode", price=2.0),
        offer("a-overlay", "csp-a", "overlay", price=4.0),
        offer("b-transcode", "csp-b", "transcode", price=3.0),
        offer("b-overlay", "csp-b", "overlay", price=3.0),
        *extra_offers,
    ]:
        market.publish_offer(o)
    prov = Provisioner(
        topo,
        market,
        heartbeat_interval=heartbeat_interval,
        miss_threshold=miss_threshold,
        seed=seed,
    )
    prov.register_provider(
        make_profile("csp-a", "A", "aa", fn_delay_ms={"transcode": 2.0, "overlay": 1.0})
    )
    prov.register_provider(
        make_profile("csp-b", "B", "bb", fn_delay_ms={"transcode": 3.0, "overlay": 1.0})
    )
    return Env(topo, market, prov)


def video_blueprint(version=1, functions=("f1", "f2"), min_bw=200.0) -> Blueprint:
    nodes = tuple(
        NodeSpec(fid, "transcode" if i % 2 == 0 else "overlay", "img")
        for i, fid in enumerate(functions)
    )
    chain = ChainSpec(
        id="c1",
        source=make_endpoint("C", 1),
        functions=tuple(functions),
        sink=make_endpoint("C", 2),
        qos=QoSDemand(min_bandwidth_mbps=min_bw),
    )
    return make_blueprint(nodes, [chain], bp_id="video", version=version)


def drive(env: Env, agents, rounds, start=None):
    """One protocol round = a server tick followed by one step per agent."""
    from ztpom import agent as agent_mod

    start = env.prov.now if start is None else start
    messages = []
    for offset in range(1, rounds + 1):
        now = start + offset
        env.prov.tick(now)
        for handle in agents:
            messages.extend(agent_mod.step(handle, now))
    return messages


# --------------------------------------------------------------------------
# Path oracle: exhaustive simple-path enumeration


def enumerate_simple_paths(topo: fabric.FabricTopology, src: str, dst: str):
    """Yield every simple path src -> dst as (link_ids, domains)."""
    links_at: dict = {d: [] for d in topo.domains}
    for link in topo.links.values():
        a, b = link.endpoints
        links_at[a].append(link)
        links_at[b].append(link)

    def walk(at, visited, link_ids):
        if at == dst:
            yield tuple(link_ids), tuple(visited)
            return
        for link in links_at[at]:
            nxt = link.other_end(at)
            if nxt in visited:
                continue
            yield from walk(nxt, visited + [nxt], link_ids + [link.id])

    yield from walk(src, [src], [])


def oracle_best_path(topo: fabric.FabricTopology, src: str, dst: str, qos: QoSDemand):
    """Optimum under the documented objective and tie-breaks, or None.

    Full deterministic order: latency, hops, domain sequence, jitter,
    link-id sequence (the last two only disambiguate parallel links).
    """
    best = None
    for link_ids, domains in enumerate_simple_paths(topo, src, dst):
        latency = 0.0
        jitter = 0.0
        feasible = True
        for link_id in link_ids:
            link = topo.links[link_id]
            latency += link.latency_ms
            jitter += link.jitter_ms
            if topo.residual_mbps(link_id) < qos.min_bandwidth_mbps:
                feasible = False
        if not feasible or latency > qos.max_latency_ms or jitter > qos.max_jitter_ms:
            continue
        key = (latency, len(link_ids), domains, jitter, link_ids)
        if best is None or key < best:
            best = key
    return best


def random_topology(rng: random.Random, max_domains=10, max_links=20) -> fabric.FabricTopology:
    n = rng.randint(2, max_domains)
    domain_ids = [f"d{i:02d}" for i in range(n)]
    doc = {
        "domains": [{"id": d, "kind": rng.choice(["csp", "nren", "campus", "ocx"])} for d in domain_ids],
        "links": [],
    }
    m = rng.randint(1, max_links)
    for i in range(m):
        a, b = rng.sample(domain_ids, 2)
        doc["links"].append(
            {
                "id": f"l{i:02d}",
                "endpoints": [a, b],
                "latency_ms": rng.choice([1, 1, 2, 3, 5, 8]),
                "jitter_ms": rng.choice([0, 0, 1, 2]),
                "capacity_mbps": rng.choice([100, 500, 1000]),
                "vlan_pool": [100, 110],
            }
        )
    return fabric.topology_from_dict(doc)


def connected_random_topology(rng: random.Random, max_domains=8, extra_links=6):
    """Spanning tree plus extras, so every domain pair is reachable."""
    n = rng.randint(2, max_domains)
    domain_ids = [f"d{i:02d}" for i in range(n)]
    doc = {
        "domains": [{"id": d, "kind": "csp"} for d in domain_ids],
        "links": [],
    }
    link_no = 0
    for i in range(1, n):
        parent = domain_ids[rng.randrange(i)]
        doc["links"].append(
            {
                "id": f"l{link_no:02d}",
                "endpoints": [parent, domain_ids[i]],
                "latency_ms": rng.choice([1, 2, 3, 5]),
                "jitter_ms": rng.choice([0, 1]),
                "capacity_mbps": 10000,
                "vlan_pool": [100, 199],
            }
        )
        link_no += 1
    for _ in range(rng.randint(0, extra_links)):
        a, b = rng.sample(domain_ids, 2)
        doc["links"].append(
            {
                "id": f"l{link_no:02d}",
                "endpoints": [a, b],
                "latency_ms": rng.choice([1, 2, 3, 5]),
                "jitter_ms": rng.choice([0, 1]),
                "capacity_mbps": 10000,
                "vlan_pool": [100, 199],
            }
        )
        link_no += 1
    return fabric.topology_from_dict(doc)


def random_qos(rng: random.Random) -> QoSDemand:
    return QoSDemand(
        max_latency_ms=rng.choice([float("inf"), 4, 6, 10, 20]),
        max_jitter_ms=rng.choice([float("inf"), float("inf"), 1, 3]),
        min_bandwidth_mbps=rng.choice([50, 200, 600]),
    )


# --------------------------------------------------------------------------
# Broker oracle: filter pipeline + documented scoring


def oracle_broker(market: Marketplace, req, topo: fabric.FabricTopology, trust=None):
    trust = trust or market.trust
    scored = []
    for entry in market.offers.values():
        if req.service_type is not None and entry.service_type != req.service_type:
            continue
        if req.region is not None and entry.region != req.region:
            continue
        if req.max_price is not None and entry.price_per_hour > req.max_price:
            continue
        if req.min_tier is not None and entry.availability_tier < req.min_tier:
            continue
        if req.min_bandwidth_mbps is not None and entry.max_bandwidth_mbps < req.min_bandwidth_mbps:
            continue
        if req.provider_allowlist is not None and entry.provider_id not in req.provider_allowlist:
            continue
        if not trust.established(req.requester_id, entry.provider_id):
            continue
        provider_domain = topo.domain_of_provider(entry.provider_id)
        if provider_domain is None:
            continue
        if req.user_domain is None or req.user_domain == provider_domain:
            latency = 0.0
        else:
            qos = QoSDemand(min_bandwidth_mbps=req.min_bandwidth_mbps or 1.0)
            best = oracle_best_path(topo, req.user_domain, provider_domain, qos)
            if best is None:
                continue
            latency = best[0]
        scored.append((entry, entry.price_per_hour + market.latency_weight * latency, latency))
    scored.sort(key=lambda t: (t[1], t[0].provider_id, t[0].offer_id))
    return scored
