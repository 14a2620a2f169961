"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v`` to see one line per
criterion. Every tolerance and budget is pinned here, not configurable.
"""

from __future__ import annotations

import dataclasses
import json
import random
import time

import pytest

from support import (
    FIXTURES,
    FP_C,
    connected_random_topology,
    drive,
    make_blueprint,
    offer,
    oracle_best_path,
    oracle_broker,
    random_qos,
    random_topology,
    standard_env,
    t3_doc,
    trusted_market,
    video_blueprint,
)
from ztpom import fabric, sfc
from ztpom.agent import AgentConfig, InProcessRegistry, spawn, step
from ztpom.blueprint import ChainSpec, Endpoint, NodeSpec, QoSDemand
from ztpom.dataplane import FlowSpec, Simulator
from ztpom.fabric import NoFeasiblePathError, audit_topology, compute_path
from ztpom.gateway.config import GatewayConfig
from ztpom.gateway.service import GatewayService
from ztpom.marketplace import Marketplace, ServiceRequest, TrustRegistry
from ztpom.provisioner import DeploymentState, NoOfferError, NodeState, Provisioner
from ztpom.sfc import ChainCompileError, audit_separation, compile_chain, rechain, release_chain


def _pass(n: int, detail: str) -> None:
    print(f"ACCEPTANCE {n}: PASS ({detail})")


def test_criterion_01_path_oracle_500_topologies():
    rng = random.Random(0xC0FFEE)
    started = time.monotonic()
    checked = 0
    for _ in range(500):
        topo = random_topology(rng, max_domains=10, max_links=20)
        src, dst = rng.sample(sorted(topo.domains), 2)
        qos = random_qos(rng)
        expected = oracle_best_path(topo, src, dst, qos)
        if expected is None:
            with pytest.raises(NoFeasiblePathError):
                compute_path(topo, src, dst, qos)
        else:
            path = compute_path(topo, src, dst, qos)
            got = (
                path.total_latency_ms,
                path.hops,
                path.domains,
                path.total_jitter_ms,
                path.link_ids,
            )
            assert got == expected, f"mismatch on seed topo: {got} != {expected}"
        checked += 1
    elapsed = time.monotonic() - started
    assert checked == 500
    assert elapsed < 30.0, f"budget blown: {elapsed:.1f}s"
    _pass(1, f"500/500 match in {elapsed:.1f}s")


def test_criterion_02_sfc_correctness_1000_scenarios():
    rng = random.Random(0x5FC)
    started = time.monotonic()
    scenarios = 0
    while scenarios < 1000:
        topo = connected_random_topology(rng, max_domains=8, extra_links=5)
        domains = sorted(topo.domains)
        length = rng.randint(1, 5)
        functions = tuple(f"fn{j}" for j in range(length))
        placements = {
            f: (rng.choice(domains), f"02:0e:00:00:{scenarios % 251:02x}:{j:02x}")
            for j, f in enumerate(functions)
        }
        spec = ChainSpec(
            id=f"chain-{scenarios}",
            source=Endpoint(rng.choice(domains), "0a:00:00:00:00:fe"),
            functions=functions,
            sink=Endpoint(rng.choice(domains), "0a:00:00:00:00:ff"),
            qos=QoSDemand(min_bandwidth_mbps=1.0),
        )
        plan = compile_chain(spec, placements, topo)
        sim = Simulator(topo, fn_delays={f: float(rng.randint(0, 3)) for f in functions})
        sim.install(plan)
        sim.inject(FlowSpec(chain_id=spec.id, count=2, start_tick=0, gap_ticks=3))
        (result,) = sim.run_until(10_000)
        assert result.delivered == 2, f"scenario {scenarios}: {result.losses}"
        assert not result.losses
        for pkt in result.packets:
            assert pkt.trace == functions, f"scenario {scenarios}: trace {pkt.trace}"
            assert pkt.final_dst_mac == spec.sink.mac
        scenarios += 1
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"budget blown: {elapsed:.1f}s"
    _pass(2, f"1000 scenarios, all traces exact, in {elapsed:.1f}s")


def test_criterion_03_vlan_separation_stateful():
    rng = random.Random(0x7E57)
    doc = t3_doc()
    for link in doc["links"]:
        link["vlan_pool"] = [100, 115]  # tight pools force exhaustion paths
    topo = fabric.topology_from_dict(doc)
    domains = sorted(topo.domains)

    active: dict = {}
    draining: list = []
    ops = 0
    chain_no = 0
    while ops < 250:
        roll = rng.random()
        try:
            if roll < 0.5 or not active:
                chain_no += 1
                length = rng.randint(1, 3)
                functions = tuple(f"f{chain_no}-{j}" for j in range(length))
                placements = {
                    f: (rng.choice(domains), f"02:0e:01:{chain_no % 251:02x}:{j:02x}:00")
                    for j, f in enumerate(functions)
                }
                spec = ChainSpec(
                    id=f"c{chain_no}",
                    source=Endpoint(rng.choice(domains), f"0a:00:00:01:{chain_no % 251:02x}:fe"),
                    functions=functions,
                    sink=Endpoint(rng.choice(domains), f"0a:00:00:01:{chain_no % 251:02x}:ff"),
                    qos=QoSDemand(min_bandwidth_mbps=rng.choice([10.0, 50.0])),
                )
                active[spec.id] = (spec, placements, compile_chain(spec, placements, topo))
            elif roll < 0.75:
                chain_id = rng.choice(sorted(active))
                spec, placements, plan = active[chain_id]
                new_order = list(spec.functions)
                rng.shuffle(new_order)
                new_spec = dataclasses.replace(spec, functions=tuple(new_order))
                update = rechain(plan, new_spec, placements, topo)
                draining.append(plan)  # old epoch held until "cutover"
                active[chain_id] = (new_spec, placements, update.new_plan)
            else:
                if draining and rng.random() < 0.6:
                    release_chain(draining.pop(rng.randrange(len(draining))), topo)
                else:
                    chain_id = rng.choice(sorted(active))
                    _s, _p, plan = active.pop(chain_id)
                    release_chain(plan, topo)
        except (ChainCompileError, fabric.VlanPoolExhausted, NoFeasiblePathError):
            pass  # rejected op; state must be unchanged, which the audits verify
        ops += 1
        plans = [p for _s, _p, p in active.values()] + draining
        assert audit_separation(plans, topo) == [], f"op {ops}"
        assert audit_topology(topo) == [], f"op {ops}"
    for plan in draining:
        release_chain(plan, topo)
    for _s, _p, plan in active.values():
        release_chain(plan, topo)
    assert topo.committed == {} and topo.allocated_vlans == {}
    _pass(3, f"{ops} ops, separation clean after every one")


def _midstream_reorder_replay(seed: int) -> dict:
    cfg = GatewayConfig(
        seed=seed,
        topology_path=FIXTURES / "t3.json",
        catalogue_path=FIXTURES / "catalogue.json",
    )
    service = GatewayService(cfg)
    service.register_blueprint(json.loads((FIXTURES / "video.json").read_text()))
    dep = service.create_deployment("uhd-video")
    dep = service.run_agents(dep["id"])
    assert dep["state"] == "ACTIVE"
    script = [
        {"op": "install", "chain": "stream"},
        {"op": "inject", "chain": "stream", "count": 10, "start": 0, "gap": 4},
        {"op": "rechain", "chain": "stream", "order": ["overlay", "color-grade", "transcode"]},
        {"op": "cutover", "chain": "stream", "at": 20},  # packet 5 injects at tick 20
        {"op": "run_until", "tick": 1000},
    ]
    return service.run_scenario(script)


def test_criterion_04_make_before_break_replay(monkeypatch):
    monkeypatch.setenv("ZTPOM_SEED", "12345")
    first = _midstream_reorder_replay(12345)
    second = _midstream_reorder_replay(12345)
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)

    (flow,) = first["results"]
    assert flow["delivered"] == 10
    assert flow["losses"] == []
    old_order = ("transcode", "color-grade", "overlay")
    new_order = ("overlay", "color-grade", "transcode")
    for pkt in flow["packets"]:
        expected = old_order if pkt["seq"] < 5 else new_order
        assert tuple(pkt["trace"]) == expected, pkt
        assert pkt["final_dst_mac"] == "0a:00:00:00:00:02"
    assert ["stream", 1] in first["released"]
    _pass(4, "traces partition at cutover tick, zero loss, old epoch auto-released")


def test_criterion_05_liveness_100_seeded_runs():
    rng = random.Random(0x11FE)
    for run in range(100):
        n = rng.randint(1, 8)
        env = standard_env(seed=run)
        functions = tuple(f"f{i}" for i in range(1, n + 1))
        bp = video_blueprint(functions=functions, min_bw=10.0)
        env.prov.register_blueprint(bp)
        dep = env.prov.plan_deployment("video")
        env.prov.start_provisioning(dep.id)
        registry = InProcessRegistry(env.prov)
        handles = [
            spawn(AgentConfig(provider_id=p), dep.id, node, registry)
            for node, p in sorted(dep.placements.items())
        ]
        rounds = 0
        for round_no in range(1, n + 3):
            rounds = round_no
            env.prov.tick(round_no)
            for handle in handles:
                step(handle, round_no)
            if dep.state is DeploymentState.ACTIVE:
                break
        assert dep.state is DeploymentState.ACTIVE, f"run {run}: stuck after {rounds} rounds"
        assert rounds <= n + 2
    _pass(5, "100 runs reached ACTIVE within N+2 rounds")


def test_criterion_06_failure_reconfiguration():
    # alternative offer available: DEGRADED at exactly 3 missed intervals, then recovery
    interval, threshold = 5, 3
    env = standard_env(heartbeat_interval=interval, miss_threshold=threshold)
    env.prov.register_blueprint(video_blueprint())
    dep = env.prov.plan_deployment("video")
    env.prov.start_provisioning(dep.id)
    silent_cfg = AgentConfig(provider_id="csp-a", fail_mode="silent_after", silent_after_tick=10)
    registry = InProcessRegistry(env.prov)
    handles = [
        spawn(silent_cfg if node == "f1" else AgentConfig(provider_id=p), dep.id, node, registry)
        for node, p in sorted(dep.placements.items())
    ]
    drive(env, handles, 10)
    assert dep.state is DeploymentState.ACTIVE
    old_epoch = dep.chain_plans["c1"].epoch
    last_hb = max(s.last_heartbeat for s in env.prov.sessions.values() if s.node_id == "f1")
    lost_tick = last_hb + threshold * interval
    for now in range(11, lost_tick):
        env.prov.tick(now)
        for handle in handles:
            step(handle, now)
        assert dep.state is DeploymentState.ACTIVE, f"early degrade at {now}"
    env.prov.tick(lost_tick)
    assert dep.state is DeploymentState.DEGRADED
    assert dep.node_states["f1"] is NodeState.LOST or dep.node_states["f1"] is NodeState.PENDING
    assert dep.placements["f1"] == "csp-b"  # re-brokered off the silent provider
    assert dep.chain_plans["c1"].epoch == old_epoch + 1  # chain recompiled
    replacement = spawn(AgentConfig(provider_id="csp-b"), dep.id, "f1", registry)
    drive(env, [*handles, replacement], 5)
    assert dep.state is DeploymentState.ACTIVE

    # no alternative: deployment must fail
    env2 = standard_env(heartbeat_interval=interval, miss_threshold=threshold)
    env2.market.publish_offer(offer("only-align", "csp-a", "align"))
    bp = make_blueprint([NodeSpec("n1", "align", "img")], bp_id="solo")
    env2.prov.register_blueprint(bp)
    dep2 = env2.prov.plan_deployment("solo")
    env2.prov.start_provisioning(dep2.id)
    lone = spawn(
        AgentConfig(provider_id="csp-a", fail_mode="silent_after", silent_after_tick=6),
        dep2.id,
        "n1",
        InProcessRegistry(env2.prov),
    )
    drive(env2, [lone], 30)
    assert dep2.state is DeploymentState.FAILED
    _pass(6, "exact-threshold degrade, replan to ACTIVE, FAILED without alternative")


def test_criterion_07_broker_soundness_vs_brute_force():
    rng = random.Random(0xB0B)
    for trial in range(40):
        topo = connected_random_topology(rng, max_domains=7, extra_links=4)
        domains = sorted(topo.domains)
        providers = [f"p{i:02d}" for i in range(rng.randint(2, 10))]
        trust = TrustRegistry()
        trust.register_cert("customer", "00" * 32)
        for i, pid in enumerate(providers):
            trust.register_cert(pid, f"{i:02x}" * 32)
            if rng.random() < 0.75:
                trust.confirm_trust("customer", pid)
            if rng.random() < 0.75:
                trust.confirm_trust(pid, "customer")
            if rng.random() < 0.85:
                d = topo.domains[rng.choice(domains)]
                object.__setattr__(d, "provider_ids", d.provider_ids + (pid,))
        market = Marketplace(trust, latency_weight=rng.choice([0.0, 0.1, 0.5]))
        for n in range(rng.randint(1, 100)):
            pid = rng.choice(providers)
            market.publish_offer(
                offer(
                    f"o{n:03d}",
                    pid,
                    rng.choice(["a", "b"]),
                    price=rng.choice([0.5, 1.0, 1.0, 2.0, 8.0]),
                    region=rng.choice(["eu", "us"]),
                    tier=rng.randint(1, 4),
                    max_bw=rng.choice([100, 1000, 10000]),
                    fingerprint=trust.fingerprint_of(pid),
                )
            )
        req = ServiceRequest(
            requester_id="customer",
            service_type=rng.choice(["a", "b"]),
            region=rng.choice([None, "eu"]),
            max_price=rng.choice([None, 1.5, 5.0]),
            min_tier=rng.choice([None, 2, 3]),
            min_bandwidth_mbps=rng.choice([None, 500.0]),
            user_domain=rng.choice([None] + domains),
        )
        got = market.broker(req, topo)
        expected = oracle_broker(market, req, topo)
        assert [(m.entry.offer_id, m.score, m.path_latency_ms) for m in got] == [
            (e.offer_id, s, l) for e, s, l in expected
        ], f"trial {trial}"
        for m in got:
            assert trust.established("customer", m.entry.provider_id)
            assert topo.domain_of_provider(m.entry.provider_id) is not None
    _pass(7, "40 random catalogues match brute force exactly")


def test_criterion_08_trust_protocol_end_to_end():
    # symmetry + idempotence
    trust = TrustRegistry()
    trust.register_cert("a", "11" * 32)
    trust.register_cert("b", "22" * 32)
    r1 = trust.confirm_trust("a", "b")
    assert r1 == trust.confirm_trust("a", "b")  # idempotent
    assert not trust.established("a", "b")
    trust.confirm_trust("b", "a")
    assert trust.trust_status("a", "b") == trust.trust_status("b", "a")
    assert trust.established("a", "b") and trust.established("b", "a")

    # revocation blocks planning end to end
    env = standard_env()
    env.prov.register_blueprint(video_blueprint())
    dep = env.prov.plan_deployment("video")
    assert dep.placements["f1"] == "csp-a"

    env.market.trust.register_cert("csp-a", FP_C)  # cert rotation revokes
    env.market.trust.register_cert("csp-b", FP_C.replace("c", "d"))
    with pytest.raises(NoOfferError) as err:
        env.prov.plan_deployment("video")
    assert err.value.binding_constraint == "trust"

    for provider in ("csp-a", "csp-b"):
        env.market.trust.confirm_trust("customer", provider)
        env.market.trust.confirm_trust(provider, "customer")
    dep2 = env.prov.plan_deployment("video")
    assert dep2.placements["f1"] == "csp-a"
    _pass(8, "symmetry, idempotence, revocation gates planning until re-confirmed")


def test_criterion_09_determinism_and_persistence():
    # (a) identical seed + identical script -> byte-identical results
    blob_a = json.dumps(_midstream_reorder_replay(777), sort_keys=True)
    blob_b = json.dumps(_midstream_reorder_replay(777), sort_keys=True)
    assert blob_a == blob_b

    # (b) snapshot mid-scenario, restore, replay the recorded remainder
    def build():
        cfg = GatewayConfig(
            seed=99,
            topology_path=FIXTURES / "t3.json",
            catalogue_path=FIXTURES / "catalogue.json",
        )
        return GatewayService(cfg)

    original = build()
    original.register_blueprint(json.loads((FIXTURES / "video.json").read_text()))
    dep = original.create_deployment("uhd-video")
    registry = InProcessRegistry(original.provisioner)
    handles = [
        spawn(AgentConfig(provider_id=p), dep["id"], n, registry)
        for n, p in sorted(dep["placements"].items())
    ]
    for now in (1, 2):  # mid-scenario: all fetched, none READY
        original.provisioner.tick(now)
        for handle in handles:
            step(handle, now)
    snap = original.snapshot_doc()

    # record the rest of the original run's wire traffic
    recorded = []
    for now in (3, 4, 5):
        original.provisioner.tick(now)
        for handle in handles:
            for message in step(handle, now):
                recorded.append((now, message["endpoint"], message["request"]))
    final_original = original.get_deployment(dep["id"])
    assert final_original["state"] == "ACTIVE"

    # restore into a fresh service and replay the recorded script verbatim
    twin = build()
    twin.restore_doc(snap)
    assert twin.snapshot_doc() == snap  # bit-for-bit state round trip
    twin_registry = InProcessRegistry(twin.provisioner)
    by_tick: dict = {}
    for now, endpoint, request in recorded:
        by_tick.setdefault(now, []).append((endpoint, request))
    for now in (3, 4, 5):
        twin.provisioner.tick(now)
        for endpoint, request in by_tick.get(now, []):
            if endpoint == "hello":
                twin_registry.hello(request)
            elif endpoint == "recipe":
                twin_registry.recipe(request["token"])
            else:
                resp = twin_registry.status(request)
                assert "error" not in resp, resp  # tokens survived the restore
    final_twin = twin.get_deployment(dep["id"])
    assert final_twin == final_original
    assert fabric.state_to_dict(twin.topo) == fabric.state_to_dict(original.topo)
    _pass(9, "byte-identical replays; restore + recorded script reproduces end state")
