"""Agent state machine timing, fail modes, and wire fidelity."""

from __future__ import annotations

import pytest

from support import drive, standard_env, video_blueprint
from ztpom.agent import AgentConfig, AgentState, InProcessRegistry, spawn, step
from ztpom.errors import ZtpomError
from ztpom.provisioner import DeploymentState, NodeState


def provisioned(env):
    bp = video_blueprint()
    env.prov.register_blueprint(bp)
    dep = env.prov.plan_deployment("video")
    env.prov.start_provisioning(dep.id)
    return dep


def single_agent(env, dep, node="f1", **cfg_kw):
    cfg = AgentConfig(provider_id=dep.placements[node], **cfg_kw)
    return spawn(cfg, dep.id, node, InProcessRegistry(env.prov))


class TestLifecycle:
    def test_spawn_starts_in_boot(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep)
        assert handle.state is AgentState.BOOT

    def test_ready_on_tick_after_fetch_with_zero_delay(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, deploy_delay_ticks=0)
        sent = {}
        for now in (1, 2, 3):
            env.prov.tick(now)
            for message in step(handle, now):
                sent[message["endpoint"], message["request"].get("phase")] = now
        assert sent[("hello", None)] == 1
        assert sent[("recipe", None)] == 2
        assert sent[("status", "READY")] == 3

    def test_ready_exactly_delay_ticks_after_fetch(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, deploy_delay_ticks=5)
        ready_tick = None
        fetch_tick = None
        for now in range(1, 12):
            env.prov.tick(now)
            for message in step(handle, now):
                if message["endpoint"] == "recipe":
                    fetch_tick = now
                if message["endpoint"] == "status" and message["request"]["phase"] == "READY":
                    ready_tick = now
        assert ready_tick == fetch_tick + 5

    def test_never_ready_before_delay(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, deploy_delay_ticks=7)
        for now in range(1, 9):  # fetch at 2; 2+7=9 not reached
            env.prov.tick(now)
            for message in step(handle, now):
                assert not (
                    message["endpoint"] == "status"
                    and message["request"]["phase"] == "READY"
                )
        assert handle.state is AgentState.DEPLOYING

    def test_recipe_recorded_for_assertions(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep)
        drive(env, [handle], 3)
        assert handle.recipe is not None
        assert handle.recipe["steps"]
        assert "${" not in str(handle.recipe)


class TestFailModes:
    def test_fail_on_deploy_reports_failed(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, fail_mode="fail_on_deploy")
        drive(env, [handle], 4)
        assert handle.state is AgentState.FAILED
        assert dep.node_states["f1"] in (NodeState.PENDING, NodeState.FAILED)

    def test_silent_after_stops_all_messages(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, fail_mode="silent_after", silent_after_tick=10)
        messages = drive(env, [handle], 30)
        assert messages
        assert max(m["tick"] for m in messages) <= 10

    def test_duplicate_spawn_rejected_by_server(self):
        env = standard_env()
        dep = provisioned(env)
        first = single_agent(env, dep)
        second = single_agent(env, dep)
        env.prov.tick(1)
        step(first, 1)
        step(second, 1)
        assert second.state is AgentState.REJECTED
        assert second.last_error["error"] == "duplicate-session"

    def test_unknown_fail_mode_rejected(self):
        with pytest.raises(ZtpomError):
            AgentConfig(provider_id="csp-a", fail_mode="explode")


class TestHeartbeats:
    def test_gaps_never_exceed_interval(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep, heartbeat_every_ticks=4)
        messages = drive(env, [handle], 40)
        ticks = [m["tick"] for m in messages]
        gaps = [b - a for a, b in zip(ticks, ticks[1:])]
        assert gaps and max(gaps) <= 4

    def test_deterministic_given_same_inputs(self):
        def run():
            env = standard_env(seed=3)
            dep = provisioned(env)
            handle = single_agent(env, dep, heartbeat_every_ticks=3, deploy_delay_ticks=2)
            drive(env, [handle], 20)
            return [(m["tick"], m["endpoint"], m["request"].get("phase")) for m in handle.log]

        assert run() == run()


class TestClosedLoop:
    def test_wire_messages_are_json_clean(self):
        env = standard_env()
        dep = provisioned(env)
        handle = single_agent(env, dep)
        messages = drive(env, [handle], 6)
        import json

        for message in messages:
            json.dumps(message)  # every payload crossed the JSON boundary already

    def test_all_agents_reach_ready_and_deployment_active(self):
        env = standard_env()
        dep = provisioned(env)
        registry = InProcessRegistry(env.prov)
        handles = [
            spawn(AgentConfig(provider_id=p), dep.id, n, registry)
            for n, p in sorted(dep.placements.items())
        ]
        drive(env, handles, 5)
        assert dep.state is DeploymentState.ACTIVE
        assert all(h.state is AgentState.READY for h in handles)
