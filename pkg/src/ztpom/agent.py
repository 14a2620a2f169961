"""Simulated provider-side ZTP client.

Agents speak the same JSON messages the gateway's agent endpoints carry
(hello / recipe fetch / status), so closed-loop tests exercise real
serialization. Each agent is a small deterministic state machine stepped
by the harness: bootstrap, fetch the recipe, "deploy" for a configurable
number of ticks, report READY, then heartbeat -- or misbehave according
to its fail mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import ZtpomError
from .blueprint import NodeRecipe

FAIL_MODES = ("none", "fail_on_deploy", "silent_after")


class AgentState(str, Enum):
    BOOT = "BOOT"
    DISCOVERED = "DISCOVERED"
    DEPLOYING = "DEPLOYING"
    READY = "READY"
    FAILED = "FAILED"
    REJECTED = "REJECTED"
    STOPPED = "STOPPED"


@dataclass(frozen=True)
class AgentConfig:
    provider_id: str
    deploy_delay_ticks: int = 0
    fail_mode: str = "none"
    silent_after_tick: int | None = None
    heartbeat_every_ticks: int = 5

    def __post_init__(self):
        if self.fail_mode not in FAIL_MODES:
            raise ZtpomError(f"unknown fail_mode {self.fail_mode!r}")
        if self.deploy_delay_ticks < 0 or self.heartbeat_every_ticks < 1:
            raise ZtpomError("deploy_delay_ticks must be >= 0, heartbeat_every_ticks >= 1")


def recipe_to_dict(recipe: NodeRecipe) -> dict:
    return {
        "node_id": recipe.node_id,
        "concrete_image": recipe.concrete_image,
        "assigned_mac": recipe.assigned_mac,
        "assigned_addr": recipe.assigned_addr,
        "resolved_params": dict(recipe.resolved_params),
        "steps": list(recipe.steps),
    }


class InProcessRegistry:
    """Wire-faithful in-process binding to a provisioner.

    Every request and response crosses a JSON round trip, exactly as the
    HTTP gateway would carry it; domain errors come back as error bodies,
    never exceptions.
    """

    def __init__(self, provisioner) -> None:
        self.provisioner = provisioner

    @staticmethod
    def _wire(payload) -> dict:
        return json.loads(json.dumps(payload))

    def hello(self, payload: dict) -> dict:
        try:
            return self._wire(self.provisioner.handle_discovery(self._wire(payload)))
        except ZtpomError as exc:
            return self._wire(exc.to_dict())

    def recipe(self, token: str) -> dict:
        try:
            return self._wire(recipe_to_dict(self.provisioner.handle_fetch(token)))
        except ZtpomError as exc:
            return self._wire(exc.to_dict())

    def status(self, payload: dict) -> dict:
        try:
            return self._wire(self.provisioner.handle_status(payload["token"], self._wire(payload)))
        except ZtpomError as exc:
            return self._wire(exc.to_dict())


@dataclass
class AgentHandle:
    cfg: AgentConfig
    deployment_id: str
    node_id: str
    registry: object
    state: AgentState = AgentState.BOOT
    token: str | None = None
    recipe: dict | None = None
    ready_at: int | None = None
    last_sent: int | None = None
    last_error: dict | None = None
    log: list = field(default_factory=list)


def spawn(cfg: AgentConfig, deployment_id: str, node_id: str, registry) -> AgentHandle:
    """Create an agent; it starts bootstrapping on its next step."""
    return AgentHandle(cfg=cfg, deployment_id=deployment_id, node_id=node_id, registry=registry)


def _silenced(handle: AgentHandle, now: int) -> bool:
    cfg = handle.cfg
    return (
        cfg.fail_mode == "silent_after"
        and cfg.silent_after_tick is not None
        and now > cfg.silent_after_tick
    )


def _send(handle: AgentHandle, now: int, endpoint: str, request, response) -> dict:
    message = {"tick": now, "endpoint": endpoint, "request": request, "response": response}
    handle.log.append(message)
    handle.last_sent = now
    return message


def step(handle: AgentHandle, now: int) -> list:
    """Advance the agent one tick; returns the messages it sent."""
    if handle.state in (AgentState.FAILED, AgentState.REJECTED, AgentState.STOPPED):
        return []
    if _silenced(handle, now):
        return []
    cfg = handle.cfg

    if handle.state is AgentState.BOOT:
        request = {
            "deployment": handle.deployment_id,
            "node": handle.node_id,
            "provider": cfg.provider_id,
        }
        response = handle.registry.hello(request)
        if "error" in response:
            handle.state = AgentState.REJECTED
            handle.last_error = response
        else:
            handle.token = response["token"]
            handle.state = AgentState.DISCOVERED
        return [_send(handle, now, "hello", request, response)]

    if handle.state is AgentState.DISCOVERED:
        response = handle.registry.recipe(handle.token)
        if "error" in response:
            handle.state = AgentState.REJECTED
            handle.last_error = response
        else:
            handle.recipe = response
            handle.state = AgentState.DEPLOYING
            # READY is never reported on the fetch tick itself
            handle.ready_at = now + max(1, cfg.deploy_delay_ticks)
        return [_send(handle, now, "recipe", {"token": handle.token}, response)]

    if handle.state is AgentState.DEPLOYING:
        if now < handle.ready_at:
            return []
        phase = "FAILED" if cfg.fail_mode == "fail_on_deploy" else "READY"
        request = {"token": handle.token, "phase": phase, "payload": {}}
        response = handle.registry.status(request)
        if "error" in response:
            handle.state = AgentState.REJECTED
            handle.last_error = response
        else:
            handle.state = AgentState.FAILED if phase == "FAILED" else AgentState.READY
        return [_send(handle, now, "status", request, response)]

    # READY: periodic heartbeat
    if handle.last_sent is None or now - handle.last_sent >= cfg.heartbeat_every_ticks:
        request = {"token": handle.token, "phase": "metrics", "payload": {"tick": now}}
        response = handle.registry.status(request)
        if "error" in response:
            handle.state = AgentState.REJECTED
            handle.last_error = response
        elif response.get("directive") == "teardown":
            handle.state = AgentState.STOPPED
        return [_send(handle, now, "status", request, response)]
    return []
