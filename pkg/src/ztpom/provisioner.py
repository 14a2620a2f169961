"""Provisioning server: blueprint registry, brokering, agent protocol, monitoring.

Holds blueprints (latest two versions), plans deployments by brokering
each node onto a trusted provider with a reachable domain, compiles and
reserves every chain, then drives agents through discover/fetch/deploy
and watches their heartbeats. Losing an agent for ``miss_threshold``
heartbeat intervals degrades the deployment and re-brokers the node onto
another provider, recompiling any chain that crossed it.

The core is a serialized command processor: callers may invoke entry
points concurrently, but effects apply one at a time in arrival order.
Logical time is injected through ``tick``; the core never reads a clock.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum

from . import blueprint as bp_mod
from . import fabric as fabric_mod
from . import sfc as sfc_mod
from .blueprint import Blueprint, ChangeSet, NodeRecipe, NodeSpec, ProviderProfile
from .errors import ZtpomError
from .fabric import FabricTopology
from .marketplace import Marketplace, ServiceRequest
from .sfc import ChainPlan

DEFAULT_HEARTBEAT_INTERVAL = 5
DEFAULT_MISS_THRESHOLD = 3


class ProvisionerError(ZtpomError):
    code = "provisioner-error"


class WrongStateError(ProvisionerError):
    code = "wrong-state"


class UnknownDeploymentError(ProvisionerError):
    code = "unknown-deployment"


class UnknownNodeError(ProvisionerError):
    code = "unknown-node"


class WrongProviderError(ProvisionerError):
    code = "wrong-provider"


class DuplicateSessionError(ProvisionerError):
    code = "duplicate-session"


class InvalidTokenError(ProvisionerError):
    code = "invalid-token"


class NoOfferError(ProvisionerError):
    code = "no-offer"

    def __init__(self, node_id: str, binding_constraint: str) -> None:
        super().__init__(
            f"no acceptable offer for node {node_id!r} (binding constraint: {binding_constraint})",
            node=node_id,
            binding_constraint=binding_constraint,
        )
        self.node_id = node_id
        self.binding_constraint = binding_constraint


class VersionError(ProvisionerError):
    code = "version-error"


class DeploymentState(str, Enum):
    DRAFT = "DRAFT"
    PLANNED = "PLANNED"
    PROVISIONING = "PROVISIONING"
    ACTIVE = "ACTIVE"
    UPDATING = "UPDATING"
    DEGRADED = "DEGRADED"
    FAILED = "FAILED"
    TORN_DOWN = "TORN_DOWN"


class NodeState(str, Enum):
    PENDING = "PENDING"
    RECIPE_SENT = "RECIPE_SENT"
    DEPLOYING = "DEPLOYING"
    READY = "READY"
    LOST = "LOST"
    FAILED = "FAILED"


# Legal deployment transitions; TORN_DOWN is reachable from anywhere else.
LEGAL_TRANSITIONS = {
    DeploymentState.DRAFT: {DeploymentState.PLANNED},
    DeploymentState.PLANNED: {DeploymentState.PROVISIONING},
    DeploymentState.PROVISIONING: {DeploymentState.ACTIVE, DeploymentState.FAILED},
    DeploymentState.ACTIVE: {DeploymentState.UPDATING, DeploymentState.DEGRADED},
    DeploymentState.UPDATING: {DeploymentState.ACTIVE},
    DeploymentState.DEGRADED: {DeploymentState.ACTIVE, DeploymentState.FAILED},
    DeploymentState.FAILED: set(),
    DeploymentState.TORN_DOWN: set(),
}


@dataclass
class AgentSession:
    token: str
    deployment_id: str
    node_id: str
    provider_id: str
    nonce: int
    last_heartbeat: int
    missed: int = 0


@dataclass
class Deployment:
    id: str
    blueprint_id: str
    version: int
    owner: str
    dep_seq: int
    state: DeploymentState = DeploymentState.DRAFT
    placements: dict = field(default_factory=dict)  # node -> provider_id
    node_states: dict = field(default_factory=dict)  # node -> NodeState
    node_seq: dict = field(default_factory=dict)  # node -> dep_seq used to adapt
    chain_plans: dict = field(default_factory=dict)  # chain -> ChainPlan
    user_domain: str | None = None

    def all_ready(self) -> bool:
        return bool(self.node_states) and all(
            s == NodeState.READY for s in self.node_states.values()
        )

    def to_public_dict(self) -> dict:
        return {
            "id": self.id,
            "blueprint_id": self.blueprint_id,
            "version": self.version,
            "owner": self.owner,
            "state": self.state.value,
            "placements": dict(sorted(self.placements.items())),
            "node_states": {k: v.value for k, v in sorted(self.node_states.items())},
            "chains": {
                cid: {"epoch": plan.epoch, "hops": [list(h) for h in plan.hops]}
                for cid, plan in sorted(self.chain_plans.items())
            },
        }


@dataclass(frozen=True)
class Event:
    seq: int
    tick: int
    kind: str
    deployment_id: str | None = None
    node_id: str | None = None
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "kind": self.kind,
            "deployment_id": self.deployment_id,
            "node_id": self.node_id,
            "data": dict(self.data),
        }


class Provisioner:
    """Serialized orchestration core over one fabric and one marketplace."""

    def __init__(
        self,
        topo: FabricTopology,
        market: Marketplace,
        heartbeat_interval: int = DEFAULT_HEARTBEAT_INTERVAL,
        miss_threshold: int = DEFAULT_MISS_THRESHOLD,
        seed: int = 0,
        default_owner: str = "customer",
    ) -> None:
        if miss_threshold < 1:
            raise ProvisionerError("miss_threshold must be >= 1")
        self.topo = topo
        self.market = market
        self.heartbeat_interval = heartbeat_interval
        self.miss_threshold = miss_threshold
        self.seed = seed
        self.default_owner = default_owner

        self.profiles: dict = {}  # provider_id -> ProviderProfile
        self.blueprints: dict = {}  # id -> {version: Blueprint} (latest two)
        self.last_changeset: dict = {}  # id -> ChangeSet
        self.deployments: dict = {}
        self.sessions: dict = {}  # token -> AgentSession
        self.events: list = []
        self.now = 0
        self.dep_counter = 0
        self.session_counter = 0
        self.event_counter = 0
        self._lock = threading.RLock()

    # -- events ---------------------------------------------------------------

    def _emit(self, kind: str, deployment_id=None, node_id=None, data=None) -> Event:
        self.event_counter += 1
        event = Event(
            seq=self.event_counter,
            tick=self.now,
            kind=kind,
            deployment_id=deployment_id,
            node_id=node_id,
            data=data or {},
        )
        self.events.append(event)
        return event

    def events_since(self, seq: int) -> list:
        return [e for e in self.events if e.seq > seq]

    # -- registries -----------------------------------------------------------

    def register_provider(self, profile: ProviderProfile) -> None:
        self.profiles[profile.provider_id] = profile

    def register_blueprint(self, bp: Blueprint):
        with self._lock:
            report = bp_mod.validate(bp)
            if not report.ok:
                first = report.findings[0]
                raise bp_mod.BlueprintInvariantError(f"{first.path}: {first.message}")
            versions = self.blueprints.get(bp.id)
            if versions:
                latest = max(versions)
                if bp.version <= latest:
                    raise VersionError(
                        f"blueprint {bp.id!r}: version must exceed {latest}, got {bp.version}"
                    )
                self.last_changeset[bp.id] = bp_mod.diff_blueprints(versions[latest], bp)
                versions[bp.version] = bp
                while len(versions) > 2:
                    del versions[min(versions)]
            else:
                self.blueprints[bp.id] = {bp.version: bp}
            self._emit("BlueprintRegistered", data={"blueprint_id": bp.id, "version": bp.version})
            return bp.id

    def blueprint(self, blueprint_id: str, version: int | None = None) -> Blueprint:
        versions = self.blueprints.get(blueprint_id)
        if not versions:
            raise ProvisionerError(f"unknown blueprint {blueprint_id!r}")
        if version is None:
            version = max(versions)
        if version not in versions:
            raise VersionError(f"blueprint {blueprint_id!r}: version {version} not held")
        return versions[version]

    def deployment(self, dep_id: str) -> Deployment:
        dep = self.deployments.get(dep_id)
        if dep is None:
            raise UnknownDeploymentError(f"unknown deployment {dep_id!r}")
        return dep

    # -- state machine --------------------------------------------------------

    def _set_state(self, dep: Deployment, target: DeploymentState) -> None:
        if target is DeploymentState.TORN_DOWN:
            legal = dep.state is not DeploymentState.TORN_DOWN
        else:
            legal = target in LEGAL_TRANSITIONS[dep.state]
        if not legal:
            raise WrongStateError(
                f"deployment {dep.id!r}: illegal transition {dep.state.value} -> {target.value}"
            )
        dep.state = target
        self._emit("DeploymentStateChanged", dep.id, data={"state": target.value})

    def _set_node_state(self, dep: Deployment, node_id: str, target: NodeState) -> None:
        dep.node_states[node_id] = target
        self._emit("NodeStateChanged", dep.id, node_id, data={"state": target.value})

    def _mark_degraded(self, dep: Deployment) -> None:
        if dep.state is DeploymentState.UPDATING:
            self._set_state(dep, DeploymentState.ACTIVE)
        if dep.state is DeploymentState.ACTIVE:
            self._set_state(dep, DeploymentState.DEGRADED)

    def _mark_failed(self, dep: Deployment) -> None:
        self._mark_degraded(dep)
        if dep.state in (DeploymentState.PROVISIONING, DeploymentState.DEGRADED):
            self._set_state(dep, DeploymentState.FAILED)

    def _maybe_activate(self, dep: Deployment) -> None:
        if dep.all_ready() and dep.state in (
            DeploymentState.PROVISIONING,
            DeploymentState.UPDATING,
            DeploymentState.DEGRADED,
        ):
            self._set_state(dep, DeploymentState.ACTIVE)

    # -- planning ---------------------------------------------------------------

    def _chain_bandwidth(self, bp: Blueprint, node_id: str):
        demands = [c.qos.min_bandwidth_mbps for c in bp.chains if node_id in c.functions]
        return max(demands) if demands else None

    def _service_request(self, bp: Blueprint, node: NodeSpec, owner: str, user_domain):
        allow = node.placement.get("providers")
        return ServiceRequest(
            requester_id=owner,
            service_type=node.service_type,
            region=node.placement.get("region"),
            min_bandwidth_mbps=self._chain_bandwidth(bp, node.id),
            user_domain=user_domain,
            provider_allowlist=tuple(allow) if allow else None,
        )

    def _diagnose_no_offer(self, req: ServiceRequest) -> str:
        """Name the first brokering stage that empties the candidate set."""
        entries = [e for e in self.market.offers.values() if e.service_type == req.service_type]
        if not entries:
            return "service_type"
        entries = [e for e in entries if req.region is None or e.region == req.region]
        if not entries:
            return "region"
        if req.provider_allowlist is not None:
            entries = [e for e in entries if e.provider_id in req.provider_allowlist]
            if not entries:
                return "placement"
        if req.max_price is not None:
            entries = [e for e in entries if e.price_per_hour <= req.max_price]
            if not entries:
                return "max_price"
        if req.min_bandwidth_mbps is not None:
            entries = [e for e in entries if e.max_bandwidth_mbps >= req.min_bandwidth_mbps]
            if not entries:
                return "bandwidth"
        entries = [
            e
            for e in entries
            if self.market.trust.established(req.requester_id, e.provider_id)
        ]
        if not entries:
            return "trust"
        from .marketplace import provider_path_latency

        entries = [e for e in entries if provider_path_latency(self.topo, req, e.provider_id) is not None]
        if not entries:
            return "path"
        return "capacity"

    def _broker_node(
        self, bp: Blueprint, node: NodeSpec, owner: str, user_domain, dep_seq: int, exclude=()
    ):
        """Pick the best offer whose provider can actually host the node."""
        req = self._service_request(bp, node, owner, user_domain)
        matches = self.market.broker(req, self.topo)
        for match in matches:
            provider_id = match.entry.provider_id
            if provider_id in exclude:
                continue
            profile = self.profiles.get(provider_id)
            if profile is None:
                continue
            try:
                recipe = bp_mod.adapt_recipe(bp, node.id, profile, dep_seq)
            except bp_mod.BlueprintError:
                continue
            return provider_id, profile, recipe
        if matches and all(m.entry.provider_id in exclude for m in matches):
            raise NoOfferError(node.id, "provider-excluded")
        raise NoOfferError(node.id, self._diagnose_no_offer(req))

    def _placement_map(self, dep: Deployment, bp: Blueprint) -> dict:
        """node -> (domain, mac) for chain compilation, from stored placements."""
        out = {}
        for node_id, provider_id in dep.placements.items():
            profile = self.profiles[provider_id]
            recipe = bp_mod.adapt_recipe(bp, node_id, profile, dep.node_seq[node_id])
            out[node_id] = (profile.domain_id, recipe.assigned_mac)
        return out

    def plan_deployment(self, blueprint_id: str, owner: str | None = None) -> Deployment:
        """Broker every node, compile every chain, reserve bandwidth; atomic."""
        with self._lock:
            bp = self.blueprint(blueprint_id)
            owner = owner or self.default_owner
            self.dep_counter += 1
            dep_seq = self.dep_counter
            user_domain = bp.chains[0].source.domain if bp.chains else None
            dep = Deployment(
                id=f"dep-{dep_seq}",
                blueprint_id=bp.id,
                version=bp.version,
                owner=owner,
                dep_seq=dep_seq,
                user_domain=user_domain,
            )

            for node in bp.nodes:
                provider_id, _profile, _recipe = self._broker_node(
                    bp, node, owner, user_domain, dep_seq
                )
                dep.placements[node.id] = provider_id
                dep.node_seq[node.id] = dep_seq

            placement_map = self._placement_map(dep, bp)
            compiled: list = []
            try:
                for chain in bp.chains:
                    plan = sfc_mod.compile_chain(chain, placement_map, self.topo, epoch=1)
                    compiled.append(plan)
            except ZtpomError:
                for plan in compiled:
                    sfc_mod.release_chain(plan, self.topo)
                raise
            dep.chain_plans = {plan.chain_id: plan for plan in compiled}

            self._set_state(dep, DeploymentState.PLANNED)
            self.deployments[dep.id] = dep
            self._emit(
                "DeploymentPlanned",
                dep.id,
                data={"placements": dict(dep.placements), "blueprint_id": bp.id},
            )
            return dep

    def start_provisioning(self, dep_id: str) -> Deployment:
        with self._lock:
            dep = self.deployment(dep_id)
            if dep.state is not DeploymentState.PLANNED:
                raise WrongStateError(
                    f"deployment {dep_id!r}: start_provisioning requires PLANNED, is {dep.state.value}"
                )
            self._set_state(dep, DeploymentState.PROVISIONING)
            for node_id in dep.placements:
                self._set_node_state(dep, node_id, NodeState.PENDING)
            return dep

    # -- agent protocol ---------------------------------------------------------

    def _make_token(self, dep_id: str, node_id: str, nonce: int) -> str:
        raw = f"{self.seed}:{dep_id}:{node_id}:{nonce}"
        return hashlib.sha256(raw.encode()).hexdigest()[:32]

    def _session_for(self, dep_id: str, node_id: str):
        for session in self.sessions.values():
            if session.deployment_id == dep_id and session.node_id == node_id:
                return session
        return None

    def _drop_session(self, dep_id: str, node_id: str) -> None:
        session = self._session_for(dep_id, node_id)
        if session is not None:
            del self.sessions[session.token]

    def handle_discovery(self, hello: dict) -> dict:
        """Agent bootstrap: validate identity/placement, issue a session token."""
        with self._lock:
            dep = self.deployment(hello["deployment"])
            node_id = hello["node"]
            provider_id = hello["provider"]
            if dep.state not in (
                DeploymentState.PROVISIONING,
                DeploymentState.UPDATING,
                DeploymentState.DEGRADED,
            ):
                raise WrongStateError(
                    f"deployment {dep.id!r} not accepting discovery in state {dep.state.value}"
                )
            if node_id not in dep.placements:
                raise UnknownNodeError(f"deployment {dep.id!r} has no node {node_id!r}")
            if dep.placements[node_id] != provider_id:
                raise WrongProviderError(
                    f"node {node_id!r} is placed at {dep.placements[node_id]!r}, "
                    f"hello came from {provider_id!r}"
                )
            if self._session_for(dep.id, node_id) is not None:
                raise DuplicateSessionError(
                    f"node {node_id!r} of deployment {dep.id!r} already has a live session"
                )
            if dep.node_states.get(node_id) is not NodeState.PENDING:
                state = dep.node_states.get(node_id)
                raise WrongStateError(
                    f"node {node_id!r} not awaiting discovery (state {state and state.value})"
                )
            self.session_counter += 1
            token = self._make_token(dep.id, node_id, self.session_counter)
            self.sessions[token] = AgentSession(
                token=token,
                deployment_id=dep.id,
                node_id=node_id,
                provider_id=provider_id,
                nonce=self.session_counter,
                last_heartbeat=self.now,
            )
            self._set_node_state(dep, node_id, NodeState.RECIPE_SENT)
            return {"token": token, "endpoint": "/agent"}

    def _session(self, token: str) -> AgentSession:
        session = self.sessions.get(token)
        if session is None:
            raise InvalidTokenError("invalid or expired session token")
        return session

    def handle_fetch(self, token: str) -> NodeRecipe:
        with self._lock:
            session = self._session(token)
            dep = self.deployment(session.deployment_id)
            if dep.node_states.get(session.node_id) is not NodeState.RECIPE_SENT:
                raise WrongStateError(
                    f"node {session.node_id!r} cannot fetch in state "
                    f"{dep.node_states.get(session.node_id).value}"
                )
            bp = self.blueprint(dep.blueprint_id, dep.version)
            profile = self.profiles[session.provider_id]
            recipe = bp_mod.adapt_recipe(
                bp, session.node_id, profile, dep.node_seq[session.node_id]
            )
            session.last_heartbeat = self.now
            self._set_node_state(dep, session.node_id, NodeState.DEPLOYING)
            return recipe

    def handle_status(self, token: str, report: dict) -> dict:
        """Agent status ingestion; returns a directive for the agent."""
        with self._lock:
            session = self._session(token)
            dep = self.deployment(session.deployment_id)
            node_id = session.node_id
            phase = report.get("phase")
            session.last_heartbeat = self.now
            session.missed = 0

            if phase == "READY":
                if dep.node_states.get(node_id) is not NodeState.DEPLOYING:
                    raise WrongStateError(
                        f"node {node_id!r} cannot report READY from state "
                        f"{dep.node_states.get(node_id).value}"
                    )
                self._set_node_state(dep, node_id, NodeState.READY)
                self._maybe_activate(dep)
                return {"directive": "none"}

            if phase == "FAILED":
                self._set_node_state(dep, node_id, NodeState.FAILED)
                self._emit("NodeFailed", dep.id, node_id, data=dict(report.get("payload") or {}))
                self._mark_degraded(dep)
                ok = self._replan_node(dep, node_id, exclude_current=True)
                return {"directive": "redeploy" if ok else "teardown"}

            # anything else is a metrics heartbeat
            self._emit("Heartbeat", dep.id, node_id, data={})
            return {"directive": "none"}

    # -- monitoring / reconfiguration --------------------------------------------

    def tick(self, now: int) -> list:
        """Advance logical time; detect silent agents and reconfigure."""
        with self._lock:
            if now < self.now:
                raise ProvisionerError(f"time went backwards: {now} < {self.now}")
            self.now = now
            first_event = self.event_counter
            for session in list(self.sessions.values()):
                if session.token not in self.sessions:
                    continue  # dropped by an earlier replan this tick
                dep = self.deployments.get(session.deployment_id)
                if dep is None or dep.state in (
                    DeploymentState.TORN_DOWN,
                    DeploymentState.FAILED,
                ):
                    continue
                session.missed = max(0, (now - session.last_heartbeat) // self.heartbeat_interval)
                node_state = dep.node_states.get(session.node_id)
                if session.missed >= self.miss_threshold and node_state not in (
                    NodeState.LOST,
                    NodeState.FAILED,
                ):
                    self._set_node_state(dep, session.node_id, NodeState.LOST)
                    self._emit(
                        "NodeLost",
                        dep.id,
                        session.node_id,
                        data={"missed": session.missed, "provider": session.provider_id},
                    )
                    self._mark_degraded(dep)
                    self._replan_node(dep, session.node_id, exclude_current=True)
            return [e for e in self.events if e.seq > first_event]

    def _chains_through(self, bp: Blueprint, node_id: str) -> list:
        return [c for c in bp.chains if node_id in c.functions]

    def _replan_node(self, dep: Deployment, node_id: str, exclude_current: bool) -> bool:
        """Re-broker one node and recompile affected chains (new epoch first,
        then release the replaced plan). Returns False when no provider fits."""
        bp = self.blueprint(dep.blueprint_id, dep.version)
        node = bp.node(node_id)
        current_provider = dep.placements[node_id]
        exclude = {current_provider} if exclude_current else set()
        self._emit(
            "ReplanStarted", dep.id, node_id, data={"exclude": sorted(exclude)}
        )
        self.dep_counter += 1
        new_seq = self.dep_counter
        try:
            provider_id, profile, recipe = self._broker_node(
                bp, node, dep.owner, dep.user_domain, new_seq, exclude=exclude
            )
        except NoOfferError as exc:
            self._emit(
                "ReplanFailed", dep.id, node_id, data={"binding_constraint": exc.binding_constraint}
            )
            self._mark_failed(dep)
            return False

        self._drop_session(dep.id, node_id)
        dep.placements[node_id] = provider_id
        dep.node_seq[node_id] = new_seq
        placement_map = self._placement_map(dep, bp)

        new_plans: list = []
        try:
            for chain in self._chains_through(bp, node_id):
                old_plan = dep.chain_plans[chain.id]
                new_plans.append(
                    sfc_mod.compile_chain(chain, placement_map, self.topo, epoch=old_plan.epoch + 1)
                )
        except ZtpomError:
            for plan in new_plans:
                sfc_mod.release_chain(plan, self.topo)
            dep.placements[node_id] = current_provider
            self._emit("ReplanFailed", dep.id, node_id, data={"binding_constraint": "chain"})
            self._mark_failed(dep)
            return False

        for plan in new_plans:
            old_plan = dep.chain_plans[plan.chain_id]
            sfc_mod.release_chain(old_plan, self.topo)
            dep.chain_plans[plan.chain_id] = plan
            self._emit(
                "ChainRecompiled", dep.id, data={"chain_id": plan.chain_id, "epoch": plan.epoch}
            )
        self._set_node_state(dep, node_id, NodeState.PENDING)
        self._emit("ReplanSucceeded", dep.id, node_id, data={"provider": provider_id})
        return True

    # -- updates -------------------------------------------------------------------

    def request_update(self, dep_id: str, new_version: int) -> Deployment:
        """Move an ACTIVE deployment to a newer registered blueprint version.

        Chain changes are compiled before the replaced plans release
        (make-before-break); any failure rolls everything back and the
        deployment stays ACTIVE on its old version.
        """
        with self._lock:
            dep = self.deployment(dep_id)
            if dep.state is not DeploymentState.ACTIVE:
                raise WrongStateError(
                    f"deployment {dep_id!r}: update requires ACTIVE, is {dep.state.value}"
                )
            old_bp = self.blueprint(dep.blueprint_id, dep.version)
            new_bp = self.blueprint(dep.blueprint_id, new_version)
            if new_version <= dep.version:
                raise VersionError(
                    f"deployment {dep_id!r}: update version {new_version} "
                    f"must exceed current {dep.version}"
                )
            changeset = bp_mod.diff_blueprints(old_bp, new_bp)

            self._set_state(dep, DeploymentState.UPDATING)
            self._emit(
                "UpdateRequested", dep.id, data={"from": dep.version, "to": new_version}
            )
            try:
                touched = self._apply_update(dep, new_bp, changeset)
            except ZtpomError:
                self._set_state(dep, DeploymentState.ACTIVE)
                raise
            dep.version = new_version
            if not touched:
                self._set_state(dep, DeploymentState.ACTIVE)
            self._emit("UpdateApplied", dep.id, data={"version": new_version})
            return dep

    def _apply_update(self, dep: Deployment, new_bp: Blueprint, cs: ChangeSet) -> list:
        """Stage every fallible step, then commit. Returns re-pipelined nodes."""
        self.dep_counter += 1
        new_seq = self.dep_counter
        staged_placements = dict(dep.placements)
        staged_seq = dict(dep.node_seq)

        repipelined = [n.id for n in cs.added] + [n.id for n in cs.modified]
        for spec in list(cs.added) + list(cs.modified):
            provider_id, _profile, _recipe = self._broker_node(
                new_bp, spec, dep.owner, dep.user_domain, new_seq
            )
            staged_placements[spec.id] = provider_id
            staged_seq[spec.id] = new_seq
        for node_id in cs.removed:
            staged_placements.pop(node_id, None)
            staged_seq.pop(node_id, None)

        placement_map = {}
        for node_id, provider_id in staged_placements.items():
            profile = self.profiles[provider_id]
            recipe = bp_mod.adapt_recipe(new_bp, node_id, profile, staged_seq[node_id])
            placement_map[node_id] = (profile.domain_id, recipe.assigned_mac)

        changed_chain_ids = {c.id for c in cs.chain_updates}
        for chain in new_bp.chains:
            if any(f in repipelined for f in chain.functions):
                changed_chain_ids.add(chain.id)

        new_plans: list = []
        try:
            for chain in new_bp.chains:
                if chain.id not in changed_chain_ids:
                    continue
                old_plan = dep.chain_plans.get(chain.id)
                epoch = old_plan.epoch + 1 if old_plan else 1
                new_plans.append(sfc_mod.compile_chain(chain, placement_map, self.topo, epoch=epoch))
        except ZtpomError:
            for plan in new_plans:
                sfc_mod.release_chain(plan, self.topo)
            raise

        # commit: release replaced/removed plans, swap in the new epochs
        for plan in new_plans:
            old_plan = dep.chain_plans.get(plan.chain_id)
            if old_plan is not None:
                sfc_mod.release_chain(old_plan, self.topo)
            dep.chain_plans[plan.chain_id] = plan
            self._emit(
                "ChainRecompiled", dep.id, data={"chain_id": plan.chain_id, "epoch": plan.epoch}
            )
        for chain_id in cs.removed_chains:
            old_plan = dep.chain_plans.pop(chain_id, None)
            if old_plan is not None:
                sfc_mod.release_chain(old_plan, self.topo)

        for node_id in cs.removed:
            self._drop_session(dep.id, node_id)
            dep.node_states.pop(node_id, None)
            self._emit("NodeTornDown", dep.id, node_id)
        dep.placements = staged_placements
        dep.node_seq = staged_seq
        for node_id in repipelined:
            self._drop_session(dep.id, node_id)
            self._set_node_state(dep, node_id, NodeState.PENDING)
        return repipelined

    # -- teardown --------------------------------------------------------------------

    def teardown(self, dep_id: str) -> Deployment:
        """Release everything the deployment holds; terminal."""
        with self._lock:
            dep = self.deployment(dep_id)
            self._set_state(dep, DeploymentState.TORN_DOWN)
            for plan in dep.chain_plans.values():
                sfc_mod.release_chain(plan, self.topo)
            dep.chain_plans = {}
            for token in [
                t for t, s in self.sessions.items() if s.deployment_id == dep.id
            ]:
                del self.sessions[token]
            self._emit("TornDown", dep.id)
            return dep

    # -- persistence --------------------------------------------------------------------

    def to_snapshot(self) -> dict:
        """Full state, minus raw session tokens (re-derived on restore)."""
        return {
            "now": self.now,
            "seed": self.seed,
            "dep_counter": self.dep_counter,
            "session_counter": self.session_counter,
            "event_counter": self.event_counter,
            "heartbeat_interval": self.heartbeat_interval,
            "miss_threshold": self.miss_threshold,
            "default_owner": self.default_owner,
            "blueprints": {
                bp_id: {str(v): bp_mod.blueprint_to_dict(bp) for v, bp in versions.items()}
                for bp_id, versions in self.blueprints.items()
            },
            "deployments": [
                {
                    "id": d.id,
                    "blueprint_id": d.blueprint_id,
                    "version": d.version,
                    "owner": d.owner,
                    "dep_seq": d.dep_seq,
                    "state": d.state.value,
                    "placements": dict(d.placements),
                    "node_states": {k: v.value for k, v in d.node_states.items()},
                    "node_seq": dict(d.node_seq),
                    "user_domain": d.user_domain,
                    "chain_plans": {
                        cid: plan_to_dict(plan) for cid, plan in d.chain_plans.items()
                    },
                }
                for d in self.deployments.values()
            ],
            "sessions": [
                {
                    "deployment_id": s.deployment_id,
                    "node_id": s.node_id,
                    "provider_id": s.provider_id,
                    "nonce": s.nonce,
                    "last_heartbeat": s.last_heartbeat,
                    "missed": s.missed,
                }
                for s in self.sessions.values()
            ],
            "events": [e.to_dict() for e in self.events],
            "profiles": {
                pid: {
                    "provider_id": p.provider_id,
                    "domain_id": p.domain_id,
                    "image_map": dict(p.image_map),
                    "address_block": p.address_block,
                    "mac_prefix": p.mac_prefix,
                    "fn_delay_ms": dict(p.fn_delay_ms),
                    "capacity": dict(p.capacity),
                    "defaults": dict(p.defaults),
                }
                for pid, p in self.profiles.items()
            },
        }

    def restore(self, snap: dict) -> None:
        self.now = snap["now"]
        self.seed = snap["seed"]
        self.dep_counter = snap["dep_counter"]
        self.session_counter = snap["session_counter"]
        self.event_counter = snap["event_counter"]
        self.heartbeat_interval = snap["heartbeat_interval"]
        self.miss_threshold = snap["miss_threshold"]
        self.default_owner = snap["default_owner"]
        self.blueprints = {
            bp_id: {int(v): bp_mod.blueprint_from_dict(doc) for v, doc in versions.items()}
            for bp_id, versions in snap["blueprints"].items()
        }
        self.profiles = {
            pid: ProviderProfile(
                provider_id=p["provider_id"],
                domain_id=p["domain_id"],
                image_map=dict(p["image_map"]),
                address_block=p["address_block"],
                mac_prefix=p["mac_prefix"],
                fn_delay_ms=dict(p["fn_delay_ms"]),
                capacity=dict(p["capacity"]),
                defaults=dict(p["defaults"]),
            )
            for pid, p in snap["profiles"].items()
        }
        self.deployments = {}
        for d in snap["deployments"]:
            dep = Deployment(
                id=d["id"],
                blueprint_id=d["blueprint_id"],
                version=d["version"],
                owner=d["owner"],
                dep_seq=d["dep_seq"],
                state=DeploymentState(d["state"]),
                placements=dict(d["placements"]),
                node_states={k: NodeState(v) for k, v in d["node_states"].items()},
                node_seq={k: int(v) for k, v in d["node_seq"].items()},
                user_domain=d["user_domain"],
            )
            dep.chain_plans = {
                cid: plan_from_dict(doc) for cid, doc in d["chain_plans"].items()
            }
            self.deployments[dep.id] = dep
        self.sessions = {}
        for s in snap["sessions"]:
            token = self._make_token(s["deployment_id"], s["node_id"], s["nonce"])
            self.sessions[token] = AgentSession(
                token=token,
                deployment_id=s["deployment_id"],
                node_id=s["node_id"],
                provider_id=s["provider_id"],
                nonce=s["nonce"],
                last_heartbeat=s["last_heartbeat"],
                missed=s["missed"],
            )
        self.events = [
            Event(
                seq=e["seq"],
                tick=e["tick"],
                kind=e["kind"],
                deployment_id=e["deployment_id"],
                node_id=e["node_id"],
                data=dict(e["data"]),
            )
            for e in snap["events"]
        ]


# --------------------------------------------------------------------------
# ChainPlan serialization (used by snapshots)


def plan_to_dict(plan: ChainPlan) -> dict:
    return {
        "chain_id": plan.chain_id,
        "epoch": plan.epoch,
        "hops": [list(h) for h in plan.hops],
        "segments": [
            {
                "src_domain": seg.src_domain,
                "dst_domain": seg.dst_domain,
                "link_vlans": [list(pair) for pair in seg.link_vlans],
            }
            for seg in plan.segments
        ],
        "rules": [
            {
                "at_domain": r.at_domain,
                "match_ingress": r.match_ingress,
                "match_vlan": r.match_vlan,
                "match_dst": r.match_dst,
                "set_vlan": r.set_vlan,
                "set_dst": r.set_dst,
                "out": r.out,
            }
            for r in plan.rules
        ],
        "original_dst_mac": plan.original_dst_mac,
        "reservations": [
            {"id": res.id, "link_ids": list(res.link_ids), "bandwidth_mbps": res.bandwidth_mbps}
            for res in plan.reservations
        ],
    }


def plan_from_dict(doc: dict) -> ChainPlan:
    return ChainPlan(
        chain_id=doc["chain_id"],
        epoch=doc["epoch"],
        hops=tuple(sfc_mod.Hop(*h) for h in doc["hops"]),
        segments=tuple(
            sfc_mod.Segment(
                src_domain=s["src_domain"],
                dst_domain=s["dst_domain"],
                link_vlans=tuple((pair[0], int(pair[1])) for pair in s["link_vlans"]),
            )
            for s in doc["segments"]
        ),
        rules=tuple(
            sfc_mod.FlowRule(
                at_domain=r["at_domain"],
                match_ingress=r["match_ingress"],
                match_vlan=r["match_vlan"],
                match_dst=r["match_dst"],
                set_vlan=r["set_vlan"],
                set_dst=r["set_dst"],
                out=r["out"],
            )
            for r in doc["rules"]
        ),
        original_dst_mac=doc["original_dst_mac"],
        reservations=tuple(
            fabric_mod.Reservation(
                id=res["id"],
                link_ids=tuple(res["link_ids"]),
                bandwidth_mbps=res["bandwidth_mbps"],
            )
            for res in doc["reservations"]
        ),
    )
