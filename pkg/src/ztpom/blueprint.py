"""Application blueprints: parse, validate, diff, and per-provider adaptation.

A blueprint describes an application as a set of nodes (service functions)
plus ordered chains with QoS demands. The provisioning server holds the
general blueprint; each provider-local recipe is derived from it
deterministically so repeated adaptation yields identical MACs, addresses
and resolved parameters.
"""

from __future__ import annotations

import ipaddress
import json
import math
import re
from dataclasses import dataclass, field

from . import macs
from .errors import ZtpomError

_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class BlueprintError(ZtpomError):
    code = "blueprint-error"


class BlueprintSyntaxError(BlueprintError):
    """Document is not well-formed; ``where`` points at the offending spot."""

    code = "blueprint-syntax"

    def __init__(self, message: str, where: str = "") -> None:
        super().__init__(f"{where}: {message}" if where else message, where=where)


class BlueprintInvariantError(BlueprintError):
    code = "blueprint-invariant"


class UnknownImageError(BlueprintError):
    code = "unknown-image"


class CapacityExceededError(BlueprintError):
    code = "capacity-exceeded"


class UnresolvedPlaceholderError(BlueprintError):
    code = "unresolved-placeholder"


class DiffError(BlueprintError):
    code = "diff-error"


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class QoSDemand:
    """Per-chain network demand; latency/jitter bounds may be unbounded (inf)."""

    max_latency_ms: float = math.inf
    max_jitter_ms: float = math.inf
    min_bandwidth_mbps: float = 1.0

    def check(self) -> None:
        if self.max_latency_ms < 0 or self.max_jitter_ms < 0:
            raise BlueprintInvariantError("qos bounds must be nonnegative")
        if self.min_bandwidth_mbps <= 0:
            raise BlueprintInvariantError("min_bandwidth_mbps must be positive")


@dataclass(frozen=True)
class Endpoint:
    domain: str
    mac: str


@dataclass(frozen=True)
class NodeSpec:
    id: str
    service_type: str
    image_ref: str
    vcpu: int = 1
    mem_gb: float = 1.0
    params: dict = field(default_factory=dict)
    placement: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChainSpec:
    id: str
    source: Endpoint
    functions: tuple
    sink: Endpoint
    qos: QoSDemand


@dataclass(frozen=True)
class Blueprint:
    id: str
    name: str
    version: int
    nodes: tuple
    chains: tuple

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise BlueprintError(f"no node {node_id!r} in blueprint {self.id!r}")

    def node_ordinal(self, node_id: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise BlueprintError(f"no node {node_id!r} in blueprint {self.id!r}")

    def chain(self, chain_id: str) -> ChainSpec:
        for c in self.chains:
            if c.id == chain_id:
                return c
        raise BlueprintError(f"no chain {chain_id!r} in blueprint {self.id!r}")


@dataclass(frozen=True)
class ProviderProfile:
    """Provider-local environment a general recipe is adapted to."""

    provider_id: str
    domain_id: str
    image_map: dict
    address_block: str = "10.0.0.0/16"
    mac_prefix: str = "02:00:00:00"
    fn_delay_ms: dict = field(default_factory=dict)
    capacity: dict = field(default_factory=lambda: {"vcpu": 64, "mem_gb": 256.0})
    defaults: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NodeRecipe:
    node_id: str
    concrete_image: str
    assigned_mac: str
    assigned_addr: str
    resolved_params: dict
    steps: tuple


@dataclass(frozen=True)
class ChangeSet:
    """Difference between two versions of the same blueprint.

    Carries enough to reconstruct the newer version from the older one:
    chain removals, the new version/name, and the new node/chain ordering
    ride along with the node and chain deltas.
    """

    added: tuple = ()
    removed: tuple = ()
    modified: tuple = ()
    chain_updates: tuple = ()
    removed_chains: tuple = ()
    node_order: tuple = ()
    chain_order: tuple = ()
    new_version: int = 0
    new_name: str = ""

    @property
    def empty(self) -> bool:
        return not (
            self.added or self.removed or self.modified or self.chain_updates or self.removed_chains
        )


@dataclass(frozen=True)
class Finding:
    path: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple

    @property
    def ok(self) -> bool:
        return not self.findings


# --------------------------------------------------------------------------
# Parse / serialize

_UNBOUNDED = (None, "unbounded")


def _qos_bound(value) -> float:
    if value in _UNBOUNDED:
        return math.inf
    return float(value)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise BlueprintSyntaxError(f"missing key {key!r}", where)
    return doc[key]


def _endpoint_from(doc, where: str) -> Endpoint:
    if not isinstance(doc, dict):
        raise BlueprintSyntaxError("endpoint must be an object", where)
    domain = _require(doc, "domain", where)
    mac = _require(doc, "mac", where)
    try:
        macs.check_mac(mac, where + ".mac")
    except macs.MacError as exc:
        raise BlueprintSyntaxError(str(exc), where) from exc
    return Endpoint(domain=str(domain), mac=mac)


def parse_blueprint(doc: str) -> Blueprint:
    """Parse a UTF-8 JSON blueprint document and enforce all invariants."""
    try:
        raw = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise BlueprintSyntaxError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "document"
        ) from exc
    return blueprint_from_dict(raw)


def blueprint_from_dict(raw) -> Blueprint:
    if not isinstance(raw, dict):
        raise BlueprintSyntaxError("top level must be an object", "document")
    bp_id = str(_require(raw, "id", "document"))
    name = str(_require(raw, "name", "document"))
    version = _require(raw, "version", "document")
    if not isinstance(version, int):
        raise BlueprintSyntaxError("version must be an integer", "version")

    nodes = []
    for i, nd in enumerate(raw.get("nodes", [])):
        where = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise BlueprintSyntaxError("node must be an object", where)
        nodes.append(
            NodeSpec(
                id=str(_require(nd, "id", where)),
                service_type=str(_require(nd, "service_type", where)),
                image_ref=str(_require(nd, "image_ref", where)),
                vcpu=int(nd.get("vcpu", 1)),
                mem_gb=float(nd.get("mem_gb", 1.0)),
                params=dict(nd.get("params", {})),
                placement=dict(nd.get("placement", {})),
            )
        )

    chains = []
    for i, ch in enumerate(raw.get("chains", [])):
        where = f"chains[{i}]"
        if not isinstance(ch, dict):
            raise BlueprintSyntaxError("chain must be an object", where)
        qos_doc = ch.get("qos", {})
        qos = QoSDemand(
            max_latency_ms=_qos_bound(qos_doc.get("max_latency_ms")),
            max_jitter_ms=_qos_bound(qos_doc.get("max_jitter_ms")),
            min_bandwidth_mbps=float(qos_doc.get("min_bandwidth_mbps", 1.0)),
        )
        chains.append(
            ChainSpec(
                id=str(_require(ch, "id", where)),
                source=_endpoint_from(_require(ch, "source", where), where + ".source"),
                functions=tuple(str(f) for f in _require(ch, "functions", where)),
                sink=_endpoint_from(_require(ch, "sink", where), where + ".sink"),
                qos=qos,
            )
        )

    bp = Blueprint(id=bp_id, name=name, version=version, nodes=tuple(nodes), chains=tuple(chains))
    report = validate(bp)
    if not report.ok:
        first = report.findings[0]
        raise BlueprintInvariantError(
            f"{first.path}: {first.message}",
            findings=[(f.path, f.message) for f in report.findings],
        )
    return bp


def blueprint_to_dict(bp: Blueprint) -> dict:
    def bound(v: float):
        return None if math.isinf(v) else v

    return {
        "id": bp.id,
        "name": bp.name,
        "version": bp.version,
        "nodes": [
            {
                "id": n.id,
                "service_type": n.service_type,
                "image_ref": n.image_ref,
                "vcpu": n.vcpu,
                "mem_gb": n.mem_gb,
                "params": dict(n.params),
                "placement": dict(n.placement),
            }
            for n in bp.nodes
        ],
        "chains": [
            {
                "id": c.id,
                "source": {"domain": c.source.domain, "mac": c.source.mac},
                "functions": list(c.functions),
                "sink": {"domain": c.sink.domain, "mac": c.sink.mac},
                "qos": {
                    "max_latency_ms": bound(c.qos.max_latency_ms),
                    "max_jitter_ms": bound(c.qos.max_jitter_ms),
                    "min_bandwidth_mbps": c.qos.min_bandwidth_mbps,
                },
            }
            for c in bp.chains
        ],
    }


def serialize_blueprint(bp: Blueprint) -> str:
    return json.dumps(blueprint_to_dict(bp), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Validation


def validate(bp: Blueprint) -> ValidationReport:
    """Check every blueprint invariant; findings are data, not exceptions."""
    findings: list[Finding] = []

    if bp.version < 1:
        findings.append(Finding("version", f"version must be >= 1, got {bp.version}"))

    seen: set[str] = set()
    for i, n in enumerate(bp.nodes):
        where = f"nodes[{i}]"
        if n.id in seen:
            findings.append(Finding("nodes[]", f"duplicate node id {n.id!r}"))
        seen.add(n.id)
        if n.vcpu < 1:
            findings.append(Finding(where + ".vcpu", f"vcpu must be >= 1, got {n.vcpu}"))
        if n.mem_gb <= 0:
            findings.append(Finding(where + ".mem_gb", f"mem_gb must be > 0, got {n.mem_gb}"))
        for key, value in n.params.items():
            if not _IDENT_RE.match(key):
                findings.append(Finding(where + ".params", f"bad param key {key!r}"))
            for ph in _PLACEHOLDER_RE.findall(str(value)):
                if not ph:
                    findings.append(Finding(where + ".params", "empty placeholder key"))

    node_ids = {n.id for n in bp.nodes}
    chain_ids: set[str] = set()
    for i, c in enumerate(bp.chains):
        where = f"chains[{i}]"
        if c.id in chain_ids:
            findings.append(Finding("chains[]", f"duplicate chain id {c.id!r}"))
        chain_ids.add(c.id)
        if not c.functions:
            findings.append(Finding(where + ".functions", "chain must name at least one function"))
        if len(set(c.functions)) != len(c.functions):
            findings.append(Finding(where + ".functions", "duplicate function entry"))
        for f in c.functions:
            if f not in node_ids:
                findings.append(Finding(where + ".functions", f"unknown node {f!r}"))
        try:
            c.qos.check()
        except BlueprintInvariantError as exc:
            findings.append(Finding(where + ".qos", str(exc)))

    return ValidationReport(findings=tuple(findings))


# --------------------------------------------------------------------------
# Recipe adaptation


def _substitute(value: str, bindings: dict, node_id: str) -> str:
    def repl(match: re.Match) -> str:
        key = match.group(1)
        if key not in bindings:
            raise UnresolvedPlaceholderError(
                f"node {node_id!r}: no binding for placeholder ${{{key}}}", node=node_id, key=key
            )
        return str(bindings[key])

    return _PLACEHOLDER_RE.sub(repl, value)


def adapt_recipe(bp: Blueprint, node_id: str, profile: ProviderProfile, dep_seq: int) -> NodeRecipe:
    """Adapt the general blueprint to one provider's local environment.

    Pure: identical (bp.version, node_id, profile, dep_seq) always yield
    the identical recipe, MAC and address included. The MAC appends the
    deployment sequence and node ordinal to the provider prefix; the
    address is taken from the provider block at an offset that keeps
    every (dep_seq, ordinal) pair distinct.
    """
    node = bp.node(node_id)
    ordinal = bp.node_ordinal(node_id)

    if node.image_ref not in profile.image_map:
        raise UnknownImageError(
            f"provider {profile.provider_id!r} has no image for {node.image_ref!r}",
            node=node_id,
            image_ref=node.image_ref,
        )
    concrete_image = profile.image_map[node.image_ref]
    if not concrete_image:
        raise UnknownImageError(
            f"provider {profile.provider_id!r} maps {node.image_ref!r} to an empty image id"
        )

    cap_vcpu = int(profile.capacity.get("vcpu", 0))
    cap_mem = float(profile.capacity.get("mem_gb", 0.0))
    if node.vcpu > cap_vcpu or node.mem_gb > cap_mem:
        raise CapacityExceededError(
            f"node {node_id!r} needs {node.vcpu} vcpu / {node.mem_gb} GB, provider "
            f"{profile.provider_id!r} offers {cap_vcpu} vcpu / {cap_mem} GB",
            node=node_id,
        )

    assigned_mac = macs.make_mac(profile.mac_prefix, dep_seq, ordinal)

    block = ipaddress.ip_network(profile.address_block, strict=False)
    offset = (dep_seq - 1) * 256 + ordinal + 1
    if offset < 1 or offset >= block.num_addresses - 1:
        raise CapacityExceededError(
            f"address block {profile.address_block} exhausted at dep_seq={dep_seq}", node=node_id
        )
    assigned_addr = str(block.network_address + offset)

    bindings = {
        "provider_id": profile.provider_id,
        "domain_id": profile.domain_id,
        "node_id": node.id,
        "address": assigned_addr,
        "mac": assigned_mac,
    }
    bindings.update(profile.defaults)
    # literal node params override profile defaults
    for key, value in node.params.items():
        if "${" not in str(value):
            bindings[key] = value

    resolved = {k: _substitute(str(v), bindings, node_id) for k, v in node.params.items()}
    for k, v in resolved.items():
        if "${" in v:
            raise UnresolvedPlaceholderError(f"node {node_id!r}: param {k!r} still has placeholders")

    steps = (
        f"pull {concrete_image}",
        f"configure {node.id} addr={assigned_addr} mac={assigned_mac}",
        f"start {node.service_type}",
    )
    return NodeRecipe(
        node_id=node.id,
        concrete_image=concrete_image,
        assigned_mac=assigned_mac,
        assigned_addr=assigned_addr,
        resolved_params=resolved,
        steps=steps,
    )


# --------------------------------------------------------------------------
# Diff / apply


def diff_blueprints(old: Blueprint, new: Blueprint) -> ChangeSet:
    """Structural delta between two versions of the same blueprint."""
    if old.id != new.id:
        raise DiffError(f"blueprint id mismatch: {old.id!r} vs {new.id!r}")
    if new.version <= old.version:
        raise DiffError(f"version must increase: {old.version} -> {new.version}")

    old_nodes = {n.id: n for n in old.nodes}
    new_nodes = {n.id: n for n in new.nodes}
    added = tuple(n for n in new.nodes if n.id not in old_nodes)
    removed = tuple(n.id for n in old.nodes if n.id not in new_nodes)
    modified = tuple(
        n for n in new.nodes if n.id in old_nodes and n != old_nodes[n.id]
    )

    old_chains = {c.id: c for c in old.chains}
    new_chains = {c.id: c for c in new.chains}
    chain_updates = tuple(
        c for c in new.chains if c.id not in old_chains or c != old_chains[c.id]
    )
    removed_chains = tuple(c.id for c in old.chains if c.id not in new_chains)

    return ChangeSet(
        added=added,
        removed=removed,
        modified=modified,
        chain_updates=chain_updates,
        removed_chains=removed_chains,
        node_order=tuple(n.id for n in new.nodes),
        chain_order=tuple(c.id for c in new.chains),
        new_version=new.version,
        new_name=new.name,
    )


def apply_changeset(cs: ChangeSet, old: Blueprint) -> Blueprint:
    """Inverse of diff: apply(diff(a, b), a) is structurally equal to b."""
    node_pool = {n.id: n for n in old.nodes if n.id not in set(cs.removed)}
    node_pool.update({n.id: n for n in cs.modified})
    node_pool.update({n.id: n for n in cs.added})
    order = cs.node_order or tuple(node_pool)
    try:
        nodes = tuple(node_pool[nid] for nid in order)
    except KeyError as exc:
        raise DiffError(f"node_order references unknown node {exc.args[0]!r}") from exc

    chain_pool = {c.id: c for c in old.chains if c.id not in set(cs.removed_chains)}
    chain_pool.update({c.id: c for c in cs.chain_updates})
    chain_order = cs.chain_order or tuple(chain_pool)
    try:
        chains = tuple(chain_pool[cid] for cid in chain_order)
    except KeyError as exc:
        raise DiffError(f"chain_order references unknown chain {exc.args[0]!r}") from exc

    return Blueprint(
        id=old.id,
        name=cs.new_name or old.name,
        version=cs.new_version or old.version,
        nodes=nodes,
        chains=chains,
    )
