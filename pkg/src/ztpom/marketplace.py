"""Service directory, broker, and pairwise trust federation.

Providers publish offers with flat SLA fields (price, tier, region,
bandwidth range) after registering a certificate fingerprint. Trust is a
mutual handshake over those fingerprints: each side confirms the other,
and re-registering a certificate revokes every confirmation involving
that party. The broker filters offers by hard constraints, trust, and
network reachability, then ranks by price plus weighted path latency.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from . import fabric as fabric_mod
from .blueprint import QoSDemand
from .errors import ZtpomError
from .fabric import FabricTopology, PathError

_FINGERPRINT_RE = re.compile(r"^[0-9a-f]{64}$")

DEFAULT_LATENCY_WEIGHT = 0.1


class MarketplaceError(ZtpomError):
    code = "marketplace-error"


class MalformedFingerprintError(MarketplaceError):
    code = "malformed-fingerprint"


class UnregisteredProviderError(MarketplaceError):
    code = "unregistered-provider"


class UnknownPartyError(MarketplaceError):
    code = "unknown-party"


@dataclass(frozen=True)
class CatalogEntry:
    offer_id: str
    provider_id: str
    service_type: str
    region: str
    price_per_hour: float
    availability_tier: int
    min_bandwidth_mbps: float
    max_bandwidth_mbps: float
    api_endpoint: str
    cert_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "offer_id": self.offer_id,
            "provider_id": self.provider_id,
            "service_type": self.service_type,
            "region": self.region,
            "price_per_hour": self.price_per_hour,
            "availability_tier": self.availability_tier,
            "min_bandwidth_mbps": self.min_bandwidth_mbps,
            "max_bandwidth_mbps": self.max_bandwidth_mbps,
            "api_endpoint": self.api_endpoint,
            "cert_fingerprint": self.cert_fingerprint,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CatalogEntry":
        return cls(
            offer_id=str(raw["offer_id"]),
            provider_id=str(raw["provider_id"]),
            service_type=str(raw["service_type"]),
            region=str(raw.get("region", "")),
            price_per_hour=float(raw.get("price_per_hour", 0.0)),
            availability_tier=int(raw.get("availability_tier", 1)),
            min_bandwidth_mbps=float(raw.get("min_bandwidth_mbps", 0.0)),
            max_bandwidth_mbps=float(raw.get("max_bandwidth_mbps", 0.0)),
            api_endpoint=str(raw.get("api_endpoint", "")),
            cert_fingerprint=str(raw.get("cert_fingerprint", "")),
        )


@dataclass(frozen=True)
class ServiceRequest:
    requester_id: str = ""
    service_type: str | None = None
    region: str | None = None
    max_price: float | None = None
    min_tier: int | None = None
    min_bandwidth_mbps: float | None = None
    user_domain: str | None = None
    provider_allowlist: tuple | None = None


@dataclass(frozen=True)
class TrustRecord:
    party_a: str
    party_b: str
    a_confirmed: bool = False
    b_confirmed: bool = False

    @property
    def established(self) -> bool:
        return self.a_confirmed and self.b_confirmed


@dataclass(frozen=True)
class Match:
    entry: CatalogEntry
    score: float
    path_latency_ms: float


def _canonical(a: str, b: str) -> tuple:
    return (a, b) if a < b else (b, a)


@dataclass
class TrustRegistry:
    """Certificate fingerprints plus the mutual-confirmation state."""

    certs: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict)

    def register_cert(self, party_id: str, fingerprint: str) -> None:
        """Store a fingerprint; replacing one revokes all trust for the party."""
        if not _FINGERPRINT_RE.match(fingerprint or ""):
            raise MalformedFingerprintError(
                f"fingerprint must be 64 lowercase hex chars, got {fingerprint!r}"
            )
        replacing = party_id in self.certs
        self.certs[party_id] = fingerprint
        if replacing:
            for key, record in list(self.records.items()):
                if party_id in key:
                    self.records[key] = TrustRecord(party_a=key[0], party_b=key[1])

    def fingerprint_of(self, party_id: str):
        return self.certs.get(party_id)

    def confirm_trust(self, confirmer_id: str, peer_id: str) -> TrustRecord:
        """Set the confirmer's flag; established once both sides confirm."""
        for party in (confirmer_id, peer_id):
            if party not in self.certs:
                raise UnknownPartyError(f"party {party!r} has no registered certificate")
        key = _canonical(confirmer_id, peer_id)
        record = self.records.get(key, TrustRecord(party_a=key[0], party_b=key[1]))
        if confirmer_id == record.party_a:
            record = replace(record, a_confirmed=True)
        else:
            record = replace(record, b_confirmed=True)
        self.records[key] = record
        return record

    def trust_status(self, a: str, b: str) -> TrustRecord:
        key = _canonical(a, b)
        return self.records.get(key, TrustRecord(party_a=key[0], party_b=key[1]))

    def established(self, a: str, b: str) -> bool:
        return self.trust_status(a, b).established


class Marketplace:
    """Searchable offer catalogue with a trust-and-reachability-aware broker."""

    def __init__(
        self, trust: TrustRegistry | None = None, latency_weight: float = DEFAULT_LATENCY_WEIGHT
    ) -> None:
        self.trust = trust if trust is not None else TrustRegistry()
        self.latency_weight = latency_weight
        self.offers: dict = {}

    def publish_offer(self, entry: CatalogEntry) -> str:
        registered = self.trust.fingerprint_of(entry.provider_id)
        if registered is None:
            raise UnregisteredProviderError(
                f"provider {entry.provider_id!r} must register a certificate before publishing"
            )
        if entry.cert_fingerprint != registered:
            raise MarketplaceError(
                f"offer {entry.offer_id!r}: fingerprint does not match the registered certificate"
            )
        if entry.price_per_hour < 0:
            raise MarketplaceError(f"offer {entry.offer_id!r}: price must be nonnegative")
        if not 1 <= entry.availability_tier <= 4:
            raise MarketplaceError(f"offer {entry.offer_id!r}: tier must be within [1, 4]")
        self.offers[entry.offer_id] = entry
        return entry.offer_id

    def search(self, req: ServiceRequest | None = None) -> list:
        """All entries matching every supplied constraint, price-sorted."""
        out = [e for e in self.offers.values() if req is None or _hard_match(e, req)]
        out.sort(key=lambda e: (e.price_per_hour, e.provider_id, e.offer_id))
        return out

    def broker(self, req: ServiceRequest, topo: FabricTopology, trust: TrustRegistry | None = None):
        """Feasible offers ranked by price + latency_weight * path latency.

        Feasible means: hard constraints hold, the provider is trusted by
        the requester, and the fabric can reach the provider's domain at
        the requested bandwidth from the user's domain.
        """
        trust = trust if trust is not None else self.trust
        matches = []
        for entry in self.offers.values():
            if not _hard_match(entry, req):
                continue
            if not trust.established(req.requester_id, entry.provider_id):
                continue
            latency = provider_path_latency(topo, req, entry.provider_id)
            if latency is None:
                continue
            score = entry.price_per_hour + self.latency_weight * latency
            matches.append(Match(entry=entry, score=score, path_latency_ms=latency))
        matches.sort(key=lambda m: (m.score, m.entry.provider_id, m.entry.offer_id))
        return matches


def _hard_match(entry: CatalogEntry, req: ServiceRequest) -> bool:
    if req.service_type is not None and entry.service_type != req.service_type:
        return False
    if req.region is not None and entry.region != req.region:
        return False
    if req.max_price is not None and entry.price_per_hour > req.max_price:
        return False
    if req.min_tier is not None and entry.availability_tier < req.min_tier:
        return False
    if req.min_bandwidth_mbps is not None and entry.max_bandwidth_mbps < req.min_bandwidth_mbps:
        return False
    if req.provider_allowlist is not None and entry.provider_id not in req.provider_allowlist:
        return False
    return True


def provider_path_latency(topo: FabricTopology, req: ServiceRequest, provider_id: str):
    """Latency of the best fabric path user_domain -> provider domain at the
    requested bandwidth, 0.0 for co-located, None when unreachable."""
    provider_domain = topo.domain_of_provider(provider_id)
    if provider_domain is None:
        return None
    if req.user_domain is None or req.user_domain == provider_domain:
        return 0.0
    qos = QoSDemand(min_bandwidth_mbps=req.min_bandwidth_mbps or 1.0)
    try:
        path = fabric_mod.compute_path(topo, req.user_domain, provider_domain, qos)
    except PathError:
        return None
    return path.total_latency_ms
