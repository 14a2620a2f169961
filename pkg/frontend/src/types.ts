// Wire types, mirroring the gateway's JSON bodies exactly.

export interface CatalogEntry {
  offer_id: string;
  provider_id: string;
  service_type: string;
  region: string;
  price_per_hour: number;
  availability_tier: number;
  min_bandwidth_mbps: number;
  max_bandwidth_mbps: number;
  api_endpoint: string;
  cert_fingerprint: string;
}

export interface Endpoint {
  domain: string;
  mac: string;
}

export interface QoSDemand {
  max_latency_ms: number | null;
  max_jitter_ms: number | null;
  min_bandwidth_mbps: number;
}

export interface ChainDoc {
  id: string;
  source: Endpoint;
  functions: string[];
  sink: Endpoint;
  qos: QoSDemand;
}

export interface NodeDoc {
  id: string;
  service_type: string;
  image_ref: string;
  vcpu: number;
  mem_gb: number;
  params: Record<string, string>;
  placement: Record<string, unknown>;
}

export interface BlueprintDoc {
  id: string;
  name: string;
  version: number;
  nodes: NodeDoc[];
  chains: ChainDoc[];
}

export interface ChainStatus {
  epoch: number;
  hops: [string, string, string][]; // node id, domain, mac
}

export interface Deployment {
  id: string;
  blueprint_id: string;
  version: number;
  owner: string;
  state: string;
  placements: Record<string, string>;
  node_states: Record<string, string>;
  chains: Record<string, ChainStatus>;
}

export interface EventRecord {
  seq: number;
  tick: number;
  kind: string;
  deployment_id: string | null;
  node_id: string | null;
  data: Record<string, unknown>;
}

export interface EventFeed {
  events: EventRecord[];
  latest: number;
  now: number;
}

export interface TrustRecord {
  party_a: string;
  party_b: string;
  a_confirmed: boolean;
  b_confirmed: boolean;
  established: boolean;
}
