"""ztpom command line.

Stateful commands load the snapshot (when a persistence dir is
configured), apply the operation, and write the snapshot back, so a
sequence of invocations behaves like one long-running server. ``serve``
runs the HTTP gateway instead. Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..errors import ZtpomError
from .config import GatewayConfig, load_config
from .service import GatewayService


def _build_service(config_path: str | None) -> GatewayService:
    cfg = load_config(config_path) if config_path else GatewayConfig()
    service = GatewayService(cfg)
    service.restore_if_present()
    return service


def _finish(ctx, service: GatewayService, payload, text: str | None = None) -> None:
    if service.cfg.snapshot_path is not None:
        service.snapshot()
    if ctx.obj.get("json"):
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(text if text is not None else json.dumps(payload, indent=2, sort_keys=True))


def _run(ctx, fn):
    try:
        fn()
    except ZtpomError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="config file")
@click.option("--json", "json_out", is_flag=True, help="machine-readable output")
@click.pass_context
def main(ctx, config_path, json_out):
    """Zero-touch provisioning and chaining over a programmable fabric."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["json"] = json_out


@main.command()
@click.pass_context
def serve(ctx):
    """Run the HTTP gateway."""

    def body():
        import uvicorn

        from .api import create_app

        service = _build_service(ctx.obj["config_path"])
        app = create_app(service)
        uvicorn.run(app, host=service.cfg.host, port=service.cfg.port, log_level="warning")

    _run(ctx, body)


@main.command()
@click.argument("blueprint_file", type=click.Path(exists=True))
@click.option("--owner", default=None)
@click.option("--agents/--no-agents", default=True, help="drive simulated agents to ACTIVE")
@click.pass_context
def deploy(ctx, blueprint_file, owner, agents):
    """Register a blueprint and provision it end to end."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        ref = service.register_blueprint(Path(blueprint_file).read_text(encoding="utf-8"))
        dep = service.create_deployment(ref["id"], owner=owner)
        if agents:
            dep = service.run_agents(dep["id"])
        _finish(ctx, service, dep, f"{dep['id']} {dep['state']}")

    _run(ctx, body)


@main.command()
@click.argument("dep_id")
@click.pass_context
def status(ctx, dep_id):
    """Show a deployment."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        dep = service.get_deployment(dep_id)
        nodes = " ".join(f"{n}={s}" for n, s in dep["node_states"].items())
        _finish(ctx, service, dep, f"{dep['id']} {dep['state']} v{dep['version']} {nodes}")

    _run(ctx, body)


@main.command()
@click.argument("dep_id")
@click.option("--chain", "chain_id", default=None, help="chain id (defaults to the only chain)")
@click.option("--order", required=True, help="comma-separated function order")
@click.pass_context
def rechain(ctx, dep_id, chain_id, order):
    """Reorder a deployment's chain at runtime."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        if chain_id is None:
            dep = service.get_deployment(dep_id)
            chains = list(dep["chains"])
            if len(chains) != 1:
                raise ZtpomError(f"deployment has {len(chains)} chains; pass --chain")
            target = chains[0]
        else:
            target = chain_id
        dep = service.rechain_deployment(dep_id, target, order.split(","))
        epoch = dep["chains"][target]["epoch"]
        _finish(ctx, service, dep, f"{dep['id']} {dep['state']} chain {target} epoch {epoch}")

    _run(ctx, body)


@main.command()
@click.argument("dep_id")
@click.option("--blueprint", "blueprint_file", type=click.Path(exists=True), default=None)
@click.option("--version", "version", type=int, default=None)
@click.pass_context
def update(ctx, dep_id, blueprint_file, version):
    """Move a deployment to a newer blueprint version."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        target = version
        if blueprint_file is not None:
            ref = service.register_blueprint(Path(blueprint_file).read_text(encoding="utf-8"))
            target = ref["version"]
        if target is None:
            raise ZtpomError("pass --blueprint or --version")
        dep = service.update_deployment(dep_id, target)
        _finish(ctx, service, dep, f"{dep['id']} {dep['state']} v{dep['version']}")

    _run(ctx, body)


@main.command()
@click.argument("dep_id")
@click.pass_context
def teardown(ctx, dep_id):
    """Release everything a deployment holds."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        dep = service.teardown_deployment(dep_id)
        _finish(ctx, service, dep, f"{dep['id']} {dep['state']}")

    _run(ctx, body)


@main.command()
@click.pass_context
def topo(ctx):
    """Show the fabric topology and reservations."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        doc = service.topology_doc()
        lines = [f"domain {d['id']} kind={d['kind']}" for d in doc["domains"]]
        lines += [
            f"link {l['id']} {l['endpoints'][0]}--{l['endpoints'][1]} "
            f"lat={l['latency_ms']}ms cap={l['capacity_mbps']}mbps vlans={l['vlan_pool']}"
            for l in doc["links"]
        ]
        _finish(ctx, service, doc, "\n".join(lines))

    _run(ctx, body)


@main.command()
@click.option("--service-type", default=None)
@click.option("--region", default=None)
@click.option("--max-price", type=float, default=None)
@click.pass_context
def catalogue(ctx, service_type, region, max_price):
    """Search the service catalogue."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        filters = {
            "service_type": service_type,
            "region": region,
            "max_price": max_price,
        }
        entries = service.catalogue_search({k: v for k, v in filters.items() if v is not None})
        lines = [
            f"{e['offer_id']}: {e['service_type']} @ {e['provider_id']} "
            f"({e['region']}) {e['price_per_hour']}/h tier {e['availability_tier']}"
            for e in entries
        ]
        _finish(ctx, service, entries, "\n".join(lines) if lines else "(no offers)")

    _run(ctx, body)


@main.group()
def trust():
    """Trust federation operations."""


@trust.command("confirm")
@click.argument("party")
@click.argument("peer")
@click.pass_context
def trust_confirm(ctx, party, peer):
    def body():
        service = _build_service(ctx.obj["config_path"])
        record = service.trust_confirm(party, peer)
        _finish(
            ctx,
            service,
            record,
            f"{record['party_a']}<->{record['party_b']} established={record['established']}",
        )

    _run(ctx, body)


@trust.command("show")
@click.argument("a")
@click.argument("b")
@click.pass_context
def trust_show(ctx, a, b):
    def body():
        service = _build_service(ctx.obj["config_path"])
        record = service.trust_status(a, b)
        _finish(
            ctx,
            service,
            record,
            f"{record['party_a']}<->{record['party_b']} established={record['established']}",
        )

    _run(ctx, body)


@main.command()
@click.argument("script_file", type=click.Path(exists=True))
@click.option("--deployment", "dep_id", default=None)
@click.pass_context
def sim(ctx, script_file, dep_id):
    """Run a timed data-plane scenario script."""

    def body():
        service = _build_service(ctx.obj["config_path"])
        script = json.loads(Path(script_file).read_text(encoding="utf-8"))
        result = service.run_scenario(script, dep_id=dep_id)
        delivered = sum(r["delivered"] for r in result["results"])
        lost = sum(len(r["losses"]) for r in result["results"])
        _finish(ctx, service, result, f"delivered={delivered} lost={lost} now={result['now']}")

    _run(ctx, body)


if __name__ == "__main__":
    main()
