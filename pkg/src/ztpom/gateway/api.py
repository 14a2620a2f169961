"""HTTP/JSON wire API over a GatewayService."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from ..errors import ZtpomError
from .service import GatewayService

_STATUS_BY_CODE = {
    "invalid-token": 401,
    "unknown-deployment": 404,
    "unknown-node": 404,
    "unknown-party": 404,
    "unknown-chain": 404,
    "unknown-image": 404,
    "snapshot-error": 404,
    "wrong-state": 409,
    "duplicate-session": 409,
    "version-error": 409,
    "plan-state-error": 409,
    "no-offer": 422,
    "no-feasible-path": 422,
    "segment-infeasible": 422,
    "vlan-pool-exhausted": 422,
    "insufficient-residual": 422,
    "capacity-exceeded": 422,
}


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="ztpom gateway", version="0.1.0")
    app.state.service = service

    @app.exception_handler(ZtpomError)
    async def _domain_error(_request: Request, exc: ZtpomError):
        return JSONResponse(
            status_code=_STATUS_BY_CODE.get(exc.code, 400), content=exc.to_dict()
        )

    # -- blueprints --

    @app.post("/blueprints")
    async def post_blueprint(request: Request):
        return service.register_blueprint(await request.json())

    @app.get("/blueprints/{blueprint_id}")
    async def get_blueprint(blueprint_id: str):
        return service.get_blueprint(blueprint_id)

    # -- deployments --

    @app.post("/deployments")
    async def post_deployment(request: Request):
        body = await request.json()
        return service.create_deployment(body["blueprint_id"], owner=body.get("owner"))

    @app.get("/deployments/{dep_id}")
    async def get_deployment(dep_id: str):
        return service.get_deployment(dep_id)

    @app.post("/deployments/{dep_id}/update")
    async def post_update(dep_id: str, request: Request):
        body = await request.json()
        return service.update_deployment(dep_id, int(body["version"]))

    @app.post("/deployments/{dep_id}/rechain")
    async def post_rechain(dep_id: str, request: Request):
        body = await request.json()
        return service.rechain_deployment(dep_id, body["chain_id"], list(body["order"]))

    @app.delete("/deployments/{dep_id}")
    async def delete_deployment(dep_id: str):
        return service.teardown_deployment(dep_id)

    @app.get("/deployments/{dep_id}/rules", response_class=PlainTextResponse)
    async def get_rules(dep_id: str):
        return service.deployment_rules(dep_id)

    @app.get("/deployments/{dep_id}/flows")
    async def get_flows(dep_id: str):
        return service.deployment_flows(dep_id)

    # -- agent protocol --

    @app.post("/agent/hello")
    async def agent_hello(request: Request):
        return service.agent_hello(await request.json())

    @app.get("/agent/recipe")
    async def agent_recipe(token: str):
        return service.agent_recipe(token)

    @app.post("/agent/status")
    async def agent_status(request: Request):
        return service.agent_status(await request.json())

    @app.post("/tick")
    async def post_tick(request: Request):
        body = await request.json()
        return {"events": service.tick(int(body["now"]))}

    # -- catalogue / trust --

    @app.get("/catalogue")
    async def get_catalogue(request: Request):
        return service.catalogue_search(dict(request.query_params))

    @app.post("/catalogue/offers")
    async def post_offer(request: Request):
        return service.publish_offer(await request.json())

    @app.post("/trust/{party}/confirm")
    async def post_trust(party: str, request: Request):
        body = await request.json()
        return service.trust_confirm(party, body["peer"])

    @app.get("/trust/{a}/{b}")
    async def get_trust(a: str, b: str):
        return service.trust_status(a, b)

    # -- topology / simulation / events --

    @app.get("/topology")
    async def get_topology():
        return service.topology_doc()

    @app.post("/sim/run")
    async def post_sim_run(request: Request):
        body = await request.json()
        if isinstance(body, list):
            return service.run_scenario(body)
        return service.run_scenario(body["script"], dep_id=body.get("deployment"))

    @app.get("/events")
    async def get_events(since: int = 0):
        return service.events_since(since)

    return app
