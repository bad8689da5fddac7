"""
FastAPI transport for the scheduler control plane.

POST /rpc takes a JSON-RPC 2.0 request (or batch) and always answers 200
with a JSON-RPC response; protocol errors live in the envelope.
"""

import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from backend.config import ServerConfig, load_config
from backend.server import SERVER_INFO, ControlPlane

logger = logging.getLogger(__name__)


def create_app(config: Optional[ServerConfig] = None, plane: Optional[ControlPlane] = None) -> FastAPI:
    plane = plane or ControlPlane(config or load_config())

    app = FastAPI(
        title="Scheduler Control Plane",
        description="Tool server for workload analysis, policy search, verification and canary deployment",
        version=SERVER_INFO["version"],
    )
    if plane.config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(plane.config.cors_origins),
            allow_methods=["GET", "POST"],
            allow_headers=["Content-Type"],
        )
    app.state.plane = plane

    @app.get("/health")
    async def health_check():
        return {"status": "healthy", "sessions": len(plane.sessions), "policies": len(plane.repository)}

    @app.get("/tools")
    async def tools():
        return {"tools": plane.list_tools()}

    @app.post("/rpc")
    async def rpc(request: Request):
        body = (await request.body()).decode("utf-8", errors="replace")
        reply = await run_in_threadpool(plane.handle_text, body)
        if reply is None:
            return Response(status_code=204)
        return Response(content=reply, media_type="application/json")

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        logger.exception("unhandled error on %s", request.url.path)
        return JSONResponse(status_code=500, content={"error": "InternalError", "message": str(exc)})

    return app


def serve_tcp(config: ServerConfig, plane: Optional[ControlPlane] = None) -> None:
    import uvicorn

    app = create_app(config, plane)
    logger.info("schedcp listening on http://%s:%d/rpc", config.host, config.port)
    uvicorn.run(app, host=config.host, port=config.port, log_level=config.log_level.lower())
