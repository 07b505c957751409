"""Web service exposing what-if scenario execution over a trained model.

Endpoints:
    GET  /meta               agent/treatment names and horizon bounds
    GET  /factual?horizon=M  factual forecast series per agent
    POST /scenario           {horizon, script} -> factual, counterfactual,
                             delta, edited_schedule

All responses are pure functions of (checkpoint, panel, request); errors
use the shape {code, message, location}, with a trace id on 5xx.
"""

from __future__ import annotations

import uuid

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import DomainError, ScriptError
from .model import GraphODEModel
from .panel import NormStats, ObservationPanel
from .scenario import parse_script, run_scenario
from .training import Checkpoint, model_from_checkpoint


class ScenarioRequest(BaseModel):
    horizon: int
    script: list[dict]


def _error(status: int, code: str, message: str, location: str | None = None, **extra):
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "location": location, **extra},
    )


def create_app(
    model: GraphODEModel,
    stats: NormStats,
    obs_len: int,
    panel: ObservationPanel,
) -> FastAPI:
    app = FastAPI(title="scenario service")
    model.eval()
    max_horizon = panel.n_steps - obs_len

    @app.exception_handler(ScriptError)
    async def script_error(_: Request, exc: ScriptError):
        return _error(400, "bad_script", str(exc), exc.location)

    @app.exception_handler(DomainError)
    async def domain_error(_: Request, exc: DomainError):
        return _error(400, "bad_request", str(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_error(_: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        location = ".".join(str(p) for p in first.get("loc", ())) or None
        return _error(400, "bad_request", first.get("msg", "invalid request"), location)

    @app.exception_handler(Exception)
    async def internal_error(_: Request, exc: Exception):
        return _error(500, "internal", str(exc), None, trace_id=str(uuid.uuid4()))

    @app.get("/meta")
    def meta():
        return {
            "agents": list(panel.agent_names),
            "treatments": list(panel.treatment_names),
            "n_steps": panel.n_steps,
            "obs_len": obs_len,
            "max_horizon": max_horizon,
        }

    @app.get("/factual")
    def factual(horizon: int = Query(...)):
        result = run_scenario(model, stats, obs_len, panel, [], horizon)
        return {"series": result.factual[:, :, 0].tolist()}

    @app.post("/scenario")
    def scenario(request: ScenarioRequest):
        edits = parse_script(request.script)
        result = run_scenario(model, stats, obs_len, panel, edits, request.horizon)
        return {
            "factual": result.factual[:, :, 0].tolist(),
            "counterfactual": result.counterfactual[:, :, 0].tolist(),
            "delta": result.delta[:, :, 0].tolist(),
            "edited_schedule": result.edited_schedule.tolist(),
        }

    return app


def app_from_checkpoint(checkpoint: Checkpoint, panel: ObservationPanel) -> FastAPI:
    model = model_from_checkpoint(checkpoint)
    return create_app(model, checkpoint.stats, checkpoint.config.obs_len, panel)


def serve(checkpoint: Checkpoint, panel: ObservationPanel, bind: str = "127.0.0.1:8000") -> None:
    """Run the service until interrupted; bind is host:port."""
    import uvicorn

    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise DomainError(f"bind address must be host:port, got {bind!r}")
    uvicorn.run(app_from_checkpoint(checkpoint, panel), host=host, port=int(port_text))
