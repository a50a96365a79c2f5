"""HTTP front end over the core package.

Campaign runs are synchronous: the request returns when the budget is
spent. The state directory is the durable record, so a client that
disconnects can still call ``/report`` later.
"""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

from .. import __version__, codec
from ..campaign import (
    CampaignConfig,
    ConfigError,
    CorpusError,
    MissingArtifact,
    build_report,
    load_findings,
    replay,
    report,
    run_campaign,
)
from ..llm import FixtureMissing, TransportError, adapter_from_config
from ..oracle import unique_findings
from ..rulegen import CatalogError, generate_catalog, save_catalog
from ..toolchain import AdapterError, ScriptError, classify_error_clarity
from ..types import value_to_json
from . import schemas

log = logging.getLogger(__name__)

app = FastAPI(title="parityfuzz", version=__version__)


def _error(status: int, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(MissingArtifact)
async def _missing(_req, exc):
    return _error(404, exc)


@app.exception_handler(ConfigError)
@app.exception_handler(CorpusError)
@app.exception_handler(CatalogError)
@app.exception_handler(ScriptError)
@app.exception_handler(FileNotFoundError)
async def _bad_config(_req, exc):
    return _error(400, exc)


@app.exception_handler(AdapterError)
@app.exception_handler(TransportError)
@app.exception_handler(FixtureMissing)
async def _infra(_req, exc):
    return _error(502, exc)


@app.get("/health", response_model=schemas.Health)
def health():
    return schemas.Health(version=__version__)


@app.post("/rules/generate", response_model=schemas.GenRulesResponse)
def gen_rules(req: schemas.GenRulesRequest):
    adapter = adapter_from_config(req.llm or {"kind": "mock"})
    res = generate_catalog(
        req.sources,
        adapter,
        explicit_only=req.explicit_only,
        context_lines=req.context_lines,
        window=req.window,
        overlap=req.overlap,
        workers=req.workers,
    )
    path = save_catalog(res.catalog, req.out)
    return schemas.GenRulesResponse(
        catalog=str(path),
        features=len(res.catalog.features),
        conditions=len(res.catalog.conditions),
        rules=len(res.catalog.rules),
        warnings=res.warnings,
    )


@app.post("/campaigns", response_model=schemas.CampaignResponse)
def start_campaign(req: schemas.CampaignRequest):
    if req.config_path:
        cfg = CampaignConfig.from_file(req.config_path)
    elif req.config is not None:
        cfg = CampaignConfig.from_dict(req.config)
    else:
        raise ConfigError("either config_path or config is required")
    if req.seed is not None:
        cfg.seed = req.seed
    if req.state_dir is not None:
        cfg.state_dir = Path(req.state_dir)
    if req.policy_checkpoint is not None:
        cfg.policy_checkpoint = Path(req.policy_checkpoint)
    cfg.validate()
    rep = run_campaign(cfg, req.iterations)
    return schemas.CampaignResponse(**rep.to_json())


@app.post("/replay", response_model=schemas.ReplayResponse)
def replay_finding(req: schemas.ReplayRequest):
    return schemas.ReplayResponse(**replay(req.finding_id, req.state_dir, req.registry).to_json())


@app.get("/report", response_model=schemas.ReportResponse)
def get_report(state: str = Query(...), format: str = Query("md", pattern="^(json|md)$")):
    doc = report(state, format)
    n = len(unique_findings(load_findings(state)))
    return schemas.ReportResponse(format=format, document=doc, findings=n)


@app.get("/campaigns/summary", response_model=schemas.CampaignResponse)
def campaign_summary(state: str = Query(...)):
    return schemas.CampaignResponse(**build_report(state).to_json())


@app.post("/classify/error-clarity", response_model=schemas.ClarityResponse)
def error_clarity(req: schemas.ClarityRequest):
    return schemas.ClarityResponse(clear_error=classify_error_clarity(req.stderr))


@app.post("/decode", response_model=schemas.DecodeResponse)
def decode(req: schemas.DecodeRequest):
    try:
        data = bytes.fromhex(req.data_hex.removeprefix("0x"))
        types = [codec.parse_abi_type(t) for t in req.types]
        if req.encoding == "abi":
            value = codec.decode_abi(data, types)
        else:
            value = codec.decode_borsh(data, [codec.abi_to_borsh(t) for t in types], address_width=req.address_width)
    except (ValueError, codec.DecodeError) as e:
        return _error(422, e)
    return schemas.DecodeResponse(value=value_to_json(value))
