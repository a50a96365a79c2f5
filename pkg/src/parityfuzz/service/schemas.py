from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    version: str


class GenRulesRequest(BaseModel):
    sources: List[str] = Field(min_length=1)
    out: str
    explicit_only: bool = False
    llm: Optional[Dict[str, Any]] = None
    context_lines: int = Field(default=15, ge=0)
    window: int = Field(default=120, ge=2)
    overlap: int = Field(default=20, ge=0)
    workers: int = Field(default=4, ge=1)


class GenRulesResponse(BaseModel):
    catalog: str
    features: int
    conditions: int
    rules: int
    warnings: List[str] = []


class CampaignRequest(BaseModel):
    config_path: Optional[str] = None
    config: Optional[Dict[str, Any]] = None
    iterations: Optional[int] = Field(default=None, ge=0)
    seed: Optional[int] = None
    state_dir: Optional[str] = None
    policy_checkpoint: Optional[str] = None


class CampaignResponse(BaseModel):
    state_dir: str
    iterations: int
    variants: int
    baseline_compiled: int
    admitted: int
    findings: int
    filtered: int
    novel: int
    matrix: Dict[str, Dict[str, int]]
    coverage_provider: str
    reward_scale: float


class ReplayRequest(BaseModel):
    finding_id: str
    state_dir: str
    registry: Optional[str] = None


class ReplayResponse(BaseModel):
    finding_id: str
    expected: str
    observed: List[str]
    reproduced: bool
    flaky: bool


class ReportResponse(BaseModel):
    format: Literal["json", "md"]
    document: str
    findings: int


class ClarityRequest(BaseModel):
    stderr: str


class ClarityResponse(BaseModel):
    clear_error: bool


class DecodeRequest(BaseModel):
    encoding: Literal["abi", "borsh"]
    types: List[str]
    data_hex: str
    address_width: int = Field(default=20, ge=1, le=64)


class DecodeResponse(BaseModel):
    value: Dict[str, Any]


class ErrorBody(BaseModel):
    error: str
    detail: str
