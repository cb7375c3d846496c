"""HTTP+JSON API over the triage service.

Caller errors return 4xx with machine-readable codes in
{"error": {"code", "detail"}}; 5xx is reserved for internal faults. The
analyst principal arrives in the X-Principal header and maps to a clearance
through the pipeline config.
"""

from __future__ import annotations

import json
from typing import Optional

from fastapi import FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .counterfactual import ATOM_SCHEMA, CounterfactualEdit, ImpossibleEdit, PlausibilityViolation, atom_from_doc
from .evalsuite import ExperimentProfile, MetricsReport, run_experiment
from .model import money, utc_label
from .pipeline import AlertNotTriagedError, TriageService, UnknownAlertError


class AlertSummary(BaseModel):
    id: str
    alert_type: str
    customer_id: str
    alert_time: int
    rule_score: float
    status: str
    tier: str


class AlertQueuePage(BaseModel):
    alerts: list[AlertSummary]
    page: int
    page_size: int
    total: int


class AlertDetail(BaseModel):
    alert: dict
    transactions: list[dict]
    customer: dict
    indicators: dict[str, bool]
    counterparty_risk: dict[str, str]
    rendered: dict[str, str]


class GeneratorOverrides(BaseModel):
    mode: Optional[str] = None
    p_fabricated_citation: Optional[float] = None
    p_numeric_error: Optional[float] = None
    p_policy_hallucination: Optional[float] = None
    p_unsupported_entity: Optional[float] = None
    fault_seed: Optional[int] = None
    heed_feedback: Optional[bool] = None
    heed_probability: Optional[float] = None
    llm_only: Optional[bool] = None


class TriageRequest(BaseModel):
    """Partial PipelineConfig; absent fields keep the service defaults."""

    quotas: Optional[dict[str, int]] = None
    k_total: Optional[int] = None
    clearance: Optional[str] = None
    max_iters: Optional[int] = None
    cf_budget: Optional[int] = None
    cf_max_accepted: Optional[int] = None
    variant_tag: Optional[str] = None
    light_score_threshold: Optional[float] = None
    generator: Optional[GeneratorOverrides] = None


class TriageResponse(BaseModel):
    alert_id: str
    status: str
    disposition: str
    confidence: float
    attempts: int
    counterfactuals: int
    audit_seq_start: int


class EditAtomDoc(BaseModel):
    kind: str
    indicator: Optional[str] = None
    account: Optional[str] = None
    tier: Optional[str] = None
    t_start: Optional[int] = None
    t_end: Optional[int] = None
    tx_id: Optional[str] = None
    evidence_id: Optional[str] = None
    old_id: Optional[str] = None
    new_id: Optional[str] = None


class WhatIfRequest(BaseModel):
    atoms: Optional[list[EditAtomDoc]] = None


class DispositionRequest(BaseModel):
    disposition: str
    comment: str = Field(default="")


class AuditEventView(BaseModel):
    seq: int
    timestamp: int
    kind: str
    alert_id: str
    principal: str
    payload: dict
    payload_hash: str
    prev_hash: str


def _error(status: int, code: str, detail: str = "") -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "detail": detail}})


def create_app(service: TriageService, eval_profile: ExperimentProfile | None = None) -> FastAPI:
    app = FastAPI(title="amltriage", version="0.1.0")
    metrics_cache: dict[str, MetricsReport] = {}

    @app.exception_handler(UnknownAlertError)
    async def _unknown_alert(request: Request, exc: UnknownAlertError):
        return _error(404, "UNKNOWN_ALERT", str(exc))

    @app.exception_handler(AlertNotTriagedError)
    async def _not_triaged(request: Request, exc: AlertNotTriagedError):
        return _error(409, "ALERT_NOT_TRIAGED", str(exc))

    @app.exception_handler(PlausibilityViolation)
    async def _implausible(request: Request, exc: PlausibilityViolation):
        return _error(422, "PLAUSIBILITY_VIOLATION", exc.rule)

    @app.exception_handler(ImpossibleEdit)
    async def _impossible(request: Request, exc: ImpossibleEdit):
        return _error(422, "IMPOSSIBLE_EDIT", exc.detail)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return _error(400, "BAD_REQUEST", str(exc))

    def _summary(alert_id: str) -> AlertSummary:
        alert = service.get_alert(alert_id)
        outcome = service.outcomes.get(alert_id)
        tier = "full"
        status = "pending"
        if outcome is not None:
            status = outcome.status
            tier = "light" if outcome.status == "light_tier" else "full"
        return AlertSummary(
            id=alert.id,
            alert_type=alert.alert_type,
            customer_id=alert.customer_id,
            alert_time=alert.alert_time,
            rule_score=alert.trigger.max_score(),
            status=status,
            tier=tier,
        )

    @app.get("/alerts", response_model=AlertQueuePage)
    def list_alerts(
        split: Optional[str] = Query(default=None),
        status: Optional[str] = Query(default=None),
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=20, ge=1, le=500),
    ):
        ids = service.alert_ids(split)
        summaries = [_summary(alert_id) for alert_id in ids]
        if status == "pending":
            summaries = [s for s in summaries if s.status == "pending"]
        elif status == "triaged":
            summaries = [s for s in summaries if s.status != "pending"]
        total = len(summaries)
        start = (page - 1) * page_size
        return AlertQueuePage(
            alerts=summaries[start : start + page_size], page=page, page_size=page_size, total=total
        )

    @app.get("/alerts/{alert_id}", response_model=AlertDetail)
    def alert_detail(alert_id: str):
        context = service.get_context(alert_id)
        return AlertDetail(
            alert=context.alert.to_doc(),
            transactions=[t.to_doc() for t in context.transactions],
            customer=context.customer.to_doc(),
            indicators=dict(context.indicators),
            counterparty_risk=dict(context.counterparty_risk),
            rendered={
                "window": f"{utc_label(context.alert.window[0])} to {utc_label(context.alert.window[1])}",
                "total_amount": money(sum(t.amount for t in context.transactions)),
            },
        )

    @app.get("/alerts/{alert_id}/bundle")
    def alert_bundle(alert_id: str, x_principal: str = Header(default="analyst")):
        bundle = service.build_bundle(alert_id, principal=x_principal)
        return bundle.to_doc()

    @app.post("/alerts/{alert_id}/triage", response_model=TriageResponse)
    def triage(alert_id: str, body: TriageRequest | None = None, x_principal: str = Header(default="analyst")):
        seq_start = len(service.audit) + 1
        overrides = json.loads(body.model_dump_json(exclude_none=True)) if body else None
        outcome = service.triage_alert(alert_id, overrides=overrides, principal=x_principal)
        return TriageResponse(
            alert_id=alert_id,
            status=outcome.status,
            disposition=outcome.record.disposition,
            confidence=outcome.record.confidence,
            attempts=len(outcome.trace.attempts),
            counterfactuals=len(outcome.counterfactuals),
            audit_seq_start=seq_start,
        )

    @app.get("/alerts/{alert_id}/outcome")
    def outcome(alert_id: str):
        service.get_alert(alert_id)
        return service.outcome_doc(alert_id)

    @app.post("/alerts/{alert_id}/counterfactuals")
    def what_if(alert_id: str, body: WhatIfRequest | None = None, x_principal: str = Header(default="analyst")):
        service.get_alert(alert_id)
        edit = None
        if body is not None and body.atoms:
            atoms = tuple(
                atom_from_doc(json.loads(a.model_dump_json(exclude_none=True))) for a in body.atoms
            )
            edit = CounterfactualEdit(atoms)
        result = service.what_if(alert_id, edit, principal=x_principal)
        if isinstance(result, list):
            return {"accepted": [v.to_doc() for v in result]}
        return result.to_doc()

    @app.post("/alerts/{alert_id}/disposition")
    def set_disposition(alert_id: str, body: DispositionRequest, x_principal: str = Header(default="")):
        service.get_alert(alert_id)
        if not x_principal:
            return _error(400, "MISSING_PRINCIPAL", "X-Principal header is required")
        if not body.comment.strip():
            return _error(400, "MISSING_COMMENT", "comment is mandatory for overrides")
        event = service.set_disposition(alert_id, x_principal, body.disposition, body.comment)
        return {"recorded": True, "seq": event.seq}

    @app.get("/audit")
    def audit_events(from_seq: int = Query(default=1, ge=1), alert_id: Optional[str] = None):
        events = service.audit.events(from_seq=from_seq, alert_id=alert_id)
        views = []
        for event in events:
            views.append(
                AuditEventView(
                    seq=event.seq,
                    timestamp=event.timestamp,
                    kind=event.kind,
                    alert_id=event.alert_id,
                    principal=event.principal,
                    payload=json.loads(event.payload),
                    payload_hash=event.payload_hash,
                    prev_hash=event.prev_hash,
                ).model_dump()
            )
        return {"events": views}

    @app.get("/metrics/{variant}")
    def metrics(variant: str):
        if service.split is None:
            return _error(400, "NO_SPLIT", "metrics need a dataset split")
        if variant not in metrics_cache:
            metrics_cache[variant] = run_experiment(
                service.world, service.split, variant, eval_profile or ExperimentProfile()
            )
        return metrics_cache[variant].to_doc()

    @app.get("/schema/edit-atoms")
    def edit_atom_schema():
        return {"atoms": ATOM_SCHEMA}

    return app
