"""Triage record generation under the provenance contract.

Three interchangeable generators sit behind one contract:

* reference: deterministic rule/template generator whose dispositions mirror
  the rules validator and whose output always verifies cleanly;
* fault_injection: starts from the reference output and introduces
  hallucination-class defects at configured per-record rates (the measuring
  instrument for the metric suite and the stand-in for an imperfect LLM);
* external: sends the rendered prompt over a pluggable adapter (local socket
  or stdio subprocess) and parses the raw reply.
"""

from __future__ import annotations

import json
import socket
import subprocess
import threading
from dataclasses import dataclass, field, replace

from .indicators import INDICATOR_TO_ALERT_TYPE, active_indicators
from .model import (
    AlertContext,
    Claim,
    EvidenceBundle,
    EvidenceItem,
    RationaleParagraph,
    TriageRecord,
    canonical_json_bytes,
    money,
    utc_label,
    validate_record,
)
from .rng import Stream
from .validator import ValidatorTable, validator_score

FAULT_TYPES = ("fabricated_citation", "numeric_error", "policy_hallucination", "unsupported_entity")

HALLUCINATED_POLICY_SENTENCE = "policy requires escalation within 24 hours per internal mandate."


class AdapterError(Exception):
    """Transport-level failure talking to an external generator; retryable."""

    retryable = True


class GenerationParseError(Exception):
    """The external reply was not a schema-valid triage record."""

    def __init__(self, message: str, offset: int | None = None, violations=None):
        super().__init__(message)
        self.offset = offset
        self.violations = violations or []


@dataclass(frozen=True)
class AdapterSpec:
    transport: str = "socket"  # socket | stdio
    host: str = "127.0.0.1"
    port: int = 0
    command: tuple[str, ...] = ()
    timeout_s: float = 5.0
    max_attempts: int = 3
    max_concurrency: int = 4


_adapter_gates: dict[AdapterSpec, threading.Semaphore] = {}
_adapter_gates_lock = threading.Lock()


def _gate_for(spec: AdapterSpec) -> threading.Semaphore:
    with _adapter_gates_lock:
        if spec not in _adapter_gates:
            _adapter_gates[spec] = threading.Semaphore(max(1, spec.max_concurrency))
        return _adapter_gates[spec]


@dataclass(frozen=True)
class GeneratorConfig:
    mode: str = "reference"  # reference | fault_injection | external
    p_fabricated_citation: float = 0.0
    p_numeric_error: float = 0.0
    p_policy_hallucination: float = 0.0
    p_unsupported_entity: float = 0.0
    fault_seed: int = 0
    heed_feedback: bool = True
    heed_probability: float = 1.0
    llm_only: bool = False
    fault_entity_pool: tuple[str, ...] = ()
    external: AdapterSpec | None = None
    validator: ValidatorTable = field(default_factory=ValidatorTable)

    def __post_init__(self):
        for p in (
            self.p_fabricated_citation,
            self.p_numeric_error,
            self.p_policy_hallucination,
            self.p_unsupported_entity,
            self.heed_probability,
        ):
            if not (0.0 <= p <= 1.0):
                raise ValueError("rates must be in [0, 1]")

    def to_doc(self) -> dict:
        doc = {
            "mode": self.mode,
            "p_fabricated_citation": self.p_fabricated_citation,
            "p_numeric_error": self.p_numeric_error,
            "p_policy_hallucination": self.p_policy_hallucination,
            "p_unsupported_entity": self.p_unsupported_entity,
            "fault_seed": self.fault_seed,
            "heed_feedback": self.heed_feedback,
            "heed_probability": self.heed_probability,
            "llm_only": self.llm_only,
            "fault_entity_pool": list(self.fault_entity_pool),
        }
        if self.external is not None:
            doc["external"] = {
                "transport": self.external.transport,
                "host": self.external.host,
                "port": self.external.port,
                "command": list(self.external.command),
                "timeout_s": self.external.timeout_s,
                "max_attempts": self.external.max_attempts,
                "max_concurrency": self.external.max_concurrency,
            }
        return doc


@dataclass(frozen=True)
class PromptDocument:
    alert_summary: str
    evidence_blocks: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]
    instructions: str
    feedback: tuple[str, ...]

    def to_doc(self) -> dict:
        return {
            "alert_summary": self.alert_summary,
            "evidence_blocks": [
                {"source_type": st, "entries": [{"id": i, "text": t} for i, t in entries]}
                for st, entries in self.evidence_blocks
            ],
            "instructions": self.instructions,
            "feedback": list(self.feedback),
        }

    def entry_count(self) -> int:
        return sum(len(entries) for _, entries in self.evidence_blocks)


_INSTRUCTIONS = (
    "Produce a structured triage record: disposition (dismiss|monitor|escalate), "
    "confidence in [0,1], ranked typologies, rationale paragraphs each citing at "
    "least one evidence id from the blocks above, supporting and contradicting/"
    "missing evidence id lists, explicit unknowns, and recommended next actions. "
    "Reference only the evidence ids supplied."
)

_BLOCK_ORDER = ("policy", "kyc", "trigger", "transaction", "case")


def render_prompt(
    context: AlertContext, bundle: EvidenceBundle, feedback: list[str] | None = None
) -> PromptDocument:
    """Deterministic prompt rendering: labeled, id-prefixed evidence blocks."""
    if bundle.alert_id != context.alert.id:
        raise ValueError(f"bundle for {bundle.alert_id} does not match alert {context.alert.id}")
    alert = context.alert
    summary = (
        f"Alert {alert.id} ({alert.alert_type.replace('_', ' ')}) for customer "
        f"{alert.customer_id}: {len(context.transactions)} transactions between "
        f"{utc_label(alert.window[0])} and {utc_label(alert.window[1])}, rules "
        f"{', '.join(alert.trigger.rule_ids)}."
    )
    blocks = []
    for source_type in _BLOCK_ORDER:
        entries = tuple(
            (item.id, item.canonical_text)
            for item in sorted(bundle.by_type(source_type), key=lambda i: i.id)
        )
        blocks.append((source_type, entries))
    return PromptDocument(
        alert_summary=summary,
        evidence_blocks=tuple(blocks),
        instructions=_INSTRUCTIONS,
        feedback=tuple(feedback or ()),
    )


# ---------------------------------------------------------------------------
# Reference generator
# ---------------------------------------------------------------------------


def _find(bundle: EvidenceBundle, source_type: str, **fields) -> EvidenceItem | None:
    best = None
    for item in bundle.by_type(source_type):
        if all(item.structured_fields.get(k) == v for k, v in fields.items()):
            if best is None or item.version > best.version or (
                item.version == best.version and item.id < best.id
            ):
                best = item
    return best


_MISSING_ACTION = "request missing information"
_LOOKBACK_ACTION = "expand lookback window"


def reference_record(
    context: AlertContext, bundle: EvidenceBundle, table: ValidatorTable | None = None, tag: str = "reference"
) -> TriageRecord:
    """Deterministic rule/template generation, decision-consistent with the validator."""
    table = table or ValidatorTable()
    alert = context.alert
    score, disposition = validator_score(context, table)
    active = active_indicators(context.indicators)

    trigger = _find(bundle, "trigger", alert_id=alert.id) or _find(bundle, "trigger")
    slice_item = _find(bundle, "transaction", alert_id=alert.id) or _find(bundle, "transaction")
    kyc = _find(bundle, "kyc", customer_id=alert.customer_id) or _find(bundle, "kyc")

    def policy_for(typology: str):
        return _find(bundle, "policy", typology=typology)

    unknowns: list[str] = []
    contradicting: list[str] = []

    conflict = False
    if trigger is not None and slice_item is not None:
        t_total = trigger.structured_fields.get("total_amount")
        s_total = slice_item.structured_fields.get("total_amount")
        if t_total is not None and s_total is not None and t_total != s_total:
            conflict = True
            unknowns.append(
                f"conflicting total amount between {trigger.id} ({money(t_total)}) and "
                f"{slice_item.id} ({money(s_total)})"
            )
            contradicting.append(trigger.id)

    paragraphs: list[RationaleParagraph] = []

    summary_citations = [i.id for i in (trigger, slice_item) if i is not None]
    summary_claims: list[Claim] = []
    if conflict:
        summary_text = (
            f"Alert {alert.id} flagged {len(context.transactions)} transactions for customer "
            f"{alert.customer_id}; the totals stated by {trigger.id} and {slice_item.id} "
            "conflict and the amount is under review."
        )
        if slice_item is not None:
            summary_claims.append(
                Claim("count", slice_item.structured_fields["tx_count"], slice_item.id, "tx_count")
            )
    else:
        source = slice_item or trigger
        if source is not None and source.structured_fields.get("total_amount") is not None:
            total = source.structured_fields["total_amount"]
            summary_text = (
                f"Alert {alert.id} flagged {len(context.transactions)} transactions totaling "
                f"{money(total)} for customer {alert.customer_id} between "
                f"{utc_label(alert.window[0])} and {utc_label(alert.window[1])}."
            )
            summary_claims.append(Claim("amount", total, source.id, "total_amount"))
            if source.structured_fields.get("tx_count") is not None:
                summary_claims.append(
                    Claim("count", source.structured_fields["tx_count"], source.id, "tx_count")
                )
        else:
            summary_text = (
                f"Alert {alert.id} flagged {len(context.transactions)} transactions for customer "
                f"{alert.customer_id} between {utc_label(alert.window[0])} and "
                f"{utc_label(alert.window[1])}."
            )
    if not active:
        summary_text += " No suspicious typology indicators identified; routine activity consistent with profile."
    paragraphs.append(
        RationaleParagraph(text=summary_text, citations=tuple(summary_citations), claims=tuple(summary_claims))
    )

    def note_missing(indicator: str, what: str) -> None:
        unknowns.append(f"corroborating evidence missing for {indicator}: {what}")

    for indicator in active:
        if indicator == "structuring_pattern":
            policy = policy_for("structuring")
            if policy is None or slice_item is None:
                note_missing(indicator, "structuring guidance or transaction slice not in bundle")
                continue
            threshold = policy.structured_fields.get("threshold", context.structuring_threshold)
            k = slice_item.structured_fields["cash_deposit_count"]
            total = slice_item.structured_fields["cash_deposit_total"]
            citations = [policy.id, slice_item.id]
            claims = [
                Claim("count", k, slice_item.id, "cash_deposit_count"),
                Claim("amount", total, slice_item.id, "cash_deposit_total"),
            ]
            if trigger is not None and trigger.structured_fields.get("amount_threshold") is not None:
                citations.append(trigger.id)
                claims.append(Claim("threshold_comparison", f"gt:{total}", trigger.id, "amount_threshold"))
            text = (
                f"Structuring pattern (structuring_pattern): {k} cash deposits each below the "
                f"{money(threshold)} reporting limit, totaling {money(total)} within a 72 hour span."
            )
            paragraphs.append(RationaleParagraph(text, tuple(citations), tuple(claims)))
        elif indicator == "rapid_movement":
            policy = policy_for("rapid_movement")
            if policy is None or slice_item is None:
                note_missing(indicator, "rapid movement guidance or transaction slice not in bundle")
                continue
            m = slice_item.structured_fields["max_chain_length"]
            text = (
                f"Rapid movement (rapid_movement): funds hopped through {m} consecutive transfers "
                "within a 48 hour window, each hop forwarding most of the received amount onward."
            )
            claims = [Claim("count", m, slice_item.id, "max_chain_length")]
            paragraphs.append(RationaleParagraph(text, (policy.id, slice_item.id), tuple(claims)))
        elif indicator == "high_risk_counterparty":
            policy = policy_for("high_risk_counterparty")
            if policy is None or slice_item is None:
                note_missing(indicator, "high-risk counterparty guidance or transaction slice not in bundle")
                continue
            wires: dict[str, int] = {}
            for tx in context.transactions:
                if tx.channel == "wire" and context.counterparty_risk.get(tx.dst_account) == "high":
                    wires[tx.dst_account] = wires.get(tx.dst_account, 0) + 1
            target = sorted(wires, key=lambda a: (-wires[a], a))[0] if wires else "unknown"
            w = slice_item.structured_fields["high_risk_wire_count"]
            text = (
                f"High-risk counterparty (high_risk_counterparty): {w} wire transfers to "
                f"counterparty {target} rated high risk in a designated jurisdiction."
            )
            claims = [
                Claim("count", w, slice_item.id, "high_risk_wire_count"),
                Claim("entity", target, slice_item.id, ""),
            ]
            paragraphs.append(RationaleParagraph(text, (policy.id, slice_item.id), tuple(claims)))
        elif indicator == "fan_in":
            policy = policy_for("fan_in")
            if policy is None or slice_item is None:
                note_missing(indicator, "fan-in guidance or transaction slice not in bundle")
                continue
            d = slice_item.structured_fields["max_distinct_inflow_sources_7d"]
            text = (
                f"Fan-in collection (fan_in): inflows from {d} distinct sources reached one "
                "account inside seven days before an outbound consolidating transfer."
            )
            claims = [Claim("count", d, slice_item.id, "max_distinct_inflow_sources_7d")]
            paragraphs.append(RationaleParagraph(text, (policy.id, slice_item.id), tuple(claims)))
        elif indicator == "prior_alerts_ge_2":
            policy = policy_for("general")
            if policy is None or kyc is None:
                note_missing(indicator, "monitoring guidance or customer profile not in bundle")
                continue
            text = (
                f"Repeat-alert customer (prior_alerts_ge_2): customer {alert.customer_id} has "
                "prior alerts on file and dispositions to review. Heightened scrutiny applies "
                "per monitoring guidance."
            )
            claims = [
                Claim("count", kyc.structured_fields["prior_alert_count"], kyc.id, "prior_alert_count"),
                Claim("entity", alert.customer_id, kyc.id, ""),
            ]
            paragraphs.append(RationaleParagraph(text, (policy.id, kyc.id), tuple(claims)))

    if kyc is None:
        unknowns.append(f"customer profile evidence absent from bundle for {alert.customer_id}")

    next_actions: list[str] = []
    if any("missing" in u or "absent" in u or "conflicting" in u for u in unknowns):
        next_actions.append(_MISSING_ACTION)
    if unknowns:
        next_actions.append(_LOOKBACK_ACTION)

    cited: list[str] = []
    for para in paragraphs:
        for cid in para.citations:
            if cid not in cited:
                cited.append(cid)
    supporting = tuple(c for c in cited if c not in contradicting)

    typologies = sorted(
        (i for i in active if i in INDICATOR_TO_ALERT_TYPE),
        key=lambda i: (-table.weights.get(i, 0.0), i),
    )
    return TriageRecord(
        alert_id=alert.id,
        disposition=disposition,
        confidence=score,
        typologies=tuple(INDICATOR_TO_ALERT_TYPE[i] for i in typologies),
        paragraphs=tuple(paragraphs),
        supporting_ids=supporting,
        contradicting_or_missing_ids=tuple(c for c in contradicting if c in cited),
        unknowns=tuple(unknowns),
        next_actions=tuple(next_actions),
        generator_tag=tag,
    )


# ---------------------------------------------------------------------------
# Fault-injection generator
# ---------------------------------------------------------------------------


def _recompute_evidence_sets(record: TriageRecord) -> TriageRecord:
    cited: list[str] = []
    for para in record.paragraphs:
        for cid in para.citations:
            if cid not in cited:
                cited.append(cid)
    contradicting = tuple(c for c in record.contradicting_or_missing_ids if c in cited)
    supporting = tuple(c for c in cited if c not in contradicting)
    return replace(record, supporting_ids=supporting, contradicting_or_missing_ids=contradicting)


def _fault_fabricate_citations(record: TriageRecord, bundle: EvidenceBundle) -> TriageRecord:
    """Replace every citation with ids outside the bundle (fabrication fault).

    Rewriting all of them keeps the per-record fault rate and the pooled
    per-citation invalidity rate equal to the configured probability, so one
    dial calibrates both views of citation validity.
    """
    fake_for: dict[str, str] = {}

    def fake_id(real: str, n: int) -> str:
        return f"ev-policy-99{n:03d}"

    paragraphs = []
    counter = 0
    for para in record.paragraphs:
        new_citations = []
        if not para.citations:
            counter += 1
            new_citations = [fake_id("", counter)]
        else:
            for cid in para.citations:
                if cid not in fake_for:
                    counter += 1
                    fake_for[cid] = fake_id(cid, counter)
                new_citations.append(fake_for[cid])
        new_claims = tuple(
            replace(claim, evidence_id=fake_for.get(claim.evidence_id, claim.evidence_id))
            for claim in para.claims
        )
        paragraphs.append(replace(para, citations=tuple(new_citations), claims=new_claims))
    return _recompute_evidence_sets(replace(record, paragraphs=tuple(paragraphs)))


def _fault_numeric(record: TriageRecord, context: AlertContext, rng: Stream) -> TriageRecord:
    """Perturb one claim value by a nonzero delta (or plant a wrong total in text)."""
    for p_idx, para in enumerate(record.paragraphs):
        for c_idx, claim in enumerate(para.claims):
            if claim.kind in ("amount", "count", "timestamp"):
                if claim.kind == "amount":
                    delta = rng.randint(1, 99) * 100
                elif claim.kind == "count":
                    delta = rng.randint(1, 3)
                else:
                    delta = rng.randint(1, 48) * 3600
                new_claim = replace(claim, value=claim.value + delta)
                claims = list(para.claims)
                claims[c_idx] = new_claim
                paragraphs = list(record.paragraphs)
                paragraphs[p_idx] = replace(para, claims=tuple(claims))
                return replace(record, paragraphs=tuple(paragraphs))
    # no structured claims (e.g. llm_only): assert a wrong total in plain text
    total = sum(t.amount for t in context.transactions)
    wrong = total + rng.randint(1, 99) * 100
    para = record.paragraphs[0]
    paragraphs = list(record.paragraphs)
    paragraphs[0] = replace(para, text=para.text + f" Total flagged amount {money(wrong)}.")
    return replace(record, paragraphs=tuple(paragraphs))


def _fault_policy_hallucination(record: TriageRecord, bundle: EvidenceBundle) -> TriageRecord:
    """Insert a paragraph citing a real policy id but asserting text absent from it."""
    in_bundle = sorted(i.id for i in bundle.by_type("policy"))
    policy_id = in_bundle[0] if in_bundle else "ev-policy-1"
    para = RationaleParagraph(
        text=HALLUCINATED_POLICY_SENTENCE.capitalize(),
        citations=(policy_id,),
        claims=(),
    )
    return _recompute_evidence_sets(replace(record, paragraphs=record.paragraphs + (para,)))


def _fault_unsupported_entity(
    record: TriageRecord, bundle: EvidenceBundle, pool: tuple[str, ...]
) -> TriageRecord:
    """Name an entity that appears in no cited evidence (in the summary paragraph,
    which cites no policy, so only the entity check can fire)."""
    cited_texts = [
        item.canonical_text for item in bundle.items if item.id in set(record.cited_ids())
    ]
    entity = None
    for candidate in pool or ("acct-0001", "acct-0002", "acct-0003"):
        if not any(candidate in text for text in cited_texts):
            entity = candidate
            break
    if entity is None:
        return record
    para = record.paragraphs[0]
    paragraphs = list(record.paragraphs)
    paragraphs[0] = replace(para, text=para.text + f" Counterparty {entity} also transacted.")
    return replace(record, paragraphs=tuple(paragraphs))


def _fault_record(
    context: AlertContext,
    bundle: EvidenceBundle,
    config: GeneratorConfig,
    feedback: list[str],
) -> TriageRecord:
    record = reference_record(context, bundle, config.validator, tag="fault_injection")
    alert_id = context.alert.id
    rates = {
        "fabricated_citation": config.p_fabricated_citation,
        "numeric_error": config.p_numeric_error,
        "policy_hallucination": config.p_policy_hallucination,
        "unsupported_entity": config.p_unsupported_entity,
    }
    for fault in FAULT_TYPES:
        draw = Stream(config.fault_seed, "fault", alert_id, fault)
        if not draw.bernoulli(rates[fault]):
            continue
        if feedback and config.heed_feedback:
            heed = Stream(config.fault_seed, "heed", alert_id, fault)
            if any(heed.bernoulli(config.heed_probability) for _ in range(len(feedback))):
                continue  # fault corrected after feedback
        if fault == "fabricated_citation":
            record = _fault_fabricate_citations(record, bundle)
        elif fault == "numeric_error":
            record = _fault_numeric(record, context, draw.substream("delta"))
        elif fault == "policy_hallucination":
            record = _fault_policy_hallucination(record, bundle)
        elif fault == "unsupported_entity":
            record = _fault_unsupported_entity(record, bundle, config.fault_entity_pool)
    return record


# ---------------------------------------------------------------------------
# External adapter
# ---------------------------------------------------------------------------


def call_adapter(spec: AdapterSpec, prompt: PromptDocument) -> str:
    """Request/reply over a newline-delimited channel; opaque text reply.
    In-flight calls per adapter are capped at spec.max_concurrency."""
    with _gate_for(spec):
        return _call_adapter_once_gated(spec, prompt)


def _call_adapter_once_gated(spec: AdapterSpec, prompt: PromptDocument) -> str:
    request = canonical_json_bytes(prompt.to_doc()) + b"\n"
    last_error: Exception | None = None
    for _ in range(max(1, spec.max_attempts)):
        try:
            if spec.transport == "socket":
                with socket.create_connection((spec.host, spec.port), timeout=spec.timeout_s) as conn:
                    conn.settimeout(spec.timeout_s)
                    conn.sendall(request)
                    chunks = []
                    while True:
                        chunk = conn.recv(65536)
                        if not chunk:
                            break
                        chunks.append(chunk)
                        if b"\n" in chunk:
                            break
                    raw = b"".join(chunks)
                    if not raw:
                        raise AdapterError("empty reply from adapter")
                    return raw.split(b"\n", 1)[0].decode("utf-8")
            elif spec.transport == "stdio":
                proc = subprocess.run(
                    list(spec.command),
                    input=request,
                    stdout=subprocess.PIPE,
                    timeout=spec.timeout_s,
                )
                if not proc.stdout:
                    raise AdapterError("empty reply from adapter subprocess")
                return proc.stdout.split(b"\n", 1)[0].decode("utf-8")
            else:
                raise ValueError(f"unknown transport {spec.transport}")
        except (OSError, subprocess.TimeoutExpired, UnicodeDecodeError) as exc:
            last_error = exc
            continue
    raise AdapterError(f"adapter unreachable after {spec.max_attempts} attempts: {last_error}")


def parse_external_reply(reply: str) -> TriageRecord:
    try:
        doc = json.loads(reply)
    except json.JSONDecodeError as exc:
        raise GenerationParseError(f"unparseable reply: {exc.msg}", offset=exc.pos) from exc
    violations = validate_record(doc)
    if violations:
        raise GenerationParseError(
            f"reply violates the output schema: {violations[0].code} at {violations[0].path}",
            violations=violations,
        )
    return TriageRecord.from_doc(doc)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def generate(
    context: AlertContext,
    bundle: EvidenceBundle,
    config: GeneratorConfig,
    feedback: list[str] | None = None,
) -> TriageRecord:
    """Produce a triage record for (context, bundle) under the configured mode.

    reference and fault_injection are pure functions of their arguments;
    external sends the prompt over the adapter and surfaces schema violations
    as GenerationParseError (distinct from verification failure).
    """
    feedback = list(feedback or ())
    if config.llm_only:
        bundle = EvidenceBundle(alert_id=bundle.alert_id, items=(), quota=dict(bundle.quota))
    if config.mode == "reference":
        tag = "reference:llm_only" if config.llm_only else "reference"
        return reference_record(context, bundle, config.validator, tag=tag)
    if config.mode == "fault_injection":
        return _fault_record(context, bundle, config, feedback)
    if config.mode == "external":
        if config.external is None:
            raise ValueError("external mode needs an AdapterSpec")
        prompt = render_prompt(context, bundle, feedback)
        reply = call_adapter(config.external, prompt)
        return parse_external_reply(reply)
    raise ValueError(f"unknown generator mode {config.mode}")
