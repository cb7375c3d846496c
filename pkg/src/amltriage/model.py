"""Shared domain types, schema validation, and canonical serialization.

All types are immutable values after construction and safe to share across
workers. Amounts are integers in currency minor units (cents); timestamps are
integer UTC epoch seconds. The canonical byte format (sorted keys, compact
separators, reals as fixed 4-decimal strings) is the audit-log and
golden-fixture contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

MAX_DOC_DEPTH = 64

SOURCE_TYPES = ("policy", "kyc", "trigger", "transaction", "case")
ACL_TAGS = ("public", "restricted", "confidential")
ACL_ORDER = {"public": 0, "restricted": 1, "confidential": 2}
CHANNELS = ("wire", "cash", "ach", "internal")
ALERT_TYPES = ("structuring", "rapid_movement", "high_risk_counterparty", "fan_in")
DISPOSITIONS = ("dismiss", "monitor", "escalate")
RISK_TIERS = ("low", "medium", "high")
CLAIM_KINDS = ("amount", "timestamp", "count", "threshold_comparison", "entity")
LABELS = ("suspicious", "normal")


def money(minor_units: int) -> str:
    """Render minor units as a currency string, e.g. 1170000 -> '$11,700.00'."""
    units = int(minor_units)
    sign = "-" if units < 0 else ""
    units = abs(units)
    return f"{sign}${units // 100:,}.{units % 100:02d}"


def parse_money(text: str) -> int:
    """Inverse of money(): '$11,700.00' -> 1170000 minor units."""
    cleaned = text.strip().lstrip("$").replace(",", "")
    whole, _, cents = cleaned.partition(".")
    return int(whole) * 100 + (int(cents[:2]) if cents else 0)


def utc_label(epoch_seconds: int) -> str:
    dt = datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc)
    return dt.strftime("%Y-%m-%d %H:%M UTC")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvidenceItem:
    """One retrievable, citable artifact.

    Every structured_fields value is also rendered in canonical_text so
    text-level and field-level checks agree. Rendering conventions: amounts
    (minor-unit ints on *_amount/*_total/threshold paths) via money(),
    timestamps on *_time/window_* paths via utc_label(), counts as plain
    digits, strings in display form (underscores as spaces, case-insensitive).
    """

    id: str
    source_type: str
    effective_time: int
    acl_tag: str
    canonical_text: str
    structured_fields: dict[str, Any] = field(default_factory=dict)
    version: int = 0
    supersedes: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "source_type": self.source_type,
            "effective_time": self.effective_time,
            "acl_tag": self.acl_tag,
            "canonical_text": self.canonical_text,
            "structured_fields": dict(self.structured_fields),
            "version": self.version,
        }
        if self.supersedes is not None:
            doc["supersedes"] = self.supersedes
        return doc

    @staticmethod
    def from_doc(doc: dict) -> "EvidenceItem":
        return EvidenceItem(
            id=doc["id"],
            source_type=doc["source_type"],
            effective_time=int(doc["effective_time"]),
            acl_tag=doc["acl_tag"],
            canonical_text=doc["canonical_text"],
            structured_fields=dict(doc.get("structured_fields", {})),
            version=int(doc.get("version", 0)),
            supersedes=doc.get("supersedes"),
        )


@dataclass(frozen=True)
class Transaction:
    id: str
    timestamp: int
    amount: int
    src_account: str
    dst_account: str
    channel: str
    geography: str

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError(f"{self.id}: amount must be positive")
        if self.src_account == self.dst_account:
            raise ValueError(f"{self.id}: src and dst accounts must differ")

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "timestamp": self.timestamp,
            "amount": self.amount,
            "src_account": self.src_account,
            "dst_account": self.dst_account,
            "channel": self.channel,
            "geography": self.geography,
        }

    @staticmethod
    def from_doc(doc: dict) -> "Transaction":
        return Transaction(
            id=doc["id"],
            timestamp=int(doc["timestamp"]),
            amount=int(doc["amount"]),
            src_account=doc["src_account"],
            dst_account=doc["dst_account"],
            channel=doc["channel"],
            geography=doc["geography"],
        )


@dataclass(frozen=True)
class TriggerMetadata:
    rule_ids: tuple[str, ...]
    rule_scores: dict[str, float]
    thresholds: dict[str, float]

    def __post_init__(self):
        known = set(self.rule_ids)
        for rule in list(self.rule_scores) + list(self.thresholds):
            if rule not in known:
                raise ValueError(f"rule {rule} scored but not listed in rule_ids")

    def max_score(self) -> float:
        return max(self.rule_scores.values()) if self.rule_scores else 0.0

    def to_doc(self) -> dict:
        return {
            "rule_ids": list(self.rule_ids),
            "rule_scores": dict(self.rule_scores),
            "thresholds": dict(self.thresholds),
        }

    @staticmethod
    def from_doc(doc: dict) -> "TriggerMetadata":
        return TriggerMetadata(
            rule_ids=tuple(doc["rule_ids"]),
            rule_scores={k: float(v) for k, v in doc["rule_scores"].items()},
            thresholds={k: float(v) for k, v in doc["thresholds"].items()},
        )


@dataclass(frozen=True)
class Alert:
    id: str
    customer_id: str
    alert_time: int
    window: tuple[int, int]
    trigger: TriggerMetadata
    transaction_ids: tuple[str, ...]
    alert_type: str
    label: Optional[str] = None

    def __post_init__(self):
        t0, t1 = self.window
        if not (t0 <= self.alert_time <= t1):
            raise ValueError(f"{self.id}: alert_time outside window")

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "customer_id": self.customer_id,
            "alert_time": self.alert_time,
            "window": list(self.window),
            "trigger": self.trigger.to_doc(),
            "transaction_ids": list(self.transaction_ids),
            "alert_type": self.alert_type,
        }
        if self.label is not None:
            doc["label"] = self.label
        return doc

    @staticmethod
    def from_doc(doc: dict) -> "Alert":
        return Alert(
            id=doc["id"],
            customer_id=doc["customer_id"],
            alert_time=int(doc["alert_time"]),
            window=(int(doc["window"][0]), int(doc["window"][1])),
            trigger=TriggerMetadata.from_doc(doc["trigger"]),
            transaction_ids=tuple(doc["transaction_ids"]),
            alert_type=doc["alert_type"],
            label=doc.get("label"),
        )


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: str
    customer_type: str
    industry_code: str
    risk_rating: str
    onboarding_time: int
    prior_alert_count: int

    def to_doc(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "customer_type": self.customer_type,
            "industry_code": self.industry_code,
            "risk_rating": self.risk_rating,
            "onboarding_time": self.onboarding_time,
            "prior_alert_count": self.prior_alert_count,
        }


@dataclass(frozen=True)
class AlertContext:
    """An alert plus everything needed to triage it.

    indicators are a pure function of (transactions, customer, window,
    counterparty_risk, structuring_threshold); recomputing them from the facts
    yields identical values.
    """

    alert: Alert
    transactions: tuple[Transaction, ...]
    customer: CustomerProfile
    indicators: dict[str, bool]
    counterparty_risk: dict[str, str]
    structuring_threshold: int

    @property
    def customer_account_id(self) -> str:
        # accounts map 1:1 onto customers by sequence: cus-0007 owns acct-0007
        return self.alert.customer_id.replace("cus-", "acct-", 1)


@dataclass(frozen=True)
class Claim:
    """A machine-checkable factual assertion inside a rationale paragraph.

    amount/count/timestamp claims assert exact equality with the cited item's
    structured field. threshold_comparison claims carry an operator-prefixed
    value ("gt:<minor units>" or "lt:<minor units>") compared against the
    cited item's field (the schema has no separate operator slot). entity
    claims assert the value appears verbatim in the cited item's text.
    """

    kind: str
    value: Any
    evidence_id: str
    field_path: str = ""

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "evidence_id": self.evidence_id,
            "field_path": self.field_path,
        }

    @staticmethod
    def from_doc(doc: dict) -> "Claim":
        return Claim(
            kind=doc["kind"],
            value=doc["value"],
            evidence_id=doc["evidence_id"],
            field_path=doc.get("field_path", ""),
        )


@dataclass(frozen=True)
class RationaleParagraph:
    text: str
    citations: tuple[str, ...]
    claims: tuple[Claim, ...] = ()

    def to_doc(self) -> dict:
        return {
            "text": self.text,
            "citations": list(self.citations),
            "claims": [c.to_doc() for c in self.claims],
        }

    @staticmethod
    def from_doc(doc: dict) -> "RationaleParagraph":
        return RationaleParagraph(
            text=doc["text"],
            citations=tuple(doc["citations"]),
            claims=tuple(Claim.from_doc(c) for c in doc.get("claims", [])),
        )


@dataclass(frozen=True)
class TriageRecord:
    alert_id: str
    disposition: str
    confidence: float
    typologies: tuple[str, ...]
    paragraphs: tuple[RationaleParagraph, ...]
    supporting_ids: tuple[str, ...]
    contradicting_or_missing_ids: tuple[str, ...]
    unknowns: tuple[str, ...]
    next_actions: tuple[str, ...]
    generator_tag: str

    def cited_ids(self) -> list[str]:
        """Distinct cited evidence ids in first-appearance order."""
        seen: list[str] = []
        for para in self.paragraphs:
            for cid in para.citations:
                if cid not in seen:
                    seen.append(cid)
        return seen

    def to_doc(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "disposition": self.disposition,
            "confidence": self.confidence,
            "typologies": list(self.typologies),
            "paragraphs": [p.to_doc() for p in self.paragraphs],
            "supporting_ids": list(self.supporting_ids),
            "contradicting_or_missing_ids": list(self.contradicting_or_missing_ids),
            "unknowns": list(self.unknowns),
            "next_actions": list(self.next_actions),
            "generator_tag": self.generator_tag,
        }

    @staticmethod
    def from_doc(doc: dict) -> "TriageRecord":
        return TriageRecord(
            alert_id=doc["alert_id"],
            disposition=doc["disposition"],
            confidence=float(_parse_real(doc["confidence"])),
            typologies=tuple(doc.get("typologies", [])),
            paragraphs=tuple(RationaleParagraph.from_doc(p) for p in doc["paragraphs"]),
            supporting_ids=tuple(doc.get("supporting_ids", [])),
            contradicting_or_missing_ids=tuple(doc.get("contradicting_or_missing_ids", [])),
            unknowns=tuple(doc.get("unknowns", [])),
            next_actions=tuple(doc.get("next_actions", [])),
            generator_tag=doc.get("generator_tag", ""),
        )


@dataclass(frozen=True)
class EvidenceBundle:
    """The permission-filtered, quota'd, deduplicated set handed to a generator."""

    alert_id: str
    items: tuple[EvidenceItem, ...]
    quota: dict[str, int]
    retrieval_trace: tuple[dict, ...] = ()

    def ids(self) -> set[str]:
        return {item.id for item in self.items}

    def by_type(self, source_type: str) -> list[EvidenceItem]:
        return [i for i in self.items if i.source_type == source_type]

    def get(self, item_id: str) -> Optional[EvidenceItem]:
        for item in self.items:
            if item.id == item_id:
                return item
        return None

    def to_doc(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "items": [i.to_doc() for i in self.items],
            "quota": dict(self.quota),
            "retrieval_trace": [dict(t) for t in self.retrieval_trace],
        }


# ---------------------------------------------------------------------------
# Schema validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemaViolation:
    code: str
    path: str
    detail: str = ""

    def to_doc(self) -> dict:
        return {"code": self.code, "path": self.path, "detail": self.detail}


# Stable violation codes (tests assert these exact strings):
#   MAX_DEPTH_EXCEEDED, NOT_OBJECT, MISSING_FIELD, WRONG_TYPE, BAD_ENUM,
#   CONFIDENCE_RANGE, EMPTY_PARAGRAPHS, UNCITED_PARAGRAPH,
#   CLAIM_CITATION_MISSING, ORPHAN_CITATION, OVERLAPPING_EVIDENCE_SETS


def _doc_depth(value: Any, depth: int = 0) -> int:
    if depth > MAX_DOC_DEPTH:
        return depth
    if isinstance(value, dict):
        return max((_doc_depth(v, depth + 1) for v in value.values()), default=depth)
    if isinstance(value, (list, tuple)):
        return max((_doc_depth(v, depth + 1) for v in value), default=depth)
    return depth


def _parse_real(value: Any) -> Optional[float]:
    """Accept JSON numbers and the canonical fixed 4-decimal string form."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


def validate_record(document: Any) -> list[SchemaViolation]:
    """Check a TriageRecord-shaped document against every schema invariant.

    Total: any structured document terminates with a (possibly empty)
    violation list; nothing raises, including adversarial nesting up to the
    depth cap. Violations are data, not errors.
    """
    if isinstance(document, TriageRecord):
        document = document.to_doc()

    if _doc_depth(document) > MAX_DOC_DEPTH:
        return [SchemaViolation("MAX_DEPTH_EXCEEDED", "$", f"nesting exceeds {MAX_DOC_DEPTH}")]
    if not isinstance(document, dict):
        return [SchemaViolation("NOT_OBJECT", "$", f"expected object, got {type(document).__name__}")]

    out: list[SchemaViolation] = []

    def want(name: str, types: tuple, path: str) -> Any:
        if name not in document:
            out.append(SchemaViolation("MISSING_FIELD", path))
            return None
        value = document[name]
        if types and not isinstance(value, types):
            out.append(SchemaViolation("WRONG_TYPE", path, f"got {type(value).__name__}"))
            return None
        return value

    want("alert_id", (str,), "alert_id")

    disposition = want("disposition", (str,), "disposition")
    if disposition is not None and disposition not in DISPOSITIONS:
        out.append(SchemaViolation("BAD_ENUM", "disposition", disposition))

    if "confidence" not in document:
        out.append(SchemaViolation("MISSING_FIELD", "confidence"))
    else:
        conf = _parse_real(document["confidence"])
        if conf is None:
            out.append(SchemaViolation("WRONG_TYPE", "confidence"))
        elif not (0.0 <= conf <= 1.0):
            out.append(SchemaViolation("CONFIDENCE_RANGE", "confidence", str(conf)))

    typologies = want("typologies", (list,), "typologies")
    if typologies is not None:
        for i, typ in enumerate(typologies):
            if typ not in ALERT_TYPES:
                out.append(SchemaViolation("BAD_ENUM", f"typologies[{i}]", str(typ)))

    for name in ("supporting_ids", "contradicting_or_missing_ids", "unknowns", "next_actions"):
        value = want(name, (list,), name)
        if value is not None:
            for i, entry in enumerate(value):
                if not isinstance(entry, str):
                    out.append(SchemaViolation("WRONG_TYPE", f"{name}[{i}]"))

    want("generator_tag", (str,), "generator_tag")

    supporting = set(document.get("supporting_ids") or []) if isinstance(document.get("supporting_ids"), list) else set()
    contradicting = (
        set(document.get("contradicting_or_missing_ids") or [])
        if isinstance(document.get("contradicting_or_missing_ids"), list)
        else set()
    )
    overlap = supporting & contradicting
    if overlap:
        out.append(
            SchemaViolation(
                "OVERLAPPING_EVIDENCE_SETS",
                "supporting_ids",
                ",".join(sorted(overlap)),
            )
        )

    paragraphs = want("paragraphs", (list,), "paragraphs")
    listed = supporting | contradicting
    if paragraphs is not None:
        if not paragraphs:
            out.append(SchemaViolation("EMPTY_PARAGRAPHS", "paragraphs"))
        for i, para in enumerate(paragraphs):
            path = f"paragraphs[{i}]"
            if not isinstance(para, dict):
                out.append(SchemaViolation("WRONG_TYPE", path))
                continue
            if not isinstance(para.get("text"), str):
                out.append(SchemaViolation("WRONG_TYPE", f"{path}.text"))
            citations = para.get("citations")
            if not isinstance(citations, list):
                out.append(SchemaViolation("WRONG_TYPE", f"{path}.citations"))
                citations = []
            if not citations:
                out.append(SchemaViolation("UNCITED_PARAGRAPH", path))
            cited_here = {c for c in citations if isinstance(c, str)}
            for j, cid in enumerate(citations):
                if not isinstance(cid, str):
                    out.append(SchemaViolation("WRONG_TYPE", f"{path}.citations[{j}]"))
                elif cid not in listed:
                    out.append(SchemaViolation("ORPHAN_CITATION", f"{path}.citations[{j}]", cid))
            claims = para.get("claims", [])
            if not isinstance(claims, list):
                out.append(SchemaViolation("WRONG_TYPE", f"{path}.claims"))
                claims = []
            for j, claim in enumerate(claims):
                cpath = f"{path}.claims[{j}]"
                if not isinstance(claim, dict):
                    out.append(SchemaViolation("WRONG_TYPE", cpath))
                    continue
                if claim.get("kind") not in CLAIM_KINDS:
                    out.append(SchemaViolation("BAD_ENUM", f"{cpath}.kind", str(claim.get("kind"))))
                evidence_id = claim.get("evidence_id")
                if not isinstance(evidence_id, str):
                    out.append(SchemaViolation("WRONG_TYPE", f"{cpath}.evidence_id"))
                elif evidence_id not in cited_here:
                    out.append(
                        SchemaViolation("CLAIM_CITATION_MISSING", f"{cpath}.evidence_id", evidence_id)
                    )

    return out


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def _canonicalize(value: Any, depth: int = 0) -> Any:
    if depth > MAX_DOC_DEPTH:
        raise ValueError("document too deep to canonicalize")
    if isinstance(value, bool) or value is None or isinstance(value, int):
        return value
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        return {str(k): _canonicalize(v, depth + 1) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonicalize(v, depth + 1) for v in value]
    raise ValueError(f"unserializable value of type {type(value).__name__}")


def canonical_json_bytes(doc: Any) -> bytes:
    """Canonical JSON: sorted keys, UTF-8, compact, reals as 4-decimal strings."""
    return json.dumps(
        _canonicalize(doc), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_serialize(record: TriageRecord | dict) -> bytes:
    """Serialize a valid triage record to its canonical byte form.

    Rejects records that fail schema validation; equal records serialize to
    identical bytes regardless of map insertion order.
    """
    violations = validate_record(record)
    if violations:
        codes = ",".join(v.code for v in violations[:5])
        raise ValueError(f"record fails schema validation: {codes}")
    doc = record.to_doc() if isinstance(record, TriageRecord) else record
    return canonical_json_bytes(doc)


def canonical_parse(blob: bytes | str) -> dict:
    if isinstance(blob, bytes):
        blob = blob.decode("utf-8")
    return json.loads(blob)
