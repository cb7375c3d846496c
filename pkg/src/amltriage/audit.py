"""Append-only, hash-chained audit log.

Every event carries the canonical JSON payload of the object it records, the
sha256 of those payload bytes, and a chain hash linking to the previous
event. The chain makes any in-place tampering detectable; truncation of the
tail is detectable only via external checkpointing (documented limitation).
Appends serialize through a single lock; events are never mutated or deleted.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass

from .model import canonical_json_bytes

EVENT_KINDS = (
    "bundle_built",
    "generation_attempt",
    "verification_report",
    "counterfactual_validated",
    "disposition_set",
    "override_set",
)

GENESIS_HASH = "0" * 64


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    timestamp: int
    kind: str
    alert_id: str
    principal: str
    payload: bytes  # canonical JSON bytes
    payload_hash: str
    prev_hash: str

    def header_doc(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "alert_id": self.alert_id,
            "principal": self.principal,
            "payload_hash": self.payload_hash,
            "prev_hash": self.prev_hash,
        }

    def chain_hash(self) -> str:
        return hashlib.sha256(canonical_json_bytes(self.header_doc())).hexdigest()

    def to_doc(self) -> dict:
        doc = self.header_doc()
        doc["payload"] = self.payload.decode("utf-8")
        return doc

    @staticmethod
    def from_doc(doc: dict) -> "AuditEvent":
        return AuditEvent(
            seq=int(doc["seq"]),
            timestamp=int(doc["timestamp"]),
            kind=doc["kind"],
            alert_id=doc["alert_id"],
            principal=doc["principal"],
            payload=doc["payload"].encode("utf-8"),
            payload_hash=doc["payload_hash"],
            prev_hash=doc["prev_hash"],
        )


class AuditLog:
    """In-memory chain with optional JSONL persistence."""

    def __init__(self, path: str | None = None):
        self._lock = threading.Lock()
        self._events: list[AuditEvent] = []
        self._path = path
        self._last_hash = GENESIS_HASH
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        event = AuditEvent.from_doc(json.loads(line))
                        self._events.append(event)
                        self._last_hash = event.chain_hash()

    def append(self, kind: str, alert_id: str, principal: str, payload_doc: dict) -> AuditEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown audit event kind {kind}")
        payload = canonical_json_bytes(payload_doc)
        with self._lock:
            event = AuditEvent(
                seq=len(self._events) + 1,
                timestamp=int(time.time()),
                kind=kind,
                alert_id=alert_id,
                principal=principal,
                payload=payload,
                payload_hash=hashlib.sha256(payload).hexdigest(),
                prev_hash=self._last_hash,
            )
            self._events.append(event)
            self._last_hash = event.chain_hash()
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event.to_doc()) + "\n")
        return event

    def events(self, from_seq: int = 1, alert_id: str | None = None) -> list[AuditEvent]:
        with self._lock:
            out = [e for e in self._events if e.seq >= from_seq]
        if alert_id is not None:
            out = [e for e in out if e.alert_id == alert_id]
        return out

    def __len__(self) -> int:
        return len(self._events)


def verify_audit_chain(events: list[AuditEvent]) -> tuple[bool, int | None]:
    """Recompute the hash chain; (True, None) when unbroken, else the first
    broken sequence number. A truncated tail still verifies (chain property)."""
    prev = GENESIS_HASH
    for event in events:
        if hashlib.sha256(event.payload).hexdigest() != event.payload_hash:
            return False, event.seq
        if event.prev_hash != prev:
            return False, event.seq
        prev = event.chain_hash()
    return True, None


def load_events(path: str) -> list[AuditEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(AuditEvent.from_doc(json.loads(line)))
    return events


def replay_final_records(events: list[AuditEvent]) -> dict[str, bytes]:
    """Reconstruct each alert's final record bytes from the log alone.

    The final record of a triage run is the payload of the last
    generation_attempt before that run's disposition_set event.
    """
    last_generation: dict[str, bytes] = {}
    final: dict[str, bytes] = {}
    for event in events:
        if event.kind == "generation_attempt":
            doc = json.loads(event.payload)
            last_generation[event.alert_id] = canonical_json_bytes(doc["record"])
        elif event.kind == "disposition_set" and event.alert_id in last_generation:
            final[event.alert_id] = last_generation[event.alert_id]
    return final
