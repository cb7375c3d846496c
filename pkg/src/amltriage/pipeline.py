"""End-to-end triage orchestration: retrieve -> generate -> verify/repair ->
counterfactual search, with an append-only audit trail of every stage.

Per-alert stages run sequentially and their audit events append in stage
order; distinct alerts may triage concurrently (cross-alert interleaving is
allowed). Disposition writes per alert are mutually exclusive. The system
recommendation is never overwritten by a human override; both coexist in the
audit trail.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .audit import AuditLog
from .config import PipelineConfig, apply_overrides
from .counterfactual import (
    CounterfactualEdit,
    ValidatedCounterfactual,
    find_counterfactuals,
    validate_counterfactual,
)
from .evidence import AclContext, EvidenceIndex, build_index, retrieve_bundle
from .model import DISPOSITIONS, EvidenceBundle, canonical_json_bytes, canonical_parse
from .simgen import DatasetSplit, World, build_case_memory, build_context
from .verifier import CorpusView, RepairTrace, verify_repair_loop


class UnknownAlertError(KeyError):
    pass


class AlertNotTriagedError(KeyError):
    pass


@dataclass
class TriageOutcome:
    alert_id: str
    bundle: EvidenceBundle
    trace: RepairTrace
    counterfactuals: list[ValidatedCounterfactual]
    status: str  # verified | escalate_to_human | light_tier
    version: int = 1

    @property
    def record(self):
        return self.trace.final_record

    def to_doc(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "status": self.status,
            "version": self.version,
            "record": self.record.to_doc(),
            "verification": self.trace.final_report.to_doc(),
            "attempts": len(self.trace.attempts),
            "iterations_used": self.trace.iterations_used,
            "counterfactuals": [v.to_doc() for v in self.counterfactuals],
            "bundle": self.bundle.to_doc(),
        }


@dataclass
class Override:
    principal: str
    disposition: str
    comment: str
    seq: int


class TriageService:
    """Holds one world + split + config; serves the HTTP API and the CLI."""

    def __init__(
        self,
        world: World,
        split: DatasetSplit | None = None,
        config: PipelineConfig | None = None,
        audit_path: str | None = None,
        index: EvidenceIndex | None = None,
    ):
        self.world = world
        self.split = split
        self.config = config or PipelineConfig()
        corpus = list(world.evidence_corpus)
        if split is not None and not any(i.source_type == "case" for i in corpus):
            corpus += build_case_memory(split, world)
        self.index = index or build_index(corpus)
        self.corpus_view = CorpusView(self.index, world.entity_lexicon())
        self.audit = AuditLog(audit_path)
        self.outcomes: dict[str, TriageOutcome] = {}
        self.overrides: dict[str, list[Override]] = {}
        self._alert_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- helpers -------------------------------------------------------------

    def _lock_for(self, alert_id: str) -> threading.Lock:
        with self._locks_guard:
            if alert_id not in self._alert_locks:
                self._alert_locks[alert_id] = threading.Lock()
            return self._alert_locks[alert_id]

    def alert_ids(self, split_name: str | None = None) -> list[str]:
        if split_name is None:
            return [a.id for a in self.world.alerts]
        if self.split is None:
            raise ValueError("no split loaded")
        return list(
            {
                "train": self.split.train_alert_ids,
                "val": self.split.val_alert_ids,
                "test": self.split.test_alert_ids,
            }[split_name]
        )

    def get_alert(self, alert_id: str):
        try:
            return self.world.alert(alert_id)
        except KeyError as exc:
            raise UnknownAlertError(alert_id) from exc

    def get_context(self, alert_id: str):
        self.get_alert(alert_id)
        return build_context(self.world, alert_id)

    def build_bundle(self, alert_id: str, config: PipelineConfig | None = None, principal: str = "system") -> EvidenceBundle:
        config = config or self.config
        context = self.get_context(alert_id)
        acl = AclContext(principal=principal, clearance=config.clearance_for(principal))
        return retrieve_bundle(self.index, context, acl, config.quotas, config.k_total)

    # -- pipeline ------------------------------------------------------------

    def triage_alert(
        self,
        alert_id: str,
        overrides: dict | None = None,
        principal: str = "system",
    ) -> TriageOutcome:
        config = apply_overrides(self.config, overrides)
        context = self.get_context(alert_id)
        with self._lock_for(alert_id):
            bundle = self.build_bundle(alert_id, config, principal)
            self.audit.append("bundle_built", alert_id, principal, bundle.to_doc())

            trace = verify_repair_loop(
                context, bundle, config.generator, self.corpus_view, max_iters=config.max_iters
            )
            for attempt_no, attempt in enumerate(trace.attempts, start=1):
                self.audit.append(
                    "generation_attempt",
                    alert_id,
                    principal,
                    {"attempt": attempt_no, "record": attempt.record.to_doc(), "feedback": list(attempt.feedback)},
                )
                self.audit.append(
                    "verification_report", alert_id, principal, attempt.report.to_doc()
                )

            light_tier = False
            if config.light_score_threshold is not None:
                rule_score = context.alert.trigger.max_score()
                light_tier = rule_score < config.light_score_threshold

            counterfactuals: list[ValidatedCounterfactual] = []
            if not light_tier:
                search = find_counterfactuals(
                    trace.final_record,
                    context,
                    bundle,
                    config.generator,
                    self.corpus_view,
                    budget=config.cf_budget,
                    max_accepted=config.cf_max_accepted,
                    max_proposals=config.cf_max_proposals,
                    table=config.validator,
                )
                counterfactuals = search.accepted
                for validated in counterfactuals:
                    self.audit.append(
                        "counterfactual_validated", alert_id, principal, validated.to_doc()
                    )

            if trace.final_status != "verified":
                status = "escalate_to_human"
            elif light_tier:
                status = "light_tier"
            else:
                status = "verified"

            previous = self.outcomes.get(alert_id)
            outcome = TriageOutcome(
                alert_id=alert_id,
                bundle=bundle,
                trace=trace,
                counterfactuals=counterfactuals,
                status=status,
                version=(previous.version + 1) if previous else 1,
            )
            self.audit.append(
                "disposition_set",
                alert_id,
                principal,
                {
                    "disposition": trace.final_record.disposition,
                    "confidence": trace.final_record.confidence,
                    "status": status,
                    "version": outcome.version,
                },
            )
            self.outcomes[alert_id] = outcome
            return outcome

    def triage_all(
        self, alert_ids: list[str] | None = None, overrides: dict | None = None, principal: str = "system"
    ) -> dict[str, TriageOutcome]:
        out = {}
        for alert_id in alert_ids or [a.id for a in self.world.alerts]:
            out[alert_id] = self.triage_alert(alert_id, overrides=overrides, principal=principal)
        return out

    def what_if(
        self,
        alert_id: str,
        edit: CounterfactualEdit | None,
        principal: str = "system",
    ):
        """Explicit counterfactual (or a fresh bounded search when no edit given)."""
        outcome = self.outcomes.get(alert_id)
        if outcome is None:
            raise AlertNotTriagedError(alert_id)
        context = self.get_context(alert_id)
        if edit is None:
            search = find_counterfactuals(
                outcome.record,
                context,
                outcome.bundle,
                self.config.generator,
                self.corpus_view,
                budget=self.config.cf_budget,
                max_accepted=self.config.cf_max_accepted,
                max_proposals=self.config.cf_max_proposals,
                table=self.config.validator,
            )
            for validated in search.accepted:
                self.audit.append("counterfactual_validated", alert_id, principal, validated.to_doc())
            return search.accepted
        validated = validate_counterfactual(
            edit,
            context,
            outcome.bundle,
            self.config.generator,
            self.corpus_view,
            table=self.config.validator,
        )
        self.audit.append("counterfactual_validated", alert_id, principal, validated.to_doc())
        return validated

    def set_disposition(self, alert_id: str, principal: str, disposition: str, comment: str):
        """Record a human override; the system recommendation stays untouched."""
        if not principal:
            raise ValueError("principal is required")
        if disposition not in DISPOSITIONS:
            raise ValueError(f"unknown disposition {disposition}")
        if not comment or not comment.strip():
            raise ValueError("comment is mandatory for overrides")
        if alert_id not in self.outcomes:
            raise AlertNotTriagedError(alert_id)
        with self._lock_for(alert_id):
            event = self.audit.append(
                "override_set",
                alert_id,
                principal,
                {"disposition": disposition, "comment": comment},
            )
            override = Override(principal=principal, disposition=disposition, comment=comment, seq=event.seq)
            self.overrides.setdefault(alert_id, []).append(override)
            return event

    # -- snapshots -----------------------------------------------------------

    def outcome_doc(self, alert_id: str) -> dict:
        outcome = self.outcomes.get(alert_id)
        if outcome is None:
            raise AlertNotTriagedError(alert_id)
        doc = outcome.to_doc()
        doc["overrides"] = [
            {"principal": o.principal, "disposition": o.disposition, "comment": o.comment, "seq": o.seq}
            for o in self.overrides.get(alert_id, [])
        ]
        return doc

    def save_outcomes(self, path: str) -> None:
        docs = {alert_id: self.outcome_doc(alert_id) for alert_id in sorted(self.outcomes)}
        with open(path, "wb") as fh:
            fh.write(canonical_json_bytes(docs) + b"\n")

    @staticmethod
    def load_outcome_docs(path: str) -> dict:
        with open(path, "rb") as fh:
            return canonical_parse(fh.read())
