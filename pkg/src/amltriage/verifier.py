"""Provenance and consistency verification of triage records, plus the
bounded verify-repair loop.

Checks run in a fixed order so reports and repair feedback are byte-stable:
fabricated citations, per-paragraph citation rule, orphan citations, claim
consistency (with a currency-regex fallback over paragraph text), entity
support against the corpus lexicon, and policy token-support. All findings
are report data, never exceptions; verify does not mutate the record.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .evidence import EvidenceIndex, tokenize
from .model import (
    AlertContext,
    EvidenceBundle,
    EvidenceItem,
    TriageRecord,
    parse_money,
)
from .triage import GeneratorConfig, generate

VIOLATION_CODES = (
    "FABRICATED_CITATION",
    "UNCITED_PARAGRAPH",
    "NUMERIC_MISMATCH",
    "TEMPORAL_MISMATCH",
    "THRESHOLD_MISMATCH",
    "UNSUPPORTED_ASSERTION",
    "POLICY_HALLUCINATION",
    "ORPHAN_CITATION",
)

STOPWORDS = frozenset(
    """a an and are as at be been but by for from had has have if in into is it its may
    must no not of on or per should such than that the their then these this those to
    under was when where while with within through one two three four five six seven
    eight nine ten also again against about above before after during between""".split()
)

MONEY_RE = re.compile(r"\$\d[\d,]*\.\d{2}")
ENTITY_RE = re.compile(r"\b(?:acct|cus)-\d+\b")
SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")

DISTINCTIVE_DF_LIMIT = 0.5  # a token is distinctive when df < 50% of the corpus


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str = ""
    offending_value: object = None
    expected_value: object = None

    def to_doc(self) -> dict:
        return {
            "code": self.code,
            "path": self.path,
            "detail": self.detail,
            "offending_value": self.offending_value,
            "expected_value": self.expected_value,
        }


@dataclass(frozen=True)
class VerificationReport:
    record_id: str
    violations: tuple[Violation, ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_doc(self) -> dict:
        return {
            "record_id": self.record_id,
            "passed": self.passed,
            "violations": [v.to_doc() for v in self.violations],
        }


class CorpusView:
    """What the verifier knows beyond the bundle: the policy corpus, corpus
    document frequencies, and the closed-world entity lexicon."""

    def __init__(self, index: EvidenceIndex, lexicon: set[str]):
        self.index = index
        self.lexicon = frozenset(lexicon)

    @staticmethod
    def from_world(world, index: EvidenceIndex | None = None) -> "CorpusView":
        from .evidence import build_index

        return CorpusView(index or build_index(world.evidence_corpus), world.entity_lexicon())

    def item(self, item_id: str) -> EvidenceItem | None:
        return self.index.items.get(item_id)

    def is_distinctive(self, token: str) -> bool:
        if token in STOPWORDS:
            return False
        n = max(1, self.index.doc_count)
        return self.index.doc_freq.get(token, 0) / n < DISTINCTIVE_DF_LIMIT


# ---------------------------------------------------------------------------
# Claim checking (shared with the metrics suite)
# ---------------------------------------------------------------------------


def check_claim(claim, item: EvidenceItem) -> Violation | None:
    """None when the claim holds against the cited item."""
    fields = item.structured_fields
    if claim.kind in ("amount", "count"):
        expected = fields.get(claim.field_path)
        if expected != claim.value:
            return Violation(
                "NUMERIC_MISMATCH",
                "",
                f"field {claim.field_path} of {item.id}",
                claim.value,
                expected,
            )
        return None
    if claim.kind == "timestamp":
        expected = fields.get(claim.field_path)
        if expected != claim.value:
            return Violation(
                "TEMPORAL_MISMATCH",
                "",
                f"field {claim.field_path} of {item.id}",
                claim.value,
                expected,
            )
        return None
    if claim.kind == "threshold_comparison":
        raw = str(claim.value)
        op, _, amount_text = raw.partition(":")
        try:
            amount = int(amount_text)
        except ValueError:
            return Violation("THRESHOLD_MISMATCH", "", f"malformed comparison {raw!r}", claim.value, None)
        expected = fields.get(claim.field_path)
        if not isinstance(expected, int):
            return Violation(
                "THRESHOLD_MISMATCH", "", f"no threshold field {claim.field_path} on {item.id}", claim.value, expected
            )
        holds = amount > expected if op == "gt" else (amount < expected if op == "lt" else False)
        if not holds:
            return Violation(
                "THRESHOLD_MISMATCH",
                "",
                f"{amount} {op} {expected} does not hold against {item.id}",
                claim.value,
                expected,
            )
        return None
    if claim.kind == "entity":
        if str(claim.value) not in item.canonical_text:
            return Violation(
                "UNSUPPORTED_ASSERTION",
                "",
                f"entity not in {item.id}",
                claim.value,
                None,
            )
        return None
    return None


def entity_tokens(text: str) -> list[str]:
    return ENTITY_RE.findall(text)


def paragraph_supported(paragraph, bundle: EvidenceBundle, lexicon: frozenset[str]) -> bool:
    """Every claim resolves and verifies, every lexicon entity is cited-supported."""
    cited = [bundle.get(c) for c in paragraph.citations]
    cited = [c for c in cited if c is not None]
    if len(cited) != len(paragraph.citations):
        return False
    for claim in paragraph.claims:
        item = next((c for c in cited if c.id == claim.evidence_id), None)
        if item is None or check_claim(claim, item) is not None:
            return False
    for token in entity_tokens(paragraph.text):
        if token in lexicon and not any(token in c.canonical_text for c in cited):
            return False
    return True


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def verify(
    record: TriageRecord, bundle: EvidenceBundle, corpus_view: CorpusView
) -> VerificationReport:
    violations: list[Violation] = []
    bundle_ids = bundle.ids()

    # 1. fabricated citations
    seen_fabricated: set[str] = set()
    for i, para in enumerate(record.paragraphs):
        for j, cid in enumerate(para.citations):
            if cid not in bundle_ids and cid not in seen_fabricated:
                seen_fabricated.add(cid)
                violations.append(
                    Violation("FABRICATED_CITATION", f"paragraphs[{i}].citations[{j}]", offending_value=cid)
                )

    # 2. per-paragraph citation rule (re-checked for external-mode records)
    for i, para in enumerate(record.paragraphs):
        if not para.citations:
            violations.append(Violation("UNCITED_PARAGRAPH", f"paragraphs[{i}]"))

    # 2b. orphan citations (cited but listed in neither evidence set)
    listed = set(record.supporting_ids) | set(record.contradicting_or_missing_ids)
    seen_orphan: set[str] = set()
    for i, para in enumerate(record.paragraphs):
        for j, cid in enumerate(para.citations):
            if cid not in listed and cid not in seen_orphan:
                seen_orphan.add(cid)
                violations.append(
                    Violation("ORPHAN_CITATION", f"paragraphs[{i}].citations[{j}]", offending_value=cid)
                )

    # 3. claim consistency, then the currency fallback over paragraph text
    claim_amounts: set[int] = set()
    for para in record.paragraphs:
        for claim in para.claims:
            if claim.kind == "amount" and isinstance(claim.value, int):
                claim_amounts.add(claim.value)
            if claim.kind == "threshold_comparison":
                _, _, amount_text = str(claim.value).partition(":")
                if amount_text.lstrip("-").isdigit():
                    claim_amounts.add(int(amount_text))

    cited_items = [bundle.get(c) for c in record.cited_ids()]
    cited_items = [c for c in cited_items if c is not None]
    cited_field_ints: set[int] = set()
    for item in cited_items:
        for value in item.structured_fields.values():
            if isinstance(value, int) and not isinstance(value, bool):
                cited_field_ints.add(value)

    for i, para in enumerate(record.paragraphs):
        for j, claim in enumerate(para.claims):
            item = bundle.get(claim.evidence_id)
            if item is None:
                continue  # unresolvable: FABRICATED_CITATION already covers it
            finding = check_claim(claim, item)
            if finding is not None:
                violations.append(
                    Violation(
                        finding.code,
                        f"paragraphs[{i}].claims[{j}]",
                        finding.detail,
                        finding.offending_value,
                        finding.expected_value,
                    )
                )
        for match in MONEY_RE.finditer(para.text):
            value = parse_money(match.group())
            if value in claim_amounts or value in cited_field_ints:
                continue
            violations.append(
                Violation(
                    "NUMERIC_MISMATCH",
                    f"paragraphs[{i}].text",
                    "currency amount matches no claim and no structured field of any cited item",
                    offending_value=match.group(),
                )
            )

    # 4. unsupported entity assertions (closed-world lexicon)
    for i, para in enumerate(record.paragraphs):
        cited = [bundle.get(c) for c in para.citations]
        cited = [c for c in cited if c is not None]
        flagged: set[str] = set()
        for token in entity_tokens(para.text):
            if token in flagged or token not in corpus_view.lexicon:
                continue
            if not any(token in c.canonical_text for c in cited):
                flagged.add(token)
                violations.append(
                    Violation("UNSUPPORTED_ASSERTION", f"paragraphs[{i}].text", offending_value=token)
                )

    # 5. policy token-support per sentence
    for i, para in enumerate(record.paragraphs):
        policy_items = []
        for cid in para.citations:
            item = corpus_view.item(cid)
            if item is not None and item.source_type == "policy":
                policy_items.append(item)
        if not policy_items:
            continue
        policy_tokens: set[str] = set()
        for item in policy_items:
            policy_tokens.update(tokenize(item.canonical_text))
        for sentence in SENTENCE_SPLIT.split(para.text):
            distinctive = [t for t in tokenize(sentence) if corpus_view.is_distinctive(t)]
            if not distinctive:
                continue
            if not any(t in policy_tokens for t in distinctive):
                violations.append(
                    Violation(
                        "POLICY_HALLUCINATION",
                        f"paragraphs[{i}].text",
                        "sentence shares no distinctive token with the cited policy text",
                        offending_value=sentence.strip(),
                    )
                )

    return VerificationReport(record_id=record.alert_id, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Targeted repair feedback
# ---------------------------------------------------------------------------


def _fmt_amount(value) -> str:
    if isinstance(value, int):
        return f"{value / 100:.2f}"
    return str(value)


def repair_feedback(report: VerificationReport) -> list[str]:
    """One deterministic message per violation, in report order."""
    if report.passed:
        raise ValueError("repair_feedback called on a passing report")
    messages = []
    for v in report.violations:
        if v.code == "FABRICATED_CITATION":
            messages.append(f"you referenced an evidence ID that is not present: {v.offending_value}")
        elif v.code == "UNCITED_PARAGRAPH":
            messages.append(
                f"{v.path} has no evidence citations; every paragraph must cite at least one evidence id"
            )
        elif v.code == "NUMERIC_MISMATCH":
            evidence = v.detail.rsplit(" of ", 1)[-1] if " of " in v.detail else "the cited evidence"
            if v.expected_value is None:
                messages.append(
                    f"your total amount conflicts with evidence {evidence}: stated "
                    f"{_fmt_amount(v.offending_value)}, evidence shows no matching value"
                )
            else:
                messages.append(
                    f"your total amount conflicts with evidence {evidence}: stated "
                    f"{_fmt_amount(v.offending_value)}, evidence shows {_fmt_amount(v.expected_value)}"
                )
        elif v.code == "TEMPORAL_MISMATCH":
            evidence = v.detail.rsplit(" of ", 1)[-1]
            messages.append(
                f"your timestamp conflicts with evidence {evidence}: stated "
                f"{v.offending_value}, evidence shows {v.expected_value}"
            )
        elif v.code == "THRESHOLD_MISMATCH":
            messages.append(f"your threshold comparison does not hold: {v.detail}")
        elif v.code == "UNSUPPORTED_ASSERTION":
            messages.append(
                f"you referenced an entity not present in any cited evidence: {v.offending_value}"
            )
        elif v.code == "POLICY_HALLUCINATION":
            messages.append(
                "your rationale asserts content that cannot be found in the cited policy text: "
                f"{v.offending_value}"
            )
        elif v.code == "ORPHAN_CITATION":
            messages.append(
                f"cited evidence id {v.offending_value} is listed in neither supporting nor "
                "contradicting evidence"
            )
        else:
            messages.append(f"violation {v.code} at {v.path}")
    return messages


# ---------------------------------------------------------------------------
# Verify-repair loop
# ---------------------------------------------------------------------------


@dataclass
class RepairAttempt:
    record: TriageRecord
    report: VerificationReport
    feedback: tuple[str, ...]


@dataclass
class RepairTrace:
    attempts: list[RepairAttempt] = field(default_factory=list)
    final_status: str = "verified"  # verified | escalate_to_human
    iterations_used: int = 0

    @property
    def final_record(self) -> TriageRecord:
        return self.attempts[-1].record

    @property
    def final_report(self) -> VerificationReport:
        return self.attempts[-1].report


def verify_repair_loop(
    context: AlertContext,
    bundle: EvidenceBundle,
    generator_config: GeneratorConfig,
    corpus_view: CorpusView,
    max_iters: int = 2,
) -> RepairTrace:
    """generate -> verify; on failure, regenerate with targeted feedback up to
    max_iters times. The final record is always returned; when it still fails,
    the trace is flagged escalate_to_human rather than dropped."""
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    trace = RepairTrace()
    feedback: list[str] = []
    record = generate(context, bundle, generator_config, feedback)
    report = verify(record, bundle, corpus_view)
    trace.attempts.append(RepairAttempt(record, report, tuple(feedback)))
    while not report.passed and trace.iterations_used < max_iters:
        feedback = feedback + repair_feedback(report)
        trace.iterations_used += 1
        record = generate(context, bundle, generator_config, feedback)
        report = verify(record, bundle, corpus_view)
        trace.attempts.append(RepairAttempt(record, report, tuple(feedback)))
    trace.final_status = "verified" if report.passed else "escalate_to_human"
    return trace
