"""Evidence indexing and permission-aware bundle construction.

Retrieval is a hybrid of hard structured filtering (ACL, effective time,
type-specific scope, policy supersession) followed by lexical term-weighted
ranking (document-frequency damped, length normalized, k1=1.2 / b=0.75) and
greedy dedup/quota selection. Filtering is hard: an item removed by the
structured stage can never reach a bundle. The index is immutable after
build; rebuilds produce a new value.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .model import ACL_ORDER, AlertContext, EvidenceBundle, EvidenceItem

INDEX_FORMAT_VERSION = 1

BM25_K1 = 1.2
BM25_B = 0.75
DEDUP_JACCARD = 0.8

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


@dataclass(frozen=True)
class AclContext:
    principal: str
    clearance: str  # public < restricted < confidential

    def allows(self, acl_tag: str) -> bool:
        return ACL_ORDER[acl_tag] <= ACL_ORDER[self.clearance]


@dataclass(frozen=True)
class RetrievalQuery:
    alert_id: str
    query_text: str
    customer_id: str
    window: tuple[int, int]
    alert_time: int
    alert_type: str
    acl: AclContext
    quota: dict[str, int]
    k_total: int


class DuplicateIdError(ValueError):
    def __init__(self, first: str, second: str):
        super().__init__(f"duplicate evidence id: {first} / {second}")
        self.ids = (first, second)


class EvidenceIndex:
    """Immutable inverted index over an evidence corpus."""

    def __init__(self, corpus: list[EvidenceItem]):
        items: dict[str, EvidenceItem] = {}
        for item in corpus:
            if item.id in items:
                raise DuplicateIdError(item.id, item.id)
            items[item.id] = item
        self.items = items
        self.doc_count = len(items)

        self.tokens: dict[str, list[str]] = {}
        self.token_sets: dict[str, frozenset[str]] = {}
        self.doc_len: dict[str, int] = {}
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self.doc_freq: dict[str, int] = {}
        total_len = 0
        for item_id in sorted(items):
            toks = tokenize(items[item_id].canonical_text)
            self.tokens[item_id] = toks
            self.token_sets[item_id] = frozenset(toks)
            self.doc_len[item_id] = len(toks)
            total_len += len(toks)
            counts: dict[str, int] = {}
            for tok in toks:
                counts[tok] = counts.get(tok, 0) + 1
            for tok, tf in counts.items():
                self.postings.setdefault(tok, []).append((item_id, tf))
                self.doc_freq[tok] = self.doc_freq.get(tok, 0) + 1
        for plist in self.postings.values():
            plist.sort(key=lambda e: e[0])
        self.mean_doc_len = (total_len / self.doc_count) if self.doc_count else 0.0

        # superseded_by: id -> list of superseding items (same source_type)
        self.superseded_by: dict[str, list[EvidenceItem]] = {}
        for item in items.values():
            if item.supersedes is not None:
                old = items.get(item.supersedes)
                if old is None or old.source_type != item.source_type:
                    raise ValueError(
                        f"{item.id} supersedes {item.supersedes}, which is missing or of another type"
                    )
                self.superseded_by.setdefault(item.supersedes, []).append(item)

    # -- persistence -------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "format_version": INDEX_FORMAT_VERSION,
            "items": [self.items[i].to_doc() for i in sorted(self.items)],
        }

    @staticmethod
    def from_doc(doc: dict) -> "EvidenceIndex":
        if doc.get("format_version") != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index format: {doc.get('format_version')}")
        return EvidenceIndex([EvidenceItem.from_doc(d) for d in doc["items"]])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_doc(), fh)

    @staticmethod
    def load(path: str) -> "EvidenceIndex":
        with open(path, "r", encoding="utf-8") as fh:
            return EvidenceIndex.from_doc(json.load(fh))


def build_index(corpus: list[EvidenceItem]) -> EvidenceIndex:
    return EvidenceIndex(corpus)


# ---------------------------------------------------------------------------
# Structured filtering (hard)
# ---------------------------------------------------------------------------


def structured_filter(index: EvidenceIndex, query: RetrievalQuery) -> list[EvidenceItem]:
    """Keep an item iff ACL, effective-time, and type-specific scope all pass.

    Policy items lose to a superseding version that is already effective at
    the alert time; KYC must match the customer; transaction slices must
    overlap the alert window. Removed items can never reappear downstream.
    """
    out = []
    for item_id in sorted(index.items):
        item = index.items[item_id]
        if not query.acl.allows(item.acl_tag):
            continue
        if item.effective_time > query.alert_time:
            continue
        if item.source_type == "kyc":
            if item.structured_fields.get("customer_id") != query.customer_id:
                continue
        elif item.source_type == "case":
            # case memory is built from training alerts only; any case item
            # already effective at the alert time is in scope for similarity
            pass
        elif item.source_type == "transaction":
            w0 = item.structured_fields.get("window_start")
            w1 = item.structured_fields.get("window_end")
            if w0 is not None and w1 is not None:
                if w1 < query.window[0] or w0 > query.window[1]:
                    continue
        elif item.source_type == "policy":
            newer = index.superseded_by.get(item.id, ())
            if any(n.effective_time <= query.alert_time for n in newer):
                continue
        out.append(item)
    return out


# ---------------------------------------------------------------------------
# Semantic ranking (lexical BM25)
# ---------------------------------------------------------------------------


def score_bm25(index: EvidenceIndex, query_tokens: list[str], item_id: str) -> float:
    """Score one document; the exact formula the brute-force test oracle mirrors:

        idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
        score  = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    """
    toks = index.tokens[item_id]
    if not toks or not query_tokens:
        return 0.0
    counts: dict[str, int] = {}
    for tok in toks:
        counts[tok] = counts.get(tok, 0) + 1
    dl = len(toks)
    avgdl = index.mean_doc_len or 1.0
    n = index.doc_count
    score = 0.0
    for tok in query_tokens:
        tf = counts.get(tok, 0)
        if tf == 0:
            continue
        df = index.doc_freq.get(tok, 0)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (BM25_K1 + 1) / (tf + BM25_K1 * (1 - BM25_B + BM25_B * dl / avgdl))
    return score


def rank_semantic(
    candidates: list[EvidenceItem], query_text: str, index: EvidenceIndex
) -> list[tuple[EvidenceItem, float]]:
    """Rank candidates by relevance, descending (score, then id as tiebreak).

    Accumulates scores by walking posting lists; identical results to scoring
    each candidate with score_bm25 (query tokens count with multiplicity).
    """
    query_tokens = tokenize(query_text)
    in_play = {item.id for item in candidates}
    acc: dict[str, float] = {}
    n = index.doc_count
    avgdl = index.mean_doc_len or 1.0
    for tok in query_tokens:
        plist = index.postings.get(tok)
        if not plist:
            continue
        df = index.doc_freq[tok]
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for item_id, tf in plist:
            if item_id not in in_play:
                continue
            dl = index.doc_len[item_id]
            acc[item_id] = acc.get(item_id, 0.0) + idf * tf * (BM25_K1 + 1) / (
                tf + BM25_K1 * (1 - BM25_B + BM25_B * dl / avgdl)
            )
    scored = [(item, acc.get(item.id, 0.0)) for item in candidates]
    scored.sort(key=lambda e: (-e[1], e[0].id))
    return scored


def derive_query_text(context: AlertContext) -> str:
    """Query text from the alert context: typology words, customer, counterparties."""
    alert = context.alert
    parts = [
        alert.alert_type.replace("_", " "),
        alert.customer_id,
        context.customer.customer_type,
        " ".join(alert.trigger.rule_ids),
    ]
    counterparties = sorted(context.counterparty_risk)[:5]
    parts.extend(counterparties)
    channels = sorted({t.channel for t in context.transactions})
    parts.extend(channels)
    if any(tier == "high" for tier in context.counterparty_risk.values()):
        parts.append("high risk counterparty")
    if context.customer.prior_alert_count >= 2:
        parts.append("repeat alert customer prior alerts monitoring guidance")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Bundle selection
# ---------------------------------------------------------------------------


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def select_bundle(
    scored: list[tuple[EvidenceItem, float]],
    query: RetrievalQuery,
    index: EvidenceIndex,
) -> EvidenceBundle:
    """Greedy per-type selection under quotas, dedup, and the k_total cap.

    The alert's own trigger and transaction-slice items jump the selection
    queue (coverage guarantee: included regardless of score, provided they
    survived the hard filter and their type has quota at all). Near-duplicates
    of an already-selected item of the same type (token Jaccard > 0.8) are
    skipped. The trace records every considered item and its fate.

    Cross-type quota monotonicity holds whenever k_total does not bind; under
    a binding shared k_total the budget is zero-sum and no selection rule can
    grow one type without costing another.
    """
    trace: list[dict] = []
    selected: list[EvidenceItem] = []
    per_type: dict[str, int] = {}

    def is_coverage(item: EvidenceItem) -> bool:
        return (
            item.source_type in ("trigger", "transaction")
            and item.structured_fields.get("alert_id") == query.alert_id
        )

    def try_add(item: EvidenceItem, score: float, reason: str) -> None:
        entry = {
            "item_id": item.id,
            "source_type": item.source_type,
            "filter_passed": True,
            "score": score,
            "selection": "",
        }
        cap = query.quota.get(item.source_type, 0)
        if per_type.get(item.source_type, 0) >= cap:
            entry["selection"] = "rejected:quota"
            trace.append(entry)
            return
        if len(selected) >= query.k_total:
            entry["selection"] = "rejected:k_total"
            trace.append(entry)
            return
        tokens = index.token_sets[item.id]
        for prior in selected:
            if prior.source_type != item.source_type:
                continue
            if _jaccard(tokens, index.token_sets[prior.id]) > DEDUP_JACCARD:
                entry["selection"] = f"rejected:duplicate_of:{prior.id}"
                trace.append(entry)
                return
        selected.append(item)
        per_type[item.source_type] = per_type.get(item.source_type, 0) + 1
        entry["selection"] = reason
        trace.append(entry)

    for item, score in scored:
        if is_coverage(item):
            try_add(item, score, "selected:coverage")
    for item, score in scored:
        if not is_coverage(item):
            try_add(item, score, "selected:score")

    if not selected:
        trace.append(
            {
                "item_id": "",
                "source_type": "",
                "filter_passed": True,
                "score": 0.0,
                "selection": "empty_bundle",
            }
        )
    ordered = sorted(selected, key=lambda i: (i.source_type, i.id))
    return EvidenceBundle(
        alert_id=query.alert_id,
        items=tuple(ordered),
        quota=dict(query.quota),
        retrieval_trace=tuple(trace),
    )


def retrieve_bundle(
    index: EvidenceIndex, context: AlertContext, acl: AclContext, quota: dict[str, int], k_total: int
) -> EvidenceBundle:
    """retrieve = structured filter -> semantic rank -> bundle selection."""
    alert = context.alert
    query = RetrievalQuery(
        alert_id=alert.id,
        query_text=derive_query_text(context),
        customer_id=alert.customer_id,
        window=alert.window,
        alert_time=alert.alert_time,
        alert_type=alert.alert_type,
        acl=acl,
        quota=quota,
        k_total=k_total,
    )
    candidates = structured_filter(index, query)
    scored = rank_semantic(candidates, query.query_text, index)
    return select_bundle(scored, query, index)
