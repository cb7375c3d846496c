"""Metric suite, baselines, and the variant experiment runner.

PR-AUC is step-wise average precision (deterministic and oracle-checkable),
not interpolated trapezoid area. Metrics a variant cannot produce are absent
(None), never zero, so aggregation stays honest. Averaging conventions:
citation validity is micro (pooled over citation occurrences); stability is
macro per alert.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .counterfactual import find_counterfactuals, stability_probe
from .evidence import AclContext, build_index, retrieve_bundle
from .model import EvidenceBundle, EvidenceItem, TriageRecord, canonical_json_bytes, money
from .simgen import DatasetSplit, World, build_case_memory, build_context
from .triage import GeneratorConfig, generate
from .validator import ValidatorTable, disposition_for_score
from .verifier import CorpusView, paragraph_supported, verify, verify_repair_loop

VARIANTS = ("rule_baseline", "linear_baseline", "llm_only", "rag_only", "full")

_SEVERITY = {"dismiss": 0, "monitor": 1, "escalate": 2}


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


def pr_auc(scores: list[float], labels: list[int]) -> float:
    """Average precision: sort by (score desc, index asc); AP = sum of
    precision@k over positive ranks, divided by the positive count."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    n_pos = sum(1 for y in labels if y == 1)
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / n_pos


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def escalate_prf(dispositions: list[str], labels: list[str]) -> Prf:
    """Precision/recall/F1 for the escalate class vs the suspicious label."""
    if len(dispositions) != len(labels):
        raise ValueError("dispositions and labels must align")
    tp = sum(1 for d, y in zip(dispositions, labels) if d == "escalate" and y == "suspicious")
    fp = sum(1 for d, y in zip(dispositions, labels) if d == "escalate" and y != "suspicious")
    fn = sum(1 for d, y in zip(dispositions, labels) if d != "escalate" and y == "suspicious")
    if tp + fp == 0 or tp + fn == 0:
        degenerate = (tp + fp == 0 and tp + fn > 0) or (tp + fn == 0)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        return Prf(precision, recall, 0.0, degenerate=degenerate or tp == 0)
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Prf(precision, recall, f1)


def workload_at_recall(scores: list[float], labels: list[int], target_recall: float = 0.9) -> float:
    """Largest threshold achieving recall >= target; returns the fraction of
    all alerts scored at or above it."""
    n_pos = sum(1 for y in labels if y == 1)
    if n_pos == 0:
        raise ValueError("workload_at_recall needs at least one positive")
    best = None
    for threshold in sorted(set(scores), reverse=True):
        recall = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= threshold) / n_pos
        if recall >= target_recall:
            best = threshold
            break
    if best is None:
        best = min(scores)
    return sum(1 for s in scores if s >= best) / len(scores)


def pr_curve(scores: list[float], labels: list[int]) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) triples over distinct thresholds, descending."""
    n_pos = sum(1 for y in labels if y == 1)
    rows = []
    for threshold in sorted(set(scores), reverse=True):
        flagged = [(s, y) for s, y in zip(scores, labels) if s >= threshold]
        tp = sum(1 for _, y in flagged if y == 1)
        precision = tp / len(flagged) if flagged else 0.0
        recall = tp / n_pos if n_pos else 0.0
        rows.append((threshold, precision, recall))
    return rows


# ---------------------------------------------------------------------------
# Provenance, counterfactual, and safety metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProvenanceMetrics:
    citation_validity: float | None
    evidence_support: float | None
    driver_coverage: float | None
    avg_citations: float


def provenance_metrics(
    records: list[TriageRecord],
    bundles: list[EvidenceBundle],
    lexicon: frozenset[str] = frozenset(),
) -> ProvenanceMetrics:
    total_citations = 0
    valid_citations = 0
    total_paragraphs = 0
    supported_paragraphs = 0
    escalations = 0
    covered = 0
    citation_counts = []
    for record, bundle in zip(records, bundles):
        ids = bundle.ids()
        for para in record.paragraphs:
            total_paragraphs += 1
            if paragraph_supported(para, bundle, lexicon):
                supported_paragraphs += 1
            for cid in para.citations:
                total_citations += 1
                if cid in ids:
                    valid_citations += 1
        citation_counts.append(len(record.cited_ids()))
        if record.disposition == "escalate":
            escalations += 1
            cited_items = [bundle.get(c) for c in record.cited_ids()]
            cited_items = [c for c in cited_items if c is not None]
            has_policy = any(c.source_type == "policy" for c in cited_items)
            has_context = any(c.source_type != "policy" for c in cited_items)
            if has_policy and has_context:
                covered += 1
    return ProvenanceMetrics(
        citation_validity=(valid_citations / total_citations) if total_citations else None,
        evidence_support=(supported_paragraphs / total_paragraphs) if total_paragraphs else None,
        driver_coverage=(covered / escalations) if escalations else None,
        avg_citations=(sum(citation_counts) / len(citation_counts)) if citation_counts else 0.0,
    )


@dataclass(frozen=True)
class RemovalTest:
    removed_id: str
    stopped_citing: bool
    direction_ok: bool

    @property
    def faithful(self) -> bool:
        return self.stopped_citing and self.direction_ok


def run_removal_test(
    record: TriageRecord,
    context,
    bundle: EvidenceBundle,
    generator_config: GeneratorConfig,
) -> RemovalTest | None:
    """Remove the critical cited item (first cited policy, else first cited
    non-coverage support) and re-run; faithful = stops citing it and the
    disposition does not move toward escalation."""
    target = None
    for cid in record.cited_ids():
        item = bundle.get(cid)
        if item is not None and item.source_type == "policy":
            target = item
            break
    if target is None:
        for cid in record.supporting_ids:
            item = bundle.get(cid)
            if item is not None and item.source_type in ("kyc", "case"):
                target = item
                break
    if target is None:
        return None
    reduced = EvidenceBundle(
        alert_id=bundle.alert_id,
        items=tuple(i for i in bundle.items if i.id != target.id),
        quota=dict(bundle.quota),
    )
    rerun = generate(context, reduced, generator_config)
    return RemovalTest(
        removed_id=target.id,
        stopped_citing=target.id not in rerun.cited_ids(),
        direction_ok=_SEVERITY[rerun.disposition] <= _SEVERITY[record.disposition],
    )


@dataclass(frozen=True)
class CfMetrics:
    cf_flip_rate: float | None
    cf_removal_faithfulness: float | None
    cf_stability: float | None


def cf_metrics(
    search_results: list,
    removal_results: list[RemovalTest],
    stability_values: list[float],
) -> CfMetrics:
    flip = None
    if search_results:
        flip = sum(1 for r in search_results if r.accepted) / len(search_results)
    removal = None
    if removal_results:
        removal = sum(1 for r in removal_results if r.faithful) / len(removal_results)
    stability = None
    if stability_values:
        stability = sum(stability_values) / len(stability_values)
    return CfMetrics(cf_flip_rate=flip, cf_removal_faithfulness=removal, cf_stability=stability)


@dataclass(frozen=True)
class SafetyMetrics:
    numerical_inconsistency_rate: float
    policy_hallucination_rate: float
    unsupported_assertion_rate: float


_NUMERIC_CODES = {"NUMERIC_MISMATCH", "TEMPORAL_MISMATCH", "THRESHOLD_MISMATCH"}


def safety_metrics(
    records: list[TriageRecord],
    bundles: list[EvidenceBundle],
    corpus_view: CorpusView,
) -> SafetyMetrics:
    """Audit-mode verification (repair disabled): per-record violation rates."""
    numeric = policy = unsupported = 0
    for record, bundle in zip(records, bundles):
        codes = verify(record, bundle, corpus_view).codes()
        if codes & _NUMERIC_CODES:
            numeric += 1
        if "POLICY_HALLUCINATION" in codes:
            policy += 1
        if "UNSUPPORTED_ASSERTION" in codes:
            unsupported += 1
    n = max(1, len(records))
    return SafetyMetrics(numeric / n, policy / n, unsupported / n)


def degrade_bundle(bundle: EvidenceBundle, mode: str, delta: int = 777_00) -> EvidenceBundle | None:
    """Adversarially degrade a bundle: 'conflict' rewrites the trigger total to
    disagree with the transaction slice; 'drop' removes the KYC item."""
    if mode == "conflict":
        trigger = next((i for i in bundle.items if i.source_type == "trigger"), None)
        if trigger is None or "total_amount" not in trigger.structured_fields:
            return None
        old = trigger.structured_fields["total_amount"]
        new = old + delta
        fields = dict(trigger.structured_fields)
        fields["total_amount"] = new
        degraded = EvidenceItem(
            id=trigger.id,
            source_type=trigger.source_type,
            effective_time=trigger.effective_time,
            acl_tag=trigger.acl_tag,
            canonical_text=trigger.canonical_text.replace(money(old), money(new)),
            structured_fields=fields,
            version=trigger.version,
            supersedes=trigger.supersedes,
        )
        items = tuple(degraded if i.id == trigger.id else i for i in bundle.items)
        return EvidenceBundle(bundle.alert_id, items, dict(bundle.quota))
    if mode == "drop":
        kyc = next((i for i in bundle.items if i.source_type == "kyc"), None)
        if kyc is None:
            return None
        items = tuple(i for i in bundle.items if i.id != kyc.id)
        return EvidenceBundle(bundle.alert_id, items, dict(bundle.quota))
    raise ValueError(f"unknown degradation mode {mode}")


def adversarial_uncertainty(
    contexts: list,
    bundles: list[EvidenceBundle],
    generator_config: GeneratorConfig,
) -> float | None:
    """Fraction of degraded-bundle runs whose record flags the conflict or
    absence in unknowns instead of asserting either value as fact."""
    attempted = 0
    uncertain = 0
    for i, (context, bundle) in enumerate(zip(contexts, bundles)):
        mode = "conflict" if i % 2 == 0 else "drop"
        degraded = degrade_bundle(bundle, mode)
        if degraded is None:
            degraded = degrade_bundle(bundle, "conflict" if mode == "drop" else "drop")
            mode = "conflict" if mode == "drop" else "drop"
            if degraded is None:
                continue
        attempted += 1
        record = generate(context, degraded, generator_config)
        if mode == "conflict":
            trigger_id = next(x.id for x in degraded.items if x.source_type == "trigger")
            degraded_total = next(
                x.structured_fields["total_amount"] for x in degraded.items if x.id == trigger_id
            )
            flagged = any(trigger_id in u and "conflict" in u for u in record.unknowns)
            asserted = any(
                claim.kind == "amount" and claim.value == degraded_total
                for para in record.paragraphs
                for claim in para.claims
            )
            if flagged and not asserted:
                uncertain += 1
        else:
            flagged = any("absent" in u and context.alert.customer_id in u for u in record.unknowns)
            if flagged:
                uncertain += 1
    return (uncertain / attempted) if attempted else None


# ---------------------------------------------------------------------------
# Linear tabular baseline
# ---------------------------------------------------------------------------

FEATURE_NAMES = (
    "total_amount",
    "max_amount",
    "tx_count",
    "distinct_counterparties",
    "burstiness",
    "high_risk_geo",
    "prior_alert_count",
)


def extract_features(context) -> list[float]:
    txs = context.transactions
    total = sum(t.amount for t in txs) / 100.0
    biggest = max((t.amount for t in txs), default=0) / 100.0
    counterparties = len(context.counterparty_risk)
    times = sorted(t.timestamp for t in txs)
    burst = 0
    for i, t0 in enumerate(times):
        burst = max(burst, sum(1 for t in times[i:] if t - t0 <= 86400))
    high_geo = 1.0 if any(tier == "high" for tier in context.counterparty_risk.values()) else 0.0
    return [
        total,
        biggest,
        float(len(txs)),
        float(counterparties),
        float(burst),
        high_geo,
        float(context.customer.prior_alert_count),
    ]


@dataclass
class LinearScorer:
    """Logistic scorer over alert-level features, full-batch gradient descent,
    fixed step 0.1, 500 epochs, features standardized on the training split."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def train(features: list[list[float]], labels: list[int], epochs: int = 500, lr: float = 0.1) -> "LinearScorer":
        x = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std == 0.0] = 1.0
        xs = (x - mean) / std
        w = np.zeros(xs.shape[1])
        b = 0.0
        n = len(y)
        for _ in range(epochs):
            z = xs @ w + b
            p = 1.0 / (1.0 + np.exp(-z))
            grad_w = xs.T @ (p - y) / n
            grad_b = float(np.sum(p - y) / n)
            w -= lr * grad_w
            b -= lr * grad_b
        return LinearScorer(weights=w, bias=b, mean=mean, std=std)

    def score(self, features: list[float]) -> float:
        xs = (np.asarray(features, dtype=float) - self.mean) / self.std
        z = float(xs @ self.weights + self.bias)
        return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentProfile:
    """One fixed configuration for the cross-variant comparison.

    The fault generator stands in for an imperfect LLM: per-record fault
    rates, partial heeding of repair feedback (each pending fault clears with
    heed_probability per feedback message), and a repair budget that grows
    with pipeline depth (rag_only gets 1 repair round, full gets 2).
    """

    quotas: dict[str, int] = field(
        default_factory=lambda: {"policy": 2, "kyc": 1, "trigger": 1, "transaction": 1, "case": 2}
    )
    k_total: int = 8
    clearance: str = "confidential"
    fault_rate: float = 0.2
    fault_seed: int = 1013
    heed_probability: float = 0.25
    rag_max_iters: int = 1
    full_max_iters: int = 2
    target_recall: float = 0.9
    cf_budget: int = 3
    cf_max_accepted: int = 2
    cf_max_proposals: int = 8
    stability_probes: int = 4
    validator: ValidatorTable = field(default_factory=ValidatorTable)

    def fault_config(self, world: World, llm_only: bool = False) -> GeneratorConfig:
        pool = tuple(a.id for a in world.accounts[:10])
        return GeneratorConfig(
            mode="fault_injection",
            p_fabricated_citation=self.fault_rate,
            p_numeric_error=self.fault_rate,
            p_policy_hallucination=self.fault_rate,
            p_unsupported_entity=self.fault_rate,
            fault_seed=self.fault_seed,
            heed_feedback=True,
            heed_probability=self.heed_probability,
            llm_only=llm_only,
            fault_entity_pool=pool,
            validator=self.validator,
        )


@dataclass
class MetricsReport:
    variant_tag: str
    n_alerts: int
    pr_auc: float | None = None
    escalate_precision: float | None = None
    escalate_recall: float | None = None
    escalate_f1: float | None = None
    workload_at_recall: dict[str, float] | None = None
    citation_validity: float | None = None
    evidence_support: float | None = None
    driver_coverage: float | None = None
    avg_citations_per_alert: float | None = None
    cf_flip_rate: float | None = None
    cf_removal_faithfulness: float | None = None
    cf_stability: float | None = None
    numerical_inconsistency_rate: float | None = None
    policy_hallucination_rate: float | None = None
    unsupported_assertion_rate: float | None = None
    adversarial_uncertainty_rate: float | None = None
    _curve: list | None = field(default=None, repr=False, compare=False)

    def to_doc(self) -> dict:
        doc = {"variant_tag": self.variant_tag, "n_alerts": self.n_alerts}
        for name in (
            "pr_auc",
            "escalate_precision",
            "escalate_recall",
            "escalate_f1",
            "workload_at_recall",
            "citation_validity",
            "evidence_support",
            "driver_coverage",
            "avg_citations_per_alert",
            "cf_flip_rate",
            "cf_removal_faithfulness",
            "cf_stability",
            "numerical_inconsistency_rate",
            "policy_hallucination_rate",
            "unsupported_assertion_rate",
            "adversarial_uncertainty_rate",
        ):
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc


def run_experiment(
    world: World,
    split: DatasetSplit,
    variant: str,
    profile: ExperimentProfile | None = None,
) -> MetricsReport:
    """Evaluate one pipeline variant on the test split of the given world."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant}; expected one of {VARIANTS}")
    profile = profile or ExperimentProfile()
    known = {a.id for a in world.alerts}
    for alert_id in split.test_alert_ids:
        if alert_id not in known:
            raise ValueError(f"split references unknown alert {alert_id}")

    test_ids = list(split.test_alert_ids)
    contexts = {alert_id: build_context(world, alert_id) for alert_id in test_ids}
    labels01 = [1 if world.alert(a).label == "suspicious" else 0 for a in test_ids]
    labels = [world.alert(a).label or "normal" for a in test_ids]
    report = MetricsReport(variant_tag=variant, n_alerts=len(test_ids))

    def ranking_block(scores: list[float], dispositions: list[str]) -> None:
        report.pr_auc = pr_auc(scores, labels01)
        prf = escalate_prf(dispositions, labels)
        report.escalate_precision = prf.precision
        report.escalate_recall = prf.recall
        report.escalate_f1 = prf.f1
        report.workload_at_recall = {
            f"{profile.target_recall:.2f}": workload_at_recall(scores, labels01, profile.target_recall)
        }
        report._curve = pr_curve(scores, labels01)  # plot-ready data for the CSV emission

    if variant == "rule_baseline":
        scores = [world.alert(a).trigger.max_score() for a in test_ids]
        dispositions = [disposition_for_score(s, profile.validator) for s in scores]
        ranking_block(scores, dispositions)
        return report

    if variant == "linear_baseline":
        train_contexts = [build_context(world, a) for a in split.train_alert_ids]
        train_x = [extract_features(c) for c in train_contexts]
        train_y = [1 if world.alert(a).label == "suspicious" else 0 for a in split.train_alert_ids]
        scorer = LinearScorer.train(train_x, train_y)
        scores = [scorer.score(extract_features(contexts[a])) for a in test_ids]
        dispositions = [disposition_for_score(s, profile.validator) for s in scores]
        ranking_block(scores, dispositions)
        return report

    # generator-backed variants share the retrieval corpus (case memory from
    # the training split only) and the corpus view
    corpus = list(world.evidence_corpus)
    if not any(i.source_type == "case" for i in corpus):
        corpus += build_case_memory(split, world)
    index = build_index(corpus)
    corpus_view = CorpusView(index, world.entity_lexicon())
    acl = AclContext(principal="eval", clearance=profile.clearance)

    if variant == "llm_only":
        config = profile.fault_config(world, llm_only=True)
        bundles = [
            EvidenceBundle(alert_id=a, items=(), quota=dict(profile.quotas)) for a in test_ids
        ]
        records = [generate(contexts[a], b, config) for a, b in zip(test_ids, bundles)]
        scores = [r.confidence for r in records]
        dispositions = [r.disposition for r in records]
        ranking_block(scores, dispositions)
        prov = provenance_metrics(records, bundles, corpus_view.lexicon)
        report.citation_validity = prov.citation_validity
        report.evidence_support = prov.evidence_support
        report.driver_coverage = prov.driver_coverage
        report.avg_citations_per_alert = prov.avg_citations
        safety = safety_metrics(records, bundles, corpus_view)
        report.numerical_inconsistency_rate = safety.numerical_inconsistency_rate
        report.policy_hallucination_rate = safety.policy_hallucination_rate
        report.unsupported_assertion_rate = safety.unsupported_assertion_rate
        return report

    # rag_only and full
    config = profile.fault_config(world)
    max_iters = profile.rag_max_iters if variant == "rag_only" else profile.full_max_iters
    bundles = []
    traces = []
    for alert_id in test_ids:
        bundle = retrieve_bundle(index, contexts[alert_id], acl, profile.quotas, profile.k_total)
        bundles.append(bundle)
        traces.append(
            verify_repair_loop(contexts[alert_id], bundle, config, corpus_view, max_iters=max_iters)
        )
    records = [t.final_record for t in traces]
    scores = [r.confidence for r in records]
    dispositions = [r.disposition for r in records]
    ranking_block(scores, dispositions)

    prov = provenance_metrics(records, bundles, corpus_view.lexicon)
    report.citation_validity = prov.citation_validity
    report.evidence_support = prov.evidence_support
    report.driver_coverage = prov.driver_coverage
    report.avg_citations_per_alert = prov.avg_citations

    safety = safety_metrics(records, bundles, corpus_view)
    report.numerical_inconsistency_rate = safety.numerical_inconsistency_rate
    report.policy_hallucination_rate = safety.policy_hallucination_rate
    report.unsupported_assertion_rate = safety.unsupported_assertion_rate

    # counterfactual pass: full searches from the verified final record;
    # rag_only reports a post-hoc pass from the unrepaired first attempt
    # (no verifier-integrated drivers)
    search_results = []
    removal_results = []
    stability_values = []
    for alert_id, bundle, trace in zip(test_ids, bundles, traces):
        context = contexts[alert_id]
        driver_record = trace.final_record if variant == "full" else trace.attempts[0].record
        search_results.append(
            find_counterfactuals(
                driver_record,
                context,
                bundle,
                config,
                corpus_view,
                budget=profile.cf_budget,
                max_accepted=profile.cf_max_accepted,
                max_proposals=profile.cf_max_proposals,
                table=profile.validator,
            )
        )
        removal = run_removal_test(trace.final_record, context, bundle, config)
        if removal is not None:
            removal_results.append(removal)
        stability_values.append(
            stability_probe(
                context,
                bundle,
                config,
                n_probes=profile.stability_probes,
                seed=profile.fault_seed,
                table=profile.validator,
            )
        )
    cf = cf_metrics(search_results, removal_results, stability_values)
    report.cf_flip_rate = cf.cf_flip_rate
    report.cf_removal_faithfulness = cf.cf_removal_faithfulness
    report.cf_stability = cf.cf_stability

    report.adversarial_uncertainty_rate = adversarial_uncertainty(
        [contexts[a] for a in test_ids], bundles, config
    )
    return report


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = (
    ("pr_auc", "PR-AUC"),
    ("escalate_precision", "Escalate P"),
    ("escalate_recall", "Escalate R"),
    ("escalate_f1", "Escalate F1"),
    ("citation_validity", "Citation Validity"),
    ("evidence_support", "Evidence Support"),
    ("driver_coverage", "Driver Coverage"),
    ("avg_citations_per_alert", "Avg Citations"),
    ("cf_flip_rate", "CF-Flip"),
    ("cf_removal_faithfulness", "CF-Removal"),
    ("cf_stability", "CF-Stability"),
    ("numerical_inconsistency_rate", "Numeric Inconsistency"),
    ("policy_hallucination_rate", "Policy Hallucination"),
    ("unsupported_assertion_rate", "Unsupported Assertion"),
    ("adversarial_uncertainty_rate", "Adversarial Uncertainty"),
)


def write_report(report: MetricsReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"report.{report.variant_tag}.json")
    with open(path, "wb") as fh:
        fh.write(canonical_json_bytes(report.to_doc()) + b"\n")
    curve = report._curve
    if curve:
        curve_path = os.path.join(out_dir, f"pr_curve.{report.variant_tag}.csv")
        with open(curve_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            for threshold, precision, recall in curve:
                writer.writerow([f"{threshold:.4f}", f"{precision:.4f}", f"{recall:.4f}"])
    return path


def render_table1(reports: list[MetricsReport]) -> str:
    head = "| Method | " + " | ".join(label for _, label in _TABLE_COLUMNS) + " |"
    sep = "|" + "---|" * (len(_TABLE_COLUMNS) + 1)
    lines = [head, sep]
    for report in reports:
        cells = [report.variant_tag]
        for attr, _ in _TABLE_COLUMNS:
            value = getattr(report, attr)
            cells.append("—" if value is None else f"{value:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def load_report(path: str) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)

    def real(value):
        if isinstance(value, str):
            return float(value)
        return value

    report = MetricsReport(variant_tag=doc["variant_tag"], n_alerts=int(doc["n_alerts"]))
    for name in doc:
        if name in ("variant_tag", "n_alerts"):
            continue
        value = doc[name]
        if name == "workload_at_recall":
            value = {k: real(v) for k, v in value.items()}
        else:
            value = real(value)
        setattr(report, name, value)
    return report
