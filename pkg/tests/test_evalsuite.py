from __future__ import annotations

import numpy as np
import pytest

from amltriage.evalsuite import (
    ExperimentProfile,
    LinearScorer,
    MetricsReport,
    adversarial_uncertainty,
    cf_metrics,
    degrade_bundle,
    escalate_prf,
    extract_features,
    load_report,
    pr_auc,
    pr_curve,
    provenance_metrics,
    render_table1,
    run_experiment,
    run_removal_test,
    safety_metrics,
    workload_at_recall,
    write_report,
)
from amltriage.rng import Stream
from amltriage.triage import GeneratorConfig, generate


def oracle_average_precision(scores, labels):
    """Brute-force AP oracle, coded independently: walk ranks, accumulate
    precision at each positive."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    positives = sum(labels)
    running_hits = 0
    acc = 0.0
    for position, idx in enumerate(order):
        if labels[idx] == 1:
            running_hits += 1
            acc += running_hits / (position + 1)
    return acc / positives


def oracle_workload(scores, labels, target):
    """Exhaustive threshold sweep oracle."""
    positives = sum(labels)
    best_fraction = None
    for threshold in sorted(set(scores), reverse=True):
        caught = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= threshold)
        if caught / positives >= target:
            best_fraction = sum(1 for s in scores if s >= threshold) / len(scores)
            break
    if best_fraction is None:
        threshold = min(scores)
        best_fraction = sum(1 for s in scores if s >= threshold) / len(scores)
    return best_fraction


class TestPrAuc:
    def test_perfect_ranking(self):
        assert pr_auc([0.9, 0.1], [1, 0]) == 1.0

    def test_inverted_ranking(self):
        assert pr_auc([0.9, 0.1], [0, 1]) == 0.5

    def test_matches_brute_force_oracle_on_random_instances(self):
        stream = Stream(17, "ap")
        for case in range(300):
            s = stream.substream(case)
            n = s.randint(2, 20)
            labels = [1 if s.bernoulli(0.4) else 0 for _ in range(n)]
            if not any(labels):
                labels[s.randint(0, n - 1)] = 1
            scores = [round(s.uniform(), 3) for _ in range(n)]
            assert pr_auc(scores, labels) == oracle_average_precision(scores, labels)

    def test_requires_a_positive(self):
        with pytest.raises(ValueError):
            pr_auc([0.5], [0])


class TestEscalatePrf:
    def test_all_escalate_half_suspicious(self):
        prf = escalate_prf(["escalate"] * 4, ["suspicious", "normal", "suspicious", "normal"])
        assert (prf.precision, prf.recall) == (0.5, 1.0)
        assert prf.f1 == pytest.approx(2 / 3)

    def test_no_escalations_is_degenerate_zero(self):
        prf = escalate_prf(["dismiss", "monitor"], ["suspicious", "normal"])
        assert (prf.precision, prf.recall, prf.f1) == (0.0, 0.0, 0.0)
        assert prf.degenerate

    def test_two_tp_one_fp_one_fn(self):
        dispositions = ["escalate", "escalate", "escalate", "dismiss"]
        labels = ["suspicious", "suspicious", "normal", "suspicious"]
        prf = escalate_prf(dispositions, labels)
        assert prf.precision == pytest.approx(2 / 3)
        assert prf.recall == pytest.approx(2 / 3)
        assert prf.f1 == pytest.approx(2 / 3)


class TestWorkloadAtRecall:
    def test_two_positives_target_one(self):
        assert workload_at_recall([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 1.0) == 0.5

    def test_separable_case_routes_exactly_the_positives(self):
        scores = [0.9, 0.8, 0.7, 0.2, 0.1]
        labels = [1, 1, 1, 0, 0]
        assert workload_at_recall(scores, labels, 1.0) == 3 / 5

    def test_lower_target_routes_no_more_alerts(self):
        scores = [0.9, 0.5, 0.4, 0.1]
        labels = [1, 0, 1, 0]
        assert workload_at_recall(scores, labels, 0.5) <= workload_at_recall(scores, labels, 1.0)

    def test_matches_threshold_sweep_oracle(self):
        stream = Stream(23, "wl")
        for case in range(300):
            s = stream.substream(case)
            n = s.randint(2, 20)
            labels = [1 if s.bernoulli(0.4) else 0 for _ in range(n)]
            if not any(labels):
                labels[0] = 1
            scores = [round(s.uniform(), 2) for _ in range(n)]
            target = s.choice([0.5, 0.75, 0.9, 1.0])
            assert workload_at_recall(scores, labels, target) == oracle_workload(scores, labels, target)

    def test_non_decreasing_in_target(self):
        scores = [0.9, 0.7, 0.6, 0.4, 0.2]
        labels = [1, 0, 1, 1, 0]
        values = [workload_at_recall(scores, labels, t) for t in (0.3, 0.6, 0.9, 1.0)]
        assert values == sorted(values)


class TestProvenanceMetrics:
    def test_reference_records_have_perfect_citation_validity(self, pipeline_parts, corpus_view):
        world, _, _, _, bundle_for = pipeline_parts
        records, bundles = [], []
        for alert in world.alerts[:8]:
            context, bundle = bundle_for(alert.id)
            records.append(generate(context, bundle, GeneratorConfig()))
            bundles.append(bundle)
        metrics = provenance_metrics(records, bundles, corpus_view.lexicon)
        assert metrics.citation_validity == 1.0
        assert metrics.evidence_support == 1.0
        assert metrics.avg_citations > 0

    def test_policy_only_citations_do_not_count_as_driver_coverage(self, structuring_escalation, corpus_view):
        from dataclasses import replace

        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        assert record.disposition == "escalate"
        policy_id = next(i.id for i in bundle.items if i.source_type == "policy")
        stripped = replace(
            record,
            paragraphs=(
                replace(record.paragraphs[0], citations=(policy_id,), claims=()),
            ),
            supporting_ids=(policy_id,),
            contradicting_or_missing_ids=(),
        )
        metrics = provenance_metrics([stripped], [bundle], corpus_view.lexicon)
        assert metrics.driver_coverage == 0.0
        full = provenance_metrics([record], [bundle], corpus_view.lexicon)
        assert full.driver_coverage == 1.0

    def test_no_citations_means_absent_metric(self):
        metrics = provenance_metrics([], [], frozenset())
        assert metrics.citation_validity is None


class TestCfMetrics:
    def test_rates_and_guards(self):
        class FakeSearch:
            def __init__(self, accepted):
                self.accepted = accepted

        class FakeRemoval:
            def __init__(self, faithful):
                self.faithful = faithful

        metrics = cf_metrics([FakeSearch([1]), FakeSearch([])], [FakeRemoval(True), FakeRemoval(False)], [1.0, 0.5])
        assert metrics.cf_flip_rate == 0.5
        assert metrics.cf_removal_faithfulness == 0.5
        assert metrics.cf_stability == 0.75
        empty = cf_metrics([], [], [])
        assert empty.cf_flip_rate is None
        assert empty.cf_removal_faithfulness is None
        assert empty.cf_stability is None

    def test_removal_test_faithful_for_reference_generator(self, structuring_escalation):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        removal = run_removal_test(record, context, bundle, GeneratorConfig())
        assert removal is not None
        assert removal.stopped_citing
        assert removal.direction_ok


class TestSafetyMetrics:
    def test_reference_records_are_clean(self, pipeline_parts, corpus_view):
        world, _, _, _, bundle_for = pipeline_parts
        records, bundles = [], []
        for alert in world.alerts[:8]:
            context, bundle = bundle_for(alert.id)
            records.append(generate(context, bundle, GeneratorConfig()))
            bundles.append(bundle)
        metrics = safety_metrics(records, bundles, corpus_view)
        assert metrics.numerical_inconsistency_rate == 0.0
        assert metrics.policy_hallucination_rate == 0.0
        assert metrics.unsupported_assertion_rate == 0.0

    def test_forced_numeric_fault_rate_is_one(self, pipeline_parts, corpus_view):
        world, _, _, _, bundle_for = pipeline_parts
        config = GeneratorConfig(mode="fault_injection", p_numeric_error=1.0, fault_seed=13)
        records, bundles = [], []
        for alert in world.alerts[:8]:
            context, bundle = bundle_for(alert.id)
            records.append(generate(context, bundle, config))
            bundles.append(bundle)
        metrics = safety_metrics(records, bundles, corpus_view)
        assert metrics.numerical_inconsistency_rate == 1.0

    def test_degraded_bundle_conflict_is_flagged_in_unknowns(self, structuring_escalation):
        context, bundle = structuring_escalation
        degraded = degrade_bundle(bundle, "conflict")
        record = generate(context, degraded, GeneratorConfig())
        trigger_id = next(i.id for i in degraded.items if i.source_type == "trigger")
        assert any(trigger_id in u and "conflict" in u for u in record.unknowns)
        assert trigger_id in record.contradicting_or_missing_ids

    def test_dropped_kyc_counts_toward_uncertainty(self, structuring_escalation):
        context, bundle = structuring_escalation
        rate = adversarial_uncertainty([context], [bundle], GeneratorConfig())
        assert rate == 1.0


class TestLinearScorer:
    def test_standardization_uses_training_split_only(self):
        train_x = [[1.0, 10.0], [3.0, 30.0], [5.0, 50.0]]
        scorer = LinearScorer.train(train_x, [0, 1, 1], epochs=10)
        assert np.allclose(scorer.mean, np.asarray(train_x).mean(axis=0))
        assert np.allclose(scorer.std, np.asarray(train_x).std(axis=0))

    def test_learns_a_separable_boundary(self):
        stream = Stream(5, "lin")
        train_x, train_y = [], []
        for _ in range(200):
            y = 1 if stream.bernoulli(0.5) else 0
            base = 10.0 if y else 2.0
            train_x.append([base + stream.uniform(-1, 1), stream.uniform(0, 1)])
            train_y.append(y)
        scorer = LinearScorer.train(train_x, train_y)
        assert scorer.score([10.0, 0.5]) > 0.9
        assert scorer.score([2.0, 0.5]) < 0.1

    def test_feature_extraction_shape(self, structuring_escalation):
        context, _ = structuring_escalation
        features = extract_features(context)
        assert len(features) == 7
        assert features[6] == float(context.customer.prior_alert_count)


class TestRunExperiment:
    def test_rule_baseline_reports_only_ranking_metrics(self, small_world):
        world, split = small_world
        report = run_experiment(world, split, "rule_baseline")
        assert report.pr_auc is not None
        assert report.escalate_f1 is not None
        assert report.citation_validity is None
        assert report.cf_flip_rate is None
        doc = report.to_doc()
        assert "citation_validity" not in doc

    def test_unknown_variant_rejected(self, small_world):
        world, split = small_world
        with pytest.raises(ValueError, match="unknown variant"):
            run_experiment(world, split, "gnn")

    def test_full_variant_reports_all_metric_families(self, small_world):
        world, split = small_world
        profile = ExperimentProfile(stability_probes=2, cf_max_proposals=4)
        report = run_experiment(world, split, "full", profile)
        assert report.citation_validity is not None
        assert report.cf_flip_rate is not None
        assert report.cf_stability is not None
        assert report.numerical_inconsistency_rate is not None
        assert report.adversarial_uncertainty_rate is not None
        assert report.n_alerts == len(split.test_alert_ids)

    def test_llm_only_has_no_counterfactual_metrics(self, small_world):
        world, split = small_world
        report = run_experiment(world, split, "llm_only")
        assert report.cf_flip_rate is None
        assert report.citation_validity is not None


class TestReportEmission:
    def test_write_load_round_trip_and_curve(self, small_world, tmp_path):
        world, split = small_world
        report = run_experiment(world, split, "rule_baseline")
        path = write_report(report, str(tmp_path))
        loaded = load_report(path)
        assert loaded.variant_tag == "rule_baseline"
        assert loaded.pr_auc == pytest.approx(report.pr_auc, abs=5e-5)
        assert (tmp_path / "pr_curve.rule_baseline.csv").exists()
        lines = (tmp_path / "pr_curve.rule_baseline.csv").read_text().splitlines()
        assert lines[0] == "threshold,precision,recall"

    def test_table_renders_dash_for_absent_metrics(self, small_world):
        report = MetricsReport(variant_tag="rule_baseline", n_alerts=5, pr_auc=0.5)
        table = render_table1([report])
        assert "| rule_baseline | 0.5000 |" in table
        assert "—" in table

    def test_pr_curve_recall_is_monotone(self):
        scores = [0.9, 0.8, 0.5, 0.3]
        labels = [1, 0, 1, 0]
        rows = pr_curve(scores, labels)
        recalls = [r for _, _, r in rows]
        assert recalls == sorted(recalls)
