from __future__ import annotations

from dataclasses import replace
from itertools import combinations

import pytest

from amltriage import indicators as ind
from amltriage.counterfactual import (
    AdjustWindow,
    CounterfactualEdit,
    ImpossibleEdit,
    PlausibilityViolation,
    RemoveEvidence,
    RemoveTransactionLink,
    SetCounterpartyRisk,
    SubstituteEvidence,
    ToggleIndicator,
    apply_edit,
    atom_from_doc,
    edit_bundle,
    find_counterfactuals,
    propose_edits,
    stability_probe,
    validate_counterfactual,
)
from amltriage.model import AlertContext, CustomerProfile
from amltriage.triage import AdapterSpec, GeneratorConfig, generate
from amltriage.validator import ValidatorTable, validator_score

from .conftest import find_alert


def _context_with(indicators: dict[str, bool]) -> AlertContext:
    customer = CustomerProfile("cus-0001", "individual", "5411", "low", 0, 0)
    from amltriage.model import Alert, TriggerMetadata

    alert = Alert(
        id="al-0001",
        customer_id="cus-0001",
        alert_time=1000,
        window=(0, 2000),
        trigger=TriggerMetadata(("R-GEN",), {"R-GEN": 0.5}, {"R-GEN": 0.35}),
        transaction_ids=(),
        alert_type="structuring",
    )
    base = {name: False for name in ind.INDICATOR_NAMES}
    base.update(indicators)
    return AlertContext(
        alert=alert,
        transactions=(),
        customer=customer,
        indicators=base,
        counterparty_risk={},
        structuring_threshold=10_000_00,
    )


class TestValidatorScore:
    def test_no_indicators_dismiss(self):
        score, disposition = validator_score(_context_with({}))
        assert score == 0.0
        assert disposition == "dismiss"

    def test_structuring_plus_high_risk_escalates(self):
        score, disposition = validator_score(
            _context_with({"structuring_pattern": True, "high_risk_counterparty": True})
        )
        assert score == pytest.approx(0.75)
        assert disposition == "escalate"

    def test_rapid_movement_alone_is_monitor(self):
        score, disposition = validator_score(_context_with({"rapid_movement": True}))
        assert score == pytest.approx(0.40)
        assert disposition == "monitor"

    def test_score_caps_at_one(self):
        score, _ = validator_score(_context_with({n: True for n in ind.INDICATOR_NAMES}))
        assert score <= 1.0

    def test_table_bounds_enforced(self):
        with pytest.raises(ValueError):
            ValidatorTable(theta_monitor=0.7, theta_escalate=0.5)


class TestApplyEdit:
    def test_window_order_violation(self, structuring_escalation):
        context, _ = structuring_escalation
        with pytest.raises(PlausibilityViolation) as err:
            apply_edit(context, CounterfactualEdit((AdjustWindow(5, 1),)))
        assert err.value.rule == "window_order"
        t = context.alert.alert_time
        with pytest.raises(PlausibilityViolation) as err2:
            apply_edit(context, CounterfactualEdit((AdjustWindow(t + 10, t + 20),)))
        assert err2.value.rule == "window_excludes_alert_time"

    def test_remove_transaction_cannot_orphan_alert(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        alert = find_alert(world, label="normal")
        context, _ = bundle_for(alert.id)
        atoms = tuple(RemoveTransactionLink(t.id) for t in context.transactions)
        with pytest.raises(PlausibilityViolation) as err:
            apply_edit(context, CounterfactualEdit(atoms))
        assert err.value.rule == "orphan_alert"

    def test_remove_unknown_transaction_is_impossible(self, structuring_escalation):
        context, _ = structuring_escalation
        with pytest.raises(ImpossibleEdit):
            apply_edit(context, CounterfactualEdit((RemoveTransactionLink("tx-999999"),)))

    def test_toggle_structuring_off_edits_deposits_and_recomputes(self, structuring_escalation):
        context, _ = structuring_escalation
        assert context.indicators["structuring_pattern"]
        edited = apply_edit(context, CounterfactualEdit((ToggleIndicator("structuring_pattern"),)))
        assert not edited.indicators["structuring_pattern"]
        threshold = context.structuring_threshold
        raised = [
            t for t in edited.transactions if t.channel == "cash" and t.amount >= threshold
        ]
        assert raised  # at least one deposit pushed above the reporting threshold
        recomputed = ind.derive_indicators(
            edited.transactions,
            edited.customer,
            edited.alert.window,
            edited.counterparty_risk,
            edited.structuring_threshold,
        )
        assert recomputed == edited.indicators

    def test_toggle_on_transaction_typology_is_impossible(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        alert = find_alert(world, label="normal")
        context, _ = bundle_for(alert.id)
        assert not context.indicators["structuring_pattern"]
        with pytest.raises(ImpossibleEdit, match="fabricate"):
            apply_edit(context, CounterfactualEdit((ToggleIndicator("structuring_pattern"),)))

    def test_toggle_prior_alerts_both_directions(self, structuring_escalation):
        context, _ = structuring_escalation
        assert context.indicators["prior_alerts_ge_2"]
        off = apply_edit(context, CounterfactualEdit((ToggleIndicator("prior_alerts_ge_2"),)))
        assert not off.indicators["prior_alerts_ge_2"]
        assert off.customer.prior_alert_count == 0
        back_on = apply_edit(off, CounterfactualEdit((ToggleIndicator("prior_alerts_ge_2"),)))
        assert back_on.indicators["prior_alerts_ge_2"]

    def test_set_counterparty_risk_requires_known_account(self, structuring_escalation):
        context, _ = structuring_escalation
        with pytest.raises(ImpossibleEdit):
            apply_edit(context, CounterfactualEdit((SetCounterpartyRisk("acct-999999", "low"),)))

    def test_atoms_referencing_removed_entities_rejected(self, structuring_escalation):
        context, bundle = structuring_escalation
        evidence_id = bundle.items[0].id
        edit = CounterfactualEdit((RemoveEvidence(evidence_id), SubstituteEvidence(evidence_id, "ev-policy-6")))
        with pytest.raises(ImpossibleEdit, match="earlier atom"):
            apply_edit(context, edit, bundle)

    def test_toggle_rapid_movement_off(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        alert = find_alert(world, alert_type="rapid_movement", label="suspicious")
        context, _ = bundle_for(alert.id)
        assert context.indicators["rapid_movement"]
        edited = apply_edit(context, CounterfactualEdit((ToggleIndicator("rapid_movement"),)))
        assert not edited.indicators["rapid_movement"]

    def test_toggle_fan_in_off(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        alert = find_alert(world, alert_type="fan_in", label="suspicious")
        context, _ = bundle_for(alert.id)
        assert context.indicators["fan_in"]
        edited = apply_edit(context, CounterfactualEdit((ToggleIndicator("fan_in"),)))
        assert not edited.indicators["fan_in"]

    def test_toggle_high_risk_counterparty_off(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        alert = find_alert(world, alert_type="high_risk_counterparty", label="suspicious")
        context, _ = bundle_for(alert.id)
        assert context.indicators["high_risk_counterparty"]
        edited = apply_edit(context, CounterfactualEdit((ToggleIndicator("high_risk_counterparty"),)))
        assert not edited.indicators["high_risk_counterparty"]


class TestProposeEdits:
    def test_single_driver_toggle_comes_first(self, structuring_escalation):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        proposals = propose_edits(record, context, bundle)
        first = proposals[0]
        assert first.cost == 1
        assert isinstance(first.atoms[0], ToggleIndicator)
        assert first.atoms[0].indicator == "structuring_pattern"

    def test_remove_evidence_singles_precede_two_atom_combos(self, structuring_escalation):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        proposals = propose_edits(record, context, bundle, max_proposals=64)
        costs = [p.cost for p in proposals]
        assert costs == sorted(costs)
        removals = [p for p in proposals if p.cost == 1 and isinstance(p.atoms[0], RemoveEvidence)]
        assert removals
        first_removal_idx = next(
            i for i, p in enumerate(proposals) if p.cost == 1 and isinstance(p.atoms[0], RemoveEvidence)
        )
        first_pair_idx = next((i for i, p in enumerate(proposals) if p.cost == 2), len(proposals))
        assert first_removal_idx < first_pair_idx

    def test_budget_one_caps_cost(self, structuring_escalation):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        assert all(p.cost <= 1 for p in propose_edits(record, context, bundle, budget=1, max_proposals=64))

    def test_max_proposals_cap(self, structuring_escalation):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        assert len(propose_edits(record, context, bundle, max_proposals=3)) == 3


class TestValidateCounterfactual:
    def test_toggle_structuring_flips_and_aligns(self, structuring_escalation, corpus_view):
        context, bundle = structuring_escalation
        pre_score, pre_disposition = validator_score(context)
        assert pre_disposition == "escalate"
        validated = validate_counterfactual(
            CounterfactualEdit((ToggleIndicator("structuring_pattern"),)),
            context,
            bundle,
            GeneratorConfig(),
            corpus_view,
        )
        assert validated.flip_valid
        assert validated.post_disposition == "dismiss"
        assert validated.post_score == pytest.approx(pre_score - 0.45)
        assert validated.rationale_aligned
        assert validated.accepted
        assert all("structuring_pattern" not in p.text for p in validated.post_record.paragraphs)

    def test_generator_that_keeps_citing_removed_evidence_fails_alignment(
        self, structuring_escalation, corpus_view
    ):
        import socketserver
        import threading

        context, bundle = structuring_escalation
        stale = generate(context, bundle, GeneratorConfig())
        from amltriage.model import canonical_serialize

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                self.rfile.readline()
                self.wfile.write(canonical_serialize(stale) + b"\n")

        server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            removed = next(iter(stale.cited_ids()))
            config = GeneratorConfig(
                mode="external",
                external=AdapterSpec(transport="socket", port=server.server_address[1], timeout_s=2.0),
            )
            validated = validate_counterfactual(
                CounterfactualEdit((RemoveEvidence(removed),)), context, bundle, config, corpus_view
            )
            assert not validated.rationale_aligned
            assert not validated.accepted
        finally:
            server.shutdown()

    def test_window_shrink_without_indicator_change_is_not_a_flip(
        self, structuring_escalation, corpus_view
    ):
        context, bundle = structuring_escalation
        t0, t1 = context.alert.window
        validated = validate_counterfactual(
            CounterfactualEdit((AdjustWindow(t0 + 3600, t1),)), context, bundle, GeneratorConfig(), corpus_view
        )
        assert validated.post_score == validated.pre_score
        assert not validated.flip_valid
        assert not validated.accepted


class TestFindCounterfactuals:
    def test_structuring_escalation_yields_accepted_toggle(self, structuring_escalation, corpus_view):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        result = find_counterfactuals(record, context, bundle, GeneratorConfig(), corpus_view)
        assert result.accepted
        assert result.attempts >= 1
        # decision-sensitivity / rationale-alignment duality on every acceptance
        for validated in result.accepted:
            assert validated.flip_valid and validated.rationale_aligned

    def test_dismiss_alert_with_no_indicators_yields_nothing(self, pipeline_parts, corpus_view):
        world, _, _, _, bundle_for = pipeline_parts
        quiet = None
        for alert in world.alerts:
            if alert.label != "normal":
                continue
            context, bundle = bundle_for(alert.id)
            if not any(context.indicators.values()):
                quiet = (context, bundle)
                break
        assert quiet is not None, "seeded world must contain a fully quiet benign alert"
        context, bundle = quiet
        record = generate(context, bundle, GeneratorConfig())
        result = find_counterfactuals(record, context, bundle, GeneratorConfig(), corpus_view)
        assert result.accepted == []
        assert result.attempts > 0

    def test_max_accepted_caps_results(self, structuring_escalation, corpus_view):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        result = find_counterfactuals(
            record, context, bundle, GeneratorConfig(), corpus_view, max_accepted=1, max_proposals=32
        )
        assert len(result.accepted) == 1

    def test_accepted_edits_have_no_accepted_strict_subset(self, structuring_escalation, corpus_view):
        context, bundle = structuring_escalation
        record = generate(context, bundle, GeneratorConfig())
        result = find_counterfactuals(
            record, context, bundle, GeneratorConfig(), corpus_view, max_accepted=8, max_proposals=32
        )
        for validated in result.accepted:
            for size in range(1, validated.edit.cost):
                for subset in combinations(validated.edit.atoms, size):
                    try:
                        sub = validate_counterfactual(
                            CounterfactualEdit(subset), context, bundle, GeneratorConfig(), corpus_view
                        )
                    except (PlausibilityViolation, ImpossibleEdit):
                        continue
                    assert not sub.accepted, (validated.edit, subset)

    def test_single_atom_acceptance_equals_exhaustive_enumeration(self, pipeline_parts, corpus_view):
        """Independent oracle: enumerate the full single-atom universe directly.

        The stated bounds (<=3 active indicators, bundles <=6 items) are met by
        requesting smaller bundles (one case slot, k_total 6)."""
        world, _, _, _, bundle_for = pipeline_parts
        from amltriage.model import RISK_TIERS

        small_quotas = {"policy": 2, "kyc": 1, "trigger": 1, "transaction": 1, "case": 1}
        checked = 0
        for alert in world.alerts:
            context, bundle = bundle_for(alert.id, quotas=small_quotas, k_total=6)
            active = [n for n, v in context.indicators.items() if v]
            if len(active) > 3 or len(bundle.items) > 6:
                continue
            record = generate(context, bundle, GeneratorConfig())

            # oracle universe, written out by hand
            oracle_atoms = [ToggleIndicator(n) for n in ind.INDICATOR_NAMES]
            oracle_atoms += [RemoveEvidence(i.id) for i in bundle.items]
            for account in sorted(context.counterparty_risk):
                for tier in RISK_TIERS:
                    if tier != context.counterparty_risk[account]:
                        oracle_atoms.append(SetCounterpartyRisk(account, tier))
            oracle_accepted = set()
            for atom in oracle_atoms:
                try:
                    validated = validate_counterfactual(
                        CounterfactualEdit((atom,)), context, bundle, GeneratorConfig(), corpus_view
                    )
                except (PlausibilityViolation, ImpossibleEdit):
                    continue
                if validated.accepted:
                    oracle_accepted.add(atom.key())

            result = find_counterfactuals(
                record, context, bundle, GeneratorConfig(), corpus_view,
                budget=1, max_accepted=10_000, max_proposals=10_000,
            )
            found = {v.edit.atoms[0].key() for v in result.accepted}
            assert found == oracle_accepted, alert.id
            checked += 1
        assert checked >= 3  # the sweep must actually exercise the oracle


class TestStabilityProbes:
    def test_permutation_only_probes_are_perfectly_stable(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        for alert in world.alerts[:10]:
            context, bundle = bundle_for(alert.id)
            value = stability_probe(
                context, bundle, GeneratorConfig(), n_probes=5, seed=3, probe_kinds=("permute",)
            )
            assert value == 1.0

    def test_guarded_nudges_do_not_flip(self, pipeline_parts):
        world, _, _, _, bundle_for = pipeline_parts
        for alert in world.alerts[:10]:
            context, bundle = bundle_for(alert.id)
            value = stability_probe(
                context, bundle, GeneratorConfig(), n_probes=4, seed=3, probe_kinds=("nudge",)
            )
            assert value == 1.0

    def test_amounts_near_thresholds_are_never_probed(self, structuring_escalation):
        from amltriage.counterfactual import _nudge_candidates

        context, _ = structuring_escalation
        threshold = context.structuring_threshold
        boundary_tx = replace(context.transactions[0], amount=threshold, id="tx-boundary")
        probed = replace(context, transactions=context.transactions + (boundary_tx,))
        candidates = _nudge_candidates(probed)
        assert all(probed.transactions[i].id != "tx-boundary" for i in candidates)


class TestAtomSerialization:
    @pytest.mark.parametrize(
        "atom",
        [
            ToggleIndicator("fan_in"),
            SetCounterpartyRisk("acct-0002", "low"),
            AdjustWindow(10, 20),
            RemoveTransactionLink("tx-000001"),
            RemoveEvidence("ev-policy-1"),
            SubstituteEvidence("ev-policy-1", "ev-policy-2"),
        ],
    )
    def test_round_trip(self, atom):
        assert atom_from_doc(atom.to_doc()) == atom

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown edit atom"):
            atom_from_doc({"kind": "teleport"})


def test_edit_bundle_rebuilds_fact_derived_items(structuring_escalation, corpus_view):
    context, bundle = structuring_escalation
    edit = CounterfactualEdit((ToggleIndicator("structuring_pattern"),))
    edited_context = apply_edit(context, edit, bundle)
    edited = edit_bundle(bundle, edit, context, edited_context, resolver=corpus_view.item)
    slice_before = next(i for i in bundle.items if i.source_type == "transaction")
    slice_after = next(i for i in edited.items if i.source_type == "transaction")
    assert slice_before.structured_fields["cash_deposit_count"] > 0
    assert slice_after.structured_fields["cash_deposit_count"] < slice_before.structured_fields["cash_deposit_count"]
    trigger_after = next(i for i in edited.items if i.source_type == "trigger")
    assert trigger_after.structured_fields["total_amount"] == sum(
        t.amount for t in edited_context.transactions
    )
