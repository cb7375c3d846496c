from __future__ import annotations

import pytest

from amltriage.config import PipelineConfig
from amltriage.evidence import AclContext, build_index, retrieve_bundle
from amltriage.model import Claim, RationaleParagraph, TriageRecord
from amltriage.simgen import WorldConfig, build_case_memory, build_context, generate_world, time_split
from amltriage.validator import validator_score
from amltriage.verifier import CorpusView

QUOTAS = {"policy": 2, "kyc": 1, "trigger": 1, "transaction": 1, "case": 2}
ACL = AclContext(principal="tests", clearance="confidential")


@pytest.fixture(scope="session")
def small_world():
    config = WorldConfig(
        seed=11,
        n_accounts=30,
        n_days=30,
        typology_counts={
            "structuring": 3,
            "rapid_movement": 3,
            "high_risk_counterparty": 3,
            "fan_in": 3,
        },
        noise_alert_rate=0.5,
    )
    world = generate_world(config)
    split = time_split(world.alerts)
    world.evidence_corpus.extend(build_case_memory(split, world))
    return world, split


@pytest.fixture(scope="session")
def small_index(small_world):
    world, _ = small_world
    return build_index(world.evidence_corpus)


@pytest.fixture(scope="session")
def corpus_view(small_world, small_index):
    world, _ = small_world
    return CorpusView(small_index, world.entity_lexicon())


@pytest.fixture(scope="session")
def pipeline_parts(small_world, small_index, corpus_view):
    """(world, split, index, view) plus a bundle builder bound to defaults."""
    world, split = small_world

    def bundle_for(alert_id, acl=ACL, quotas=QUOTAS, k_total=8):
        context = build_context(world, alert_id)
        return context, retrieve_bundle(small_index, context, acl, quotas, k_total)

    return world, split, small_index, corpus_view, bundle_for


def find_alert(world, *, alert_type=None, disposition=None, label=None):
    """First alert matching the given facets (validator disposition included)."""
    for alert in world.alerts:
        if alert_type is not None and alert.alert_type != alert_type:
            continue
        if label is not None and alert.label != label:
            continue
        if disposition is not None:
            context = build_context(world, alert.id)
            _, disp = validator_score(context)
            if disp != disposition:
                continue
        return alert
    raise AssertionError(f"no alert with type={alert_type} disposition={disposition} label={label}")


@pytest.fixture(scope="session")
def structuring_escalation(pipeline_parts):
    """The canonical seeded case: a structuring alert whose customer is a
    repeat-alert customer, landing in the escalate band."""
    world, _, _, _, bundle_for = pipeline_parts
    alert = find_alert(world, alert_type="structuring", disposition="escalate", label="suspicious")
    context, bundle = bundle_for(alert.id)
    return context, bundle


def make_record(**overrides) -> TriageRecord:
    base = dict(
        alert_id="al-0001",
        disposition="monitor",
        confidence=0.5,
        typologies=("structuring",),
        paragraphs=(
            RationaleParagraph(
                text="Flagged deposits under review.",
                citations=("ev-policy-1", "ev-transaction-1"),
                claims=(Claim("amount", 1170000, "ev-transaction-1", "total_amount"),),
            ),
        ),
        supporting_ids=("ev-policy-1", "ev-transaction-1"),
        contradicting_or_missing_ids=(),
        unknowns=(),
        next_actions=("expand lookback window",),
        generator_tag="reference",
    )
    base.update(overrides)
    return TriageRecord(**base)


@pytest.fixture
def default_config():
    return PipelineConfig()
