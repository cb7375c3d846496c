"""Deterministic AMLSim-style synthetic world generator.

Generates accounts, background transactions, embedded laundering typologies,
alerts with ground-truth labels, and the evidence corpus (policy / KYC /
trigger / transaction-slice items; case items are built separately from the
training split). All randomness flows through counter-based streams keyed by
the config seed, split per entity, so adding one account never reshuffles the
draws of the others.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

from . import indicators as ind
from .model import (
    ALERT_TYPES,
    Alert,
    AlertContext,
    CustomerProfile,
    EvidenceItem,
    Transaction,
    TriggerMetadata,
    canonical_json_bytes,
    money,
    utc_label,
)
from .rng import Stream

HOURS = 3600
DAYS = 24 * HOURS
EPOCH_START = 1704067200  # 2024-01-01T00:00:00Z

RULE_FOR_TYPE = {
    "structuring": "R-STRUCT",
    "rapid_movement": "R-RAPID",
    "high_risk_counterparty": "R-HRC",
    "fan_in": "R-FANIN",
}
NOISE_RULE = "R-GEN"

INDUSTRY_CODES = ("5411", "6011", "7299", "4511", "8111")

TYPOLOGY_PHRASE = {
    "structuring": "multiple sub-threshold cash deposits",
    "rapid_movement": "funds forwarded through consecutive transfer hops",
    "high_risk_counterparty": "repeated wires to a high-risk counterparty",
    "fan_in": "inflows collected from many distinct sources",
}


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 7
    n_accounts: int = 50
    n_days: int = 30
    background_tx_per_account_per_day: float = 0.5
    typology_counts: dict[str, int] = field(default_factory=dict)
    structuring_threshold: int = 10_000_00
    noise_alert_rate: float = 0.5
    high_risk_geo_set: tuple[str, ...] = ("IR", "KP", "MM")

    def to_doc(self) -> dict:
        return {
            "seed": self.seed,
            "n_accounts": self.n_accounts,
            "n_days": self.n_days,
            "background_tx_per_account_per_day": self.background_tx_per_account_per_day,
            "typology_counts": dict(self.typology_counts),
            "structuring_threshold": self.structuring_threshold,
            "noise_alert_rate": self.noise_alert_rate,
            "high_risk_geo_set": list(self.high_risk_geo_set),
        }

    @staticmethod
    def from_doc(doc: dict) -> "WorldConfig":
        return WorldConfig(
            seed=int(doc.get("seed", 7)),
            n_accounts=int(doc.get("n_accounts", 50)),
            n_days=int(doc.get("n_days", 30)),
            background_tx_per_account_per_day=float(
                doc.get("background_tx_per_account_per_day", 0.5)
            ),
            typology_counts={k: int(v) for k, v in doc.get("typology_counts", {}).items()},
            structuring_threshold=int(doc.get("structuring_threshold", 10_000_00)),
            noise_alert_rate=float(doc.get("noise_alert_rate", 0.5)),
            high_risk_geo_set=tuple(doc.get("high_risk_geo_set", ("IR", "KP", "MM"))),
        )


@dataclass(frozen=True)
class Account:
    id: str
    kind: str  # customer | merchant | payroll | external
    geography: str
    risk_tier: str
    customer_id: str | None = None
    customer_type: str = "individual"
    industry_code: str = "5411"
    risk_rating: str = "low"
    onboarding_time: int = EPOCH_START
    baseline_prior_alerts: int = 0

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "kind": self.kind,
            "geography": self.geography,
            "risk_tier": self.risk_tier,
        }
        if self.customer_id is not None:
            doc.update(
                {
                    "customer_id": self.customer_id,
                    "customer_type": self.customer_type,
                    "industry_code": self.industry_code,
                    "risk_rating": self.risk_rating,
                    "onboarding_time": self.onboarding_time,
                    "baseline_prior_alerts": self.baseline_prior_alerts,
                }
            )
        return doc

    @staticmethod
    def from_doc(doc: dict) -> "Account":
        return Account(
            id=doc["id"],
            kind=doc["kind"],
            geography=doc["geography"],
            risk_tier=doc["risk_tier"],
            customer_id=doc.get("customer_id"),
            customer_type=doc.get("customer_type", "individual"),
            industry_code=doc.get("industry_code", "5411"),
            risk_rating=doc.get("risk_rating", "low"),
            onboarding_time=int(doc.get("onboarding_time", EPOCH_START)),
            baseline_prior_alerts=int(doc.get("baseline_prior_alerts", 0)),
        )


@dataclass(frozen=True)
class TypologyInstance:
    alert_type: str
    transaction_ids: tuple[str, ...]

    def to_doc(self) -> dict:
        return {"alert_type": self.alert_type, "transaction_ids": list(self.transaction_ids)}


@dataclass
class World:
    config: WorldConfig
    accounts: list[Account]
    transactions: list[Transaction]
    typology_instances: list[TypologyInstance]
    alerts: list[Alert]
    evidence_corpus: list[EvidenceItem]

    def __post_init__(self):
        self._tx_by_id = {t.id: t for t in self.transactions}
        self._alert_by_id = {a.id: a for a in self.alerts}
        self._account_by_id = {a.id: a for a in self.accounts}

    def tx(self, tx_id: str) -> Transaction:
        return self._tx_by_id[tx_id]

    def alert(self, alert_id: str) -> Alert:
        return self._alert_by_id[alert_id]

    def account(self, account_id: str) -> Account:
        return self._account_by_id[account_id]

    def account_for_customer(self, customer_id: str) -> Account:
        return self._account_by_id[customer_id.replace("cus-", "acct-", 1)]

    def typology_tx_ids(self) -> set[str]:
        out: set[str] = set()
        for inst in self.typology_instances:
            out.update(inst.transaction_ids)
        return out

    def entity_lexicon(self) -> set[str]:
        lex = {a.id for a in self.accounts}
        lex.update(a.customer_id for a in self.accounts if a.customer_id)
        return lex

    def to_doc(self) -> dict:
        return {
            "config": self.config.to_doc(),
            "accounts": [a.to_doc() for a in self.accounts],
            "transactions": [t.to_doc() for t in self.transactions],
            "typology_instances": [t.to_doc() for t in self.typology_instances],
            "alerts": [a.to_doc() for a in self.alerts],
            "evidence_corpus": [e.to_doc() for e in self.evidence_corpus],
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_doc())


@dataclass(frozen=True)
class DatasetSplit:
    train_alert_ids: tuple[str, ...]
    val_alert_ids: tuple[str, ...]
    test_alert_ids: tuple[str, ...]
    boundary_times: tuple[int, int]
    leakage_attestation: bool

    def to_doc(self) -> dict:
        return {
            "train_alert_ids": list(self.train_alert_ids),
            "val_alert_ids": list(self.val_alert_ids),
            "test_alert_ids": list(self.test_alert_ids),
            "boundary_times": list(self.boundary_times),
            "leakage_attestation": self.leakage_attestation,
        }

    @staticmethod
    def from_doc(doc: dict) -> "DatasetSplit":
        return DatasetSplit(
            train_alert_ids=tuple(doc["train_alert_ids"]),
            val_alert_ids=tuple(doc["val_alert_ids"]),
            test_alert_ids=tuple(doc["test_alert_ids"]),
            boundary_times=(int(doc["boundary_times"][0]), int(doc["boundary_times"][1])),
            leakage_attestation=bool(doc["leakage_attestation"]),
        )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self, config: WorldConfig):
        self.config = config
        self.accounts: list[Account] = []
        self.transactions: list[Transaction] = []
        self.instances: list[TypologyInstance] = []
        self._acct_seq = 0
        self._tx_seq = 0

    def new_account(self, kind: str, geography: str = "US", risk_tier: str = "low", **kw) -> Account:
        self._acct_seq += 1
        account = Account(id=f"acct-{self._acct_seq:04d}", kind=kind, geography=geography, risk_tier=risk_tier, **kw)
        self.accounts.append(account)
        return account

    def new_tx(self, timestamp: int, amount: int, src: str, dst: str, channel: str, geography: str = "US") -> Transaction:
        self._tx_seq += 1
        tx = Transaction(
            id=f"tx-{self._tx_seq:06d}",
            timestamp=int(timestamp),
            amount=int(amount),
            src_account=src,
            dst_account=dst,
            channel=channel,
            geography=geography,
        )
        self.transactions.append(tx)
        return tx


def _validate_config(config: WorldConfig) -> None:
    if config.n_accounts <= 0 or config.n_days <= 0:
        raise ValueError("n_accounts and n_days must be positive")
    if config.structuring_threshold <= 0:
        raise ValueError("structuring_threshold must be positive")
    if not (0.0 <= config.noise_alert_rate < 1.0):
        raise ValueError("noise_alert_rate must be in [0, 1)")
    for alert_type, count in config.typology_counts.items():
        if alert_type not in ALERT_TYPES:
            raise ValueError(f"unknown typology {alert_type}")
        if count < 0:
            raise ValueError("typology counts must be >= 0")
    total = sum(config.typology_counts.values())
    if total > 0 and config.n_days < 9:
        raise ValueError("typology transactions cannot fit in n_days; need n_days >= 9")
    if total > config.n_accounts:
        raise ValueError("typology instances exceed customer accounts; raise n_accounts")


def embed_typology(builder: _Builder, alert_type: str, customer_account: Account, rng: Stream) -> TypologyInstance:
    """Embed one typology instance and return its member transactions.

    structuring: 3-6 sub-threshold cash deposits to one account within 72h
    summing past the threshold. rapid_movement: a 3-5 hop transfer chain
    within 48h, each hop forwarding >=85% of what it received.
    high_risk_counterparty: >=2 wires to a high-tier account in a high-risk
    geography. fan_in: >=5 distinct sources into one account within 7 days,
    then one outbound moving >=70% of the inflow.
    """
    config = builder.config
    threshold = config.structuring_threshold
    n_days = config.n_days
    start = EPOCH_START + rng.randint(1, max(1, n_days - 8)) * DAYS + rng.randint(0, 12) * HOURS
    txs: list[Transaction] = []

    if alert_type == "structuring":
        depositor = builder.new_account("external", risk_tier="low")
        k = rng.randint(3, 6)
        amounts = [int(rng.uniform(0.30, 0.95) * threshold) for _ in range(k)]
        if sum(amounts) <= threshold:
            deficit = threshold - sum(amounts[:-1])
            lo = max(int(0.30 * threshold), deficit + threshold // 100)
            amounts[-1] = rng.randint(lo, int(0.95 * threshold))
        t = start
        for amount in amounts:
            t += rng.randint(1, 12) * HOURS
            txs.append(builder.new_tx(t, amount, depositor.id, customer_account.id, "cash"))
        span = txs[-1].timestamp - txs[0].timestamp
        assert span <= 72 * HOURS, "structuring deposits must stay inside 72h"

    elif alert_type == "rapid_movement":
        hops = rng.randint(3, 5)
        mules = [builder.new_account("external", risk_tier="low") for _ in range(hops)]
        path = [customer_account] + mules
        amount = rng.randint(5_000_00, 20_000_00)
        t = start
        for i in range(hops):
            t += rng.randint(1, 8) * HOURS
            txs.append(builder.new_tx(t, amount, path[i].id, path[i + 1].id, "wire"))
            amount = int(amount * rng.uniform(0.86, 0.98))
        assert txs[-1].timestamp - txs[0].timestamp <= 48 * HOURS

    elif alert_type == "high_risk_counterparty":
        geo = config.high_risk_geo_set[rng.randint(0, len(config.high_risk_geo_set) - 1)]
        target = builder.new_account("external", geography=geo, risk_tier="high")
        n_wires = rng.randint(2, 4)
        t = start
        for _ in range(n_wires):
            t += rng.randint(6, 30) * HOURS
            txs.append(
                builder.new_tx(t, rng.randint(1_000_00, 9_000_00), customer_account.id, target.id, "wire", geography=geo)
            )

    elif alert_type == "fan_in":
        n_sources = rng.randint(5, 8)
        sources = [builder.new_account("external", risk_tier="low") for _ in range(n_sources)]
        t = start
        inflow = 0
        for source in sources:
            t += rng.randint(6, 20) * HOURS
            amount = rng.randint(1_000_00, 5_000_00)
            inflow += amount
            txs.append(builder.new_tx(t, amount, source.id, customer_account.id, "ach"))
        sink = builder.new_account("external", risk_tier="low")
        t += rng.randint(2, 12) * HOURS
        out_amount = int(inflow * rng.uniform(0.70, 0.95))
        txs.append(builder.new_tx(t, out_amount, customer_account.id, sink.id, "wire"))
        assert txs[-1].timestamp - txs[0].timestamp <= 8 * DAYS

    else:
        raise ValueError(f"unknown typology {alert_type}")

    instance = TypologyInstance(alert_type=alert_type, transaction_ids=tuple(t.id for t in txs))
    builder.instances.append(instance)
    return instance


def _background(builder: _Builder, account: Account, merchants: list[Account], payroll: Account, rng: Stream) -> None:
    config = builder.config
    rate = config.background_tx_per_account_per_day
    for day in range(config.n_days):
        count = int(math.floor(rate))
        if rng.bernoulli(rate - math.floor(rate)):
            count += 1
        for k in range(count):
            t = EPOCH_START + day * DAYS + rng.randint(6, 22) * HOURS + rng.randint(0, 3599)
            if rng.bernoulli(0.7):
                merchant = merchants[rng.randint(0, len(merchants) - 1)]
                roll = rng.uniform()
                channel = "ach" if roll < 0.4 else ("internal" if roll < 0.7 else ("cash" if roll < 0.9 else "wire"))
                builder.new_tx(t, rng.randint(10_00, 500_00), account.id, merchant.id, channel)
            else:
                builder.new_tx(t, rng.randint(500_00, 3_000_00), payroll.id, account.id, "ach")


def generate_world(config: WorldConfig) -> World:
    """Build a complete world from the config; pure function of the config."""
    _validate_config(config)
    root = Stream(config.seed, "world")
    builder = _Builder(config)

    customer_accounts: list[Account] = []
    for i in range(config.n_accounts):
        s = root.substream("customer", i)
        tier = "high" if s.bernoulli(0.1) else ("medium" if s.bernoulli(0.33) else "low")
        baseline = s.randint(2, 3) if s.bernoulli(0.25) else (1 if s.bernoulli(0.2) else 0)
        account = builder.new_account(
            "customer",
            risk_tier=tier,
            customer_id=f"cus-{i + 1:04d}",
            customer_type="business" if s.bernoulli(0.3) else "individual",
            industry_code=INDUSTRY_CODES[s.randint(0, len(INDUSTRY_CODES) - 1)],
            risk_rating=tier,
            onboarding_time=EPOCH_START - s.randint(200, 1800) * DAYS,
            baseline_prior_alerts=baseline,
        )
        customer_accounts.append(account)

    merchants = [builder.new_account("merchant") for _ in range(max(3, config.n_accounts // 10))]
    payroll = builder.new_account("payroll")

    for i, account in enumerate(customer_accounts):
        _background(builder, account, merchants, payroll, root.substream("background", i))

    # typology instances: one dedicated customer each keeps alerts single-typology
    assignment = root.substream("assign").shuffle(list(range(config.n_accounts)))
    instance_specs = []
    for alert_type in sorted(config.typology_counts):
        for j in range(config.typology_counts[alert_type]):
            instance_specs.append((alert_type, j))
    typology_customers: dict[int, tuple[str, int]] = {}
    for idx, (alert_type, j) in enumerate(instance_specs):
        typology_customers[assignment[idx]] = (alert_type, j)

    pending_alerts = []
    for idx, (alert_type, j) in enumerate(instance_specs):
        account_pos = assignment[idx]  # customers occupy builder.accounts[0:n_accounts]
        account = customer_accounts[account_pos]
        # escalation diversity: some typology customers are repeat-alert customers
        s = root.substream("typology", alert_type, j)
        if s.bernoulli(0.4) and account.baseline_prior_alerts < 2:
            account = replace(account, baseline_prior_alerts=2)
            builder.accounts[account_pos] = account
            customer_accounts[account_pos] = account
        instance = embed_typology(builder, alert_type, account, s.substream("embed"))
        txs = [t for t in builder.transactions if t.id in set(instance.transaction_ids)]
        extra = [
            t
            for t in builder.transactions
            if (t.src_account == account.id or t.dst_account == account.id)
            and t.id not in set(instance.transaction_ids)
            and txs[0].timestamp - 1 * HOURS <= t.timestamp <= txs[-1].timestamp + 1 * HOURS
        ]
        window_txs = sorted(txs + extra, key=lambda t: (t.timestamp, t.id))
        t0 = window_txs[0].timestamp - 1 * HOURS
        t1 = window_txs[-1].timestamp + 1 * HOURS
        rule = RULE_FOR_TYPE[alert_type]
        pending_alerts.append(
            {
                "customer_id": account.customer_id,
                "alert_time": t1,
                "window": (t0, t1),
                "trigger": TriggerMetadata(
                    rule_ids=(rule,),
                    rule_scores={rule: round(s.substream("score").uniform(0.55, 0.95), 4)},
                    thresholds={rule: 0.5},
                ),
                "transaction_ids": tuple(t.id for t in window_txs),
                "alert_type": alert_type,
                "label": "suspicious",
            }
        )

    # benign alerts on purely background activity
    n_suspicious = len(pending_alerts)
    rate = config.noise_alert_rate
    n_benign = int(round(n_suspicious * rate / (1.0 - rate))) if n_suspicious else 0
    benign_pool = [
        a for i, a in enumerate(customer_accounts) if i not in typology_customers
    ]
    benign_pool = [
        a
        for a in benign_pool
        if any(t.src_account == a.id or t.dst_account == a.id for t in builder.transactions)
    ]
    noise = root.substream("noise")
    for i in range(n_benign):
        if not benign_pool:
            break
        account = benign_pool[noise.randint(0, len(benign_pool) - 1)]
        own = [
            t
            for t in builder.transactions
            if t.src_account == account.id or t.dst_account == account.id
        ]
        anchor = own[noise.randint(0, len(own) - 1)]
        t0 = anchor.timestamp - 1 * DAYS
        t1 = anchor.timestamp + 2 * DAYS
        window_txs = sorted(
            (t for t in own if t0 <= t.timestamp <= t1), key=lambda t: (t.timestamp, t.id)
        )
        pending_alerts.append(
            {
                "customer_id": account.customer_id,
                "alert_time": t1,
                "window": (t0, t1),
                "trigger": TriggerMetadata(
                    rule_ids=(NOISE_RULE,),
                    rule_scores={NOISE_RULE: round(noise.substream("score", i).uniform(0.35, 0.85), 4)},
                    thresholds={NOISE_RULE: 0.35},
                ),
                "transaction_ids": tuple(t.id for t in window_txs),
                "alert_type": ALERT_TYPES[noise.randint(0, len(ALERT_TYPES) - 1)],
                "label": "normal",
            }
        )

    pending_alerts.sort(key=lambda a: (a["alert_time"], a["customer_id"]))
    alerts = [
        Alert(id=f"al-{i + 1:04d}", **spec) for i, spec in enumerate(pending_alerts)
    ]

    world = World(
        config=config,
        accounts=list(builder.accounts),
        transactions=list(builder.transactions),
        typology_instances=list(builder.instances),
        alerts=alerts,
        evidence_corpus=[],
    )
    world.evidence_corpus.extend(_policy_items(config))
    world.evidence_corpus.extend(_kyc_items(world))
    for alert in alerts:
        world.evidence_corpus.append(build_trigger_item(world, alert))
        world.evidence_corpus.append(build_slice_item_for_alert(world, alert))
    return world


# ---------------------------------------------------------------------------
# Evidence synthesis
# ---------------------------------------------------------------------------


def _policy_items(config: WorldConfig) -> list[EvidenceItem]:
    limit = money(config.structuring_threshold)
    mid_sim = EPOCH_START + (config.n_days // 2) * DAYS
    structuring_body = (
        "watch for customers splitting cash deposits into multiple sub-threshold "
        f"amounts, each below the {limit} reporting limit, arriving inside a 72 hour span. "
        "Escalate when the combined deposit total tops the limit."
    )
    items = [
        EvidenceItem(
            id="ev-policy-1",
            source_type="policy",
            effective_time=EPOCH_START - 90 * DAYS,
            acl_tag="public",
            canonical_text=f"Structuring guidance v1: {structuring_body}",
            structured_fields={"threshold": config.structuring_threshold, "typology": "structuring"},
            version=1,
        ),
        EvidenceItem(
            id="ev-policy-2",
            source_type="policy",
            effective_time=mid_sim,
            acl_tag="public",
            canonical_text=(
                f"Structuring guidance v2: {structuring_body} "
                "Confirm depositor identity for every branch visit."
            ),
            structured_fields={"threshold": config.structuring_threshold, "typology": "structuring"},
            version=2,
            supersedes="ev-policy-1",
        ),
        EvidenceItem(
            id="ev-policy-3",
            source_type="policy",
            effective_time=EPOCH_START - 60 * DAYS,
            acl_tag="public",
            canonical_text=(
                "Rapid movement guidance: funds that hop through consecutive transfer "
                "chains, with most of the received amount forwarded onward again inside "
                "48 hour windows, indicate layering. Escalate chains of three or more transfers."
            ),
            structured_fields={"typology": "rapid_movement"},
            version=1,
        ),
        EvidenceItem(
            id="ev-policy-4",
            source_type="policy",
            effective_time=EPOCH_START - 60 * DAYS,
            acl_tag="public",
            canonical_text=(
                "High-risk counterparty guidance: repeated wire transfers to counterparties "
                "rated high risk or located in designated high-risk jurisdictions warrant "
                "escalated review. Two or more wires to one such counterparty is the working signal."
            ),
            structured_fields={"typology": "high_risk_counterparty"},
            version=1,
        ),
        EvidenceItem(
            id="ev-policy-5",
            source_type="policy",
            effective_time=EPOCH_START - 60 * DAYS,
            acl_tag="public",
            canonical_text=(
                "Fan-in consolidation guidance: an account collecting inflows from five or "
                "more distinct sources inside seven days, followed by an outbound transfer "
                "consolidating most of the funds, matches the fan-in collection typology. "
                "Escalate consolidated fan-in activity."
            ),
            structured_fields={"typology": "fan_in"},
            version=1,
        ),
        EvidenceItem(
            id="ev-policy-6",
            source_type="policy",
            effective_time=EPOCH_START - 60 * DAYS,
            acl_tag="public",
            canonical_text=(
                "General monitoring guidance: repeat-alert customers deserve heightened "
                "scrutiny; review prior alerts and dispositions. Monitor borderline activity, "
                "escalate corroborated typology matches, dismiss explained behavior. Record "
                "unknowns and recommended next steps with every disposition."
            ),
            structured_fields={"typology": "general"},
            version=1,
        ),
    ]
    return items


def render_kyc_item(
    item_id: str,
    customer_id: str,
    customer_type: str,
    industry_code: str,
    risk_rating: str,
    onboarding_time: int,
    prior_alert_count: int,
    account_id: str,
    effective_time: int,
) -> EvidenceItem:
    return EvidenceItem(
        id=item_id,
        source_type="kyc",
        effective_time=effective_time,
        acl_tag="restricted",
        canonical_text=(
            f"Customer profile {customer_id}: {customer_type} under industry "
            f"code {industry_code}, risk rating {risk_rating}, onboarded "
            f"{utc_label(onboarding_time)}, prior alerts on file: "
            f"{prior_alert_count}. Primary account {account_id}."
        ),
        structured_fields={
            "customer_id": customer_id,
            "customer_type": customer_type,
            "industry_code": industry_code,
            "risk_rating": risk_rating,
            "onboarding_time": onboarding_time,
            "prior_alert_count": prior_alert_count,
        },
    )


def _kyc_items(world: World) -> list[EvidenceItem]:
    seen: list[str] = []
    for alert in world.alerts:
        if alert.customer_id not in seen:
            seen.append(alert.customer_id)
    items = []
    for seq, customer_id in enumerate(seen, start=1):
        account = world.account_for_customer(customer_id)
        items.append(
            render_kyc_item(
                item_id=f"ev-kyc-{seq}",
                customer_id=customer_id,
                customer_type=account.customer_type,
                industry_code=account.industry_code,
                risk_rating=account.risk_rating,
                onboarding_time=account.onboarding_time,
                prior_alert_count=account.baseline_prior_alerts,
                account_id=account.id,
                effective_time=EPOCH_START - 30 * DAYS,
            )
        )
    return items


def render_trigger_item(alert: Alert, transactions: list[Transaction], structuring_threshold: int) -> EvidenceItem:
    seq = int(alert.id.split("-")[1])
    rule = alert.trigger.rule_ids[0]
    score = alert.trigger.rule_scores[rule]
    score_threshold = alert.trigger.thresholds[rule]
    txs = transactions
    total = sum(t.amount for t in txs)
    text = (
        f"Alert trigger for {alert.id} (customer {alert.customer_id}): rule {rule} scored "
        f"{score:.4f} against score threshold {score_threshold:.4f}; flagged window "
        f"{utc_label(alert.window[0])} to {utc_label(alert.window[1])}; flagged total {money(total)}."
    )
    fields = {
        "alert_id": alert.id,
        "customer_id": alert.customer_id,
        "rule_id": rule,
        "score": score,
        "score_threshold": score_threshold,
        "window_start": alert.window[0],
        "window_end": alert.window[1],
        "total_amount": total,
    }
    if alert.alert_type == "structuring":
        text += f" Reporting limit {money(structuring_threshold)} applies."
        fields["amount_threshold"] = structuring_threshold
    return EvidenceItem(
        id=f"ev-trigger-{seq}",
        source_type="trigger",
        effective_time=alert.alert_time,
        acl_tag="public",
        canonical_text=text,
        structured_fields=fields,
    )


def build_trigger_item(world: World, alert: Alert) -> EvidenceItem:
    txs = [world.tx(t) for t in alert.transaction_ids]
    return render_trigger_item(alert, txs, world.config.structuring_threshold)


def build_slice_item(
    alert: Alert,
    transactions: list[Transaction],
    counterparty_risk: dict[str, str],
    customer_id: str,
    structuring_threshold: int,
) -> EvidenceItem:
    """Render a transaction-slice evidence item from the given facts.

    Also used by the counterfactual layer to rebuild the slice after an edit,
    keeping claims verifiable against the edited facts.
    """
    seq = int(alert.id.split("-")[1])
    account_id = customer_id.replace("cus-", "acct-", 1)
    txs = sorted(transactions, key=lambda t: (t.timestamp, t.id))
    total = sum(t.amount for t in txs)
    max_amount = max((t.amount for t in txs), default=0)
    deposits = [
        t
        for t in txs
        if t.channel == "cash" and t.dst_account == account_id and t.amount < structuring_threshold
    ]
    chain = ind.longest_forwarding_chain(txs)
    touched = {t.src_account for t in txs} | {t.dst_account for t in txs}
    counterparties = sorted(touched - {account_id})
    lines = [
        f"{t.id} {utc_label(t.timestamp)} {money(t.amount)} {t.src_account}->{t.dst_account} {t.channel} {t.geography}."
        for t in txs
    ]
    cp_render = ", ".join(
        f"{c} (tier {counterparty_risk.get(c, 'low')})" for c in counterparties
    ) or "none"
    fields = {
        "alert_id": alert.id,
        "customer_id": customer_id,
        "total_amount": total,
        "tx_count": len(txs),
        "max_amount": max_amount,
        "window_start": alert.window[0],
        "window_end": alert.window[1],
        "cash_deposit_count": len(deposits),
        "cash_deposit_total": sum(t.amount for t in deposits),
        "max_chain_length": len(chain),
        "high_risk_wire_count": ind.high_risk_wire_count(txs, counterparty_risk),
        "max_distinct_inflow_sources_7d": ind.max_distinct_inflow_sources(txs),
    }
    text = (
        f"Transaction slice for {alert.id} (customer {customer_id}, account {account_id}): "
        f"{fields['tx_count']} transactions from {utc_label(fields['window_start'])} to "
        f"{utc_label(fields['window_end'])}, total {money(total)}, largest {money(max_amount)}. "
        + " ".join(lines)
        + f" Counterparties: {cp_render}. Cash deposits below limit: {fields['cash_deposit_count']} "
        f"totaling {money(fields['cash_deposit_total'])}. Longest forwarding chain: "
        f"{fields['max_chain_length']} transfers. Wires to high-risk counterparties: "
        f"{fields['high_risk_wire_count']}. Peak distinct inflow sources in seven days: "
        f"{fields['max_distinct_inflow_sources_7d']}."
    )
    return EvidenceItem(
        id=f"ev-transaction-{seq}",
        source_type="transaction",
        effective_time=alert.alert_time,
        acl_tag="restricted",
        canonical_text=text,
        structured_fields=fields,
    )


def build_slice_item_for_alert(world: World, alert: Alert) -> EvidenceItem:
    txs = [world.tx(t) for t in alert.transaction_ids]
    risk = _counterparty_risk(world, alert, txs)
    return build_slice_item(alert, txs, risk, alert.customer_id, world.config.structuring_threshold)


def _counterparty_risk(world: World, alert: Alert, txs: list[Transaction]) -> dict[str, str]:
    account_id = world.account_for_customer(alert.customer_id).id
    out = {}
    for tx in txs:
        for acct in (tx.src_account, tx.dst_account):
            if acct != account_id:
                out[acct] = world.account(acct).risk_tier
    return out


# ---------------------------------------------------------------------------
# Contexts, splits, case memory
# ---------------------------------------------------------------------------


def build_context(world: World, alert_id: str) -> AlertContext:
    alert = world.alert(alert_id)
    txs = [world.tx(t) for t in alert.transaction_ids]
    account = world.account_for_customer(alert.customer_id)
    in_world_priors = sum(
        1
        for a in world.alerts
        if a.customer_id == alert.customer_id and a.alert_time < alert.alert_time
    )
    customer = CustomerProfile(
        customer_id=alert.customer_id,
        customer_type=account.customer_type,
        industry_code=account.industry_code,
        risk_rating=account.risk_rating,
        onboarding_time=account.onboarding_time,
        prior_alert_count=account.baseline_prior_alerts + in_world_priors,
    )
    risk = _counterparty_risk(world, alert, txs)
    derived = ind.derive_indicators(
        txs, customer, alert.window, risk, world.config.structuring_threshold
    )
    return AlertContext(
        alert=alert,
        transactions=tuple(sorted(txs, key=lambda t: (t.timestamp, t.id))),
        customer=customer,
        indicators=derived,
        counterparty_risk=risk,
        structuring_threshold=world.config.structuring_threshold,
    )


def time_split(alerts: list[Alert], ratios: tuple[float, float, float] = (0.70, 0.10, 0.20)) -> DatasetSplit:
    """Time-aware split: earliest 70% train, next 10% val, latest 20% test.

    Alerts sort by (alert_time, id); train and val sizes floor, remainder to
    test. Timestamp ties at a boundary break by id, and the boundary-time
    invariant relaxes to <= at ties.
    """
    if not alerts:
        raise ValueError("cannot split an empty alert list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    ordered = sorted(alerts, key=lambda a: (a.alert_time, a.id))
    n = len(ordered)
    n_train = int(math.floor(ratios[0] * n))
    n_val = int(math.floor(ratios[1] * n))
    train = ordered[:n_train]
    val = ordered[n_train : n_train + n_val]
    test = ordered[n_train + n_val :]
    min_time = ordered[0].alert_time
    t_train_end = train[-1].alert_time if train else min_time - 1
    t_val_end = val[-1].alert_time if val else t_train_end
    return DatasetSplit(
        train_alert_ids=tuple(a.id for a in train),
        val_alert_ids=tuple(a.id for a in val),
        test_alert_ids=tuple(a.id for a in test),
        boundary_times=(t_train_end, t_val_end),
        leakage_attestation=True,
    )


def build_case_memory(split: DatasetSplit, world: World) -> list[EvidenceItem]:
    """One case item per training alert; never mentions val/test alerts."""
    forbidden = set(split.val_alert_ids) | set(split.test_alert_ids)
    items = []
    for seq, alert_id in enumerate(split.train_alert_ids, start=1):
        alert = world.alert(alert_id)
        txs = [world.tx(t) for t in alert.transaction_ids]
        account_id = world.account_for_customer(alert.customer_id).id
        total = sum(t.amount for t in txs)
        touched = {t.src_account for t in txs} | {t.dst_account for t in txs}
        counterparties = sorted(touched - {account_id})[:2]
        burst = _burstiness(txs)
        if alert.label == "suspicious":
            phrase = TYPOLOGY_PHRASE[alert.alert_type]
            word = "escalated"
        else:
            phrase = "routine account activity, no typology corroborated"
            word = "dismissed"
        text = (
            f"Case {alert.id} (customer {alert.customer_id}, {alert.alert_type.replace('_', ' ')}): "
            f"{phrase}; total amount {money(total)}; top counterparties "
            f"{', '.join(counterparties) or 'none'}; peak {burst} transactions within one day; "
            f"disposition {word}."
        )
        assert not any(bad in text for bad in forbidden)
        items.append(
            EvidenceItem(
                id=f"ev-case-{seq}",
                source_type="case",
                effective_time=alert.alert_time,
                acl_tag="confidential",
                canonical_text=text,
                structured_fields={"alert_id": alert.id, "customer_id": alert.customer_id, "total_amount": total},
            )
        )
    return items


def _burstiness(txs: list[Transaction]) -> int:
    times = sorted(t.timestamp for t in txs)
    best = 0
    for i, t0 in enumerate(times):
        count = sum(1 for t in times[i:] if t - t0 <= 24 * HOURS)
        best = max(best, count)
    return best


# ---------------------------------------------------------------------------
# File formats (the ingest hook: external files in this schema work anywhere)
# ---------------------------------------------------------------------------


def save_world(world: World, split: DatasetSplit | None, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)

    def write_jsonl(name: str, docs) -> None:
        with open(os.path.join(out_dir, name), "wb") as fh:
            for doc in docs:
                fh.write(canonical_json_bytes(doc) + b"\n")

    write_jsonl("accounts.jsonl", (a.to_doc() for a in world.accounts))
    write_jsonl("transactions.jsonl", (t.to_doc() for t in world.transactions))
    write_jsonl("alerts.jsonl", (a.to_doc() for a in world.alerts))
    write_jsonl("evidence.jsonl", (e.to_doc() for e in world.evidence_corpus))
    with open(os.path.join(out_dir, "typology_instances.jsonl"), "wb") as fh:
        for inst in world.typology_instances:
            fh.write(canonical_json_bytes(inst.to_doc()) + b"\n")
    with open(os.path.join(out_dir, "config.json"), "wb") as fh:
        fh.write(canonical_json_bytes(world.config.to_doc()) + b"\n")
    if split is not None:
        with open(os.path.join(out_dir, "split.json"), "wb") as fh:
            fh.write(canonical_json_bytes(split.to_doc()) + b"\n")


def load_world(data_dir: str) -> World:
    def read_jsonl(name: str) -> list[dict]:
        path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            return []
        with open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    config_path = os.path.join(data_dir, "config.json")
    if os.path.exists(config_path):
        with open(config_path, "r", encoding="utf-8") as fh:
            config = WorldConfig.from_doc(json.load(fh))
    else:
        config = WorldConfig()
    return World(
        config=config,
        accounts=[Account.from_doc(d) for d in read_jsonl("accounts.jsonl")],
        transactions=[Transaction.from_doc(d) for d in read_jsonl("transactions.jsonl")],
        typology_instances=[
            TypologyInstance(alert_type=d["alert_type"], transaction_ids=tuple(d["transaction_ids"]))
            for d in read_jsonl("typology_instances.jsonl")
        ],
        alerts=[Alert.from_doc(d) for d in read_jsonl("alerts.jsonl")],
        evidence_corpus=[EvidenceItem.from_doc(d) for d in read_jsonl("evidence.jsonl")],
    )


def load_split(data_dir: str) -> DatasetSplit:
    with open(os.path.join(data_dir, "split.json"), "r", encoding="utf-8") as fh:
        return DatasetSplit.from_doc(json.load(fh))
