"""Counterfactual faithfulness layer: budgeted atomic edits, plausibility
rules, flip/alignment validation, and irrelevant-perturbation stability.

Indicators stay a pure function of facts everywhere: toggling an indicator is
realized by editing the underlying facts (raising a deposit above the
reporting threshold, breaking a forwarding hop, repointing a fan-in source,
changing a risk tier or the prior-alert count) and recomputing. Toggling a
transaction-bearing typology ON is rejected: plausibility rules forbid
fabricating transactions.

Automatic proposals enumerate indicator toggles, evidence removals, and
counterparty risk changes; window adjustments, transaction-link removals, and
evidence substitutions are valid atoms for explicit what-if requests but are
not auto-proposed (their edit spaces are unbounded).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

from . import indicators as ind
from .model import AlertContext, EvidenceBundle, RISK_TIERS, TriageRecord
from .rng import Stream
from .simgen import build_slice_item, render_kyc_item, render_trigger_item
from .triage import GeneratorConfig, generate
from .validator import ValidatorTable, disposition_for_score, score_indicators, validator_score
from .verifier import CorpusView, verify

TAU_FLIP = 0.15
DEFAULT_EDIT_BUDGET = 3
DEFAULT_MAX_ACCEPTED = 2
DEFAULT_MAX_PROPOSALS = 8

_TOGGLE_LOOP_LIMIT = 100


class PlausibilityViolation(Exception):
    def __init__(self, rule: str, detail: str = ""):
        super().__init__(f"PLAUSIBILITY_VIOLATION({rule}){': ' + detail if detail else ''}")
        self.rule = rule


class ImpossibleEdit(Exception):
    def __init__(self, detail: str):
        super().__init__(f"IMPOSSIBLE_EDIT: {detail}")
        self.detail = detail


# ---------------------------------------------------------------------------
# Atoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToggleIndicator:
    indicator: str

    def key(self) -> tuple:
        return ("toggle_indicator", self.indicator)

    def to_doc(self) -> dict:
        return {"kind": "toggle_indicator", "indicator": self.indicator}


@dataclass(frozen=True)
class SetCounterpartyRisk:
    account: str
    tier: str

    def key(self) -> tuple:
        return ("set_counterparty_risk", self.account, self.tier)

    def to_doc(self) -> dict:
        return {"kind": "set_counterparty_risk", "account": self.account, "tier": self.tier}


@dataclass(frozen=True)
class AdjustWindow:
    t_start: int
    t_end: int

    def key(self) -> tuple:
        return ("adjust_window", self.t_start, self.t_end)

    def to_doc(self) -> dict:
        return {"kind": "adjust_window", "t_start": self.t_start, "t_end": self.t_end}


@dataclass(frozen=True)
class RemoveTransactionLink:
    tx_id: str

    def key(self) -> tuple:
        return ("remove_transaction_link", self.tx_id)

    def to_doc(self) -> dict:
        return {"kind": "remove_transaction_link", "tx_id": self.tx_id}


@dataclass(frozen=True)
class RemoveEvidence:
    evidence_id: str

    def key(self) -> tuple:
        return ("remove_evidence", self.evidence_id)

    def to_doc(self) -> dict:
        return {"kind": "remove_evidence", "evidence_id": self.evidence_id}


@dataclass(frozen=True)
class SubstituteEvidence:
    old_id: str
    new_id: str

    def key(self) -> tuple:
        return ("substitute_evidence", self.old_id, self.new_id)

    def to_doc(self) -> dict:
        return {"kind": "substitute_evidence", "old_id": self.old_id, "new_id": self.new_id}


Atom = object

ATOM_SCHEMA = {
    "toggle_indicator": {"indicator": "indicator name"},
    "set_counterparty_risk": {"account": "account id", "tier": "low|medium|high"},
    "adjust_window": {"t_start": "epoch seconds", "t_end": "epoch seconds"},
    "remove_transaction_link": {"tx_id": "transaction id"},
    "remove_evidence": {"evidence_id": "evidence id"},
    "substitute_evidence": {"old_id": "evidence id", "new_id": "evidence id"},
}


def atom_from_doc(doc: dict) -> Atom:
    kind = doc.get("kind")
    if kind == "toggle_indicator":
        return ToggleIndicator(doc["indicator"])
    if kind == "set_counterparty_risk":
        return SetCounterpartyRisk(doc["account"], doc["tier"])
    if kind == "adjust_window":
        return AdjustWindow(int(doc["t_start"]), int(doc["t_end"]))
    if kind == "remove_transaction_link":
        return RemoveTransactionLink(doc["tx_id"])
    if kind == "remove_evidence":
        return RemoveEvidence(doc["evidence_id"])
    if kind == "substitute_evidence":
        return SubstituteEvidence(doc["old_id"], doc["new_id"])
    raise ValueError(f"unknown edit atom kind: {kind}")


@dataclass(frozen=True)
class CounterfactualEdit:
    atoms: tuple[Atom, ...]

    @property
    def cost(self) -> int:
        return len(self.atoms)

    def key(self) -> tuple:
        return tuple(a.key() for a in self.atoms)

    def to_doc(self) -> dict:
        return {"atoms": [a.to_doc() for a in self.atoms], "cost": self.cost}

    @staticmethod
    def from_doc(doc: dict) -> "CounterfactualEdit":
        return CounterfactualEdit(tuple(atom_from_doc(a) for a in doc["atoms"]))


# ---------------------------------------------------------------------------
# Fact editing
# ---------------------------------------------------------------------------


def _rebuild(context: AlertContext, transactions, customer, counterparty_risk, alert) -> AlertContext:
    txs = tuple(sorted(transactions, key=lambda t: (t.timestamp, t.id)))
    derived = ind.derive_indicators(
        txs, customer, alert.window, counterparty_risk, context.structuring_threshold
    )
    return AlertContext(
        alert=alert,
        transactions=txs,
        customer=customer,
        indicators=derived,
        counterparty_risk=dict(counterparty_risk),
        structuring_threshold=context.structuring_threshold,
    )


def _toggle_off_structuring(context: AlertContext) -> AlertContext:
    txs = list(context.transactions)
    threshold = context.structuring_threshold
    for _ in range(_TOGGLE_LOOP_LIMIT):
        witness = ind.structuring_witness(
            [t for t in txs if context.alert.window[0] <= t.timestamp <= context.alert.window[1]],
            threshold,
        )
        if witness is None:
            return _rebuild(context, txs, context.customer, context.counterparty_risk, context.alert)
        largest = max(witness, key=lambda t: (t.amount, t.id))
        idx = next(i for i, t in enumerate(txs) if t.id == largest.id)
        txs[idx] = replace(txs[idx], amount=threshold + 50_00)
    raise ImpossibleEdit("could not break the structuring pattern within the edit limit")


def _toggle_off_rapid(context: AlertContext) -> AlertContext:
    txs = list(context.transactions)
    for _ in range(_TOGGLE_LOOP_LIMIT):
        in_window = [t for t in txs if context.alert.window[0] <= t.timestamp <= context.alert.window[1]]
        chain = ind.longest_forwarding_chain(in_window)
        if len(chain) < ind.RAPID_MIN_CHAIN:
            return _rebuild(context, txs, context.customer, context.counterparty_risk, context.alert)
        broken = chain[-1]
        received = chain[-2].amount
        idx = next(i for i, t in enumerate(txs) if t.id == broken.id)
        txs[idx] = replace(txs[idx], amount=max(1, received // 2))
    raise ImpossibleEdit("could not break the forwarding chain within the edit limit")


def _toggle_off_fan_in(context: AlertContext) -> AlertContext:
    txs = list(context.transactions)
    for _ in range(_TOGGLE_LOOP_LIMIT):
        in_window = [t for t in txs if context.alert.window[0] <= t.timestamp <= context.alert.window[1]]
        witness = _fan_in_witness(in_window)
        if witness is None:
            return _rebuild(context, txs, context.customer, context.counterparty_risk, context.alert)
        keep_src, repoint_tx = witness
        idx = next(i for i, t in enumerate(txs) if t.id == repoint_tx.id)
        txs[idx] = replace(txs[idx], src_account=keep_src)
    raise ImpossibleEdit("could not reduce distinct fan-in sources within the edit limit")


def _fan_in_witness(transactions):
    by_dst: dict[str, list] = {}
    for tx in transactions:
        by_dst.setdefault(tx.dst_account, []).append(tx)
    for dst in sorted(by_dst):
        inflows = sorted(by_dst[dst], key=lambda t: (t.timestamp, t.id))
        for lo in range(len(inflows)):
            window = [
                t for t in inflows[lo:] if t.timestamp - inflows[lo].timestamp <= ind.FAN_IN_WINDOW
            ]
            sources: list[str] = []
            for t in window:
                if t.src_account not in sources:
                    sources.append(t.src_account)
            if len(sources) >= ind.FAN_IN_MIN_SOURCES:
                keep = sources[0]
                for t in reversed(window):
                    if t.src_account != keep:
                        return keep, t
    return None


def _apply_toggle(context: AlertContext, atom: ToggleIndicator) -> AlertContext:
    name = atom.indicator
    if name not in ind.INDICATOR_NAMES:
        raise ImpossibleEdit(f"unknown indicator {name}")
    currently = bool(context.indicators.get(name))
    if currently:
        if name == "structuring_pattern":
            return _toggle_off_structuring(context)
        if name == "rapid_movement":
            return _toggle_off_rapid(context)
        if name == "fan_in":
            return _toggle_off_fan_in(context)
        if name == "high_risk_counterparty":
            risk = dict(context.counterparty_risk)
            wires: dict[str, int] = {}
            for tx in context.transactions:
                if tx.channel == "wire" and risk.get(tx.dst_account) == "high":
                    wires[tx.dst_account] = wires.get(tx.dst_account, 0) + 1
            for account, count in wires.items():
                if count >= ind.HIGH_RISK_MIN_WIRES:
                    risk[account] = "medium"
            return _rebuild(context, context.transactions, context.customer, risk, context.alert)
        if name == "prior_alerts_ge_2":
            customer = replace(context.customer, prior_alert_count=0)
            return _rebuild(context, context.transactions, customer, context.counterparty_risk, context.alert)
    else:
        if name == "prior_alerts_ge_2":
            customer = replace(context.customer, prior_alert_count=max(2, context.customer.prior_alert_count))
            return _rebuild(context, context.transactions, customer, context.counterparty_risk, context.alert)
        if name == "high_risk_counterparty":
            wires: dict[str, int] = {}
            for tx in context.transactions:
                if tx.channel == "wire" and tx.dst_account in context.counterparty_risk:
                    wires[tx.dst_account] = wires.get(tx.dst_account, 0) + 1
            eligible = sorted(
                (a for a, c in wires.items() if c >= ind.HIGH_RISK_MIN_WIRES),
                key=lambda a: (-wires[a], a),
            )
            if not eligible:
                raise ImpossibleEdit("no counterparty receives enough wires to raise to high risk")
            risk = dict(context.counterparty_risk)
            risk[eligible[0]] = "high"
            return _rebuild(context, context.transactions, context.customer, risk, context.alert)
        raise ImpossibleEdit(
            f"toggling {name} on would fabricate transactions, which plausibility rules forbid"
        )
    raise ImpossibleEdit(f"toggle of {name} fell through")  # pragma: no cover


def apply_edit(context: AlertContext, edit: CounterfactualEdit, bundle: EvidenceBundle | None = None) -> AlertContext:
    """Apply atoms in order; recompute indicators from the edited facts.

    Plausibility rules: amounts stay positive, windows stay ordered and keep
    containing the alert time, removing a transaction link may not orphan the
    alert. Atoms naming missing entities (or entities removed by an earlier
    atom) raise ImpossibleEdit.
    """
    current = context
    removed_txs: set[str] = set()
    removed_evidence: set[str] = set()
    bundle_ids = bundle.ids() if bundle is not None else None

    for atom in edit.atoms:
        if isinstance(atom, ToggleIndicator):
            current = _apply_toggle(current, atom)
        elif isinstance(atom, SetCounterpartyRisk):
            if atom.tier not in RISK_TIERS:
                raise PlausibilityViolation("unknown_risk_tier", atom.tier)
            if atom.account not in current.counterparty_risk:
                raise ImpossibleEdit(f"counterparty {atom.account} not in this alert context")
            risk = dict(current.counterparty_risk)
            risk[atom.account] = atom.tier
            current = _rebuild(current, current.transactions, current.customer, risk, current.alert)
        elif isinstance(atom, AdjustWindow):
            if atom.t_end < atom.t_start:
                raise PlausibilityViolation("window_order")
            if not (atom.t_start <= current.alert.alert_time <= atom.t_end):
                raise PlausibilityViolation("window_excludes_alert_time")
            alert = replace(current.alert, window=(atom.t_start, atom.t_end))
            keep = [t for t in current.transactions if atom.t_start <= t.timestamp <= atom.t_end]
            alert = replace(alert, transaction_ids=tuple(t.id for t in keep))
            current = _rebuild(current, keep, current.customer, current.counterparty_risk, alert)
        elif isinstance(atom, RemoveTransactionLink):
            if atom.tx_id in removed_txs:
                raise ImpossibleEdit(f"{atom.tx_id} was removed by an earlier atom")
            keep = [t for t in current.transactions if t.id != atom.tx_id]
            if len(keep) == len(current.transactions):
                raise ImpossibleEdit(f"transaction {atom.tx_id} not in this alert context")
            if not keep:
                raise PlausibilityViolation("orphan_alert", "at least one transaction must remain")
            removed_txs.add(atom.tx_id)
            alert = replace(
                current.alert,
                transaction_ids=tuple(t for t in current.alert.transaction_ids if t != atom.tx_id),
            )
            current = _rebuild(current, keep, current.customer, current.counterparty_risk, alert)
        elif isinstance(atom, (RemoveEvidence, SubstituteEvidence)):
            target = atom.evidence_id if isinstance(atom, RemoveEvidence) else atom.old_id
            if target in removed_evidence:
                raise ImpossibleEdit(f"{target} was removed by an earlier atom")
            if bundle_ids is not None and target not in bundle_ids:
                raise ImpossibleEdit(f"evidence {target} not in the bundle")
            removed_evidence.add(target)
        else:
            raise ImpossibleEdit(f"unknown atom {atom!r}")

    if any(t.amount <= 0 for t in current.transactions):
        raise PlausibilityViolation("negative_amount")
    return current


def edit_bundle(
    bundle: EvidenceBundle,
    edit: CounterfactualEdit,
    original: AlertContext,
    edited: AlertContext,
    resolver=None,
) -> EvidenceBundle:
    """Apply evidence atoms and re-render fact-derived items for edited facts."""
    items = {item.id: item for item in bundle.items}
    for atom in edit.atoms:
        if isinstance(atom, RemoveEvidence):
            if atom.evidence_id not in items:
                raise ImpossibleEdit(f"evidence {atom.evidence_id} not in the bundle")
            del items[atom.evidence_id]
        elif isinstance(atom, SubstituteEvidence):
            if atom.old_id not in items:
                raise ImpossibleEdit(f"evidence {atom.old_id} not in the bundle")
            new_item = resolver(atom.new_id) if resolver is not None else None
            if new_item is None:
                raise ImpossibleEdit(f"substitute evidence {atom.new_id} is not resolvable")
            if new_item.source_type != items[atom.old_id].source_type:
                raise PlausibilityViolation("substitute_type_mismatch")
            del items[atom.old_id]
            items[new_item.id] = new_item

    facts_changed = (
        edited.transactions != original.transactions
        or edited.counterparty_risk != original.counterparty_risk
        or edited.alert.window != original.alert.window
    )
    if facts_changed:
        for item in list(items.values()):
            if item.source_type == "transaction" and item.structured_fields.get("alert_id") == edited.alert.id:
                items[item.id] = build_slice_item(
                    edited.alert,
                    list(edited.transactions),
                    edited.counterparty_risk,
                    edited.alert.customer_id,
                    edited.structuring_threshold,
                )
            elif item.source_type == "trigger" and item.structured_fields.get("alert_id") == edited.alert.id:
                items[item.id] = render_trigger_item(
                    edited.alert, list(edited.transactions), edited.structuring_threshold
                )
    if edited.customer != original.customer:
        for item in list(items.values()):
            if item.source_type == "kyc" and item.structured_fields.get("customer_id") == edited.alert.customer_id:
                items[item.id] = render_kyc_item(
                    item_id=item.id,
                    customer_id=edited.customer.customer_id,
                    customer_type=edited.customer.customer_type,
                    industry_code=edited.customer.industry_code,
                    risk_rating=edited.customer.risk_rating,
                    onboarding_time=edited.customer.onboarding_time,
                    prior_alert_count=edited.customer.prior_alert_count,
                    account_id=edited.customer_account_id,
                    effective_time=item.effective_time,
                )
    ordered = sorted(items.values(), key=lambda i: (i.source_type, i.id))
    return EvidenceBundle(
        alert_id=bundle.alert_id,
        items=tuple(ordered),
        quota=dict(bundle.quota),
        retrieval_trace=bundle.retrieval_trace,
    )


# ---------------------------------------------------------------------------
# Proposals
# ---------------------------------------------------------------------------


def _driver_indicators(record: TriageRecord) -> list[str]:
    named = []
    for name in ind.INDICATOR_NAMES:
        if any(name in para.text for para in record.paragraphs):
            named.append(name)
    return named


def _cited_high_risk_accounts(record: TriageRecord, context: AlertContext) -> list[str]:
    from .verifier import entity_tokens

    high = {a for a, tier in context.counterparty_risk.items() if tier == "high"}
    cited = []
    for para in record.paragraphs:
        for token in entity_tokens(para.text):
            if token in high and token not in cited:
                cited.append(token)
    return cited


def enumerate_single_atoms(
    record: TriageRecord, context: AlertContext, bundle: EvidenceBundle
) -> list[Atom]:
    """The full single-atom proposal universe, driver-targeted atoms first.

    Universe: indicator toggles, bundle-item removals, counterparty risk
    changes. Atoms that turn out inapplicable fail later at apply time.
    """
    drivers = _driver_indicators(record)
    top_support = list(record.supporting_ids[:3])
    cited_high = _cited_high_risk_accounts(record, context)

    atoms: list[Atom] = []
    seen: set[tuple] = set()

    def add(atom: Atom) -> None:
        if atom.key() not in seen:
            seen.add(atom.key())
            atoms.append(atom)

    for name in ind.INDICATOR_NAMES:
        if name in drivers:
            add(ToggleIndicator(name))
    for evidence_id in top_support:
        add(RemoveEvidence(evidence_id))
    for account in cited_high:
        add(SetCounterpartyRisk(account, "low"))

    # remainder of the universe, deterministic order
    for name in ind.INDICATOR_NAMES:
        add(ToggleIndicator(name))
    for item in sorted(bundle.items, key=lambda i: i.id):
        add(RemoveEvidence(item.id))
    for account in sorted(context.counterparty_risk):
        current = context.counterparty_risk[account]
        for tier in RISK_TIERS:
            if tier != current:
                add(SetCounterpartyRisk(account, tier))
    return atoms


def propose_edits(
    record: TriageRecord,
    context: AlertContext,
    bundle: EvidenceBundle,
    budget: int = DEFAULT_EDIT_BUDGET,
    max_proposals: int = DEFAULT_MAX_PROPOSALS,
) -> list[CounterfactualEdit]:
    """Driver-targeted single atoms first, then 2-atom combinations, ordered by
    cost then deterministic key, capped at max_proposals."""
    if record.alert_id != context.alert.id:
        raise ValueError("record does not reference this context's alert")
    singles = enumerate_single_atoms(record, context, bundle)
    proposals: list[CounterfactualEdit] = []
    if budget >= 1:
        proposals.extend(CounterfactualEdit((atom,)) for atom in singles)
    if budget >= 2:
        drivers = _driver_indicators(record)
        targeted: list[Atom] = [ToggleIndicator(n) for n in drivers]
        targeted += [RemoveEvidence(e) for e in record.supporting_ids[:3]]
        pairs = [
            CounterfactualEdit((a, b))
            for a, b in combinations(targeted, 2)
            if a.key() != b.key()
        ]
        pairs.sort(key=lambda e: e.key())
        proposals.extend(pairs)
    return proposals[:max_proposals]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidatedCounterfactual:
    edit: CounterfactualEdit
    pre_score: float
    post_score: float
    pre_disposition: str
    post_disposition: str
    flip_valid: bool
    rationale_aligned: bool
    post_record: TriageRecord

    @property
    def accepted(self) -> bool:
        return self.flip_valid and self.rationale_aligned

    def to_doc(self) -> dict:
        return {
            "edit": self.edit.to_doc(),
            "pre_score": self.pre_score,
            "post_score": self.post_score,
            "pre_disposition": self.pre_disposition,
            "post_disposition": self.post_disposition,
            "flip_valid": self.flip_valid,
            "rationale_aligned": self.rationale_aligned,
            "accepted": self.accepted,
            "post_record": self.post_record.to_doc(),
        }


def validate_counterfactual(
    edit: CounterfactualEdit,
    context: AlertContext,
    bundle: EvidenceBundle,
    generator_config: GeneratorConfig,
    corpus_view: CorpusView,
    table: ValidatorTable | None = None,
    resolver=None,
) -> ValidatedCounterfactual:
    """Flip validity against the rules validator; rationale alignment against a
    re-run of the generator on the edited context and bundle."""
    table = table or ValidatorTable()
    pre_score, pre_disposition = validator_score(context, table)
    edited_context = apply_edit(context, edit, bundle)
    post_score = score_indicators(edited_context.indicators, table)
    post_disposition = disposition_for_score(post_score, table)
    flip_valid = (post_disposition != pre_disposition) or (
        abs(post_score - pre_score) >= TAU_FLIP
    )

    resolver = resolver or corpus_view.item
    edited = edit_bundle(bundle, edit, context, edited_context, resolver=resolver)
    post_record = generate(edited_context, edited, generator_config)

    removed = {a.evidence_id for a in edit.atoms if isinstance(a, RemoveEvidence)}
    removed |= {a.old_id for a in edit.atoms if isinstance(a, SubstituteEvidence)}
    cites_removed = any(cid in removed for cid in post_record.cited_ids())

    inactive = [n for n in ind.INDICATOR_NAMES if not edited_context.indicators.get(n)]
    names_inactive = any(
        name in para.text for para in post_record.paragraphs for name in inactive
    )

    post_report = verify(post_record, edited, corpus_view)
    rationale_aligned = (not cites_removed) and (not names_inactive) and post_report.passed

    return ValidatedCounterfactual(
        edit=edit,
        pre_score=pre_score,
        post_score=post_score,
        pre_disposition=pre_disposition,
        post_disposition=post_disposition,
        flip_valid=flip_valid,
        rationale_aligned=rationale_aligned,
        post_record=post_record,
    )


@dataclass
class CounterfactualSearchResult:
    accepted: list[ValidatedCounterfactual]
    attempts: int

    def to_doc(self) -> dict:
        return {"accepted": [v.to_doc() for v in self.accepted], "attempts": self.attempts}


def find_counterfactuals(
    record: TriageRecord,
    context: AlertContext,
    bundle: EvidenceBundle,
    generator_config: GeneratorConfig,
    corpus_view: CorpusView,
    budget: int = DEFAULT_EDIT_BUDGET,
    max_accepted: int = DEFAULT_MAX_ACCEPTED,
    max_proposals: int = DEFAULT_MAX_PROPOSALS,
    table: ValidatorTable | None = None,
) -> CounterfactualSearchResult:
    """Validate proposals in order until max_accepted accept or proposals run
    out. A multi-atom edit is only accepted when no strict subset of its atoms
    would also be accepted (minimality)."""
    proposals = propose_edits(record, context, bundle, budget=budget, max_proposals=max_proposals)
    accepted: list[ValidatedCounterfactual] = []
    attempts = 0
    outcome_cache: dict[tuple, bool] = {}

    def attempt(edit: CounterfactualEdit) -> ValidatedCounterfactual | None:
        try:
            validated = validate_counterfactual(
                edit, context, bundle, generator_config, corpus_view, table=table
            )
        except (PlausibilityViolation, ImpossibleEdit):
            outcome_cache[edit.key()] = False
            return None
        outcome_cache[edit.key()] = validated.accepted
        return validated

    def subset_accepted(edit: CounterfactualEdit) -> bool:
        for size in range(1, edit.cost):
            for subset in combinations(edit.atoms, size):
                sub = CounterfactualEdit(subset)
                if sub.key() not in outcome_cache:
                    attempt(sub)
                if outcome_cache.get(sub.key()):
                    return True
        return False

    for edit in proposals:
        if len(accepted) >= max_accepted:
            break
        attempts += 1
        if edit.key() in outcome_cache and not outcome_cache[edit.key()]:
            continue
        validated = attempt(edit)
        if validated is None or not validated.accepted:
            continue
        if edit.cost > 1 and subset_accepted(edit):
            continue
        accepted.append(validated)
    return CounterfactualSearchResult(accepted=accepted, attempts=attempts)


# ---------------------------------------------------------------------------
# Stability probes
# ---------------------------------------------------------------------------


def _nudge_candidates(context: AlertContext) -> list[int]:
    """Transactions whose amount sits >=100 minor units from every indicator
    boundary, so a +-1 nudge cannot flip anything."""
    guard = 100
    threshold = context.structuring_threshold
    txs = list(context.transactions)
    out = []
    for i, tx in enumerate(txs):
        if tx.amount < 2:
            continue
        if abs(tx.amount - threshold) < guard:
            continue
        safe = True
        for other in txs:
            if other.id == tx.id:
                continue
            # forwarding boundary in either role of a potential chain hop
            if other.dst_account == tx.src_account and abs(tx.amount * 100 - 85 * other.amount) < guard * 100:
                safe = False
                break
            if other.src_account == tx.dst_account and abs(other.amount * 100 - 85 * tx.amount) < guard * 100:
                safe = False
                break
        if not safe:
            continue
        if tx.channel == "cash" and tx.amount < threshold:
            deposits = [
                t
                for t in txs
                if t.channel == "cash" and t.dst_account == tx.dst_account and t.amount < threshold
            ]
            deposits.sort(key=lambda t: (t.timestamp, t.id))
            for lo in range(len(deposits)):
                window = [
                    t
                    for t in deposits[lo:]
                    if t.timestamp - deposits[lo].timestamp <= ind.STRUCTURING_WINDOW
                ]
                if any(t.id == tx.id for t in window):
                    if abs(sum(t.amount for t in window) - threshold) < guard:
                        safe = False
                        break
        if safe:
            out.append(i)
    return out


def stability_probe(
    context: AlertContext,
    bundle: EvidenceBundle,
    generator_config: GeneratorConfig,
    n_probes: int = 5,
    seed: int = 0,
    probe_kinds: tuple[str, ...] = ("permute", "nudge"),
    table: ValidatorTable | None = None,
) -> float:
    """Fraction of irrelevant perturbations under which (validator score,
    disposition) is bit-identical and the reference disposition is unchanged.

    Probes: (a) permute the order of transactions sharing a timestamp; (b) add
    +-1 minor unit to one amount where no indicator threshold is within 100
    minor units of the value (amounts at a boundary are never probed).
    """
    table = table or ValidatorTable()
    base_score, base_disposition = validator_score(context, table)
    base_record = generate(context, bundle, replace(generator_config, mode="reference"))
    stream = Stream(seed, "stability", context.alert.id)
    stable = 0
    for probe_idx in range(n_probes):
        kind = probe_kinds[probe_idx % len(probe_kinds)]
        txs = list(context.transactions)
        if kind == "permute":
            by_time: dict[int, list[int]] = {}
            for i, tx in enumerate(txs):
                by_time.setdefault(tx.timestamp, []).append(i)
            permuted = list(txs)
            for positions in by_time.values():
                if len(positions) > 1:
                    shuffled = stream.substream("perm", probe_idx).shuffle(positions)
                    for target, source in zip(positions, shuffled):
                        permuted[target] = txs[source]
            probe_txs = permuted
        else:
            candidates = _nudge_candidates(context)
            if not candidates:
                probe_txs = txs
            else:
                s = stream.substream("nudge", probe_idx)
                idx = candidates[s.randint(0, len(candidates) - 1)]
                delta = 1 if s.bernoulli(0.5) else -1
                probe_txs = list(txs)
                probe_txs[idx] = replace(probe_txs[idx], amount=probe_txs[idx].amount + delta)

        probed = AlertContext(
            alert=context.alert,
            transactions=tuple(probe_txs),
            customer=context.customer,
            indicators=ind.derive_indicators(
                probe_txs,
                context.customer,
                context.alert.window,
                context.counterparty_risk,
                context.structuring_threshold,
            ),
            counterparty_risk=dict(context.counterparty_risk),
            structuring_threshold=context.structuring_threshold,
        )
        score, disposition = validator_score(probed, table)
        record = generate(probed, bundle, replace(generator_config, mode="reference"))
        if score == base_score and disposition == base_disposition and record.disposition == base_record.disposition:
            stable += 1
    return stable / n_probes if n_probes else 1.0
