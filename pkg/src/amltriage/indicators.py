"""Typology indicators derived from alert facts.

Indicators are pure functions of (transactions, customer, window,
counterparty risk, structuring threshold). The counterfactual layer relies on
this purity: edits change facts, then indicators are recomputed here.
"""

from __future__ import annotations

from .model import CustomerProfile, Transaction

HOURS = 3600
DAYS = 24 * HOURS

STRUCTURING_WINDOW = 72 * HOURS
RAPID_WINDOW = 48 * HOURS
RAPID_MIN_CHAIN = 3
RAPID_FORWARD_PCT = 85  # each hop forwards >= 85% of what it received
FAN_IN_WINDOW = 7 * DAYS
FAN_IN_MIN_SOURCES = 5
HIGH_RISK_MIN_WIRES = 2
PRIOR_ALERTS_MIN = 2

INDICATOR_NAMES = (
    "structuring_pattern",
    "rapid_movement",
    "high_risk_counterparty",
    "fan_in",
    "prior_alerts_ge_2",
)

# typology indicators map 1:1 onto alert types; prior_alerts_ge_2 does not
INDICATOR_TO_ALERT_TYPE = {
    "structuring_pattern": "structuring",
    "rapid_movement": "rapid_movement",
    "high_risk_counterparty": "high_risk_counterparty",
    "fan_in": "fan_in",
}
ALERT_TYPE_TO_INDICATOR = {v: k for k, v in INDICATOR_TO_ALERT_TYPE.items()}


def _sorted_txs(transactions) -> list[Transaction]:
    return sorted(transactions, key=lambda t: (t.timestamp, t.id))


def structuring_witness(
    transactions, threshold: int
) -> list[Transaction] | None:
    """Sub-threshold cash deposits to one account, >=3 within 72h, summing past
    the threshold. Returns one witnessing deposit set, or None."""
    by_dst: dict[str, list[Transaction]] = {}
    for tx in transactions:
        if tx.channel == "cash" and tx.amount < threshold:
            by_dst.setdefault(tx.dst_account, []).append(tx)
    for deposits in by_dst.values():
        deposits = _sorted_txs(deposits)
        lo = 0
        total = 0
        for hi, tx in enumerate(deposits):
            total += tx.amount
            while deposits[hi].timestamp - deposits[lo].timestamp > STRUCTURING_WINDOW:
                total -= deposits[lo].amount
                lo += 1
            if hi - lo + 1 >= 3 and total > threshold:
                return deposits[lo : hi + 1]
    return None


def longest_forwarding_chain(transactions) -> list[Transaction]:
    """Longest chain t1..tk where dst(ti)=src(ti+1), each hop forwards >=85%
    of the amount received, and the whole chain spans <=48h."""
    txs = _sorted_txs(transactions)
    by_src: dict[str, list[Transaction]] = {}
    for tx in txs:
        by_src.setdefault(tx.src_account, []).append(tx)

    best: list[Transaction] = []

    def extend(chain: list[Transaction]) -> None:
        nonlocal best
        if len(chain) > len(best):
            best = list(chain)
        head = chain[-1]
        for nxt in by_src.get(head.dst_account, ()):
            if nxt.timestamp < head.timestamp:
                continue
            if nxt.timestamp - chain[0].timestamp > RAPID_WINDOW:
                continue
            if nxt.amount * 100 < RAPID_FORWARD_PCT * head.amount:
                continue
            if nxt in chain:
                continue
            chain.append(nxt)
            extend(chain)
            chain.pop()

    for tx in txs:
        extend([tx])
    return best


def high_risk_wire_count(transactions, counterparty_risk: dict[str, str]) -> int:
    """Max number of wires into any single high-risk-tier account."""
    counts: dict[str, int] = {}
    for tx in transactions:
        if tx.channel == "wire" and counterparty_risk.get(tx.dst_account) == "high":
            counts[tx.dst_account] = counts.get(tx.dst_account, 0) + 1
    return max(counts.values(), default=0)


def max_distinct_inflow_sources(transactions) -> int:
    """Max distinct source accounts feeding any one account within 7 days."""
    by_dst: dict[str, list[Transaction]] = {}
    for tx in transactions:
        by_dst.setdefault(tx.dst_account, []).append(tx)
    best = 0
    for inflows in by_dst.values():
        inflows = _sorted_txs(inflows)
        for lo in range(len(inflows)):
            sources = set()
            for hi in range(lo, len(inflows)):
                if inflows[hi].timestamp - inflows[lo].timestamp > FAN_IN_WINDOW:
                    break
                sources.add(inflows[hi].src_account)
            best = max(best, len(sources))
    return best


def derive_indicators(
    transactions,
    customer: CustomerProfile,
    window: tuple[int, int],
    counterparty_risk: dict[str, str],
    structuring_threshold: int,
) -> dict[str, bool]:
    t0, t1 = window
    in_window = [t for t in transactions if t0 <= t.timestamp <= t1]
    return {
        "structuring_pattern": structuring_witness(in_window, structuring_threshold) is not None,
        "rapid_movement": len(longest_forwarding_chain(in_window)) >= RAPID_MIN_CHAIN,
        "high_risk_counterparty": high_risk_wire_count(in_window, counterparty_risk)
        >= HIGH_RISK_MIN_WIRES,
        "fan_in": max_distinct_inflow_sources(in_window) >= FAN_IN_MIN_SOURCES,
        "prior_alerts_ge_2": customer.prior_alert_count >= PRIOR_ALERTS_MIN,
    }


def active_indicators(indicators: dict[str, bool]) -> list[str]:
    return [name for name in INDICATOR_NAMES if indicators.get(name)]
