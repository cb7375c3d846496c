"""Policy-approximate rules validator: indicator weights -> risk score -> disposition.

Default weights place each single typology in a distinct band (dismiss /
monitor / escalate) so counterfactual flips are sharp. The same table drives
the reference generator's dispositions, which keeps rationale-alignment
checks meaningful offline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .indicators import active_indicators
from .model import AlertContext

DEFAULT_WEIGHTS = {
    "structuring_pattern": 0.45,
    "rapid_movement": 0.40,
    "high_risk_counterparty": 0.30,
    "fan_in": 0.35,
    "prior_alerts_ge_2": 0.10,
}


@dataclass(frozen=True)
class ValidatorTable:
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    theta_monitor: float = 0.30
    theta_escalate: float = 0.55

    def __post_init__(self):
        if not (0 < self.theta_monitor < self.theta_escalate <= 1):
            raise ValueError("need 0 < theta_monitor < theta_escalate <= 1")
        for name, w in self.weights.items():
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"weight out of range for {name}")

    def to_doc(self) -> dict:
        return {
            "weights": dict(self.weights),
            "theta_monitor": self.theta_monitor,
            "theta_escalate": self.theta_escalate,
        }

    @staticmethod
    def from_doc(doc: dict) -> "ValidatorTable":
        return ValidatorTable(
            weights={k: float(v) for k, v in doc["weights"].items()},
            theta_monitor=float(doc["theta_monitor"]),
            theta_escalate=float(doc["theta_escalate"]),
        )


def score_indicators(indicators: dict[str, bool], table: ValidatorTable) -> float:
    total = sum(table.weights.get(name, 0.0) for name in active_indicators(indicators))
    return min(1.0, round(total, 6))


def disposition_for_score(score: float, table: ValidatorTable) -> str:
    if score >= table.theta_escalate:
        return "escalate"
    if score >= table.theta_monitor:
        return "monitor"
    return "dismiss"


def validator_score(context: AlertContext, table: ValidatorTable | None = None) -> tuple[float, str]:
    """Risk score and disposition for a context; pure and order-invariant."""
    table = table or ValidatorTable()
    score = score_indicators(context.indicators, table)
    return score, disposition_for_score(score, table)
