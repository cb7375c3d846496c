"""Evidence-constrained AML alert triage.

Synthetic transaction worlds with embedded laundering typologies,
permission-aware hybrid evidence retrieval, contract-constrained triage
generation with verification and repair, counterfactual faithfulness checks,
a full metric suite, and an HTTP service with an append-only audit trail.
"""

__version__ = "0.1.0"
