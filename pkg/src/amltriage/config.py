"""Pipeline configuration: one TOML or JSON document, env overrides for port
and data directory."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .triage import AdapterSpec, GeneratorConfig
from .validator import ValidatorTable

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    try:
        import tomli as tomllib
    except ModuleNotFoundError:
        tomllib = None

ENV_PORT = "AMLTRIAGE_PORT"
ENV_DATA_DIR = "AMLTRIAGE_DATA_DIR"

DEFAULT_QUOTAS = {"policy": 2, "kyc": 1, "trigger": 1, "transaction": 1, "case": 2}


@dataclass(frozen=True)
class PipelineConfig:
    quotas: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_QUOTAS))
    k_total: int = 8
    clearance: str = "confidential"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    max_iters: int = 2
    cf_budget: int = 3
    cf_max_accepted: int = 2
    cf_max_proposals: int = 8
    validator: ValidatorTable = field(default_factory=ValidatorTable)
    variant_tag: str = "full"
    light_score_threshold: float | None = None  # tiered routing, off by default
    stability_probes: int = 5
    principal_clearances: dict[str, str] = field(default_factory=dict)

    def clearance_for(self, principal: str) -> str:
        return self.principal_clearances.get(principal, self.clearance)

    def to_doc(self) -> dict:
        return {
            "quotas": dict(self.quotas),
            "k_total": self.k_total,
            "clearance": self.clearance,
            "generator": self.generator.to_doc(),
            "max_iters": self.max_iters,
            "cf_budget": self.cf_budget,
            "cf_max_accepted": self.cf_max_accepted,
            "cf_max_proposals": self.cf_max_proposals,
            "validator": self.validator.to_doc(),
            "variant_tag": self.variant_tag,
            "light_score_threshold": self.light_score_threshold,
            "stability_probes": self.stability_probes,
            "principal_clearances": dict(self.principal_clearances),
        }


def _generator_from_doc(doc: dict) -> GeneratorConfig:
    external = None
    if "external" in doc and doc["external"]:
        e = doc["external"]
        external = AdapterSpec(
            transport=e.get("transport", "socket"),
            host=e.get("host", "127.0.0.1"),
            port=int(e.get("port", 0)),
            command=tuple(e.get("command", ())),
            timeout_s=float(e.get("timeout_s", 5.0)),
            max_attempts=int(e.get("max_attempts", 3)),
            max_concurrency=int(e.get("max_concurrency", 4)),
        )
    return GeneratorConfig(
        mode=doc.get("mode", "reference"),
        p_fabricated_citation=float(doc.get("p_fabricated_citation", 0.0)),
        p_numeric_error=float(doc.get("p_numeric_error", 0.0)),
        p_policy_hallucination=float(doc.get("p_policy_hallucination", 0.0)),
        p_unsupported_entity=float(doc.get("p_unsupported_entity", 0.0)),
        fault_seed=int(doc.get("fault_seed", 0)),
        heed_feedback=bool(doc.get("heed_feedback", True)),
        heed_probability=float(doc.get("heed_probability", 1.0)),
        llm_only=bool(doc.get("llm_only", False)),
        fault_entity_pool=tuple(doc.get("fault_entity_pool", ())),
        external=external,
    )


def config_from_doc(doc: dict) -> PipelineConfig:
    base = PipelineConfig()
    return PipelineConfig(
        quotas={k: int(v) for k, v in doc.get("quotas", DEFAULT_QUOTAS).items()},
        k_total=int(doc.get("k_total", base.k_total)),
        clearance=doc.get("clearance", base.clearance),
        generator=_generator_from_doc(doc.get("generator", {})),
        max_iters=int(doc.get("max_iters", base.max_iters)),
        cf_budget=int(doc.get("cf_budget", base.cf_budget)),
        cf_max_accepted=int(doc.get("cf_max_accepted", base.cf_max_accepted)),
        cf_max_proposals=int(doc.get("cf_max_proposals", base.cf_max_proposals)),
        validator=ValidatorTable.from_doc(doc["validator"]) if "validator" in doc else ValidatorTable(),
        variant_tag=doc.get("variant_tag", base.variant_tag),
        light_score_threshold=(
            float(doc["light_score_threshold"]) if doc.get("light_score_threshold") is not None else None
        ),
        stability_probes=int(doc.get("stability_probes", base.stability_probes)),
        principal_clearances=dict(doc.get("principal_clearances", {})),
    )


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        if tomllib is None:
            raise RuntimeError("TOML config requires tomli/tomllib; use JSON instead")
        doc = tomllib.loads(raw.decode("utf-8"))
    else:
        doc = json.loads(raw.decode("utf-8"))
    return config_from_doc(doc)


def apply_overrides(config: PipelineConfig, overrides: dict | None) -> PipelineConfig:
    """Merge a partial config document (e.g. an HTTP triage request body).
    None-valued override fields mean "keep the configured value"."""
    if not overrides:
        return config
    merged = config.to_doc()
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "generator" and isinstance(value, dict):
            gen = merged.get("generator", {})
            gen.update({k: v for k, v in value.items() if v is not None})
            merged["generator"] = gen
        else:
            merged[key] = value
    return config_from_doc(merged)


def env_port(default: int = 8008) -> int:
    return int(os.environ.get(ENV_PORT, default))


def env_data_dir(default: str = "data") -> str:
    return os.environ.get(ENV_DATA_DIR, default)
