"""Core record types and canonical serialization.

Every record that crosses a module boundary is a frozen dataclass with
construction-time validation and a stable JSON encoding. Canonical encoding
(sorted keys, compact separators, UTF-8) means equal records always produce
byte-equal lines, which the determinism tests lean on heavily.

Confidence on a claim is tri-state: ``None`` means "not yet scored" and is
omitted from the encoding; it is not the same thing as a confidence of 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import SchemaViolation, ValidationFailed

DOMAINS = ("climate", "epidemiology")
CLAIM_STATUSES = ("original", "updated", "verified_aligned", "indeterminate")
PROVENANCES = ("extracted", "benchmark", "manual")
PARAM_KINDS = ("real", "integer", "date", "enum", "geo_point", "string_list")
OUTPUT_KINDS = ("scalar", "label", "series", "series_family")
CENTRALITY_METRICS = ("closeness", "degree", "betweenness", "eigenvector", "pagerank")
CLOSENESS_VARIANTS = ("as_written", "wasserman_faust")
SELECTION_STRATEGIES = ("random", "verbalized", "uncertainty", "ue_sba")
GENERATION_MODES = ("simulrag", "input_layer", "output_layer", "no_rag")
BACKENDS = ("scripted", "http")


def canonical_json(data: Any) -> str:
    """Encode plain data canonically: sorted keys, compact, no NaN."""
    return json.dumps(
        data, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False
    )


def canonical_json_bytes(data: Any) -> bytes:
    return canonical_json(data).encode("utf-8")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise SchemaViolation(message)


def _require_str(value: Any, name: str, allow_empty: bool = False) -> None:
    _require(isinstance(value, str), f"{name} must be a string, got {type(value).__name__}")
    if not allow_empty:
        _require(bool(value.strip()), f"{name} must be non-empty")


def _require_choice(value: Any, choices: tuple[str, ...], name: str) -> None:
    _require(value in choices, f"{name} must be one of {choices}, got {value!r}")


def _require_finite(value: Any, name: str) -> None:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
        f"{name} must be a finite number, got {value!r}",
    )


def _check_no_extra_keys(data: dict, allowed: Iterable[str], record: str) -> None:
    extra = set(data) - set(allowed)
    if extra:
        raise SchemaViolation(f"unknown fields for {record}: {sorted(extra)}")


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    domain: str

    def __post_init__(self) -> None:
        _require_str(self.id, "Question.id")
        _require_str(self.text, "Question.text")
        _require_choice(self.domain, DOMAINS, "Question.domain")

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "domain": self.domain}

    @classmethod
    def from_dict(cls, data: dict) -> "Question":
        _check_no_extra_keys(data, ("id", "text", "domain"), "Question")
        try:
            return cls(id=data["id"], text=data["text"], domain=data["domain"])
        except KeyError as exc:
            raise SchemaViolation(f"Question missing field {exc}") from exc


@dataclass(frozen=True)
class Answer:
    id: str
    question_id: str
    text: str
    sample_index: int
    generation_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _require_str(self.id, "Answer.id")
        _require_str(self.question_id, "Answer.question_id")
        _require_str(self.text, "Answer.text")
        _require(
            isinstance(self.sample_index, int) and self.sample_index >= 0,
            f"Answer.sample_index must be a non-negative int, got {self.sample_index!r}",
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question_id": self.question_id,
            "text": self.text,
            "sample_index": self.sample_index,
            "generation_params": dict(self.generation_params),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Answer":
        _check_no_extra_keys(
            data, ("id", "question_id", "text", "sample_index", "generation_params"), "Answer"
        )
        try:
            return cls(
                id=data["id"],
                question_id=data["question_id"],
                text=data["text"],
                sample_index=data["sample_index"],
                generation_params=dict(data.get("generation_params", {})),
            )
        except KeyError as exc:
            raise SchemaViolation(f"Answer missing field {exc}") from exc


@dataclass(frozen=True)
class Claim:
    """One atomic claim with provenance and a tri-state confidence.

    Claims whose status is ``updated`` or ``verified_aligned`` passed
    simulator verification, and verification pins their confidence to exactly
    1.0; that implication is enforced here. (The converse cannot hold:
    min-max normalization legitimately assigns confidence 1.0 to the
    top-scored unverified claim.)
    """

    id: str
    text: str
    origin_answer_ids: tuple[str, ...]
    status: str = "original"
    confidence: float | None = None

    def __post_init__(self) -> None:
        _require_str(self.id, "Claim.id")
        _require_str(self.text, "Claim.text")
        origins = tuple(sorted(set(self.origin_answer_ids)))
        _require(len(origins) > 0, "Claim.origin_answer_ids must be non-empty")
        for oid in origins:
            _require_str(oid, "Claim.origin_answer_ids entry")
        object.__setattr__(self, "origin_answer_ids", origins)
        _require_choice(self.status, CLAIM_STATUSES, "Claim.status")
        if self.confidence is not None:
            _require_finite(self.confidence, "Claim.confidence")
            _require(
                0.0 <= self.confidence <= 1.0,
                f"Claim.confidence must lie in [0, 1], got {self.confidence!r}",
            )
        if self.status in ("updated", "verified_aligned"):
            _require(
                self.confidence == 1.0,
                f"Claim with status {self.status!r} must have confidence exactly 1.0",
            )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id,
            "text": self.text,
            "origin_answer_ids": list(self.origin_answer_ids),
            "status": self.status,
        }
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Claim":
        _check_no_extra_keys(
            data, ("id", "text", "origin_answer_ids", "status", "confidence"), "Claim"
        )
        try:
            return cls(
                id=data["id"],
                text=data["text"],
                origin_answer_ids=tuple(data["origin_answer_ids"]),
                status=data.get("status", "original"),
                confidence=data.get("confidence"),
            )
        except KeyError as exc:
            raise SchemaViolation(f"Claim missing field {exc}") from exc


@dataclass(frozen=True)
class ParamSpec:
    """Declaration of one simulator parameter in a handbook."""

    name: str
    kind: str
    units: str = ""
    lo: float | None = None
    hi: float | None = None
    allowed: tuple[str, ...] | None = None
    default: Any = None
    description: str = ""

    def __post_init__(self) -> None:
        _require_str(self.name, "ParamSpec.name")
        _require_choice(self.kind, PARAM_KINDS, f"ParamSpec[{self.name}].kind")
        if self.allowed is not None:
            object.__setattr__(self, "allowed", tuple(self.allowed))
        if self.kind in ("enum",):
            _require(bool(self.allowed), f"ParamSpec[{self.name}] enum needs allowed values")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.units:
            out["units"] = self.units
        if self.lo is not None:
            out["lo"] = self.lo
        if self.hi is not None:
            out["hi"] = self.hi
        if self.allowed is not None:
            out["allowed"] = list(self.allowed)
        if self.default is not None:
            out["default"] = self.default
        if self.description:
            out["description"] = self.description
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ParamSpec":
        _check_no_extra_keys(
            data,
            ("name", "kind", "units", "lo", "hi", "allowed", "default", "description"),
            "ParamSpec",
        )
        return cls(
            name=data["name"],
            kind=data["kind"],
            units=data.get("units", ""),
            lo=data.get("lo"),
            hi=data.get("hi"),
            allowed=tuple(data["allowed"]) if data.get("allowed") is not None else None,
            default=data.get("default"),
            description=data.get("description", ""),
        )

    def check(self, value: Any) -> Any:
        """Validate one value against this spec; returns the value unchanged.

        Raises ValidationFailed naming this parameter on any mismatch.
        """
        name = self.name

        def bad(why: str) -> ValidationFailed:
            return ValidationFailed(f"parameter {name!r}: {why} (got {value!r})", fields=[name])

        if self.kind == "real":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise bad("expected a number")
            if not math.isfinite(value):
                raise bad("must be finite")
            if self.lo is not None and value < self.lo:
                raise bad(f"below minimum {self.lo}")
            if self.hi is not None and value > self.hi:
                raise bad(f"above maximum {self.hi}")
        elif self.kind == "integer":
            if not isinstance(value, int) or isinstance(value, bool):
                raise bad("expected an integer")
            if self.lo is not None and value < self.lo:
                raise bad(f"below minimum {self.lo}")
            if self.hi is not None and value > self.hi:
                raise bad(f"above maximum {self.hi}")
        elif self.kind == "date":
            if not isinstance(value, str):
                raise bad("expected an ISO date string")
            try:
                parsed = date.fromisoformat(value)
            except ValueError:
                raise bad("not a valid ISO date") from None
            if self.lo is not None and parsed < date.fromisoformat(str(self.lo)):
                raise bad(f"before earliest allowed date {self.lo}")
            if self.hi is not None and parsed > date.fromisoformat(str(self.hi)):
                raise bad(f"after latest allowed date {self.hi}")
        elif self.kind == "enum":
            if value not in (self.allowed or ()):
                raise bad(f"expected one of {self.allowed}")
        elif self.kind == "geo_point":
            if isinstance(value, str):
                if not value.strip():
                    raise bad("city name must be non-empty")
            elif isinstance(value, (list, tuple)) and len(value) == 2:
                lon, lat = value
                if not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in (lon, lat)
                ):
                    raise bad("lon/lat must be numbers")
                if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                    raise bad("lon must be in [-180, 180] and lat in [-90, 90]")
            else:
                raise bad("expected a city name or [lon, lat] pair")
        elif self.kind == "string_list":
            if not isinstance(value, (list, tuple)) or not value:
                raise bad("expected a non-empty list of strings")
            seen = set()
            for item in value:
                if not isinstance(item, str):
                    raise bad("entries must be strings")
                if self.allowed is not None and item not in self.allowed:
                    raise bad(f"entry {item!r} not in the allowed set")
                if item in seen:
                    raise bad(f"duplicate entry {item!r}")
                seen.add(item)
        return value


@dataclass(frozen=True)
class OutputSpec:
    """Declaration of one simulator output in a handbook.

    ``series_family`` declares a family of per-member series named
    ``<name>/m<NNN>``, one per ensemble member.
    """

    name: str
    kind: str
    units: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        _require_str(self.name, "OutputSpec.name")
        _require_choice(self.kind, OUTPUT_KINDS, f"OutputSpec[{self.name}].kind")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.units:
            out["units"] = self.units
        if self.description:
            out["description"] = self.description
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "OutputSpec":
        _check_no_extra_keys(data, ("name", "kind", "units", "description"), "OutputSpec")
        return cls(
            name=data["name"],
            kind=data["kind"],
            units=data.get("units", ""),
            description=data.get("description", ""),
        )


@dataclass(frozen=True)
class Handbook:
    """Self-describing simulator interface: parameters, outputs, guidance."""

    simulator_id: str
    version: str
    description: str
    params: tuple[ParamSpec, ...]
    outputs: tuple[OutputSpec, ...]
    boundary_notes: str = ""

    def __post_init__(self) -> None:
        _require_str(self.simulator_id, "Handbook.simulator_id")
        _require_str(self.version, "Handbook.version")
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        names = [p.name for p in self.params]
        _require(len(names) == len(set(names)), "Handbook has duplicate parameter names")
        out_names = [o.name for o in self.outputs]
        _require(len(out_names) == len(set(out_names)), "Handbook has duplicate output names")

    def param(self, name: str) -> ParamSpec:
        for spec in self.params:
            if spec.name == name:
                return spec
        raise ValidationFailed(f"unknown parameter {name!r}", fields=[name])

    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def output_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.outputs)

    def output_name_valid(self, name: str) -> bool:
        """True if ``name`` is declared, including series-family members."""
        for spec in self.outputs:
            if spec.name == name:
                return True
            if spec.kind == "series_family" and name.startswith(spec.name + "/m"):
                suffix = name[len(spec.name) + 2 :]
                if suffix.isdigit():
                    return True
        return False

    def validate_values(self, values: dict) -> dict:
        """Check extracted values against the specs and fill defaults.

        Unknown names and per-parameter range violations raise
        ValidationFailed listing every offending field at once.
        """
        known = set(self.param_names())
        offenders: list[str] = []
        problems: list[str] = []
        for name in values:
            if name not in known:
                offenders.append(name)
                problems.append(f"unknown parameter {name!r}")
        normalized: dict[str, Any] = {}
        for spec in self.params:
            if spec.name in values:
                try:
                    normalized[spec.name] = spec.check(values[spec.name])
                except ValidationFailed as exc:
                    offenders.extend(exc.fields)
                    problems.append(str(exc))
            elif spec.default is not None:
                normalized[spec.name] = spec.default
        if offenders:
            raise ValidationFailed("; ".join(problems), fields=offenders)
        return normalized

    def to_dict(self) -> dict:
        return {
            "simulator_id": self.simulator_id,
            "version": self.version,
            "description": self.description,
            "params": [p.to_dict() for p in self.params],
            "outputs": [o.to_dict() for o in self.outputs],
            "boundary_notes": self.boundary_notes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Handbook":
        _check_no_extra_keys(
            data,
            ("simulator_id", "version", "description", "params", "outputs", "boundary_notes"),
            "Handbook",
        )
        return cls(
            simulator_id=data["simulator_id"],
            version=data["version"],
            description=data.get("description", ""),
            params=tuple(ParamSpec.from_dict(p) for p in data["params"]),
            outputs=tuple(OutputSpec.from_dict(o) for o in data["outputs"]),
            boundary_notes=data.get("boundary_notes", ""),
        )


@dataclass(frozen=True)
class ParamSettings:
    """One concrete, executable assignment of simulator parameters."""

    simulator_id: str
    values: dict
    provenance: str = "manual"

    def __post_init__(self) -> None:
        _require_str(self.simulator_id, "ParamSettings.simulator_id")
        _require(isinstance(self.values, dict) and self.values, "ParamSettings.values must be non-empty")
        _require_choice(self.provenance, PROVENANCES, "ParamSettings.provenance")

    def to_dict(self) -> dict:
        return {
            "simulator_id": self.simulator_id,
            "values": {k: self.values[k] for k in sorted(self.values)},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamSettings":
        _check_no_extra_keys(data, ("simulator_id", "values", "provenance"), "ParamSettings")
        try:
            return cls(
                simulator_id=data["simulator_id"],
                values=dict(data["values"]),
                provenance=data.get("provenance", "manual"),
            )
        except KeyError as exc:
            raise SchemaViolation(f"ParamSettings missing field {exc}") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamSettings):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class Scalar:
    value: float
    units: str = ""

    def __post_init__(self) -> None:
        _require_finite(self.value, "Scalar.value")

    def to_dict(self) -> dict:
        return {"value": self.value, "units": self.units}

    @classmethod
    def from_dict(cls, data: dict) -> "Scalar":
        _check_no_extra_keys(data, ("value", "units"), "Scalar")
        return cls(value=data["value"], units=data.get("units", ""))


@dataclass(frozen=True)
class SimulationOutput:
    """Result of one simulator execution.

    ``scalars`` hold numeric outputs with units, ``labels`` categorical ones
    (a land/sea flag, a growth-phase name), ``series`` time-indexed runs.
    ``seed`` is None for deterministic simulators.
    """

    params: ParamSettings
    scalars: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    seed: int | None = None
    ensemble_size: int = 1

    def __post_init__(self) -> None:
        _require(isinstance(self.params, ParamSettings), "SimulationOutput.params must be ParamSettings")
        for key, val in self.scalars.items():
            _require(isinstance(val, Scalar), f"scalar {key!r} must be a Scalar")
        for key, val in self.labels.items():
            _require_str(val, f"label {key!r}")
        for key, seq in self.series.items():
            _require(
                isinstance(seq, (list, tuple)) and all(isinstance(v, (int, float)) for v in seq),
                f"series {key!r} must be a numeric sequence",
            )
        _require(
            isinstance(self.ensemble_size, int) and self.ensemble_size >= 1,
            "SimulationOutput.ensemble_size must be a positive int",
        )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "params": self.params.to_dict(),
            "scalars": {k: self.scalars[k].to_dict() for k in sorted(self.scalars)},
            "labels": {k: self.labels[k] for k in sorted(self.labels)},
            "series": {k: list(self.series[k]) for k in sorted(self.series)},
            "ensemble_size": self.ensemble_size,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationOutput":
        _check_no_extra_keys(
            data, ("params", "scalars", "labels", "series", "seed", "ensemble_size"), "SimulationOutput"
        )
        return cls(
            params=ParamSettings.from_dict(data["params"]),
            scalars={k: Scalar.from_dict(v) for k, v in data.get("scalars", {}).items()},
            labels=dict(data.get("labels", {})),
            series={k: list(v) for k, v in data.get("series", {}).items()},
            seed=data.get("seed"),
            ensemble_size=data.get("ensemble_size", 1),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimulationOutput):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class TextualContext:
    """Simulator evidence rendered to prose for the verification stage."""

    template_id: str
    text: str
    sources: tuple[SimulationOutput, ...] = ()

    def __post_init__(self) -> None:
        _require_str(self.template_id, "TextualContext.template_id")
        _require_str(self.text, "TextualContext.text")
        _require("{{" not in self.text, "TextualContext.text has unfilled placeholders")
        object.__setattr__(self, "sources", tuple(self.sources))

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "text": self.text,
            "sources": [s.to_dict() for s in self.sources],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TextualContext":
        _check_no_extra_keys(data, ("template_id", "text", "sources"), "TextualContext")
        return cls(
            template_id=data["template_id"],
            text=data["text"],
            sources=tuple(SimulationOutput.from_dict(s) for s in data.get("sources", ())),
        )


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one pipeline run.

    Exactly one of ``selection_budget`` / ``selection_threshold`` must be
    set; the random baseline needs a budget, since it has no score to
    threshold.
    """

    m: int = 5
    centrality_metric: str = "closeness"
    closeness_variant: str = "as_written"
    selection_strategy: str = "ue_sba"
    selection_budget: float | None = None
    selection_threshold: float | None = 0.5
    kappa: float = 0.3
    generation_mode: str = "simulrag"
    seed_answers: int = 0
    seed_simulator: int = 0
    seed_selector: int = 0
    backend: str = "scripted"
    model: str = "scripted-v0"
    ensemble_size: int = 100
    concurrency_limit: int = 4

    def __post_init__(self) -> None:
        _require(isinstance(self.m, int) and self.m >= 1, "PipelineConfig.m must be >= 1")
        _require_choice(self.centrality_metric, CENTRALITY_METRICS, "centrality_metric")
        _require_choice(self.closeness_variant, CLOSENESS_VARIANTS, "closeness_variant")
        _require_choice(self.selection_strategy, SELECTION_STRATEGIES, "selection_strategy")
        _require_choice(self.generation_mode, GENERATION_MODES, "generation_mode")
        _require_choice(self.backend, BACKENDS, "backend")
        has_budget = self.selection_budget is not None
        has_threshold = self.selection_threshold is not None
        _require(
            has_budget != has_threshold,
            "exactly one of selection_budget / selection_threshold must be set",
        )
        if has_budget:
            _require_finite(self.selection_budget, "selection_budget")
            _require(0.0 <= self.selection_budget <= 1.0, "selection_budget must lie in [0, 1]")
        if has_threshold:
            _require_finite(self.selection_threshold, "selection_threshold")
            _require(0.0 <= self.selection_threshold <= 1.0, "selection_threshold must lie in [0, 1]")
        if self.selection_strategy == "random":
            _require(has_budget, "the random selection baseline requires budget mode")
        _require_finite(self.kappa, "kappa")
        _require(0.0 <= self.kappa <= 1.0, "kappa must lie in [0, 1]")
        _require(
            isinstance(self.ensemble_size, int) and self.ensemble_size >= 1,
            "ensemble_size must be a positive int",
        )
        _require(
            isinstance(self.concurrency_limit, int) and self.concurrency_limit >= 1,
            "concurrency_limit must be a positive int",
        )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "m": self.m,
            "centrality_metric": self.centrality_metric,
            "closeness_variant": self.closeness_variant,
            "selection_strategy": self.selection_strategy,
            "kappa": self.kappa,
            "generation_mode": self.generation_mode,
            "seeds": {
                "answer_sampling": self.seed_answers,
                "simulator": self.seed_simulator,
                "random_selector": self.seed_selector,
            },
            "backend": self.backend,
            "model": self.model,
            "ensemble_size": self.ensemble_size,
            "concurrency_limit": self.concurrency_limit,
        }
        if self.selection_budget is not None:
            out["selection_budget"] = self.selection_budget
        if self.selection_threshold is not None:
            out["selection_threshold"] = self.selection_threshold
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        _check_no_extra_keys(
            data,
            (
                "m",
                "centrality_metric",
                "closeness_variant",
                "selection_strategy",
                "selection_budget",
                "selection_threshold",
                "kappa",
                "generation_mode",
                "seeds",
                "backend",
                "model",
                "ensemble_size",
                "concurrency_limit",
            ),
            "PipelineConfig",
        )
        seeds = data.get("seeds", {})
        kwargs: dict[str, Any] = {
            key: data[key]
            for key in (
                "m",
                "centrality_metric",
                "closeness_variant",
                "selection_strategy",
                "kappa",
                "generation_mode",
                "backend",
                "model",
                "ensemble_size",
                "concurrency_limit",
            )
            if key in data
        }
        if "selection_budget" in data or "selection_threshold" in data:
            kwargs["selection_budget"] = data.get("selection_budget")
            kwargs["selection_threshold"] = data.get("selection_threshold")
        return cls(
            seed_answers=seeds.get("answer_sampling", 0),
            seed_simulator=seeds.get("simulator", 0),
            seed_selector=seeds.get("random_selector", 0),
            **kwargs,
        )

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(canonical_json_bytes(self.to_dict())).hexdigest()


@dataclass(frozen=True)
class PipelineResult:
    question: Question
    final_answer: str
    final_claims: tuple[Claim, ...]
    audit: tuple[dict, ...]

    def __post_init__(self) -> None:
        _require(isinstance(self.question, Question), "PipelineResult.question must be a Question")
        _require_str(self.final_answer, "PipelineResult.final_answer")
        object.__setattr__(self, "final_claims", tuple(self.final_claims))
        object.__setattr__(self, "audit", tuple(self.audit))

    def to_dict(self) -> dict:
        return {
            "question": self.question.to_dict(),
            "final_answer": self.final_answer,
            "final_claims": [c.to_dict() for c in self.final_claims],
            "audit": [dict(stage) for stage in self.audit],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineResult":
        _check_no_extra_keys(
            data, ("question", "final_answer", "final_claims", "audit"), "PipelineResult"
        )
        return cls(
            question=Question.from_dict(data["question"]),
            final_answer=data["final_answer"],
            final_claims=tuple(Claim.from_dict(c) for c in data["final_claims"]),
            audit=tuple(data.get("audit", ())),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PipelineResult):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(canonical_json(self.to_dict()))


QA_ITEM_FIELDS = (
    "id",
    "domain",
    "text",
    "reference_answer",
    "reference_claims",
    "params",
    "template_id",
)


@dataclass(frozen=True)
class QAItem:
    """One benchmark question with simulator-grounded reference material."""

    id: str
    domain: str
    text: str
    reference_answer: str
    reference_claims: tuple[str, ...]
    params: ParamSettings
    template_id: str

    def __post_init__(self) -> None:
        _require_str(self.id, "QAItem.id")
        _require_choice(self.domain, DOMAINS, "QAItem.domain")
        _require_str(self.text, "QAItem.text")
        _require_str(self.reference_answer, "QAItem.reference_answer")
        claims = tuple(self.reference_claims)
        _require(len(claims) > 0, "QAItem.reference_claims must be non-empty")
        for claim in claims:
            _require_str(claim, "QAItem.reference_claims entry")
        object.__setattr__(self, "reference_claims", claims)
        _require(isinstance(self.params, ParamSettings), "QAItem.params must be ParamSettings")
        _require_str(self.template_id, "QAItem.template_id")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "text": self.text,
            "reference_answer": self.reference_answer,
            "reference_claims": list(self.reference_claims),
            "params": self.params.to_dict(),
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QAItem":
        _check_no_extra_keys(data, QA_ITEM_FIELDS, "QAItem")
        try:
            return cls(
                id=data["id"],
                domain=data["domain"],
                text=data["text"],
                reference_answer=data["reference_answer"],
                reference_claims=tuple(data["reference_claims"]),
                params=ParamSettings.from_dict(data["params"]),
                template_id=data["template_id"],
            )
        except KeyError as exc:
            raise SchemaViolation(f"QAItem missing field {exc}") from exc


def write_jsonl(path: str | Path, records: Iterable[Any]) -> None:
    """Write records (dicts or objects with to_dict) as canonical JSON lines."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            data = rec.to_dict() if hasattr(rec, "to_dict") else rec
            fh.write(canonical_json(data))
            fh.write("\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{line_no}: invalid JSON line: {exc}") from exc
