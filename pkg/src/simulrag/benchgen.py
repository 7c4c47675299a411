"""Three-stage benchmark generation grounded in simulator runs.

Stage 1 derives question templates from a simulator handbook (model
proposes, vocabulary check disposes). Stage 2 samples parameters from
declared ranges, executes the simulator, and renders the template into
a grounded record. Stage 3 asks the model to phrase a question and
reference answer over the record, then rejects anything whose numbers
cannot be traced back to the record.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from ._assets import asset_json, asset_root
from .claims import decompose
from .domain import Answer, Handbook, ParamSettings, QAItem, SimulationOutput
from .errors import (
    GroundingViolation,
    IoFailure,
    MalformedStructuredOutput,
    SchemaViolation,
    SimulragError,
    UnknownPlaceholder,
)
from .gateway import ChatRequest, LlmGateway
from .retrieval import (
    ALIASES,
    fill_template_text,
    format_param,
    format_scalar,
    render_handbook,
)
from .simulators import get_handbook, get_simulator

log = logging.getLogger(__name__)

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")
_NUMERAL_RE = re.compile(r"\d+(?:\.\d+)?")
_SUFFIX_RE = re.compile(r"^(.*)__(\d+)$")

# Declared default sampling ranges. The paper-facing constraint is only
# "scientifically plausible"; these windows bracket the value families
# seen in the worked examples.
CLIMATE_RANGES = {
    "delta_CO2": (0.0, 50.0),
    "delta_CH4": (0.0, 50.0),
    "delta_SO2": (-20.0, 20.0),
    "delta_BC": (-20.0, 20.0),
    "year": (2040, 2090),
    "year_past": (1990, 2020),
}
EPI_RANGES = {
    "R0": (1.2, 3.0),
    "prior_immunity": (0.1, 0.2, 0.3, 0.4),
    "start_date": ("2022-09-15", "2022-11-01"),
    "n_states": (1, 4),
}


@dataclass(frozen=True)
class BenchTemplate:
    """One question archetype: a query/result pair plus sampling recipe."""

    template_id: str
    simulator_id: str
    version: str
    sampler: str
    query: str
    result: str
    scenarios: int = 1
    derived: tuple = ()

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "simulator_id": self.simulator_id,
            "version": self.version,
            "sampler": self.sampler,
            "scenarios": self.scenarios,
            "derived": list(self.derived),
            "query": self.query,
            "result": self.result,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BenchTemplate":
        try:
            return cls(
                template_id=data["template_id"],
                simulator_id=data["simulator_id"],
                version=data["version"],
                sampler=data["sampler"],
                query=data["query"],
                result=data["result"],
                scenarios=int(data.get("scenarios", 1)),
                derived=tuple(data.get("derived", ())),
            )
        except KeyError as exc:
            raise SchemaViolation(f"bench template missing field {exc}") from exc


# --- derived quantities -------------------------------------------------------
#
# Small registry of values computable from a multi-scenario run but not
# emitted by the simulator itself. Templates declare which ones they use.


def _temperature(output: SimulationOutput) -> float:
    return output.scalars["temperature_c"].value


def _derive_temp_shift(settings, outputs) -> str:
    return f"{_temperature(outputs[1]) - _temperature(outputs[0]):+.2f}"


def _derive_temp_gap(settings, outputs) -> str:
    return f"{abs(_temperature(outputs[1]) - _temperature(outputs[0])):.2f}"


def _derive_warmer_city(settings, outputs) -> str:
    idx = 1 if _temperature(outputs[1]) > _temperature(outputs[0]) else 0
    return format_param("location", settings[idx].values["location"])


def _derive_warmer_period(settings, outputs) -> str:
    t0, t1 = _temperature(outputs[0]), _temperature(outputs[1])
    if t1 > t0:
        return "later"
    if t1 < t0:
        return "earlier"
    return "neither"


DERIVED_REGISTRY = {
    "temp_shift": _derive_temp_shift,
    "temp_gap": _derive_temp_gap,
    "warmer_city": _derive_warmer_city,
    "warmer_period": _derive_warmer_period,
}


# --- stage 1: template derivation --------------------------------------------


def template_vocabulary(handbook: Handbook) -> set:
    """Placeholder base names a template over this handbook may use."""
    vocab = set(handbook.param_names())
    for out in handbook.outputs:
        if out.kind in ("scalar", "label"):
            vocab.add(out.name)
    vocab.update(ALIASES)
    return vocab


def validate_template(template: BenchTemplate, handbook: Handbook) -> None:
    """Check that every placeholder can resolve against this handbook.

    Derived names must be registered and unsuffixed; anything else may
    carry a scenario suffix within the declared scenario count.
    """
    if template.simulator_id != handbook.simulator_id:
        raise SchemaViolation(
            f"template {template.template_id!r} targets {template.simulator_id!r}, "
            f"handbook is {handbook.simulator_id!r}"
        )
    if template.sampler not in SAMPLERS:
        raise SchemaViolation(f"unknown sampler {template.sampler!r}")
    for name in template.derived:
        if name not in DERIVED_REGISTRY:
            raise UnknownPlaceholder(f"derived value {name!r} has no recipe")
    vocab = template_vocabulary(handbook)
    offenders = []
    for text in (template.query, template.result):
        for match in _PLACEHOLDER_RE.finditer(text):
            name = match.group(1)
            if name in template.derived:
                continue
            suffixed = _SUFFIX_RE.match(name)
            base = suffixed.group(1) if suffixed else name
            index = int(suffixed.group(2)) if suffixed else 1  # suffixes are 1-based
            if base not in vocab or base in template.derived:
                offenders.append(name)
            elif not 1 <= index <= template.scenarios:
                offenders.append(name)
    if offenders:
        raise UnknownPlaceholder(
            f"template {template.template_id!r} uses unresolvable placeholders: "
            + ", ".join(sorted(set(offenders)))
        )


def builtin_templates(domain: str | None = None) -> list[BenchTemplate]:
    """Templates shipped as package assets, validated on load."""
    root = asset_root() / "bench_templates"
    templates = []
    for path in sorted(root.glob("*.json")):
        template = BenchTemplate.from_dict(asset_json(f"bench_templates/{path.name}"))
        if domain is not None and template.simulator_id != domain:
            continue
        validate_template(template, get_handbook(template.simulator_id))
        templates.append(template)
    return templates


def derive_templates(gateway: LlmGateway, domain: str) -> list[BenchTemplate]:
    """Ask the model for query/result templates over a handbook.

    The reply is parsed as an array of template records and every record
    is vocabulary-checked; a single bad placeholder rejects the batch,
    since silently dropping records would hide drift between the model
    and the handbook.
    """
    handbook = get_handbook(domain)
    request = ChatRequest(
        template_id="template_derive",
        bindings={"domain": domain, "tools_handbook": render_handbook(handbook)},
    )
    raw = gateway.complete_structured(request, "object_array")
    templates = [BenchTemplate.from_dict(entry) for entry in raw]
    for template in templates:
        validate_template(template, handbook)
    return templates


# --- stage 2: sampling and grounded rendering ---------------------------------


@dataclass(frozen=True)
class GroundedRecord:
    """One simulator execution rendered through a template."""

    template_id: str
    simulator_id: str
    draw_index: int
    settings: tuple
    outputs: tuple
    extras: dict
    query_text: str
    result_text: str

    def grounded_text(self) -> str:
        """Every string a generated answer may draw numbers from."""
        parts = [self.query_text, self.result_text]
        for settings in self.settings:
            for name in sorted(settings.values):
                parts.append(format_param(name, settings.values[name]))
        for output in self.outputs:
            for name in sorted(output.scalars):
                parts.append(format_scalar(output.scalars[name]))
            parts.extend(output.labels[name] for name in sorted(output.labels))
        parts.extend(self.extras[name] for name in sorted(self.extras))
        return "\n".join(parts)


def _check_ranges(ranges: dict, handbook: Handbook) -> dict:
    merged = dict(
        CLIMATE_RANGES if handbook.simulator_id == "climate" else EPI_RANGES
    )
    for name, window in (ranges or {}).items():
        if name not in merged:
            raise SchemaViolation(f"no sampling range named {name!r}")
        merged[name] = tuple(window)
    for name, window in merged.items():
        if name in ("year_past", "n_states", "prior_immunity", "start_date"):
            continue
        spec = handbook.param(name)
        if spec.lo is not None and len(window) == 2:
            lo, hi = window
            if not (spec.lo <= lo <= hi <= spec.hi):
                raise SchemaViolation(
                    f"range {window} for {name!r} escapes handbook bounds "
                    f"[{spec.lo}, {spec.hi}]"
                )
    return merged


def _uniform_1dp(rng: random.Random, window) -> float:
    return round(rng.uniform(window[0], window[1]), 1)


def _draw_date(rng: random.Random, window) -> str:
    lo = dt.date.fromisoformat(window[0])
    hi = dt.date.fromisoformat(window[1])
    return (lo + dt.timedelta(days=rng.randint(0, (hi - lo).days))).isoformat()


def _enum_choices(handbook: Handbook, name: str) -> tuple:
    return tuple(handbook.param(name).allowed)


def _sample_climate_single(rng, handbook, ranges):
    from .simulators.climate import gazetteer

    values = {
        "location": rng.choice(sorted(gazetteer())),
        "year": rng.randint(*ranges["year"]),
        "scenario": rng.choice(_enum_choices(handbook, "scenario")),
        "delta_CO2": _uniform_1dp(rng, ranges["delta_CO2"]),
        "delta_CH4": _uniform_1dp(rng, ranges["delta_CH4"]),
        "delta_SO2": _uniform_1dp(rng, ranges["delta_SO2"]),
        "delta_BC": _uniform_1dp(rng, ranges["delta_BC"]),
    }
    return [ParamSettings("climate", values, provenance="benchmark")]


def _sample_climate_year_delta(rng, handbook, ranges):
    from .simulators.climate import gazetteer

    shared = {
        "location": rng.choice(sorted(gazetteer())),
        "scenario": rng.choice(_enum_choices(handbook, "scenario")),
        "delta_CO2": _uniform_1dp(rng, ranges["delta_CO2"]),
        "delta_CH4": _uniform_1dp(rng, ranges["delta_CH4"]),
    }
    past = dict(shared, year=rng.randint(*ranges["year_past"]))
    future = dict(shared, year=rng.randint(*ranges["year"]))
    return [
        ParamSettings("climate", past, provenance="benchmark"),
        ParamSettings("climate", future, provenance="benchmark"),
    ]


def _sample_climate_city_pair(rng, handbook, ranges):
    from .simulators.climate import gazetteer

    city_a, city_b = rng.sample(sorted(gazetteer()), 2)
    shared = {
        "year": rng.randint(*ranges["year"]),
        "scenario": rng.choice(_enum_choices(handbook, "scenario")),
        "delta_CO2": _uniform_1dp(rng, ranges["delta_CO2"]),
        "delta_SO2": _uniform_1dp(rng, ranges["delta_SO2"]),
    }
    return [
        ParamSettings("climate", dict(shared, location=city_a), provenance="benchmark"),
        ParamSettings("climate", dict(shared, location=city_b), provenance="benchmark"),
    ]


def _sample_epi_single(rng, handbook, ranges):
    lo, hi = ranges["R0"]
    values = {
        "R0": rng.randint(round(lo * 10), round(hi * 10)) / 10.0,
        "seasonality": rng.choice(_enum_choices(handbook, "seasonality")),
        "prior_immunity": rng.choice(ranges["prior_immunity"]),
        "start_date": _draw_date(rng, ranges["start_date"]),
        "states": sorted(
            rng.sample(handbook.param("states").allowed, rng.randint(*ranges["n_states"]))
        ),
    }
    return [ParamSettings("epidemiology", values, provenance="benchmark")]


SAMPLERS = {
    "climate_single": _sample_climate_single,
    "climate_year_delta": _sample_climate_year_delta,
    "climate_city_pair": _sample_climate_city_pair,
    "epi_single": _sample_epi_single,
}


def sample_and_fill(
    template: BenchTemplate,
    ranges: dict | None = None,
    seed: int = 0,
    n: int = 1,
    ensemble_size: int = 100,
) -> list[GroundedRecord]:
    """Draw ``n`` parameter sets, execute them, and render the template.

    Draws that the simulator rejects are logged and skipped; the return
    value always holds exactly ``n`` successful records in draw order.
    """
    handbook = get_handbook(template.simulator_id)
    merged = _check_ranges(ranges or {}, handbook)
    simulator = get_simulator(template.simulator_id)
    sampler = SAMPLERS[template.sampler]
    rng = random.Random(seed)
    records = []
    attempts = 0
    while len(records) < n:
        attempts += 1
        if attempts > max(20 * n, 50):
            raise SimulragError(
                f"sampler for {template.template_id!r} failed to produce "
                f"{n} records in {attempts - 1} attempts"
            )
        settings_list = sampler(rng, handbook, merged)
        sim_seeds = [rng.randrange(2**31) for _ in settings_list]
        try:
            outputs = [
                simulator.run(s, seed=sim_seeds[i], ensemble_size=ensemble_size)
                for i, s in enumerate(settings_list)
            ]
        except SimulragError as exc:
            log.warning("draw %d rejected by simulator: %s", attempts - 1, exc)
            continue
        scenarios = list(zip(settings_list, outputs))
        extras = {
            name: DERIVED_REGISTRY[name](settings_list, outputs)
            for name in template.derived
        }
        records.append(
            GroundedRecord(
                template_id=template.template_id,
                simulator_id=template.simulator_id,
                draw_index=len(records),
                settings=tuple(settings_list),
                outputs=tuple(outputs),
                extras=extras,
                query_text=fill_template_text(template.query, scenarios, extras),
                result_text=fill_template_text(template.result, scenarios, extras),
            )
        )
    return records


# --- stage 3: question synthesis and the grounding gate ------------------------


def numerals(text: str) -> set:
    return set(_NUMERAL_RE.findall(text))


def check_grounding(record: GroundedRecord, *texts: str) -> None:
    """Reject any numeral that cannot be traced back to the record."""
    allowed = numerals(record.grounded_text())
    for text in texts:
        loose = sorted(numerals(text) - allowed)
        if loose:
            raise GroundingViolation(
                f"ungrounded numbers {loose} in item from {record.template_id!r}"
            )


def merged_params(record: GroundedRecord) -> ParamSettings:
    """Flatten a record's scenarios into one settings bag.

    Single-scenario records pass through untouched, so extraction
    round-trips against them directly. Multi-scenario records keep the
    shared values bare and suffix the ones that differ.
    """
    if len(record.settings) == 1:
        return record.settings[0]
    keys = sorted({k for s in record.settings for k in s.values})
    values = {}
    for key in keys:
        per_scenario = [s.values.get(key) for s in record.settings]
        if all(v == per_scenario[0] for v in per_scenario):
            values[key] = per_scenario[0]
        else:
            for i, v in enumerate(per_scenario, start=1):
                if v is not None:
                    values[f"{key}__{i}"] = v
    return ParamSettings(record.simulator_id, values, provenance="benchmark")


def generate_items(gateway: LlmGateway, record: GroundedRecord) -> QAItem:
    """Phrase one benchmark item over a grounded record."""
    request = ChatRequest(
        template_id="qa_generate",
        bindings={
            "domain": record.simulator_id,
            "query": record.query_text,
            "result": record.result_text,
        },
    )
    qa = gateway.complete_structured(request, "qa_object")
    question, reference_answer = qa["question"], qa["reference_answer"]
    for text in (question, reference_answer):
        if "{{" in text:
            raise GroundingViolation(
                f"unfilled template markers in generated text: {text[:80]!r}"
            )
    check_grounding(record, question, reference_answer)
    item_id = f"{record.template_id}/q{record.draw_index:03d}"
    ref = Answer(
        id=f"{item_id}/ref",
        question_id=item_id,
        text=reference_answer,
        sample_index=0,
    )
    claims = decompose(gateway, ref)
    return QAItem(
        id=item_id,
        domain=record.simulator_id,
        text=question,
        reference_answer=reference_answer,
        reference_claims=tuple(c.text for c in claims),
        params=merged_params(record),
        template_id=record.template_id,
    )


def generate_dataset(
    gateway: LlmGateway,
    domain: str,
    n: int,
    seed: int = 0,
    ranges: dict | None = None,
    templates: list | None = None,
    ensemble_size: int = 100,
) -> list[QAItem]:
    """Round-robin the domain's templates until ``n`` items exist."""
    pool = templates if templates is not None else builtin_templates(domain)
    if not pool:
        raise SchemaViolation(f"no benchmark templates for domain {domain!r}")
    quota = [n // len(pool)] * len(pool)
    for i in range(n % len(pool)):
        quota[i] += 1
    items = []
    for t_idx, (template, count) in enumerate(zip(pool, quota)):
        if count == 0:
            continue
        records = sample_and_fill(
            template, ranges, seed=seed * 1009 + t_idx, n=count, ensemble_size=ensemble_size
        )
        for record in records:
            items.append(generate_items(gateway, record))
    return items


# --- dataset files and statistics ----------------------------------------------


def write_dataset(items: list[QAItem], path) -> int:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for item in items:
                fh.write(json.dumps(item.to_dict(), sort_keys=True, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {path}: {exc}") from exc
    return len(items)


def read_dataset(path) -> list[QAItem]:
    items = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    items.append(QAItem.from_dict(json.loads(line)))
                except (json.JSONDecodeError, SchemaViolation) as exc:
                    raise SchemaViolation(f"{path}:{line_no}: {exc}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc
    return items


def dataset_stats(items: list[QAItem]) -> dict:
    """Benchmark summary table: one row of averages per domain."""
    rows = {}
    for domain in sorted({item.domain for item in items}):
        subset = [item for item in items if item.domain == domain]
        n = len(subset)
        n_claims = [len(item.reference_claims) for item in subset]
        quant = [
            sum(1 for c in item.reference_claims if _NUMERAL_RE.search(c))
            for item in subset
        ]
        rows[domain] = {
            "n_questions": n,
            "avg_answer_words": sum(len(i.reference_answer.split()) for i in subset) / n,
            "avg_claims": sum(n_claims) / n,
            "avg_quantitative_claims": sum(quant) / n,
            "avg_qualitative_claims": (sum(n_claims) - sum(quant)) / n,
            "avg_tool_param_count": sum(len(i.params.values) for i in subset) / n,
        }
    return rows
