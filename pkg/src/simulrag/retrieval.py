"""Simulator retrieval: question -> parameters -> execution -> textual context.

The querying side extracts one or more parameter assignments from a
question via the gateway and validates them against the simulator's
handbook. The answering side executes those assignments and fills a
textual-context template, a JSON asset with ``query`` and ``result``
strings whose ``{{name}}`` placeholders name handbook parameters, outputs,
or one of the fixed aliases below (the template vocabulary predates the
handbooks, so e.g. ``setting`` means the ``scenario`` parameter).

Number formatting is deliberately rigid so that rendered text is
byte-stable and every numeral in it can be traced back to a parameter or
output value: temperatures two decimals, patient counts integers, weeks
one decimal, everything else shortest-form ``%g``.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache

from ._assets import asset_path, asset_text
from .domain import Handbook, ParamSettings, Question, Scalar, SimulationOutput, TextualContext
from .errors import (
    ExtractionFailed,
    MalformedStructuredOutput,
    OutOfRangeParam,
    TemplateFieldMissing,
    UnknownPlaceholder,
    ValidationFailed,
)
from .gateway import ChatRequest, LlmGateway
from .simulators import get_simulator

_CONTEXT_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")

# Template vocabulary -> handbook vocabulary. "const" entries render fixed
# text; "outlook" composes the ensemble summary lines.
ALIASES: dict[str, tuple[str, str]] = {
    "city_name": ("param", "location"),
    "setting": ("param", "scenario"),
    "greenhouse_temp": ("scalar", "temperature_c"),
    "land_sea_result": ("label", "land_or_sea"),
    "starting_date": ("param", "start_date"),
    "r0_value": ("param", "R0"),
    "seasonality_level": ("param", "seasonality"),
    "prior_immunity_level": ("param_percent", "prior_immunity"),
    "target_states": ("param", "states"),
    "target_metric": ("const", "hospital prevalence"),
    "simulation_outlook": ("outlook", ""),
}


def format_temperature(value: float) -> str:
    return f"{value:.2f}"


def format_count(value: float) -> str:
    return str(int(round(value)))


def format_weeks(value: float) -> str:
    return f"{value:.1f}"


def format_number(value) -> str:
    return f"{value:g}"


def format_percent_fraction(value: float) -> str:
    return f"{value * 100:g}%"


def format_scalar(scalar: Scalar) -> str:
    if scalar.units == "degC":
        return format_temperature(scalar.value)
    if scalar.units == "patients":
        return format_count(scalar.value)
    if scalar.units == "weeks":
        return format_weeks(scalar.value)
    return format_number(scalar.value)


def format_param(name: str, value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        if name == "location" and len(value) == 2:
            return f"({format_number(value[0])}, {format_number(value[1])})"
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return format_number(value)


def render_handbook(handbook: Handbook) -> str:
    """Stable textual form of a handbook for prompt embedding."""
    return json.dumps(handbook.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)


@lru_cache(maxsize=None)
def load_context_template(template_id: str) -> dict:
    raw = json.loads(asset_text(f"context_templates/{template_id}.json"))
    for key in ("template_id", "query", "result"):
        if key not in raw:
            raise TemplateFieldMissing(f"context template {template_id!r} lacks {key!r}")
    return raw


def context_template_ids() -> tuple[str, ...]:
    root = asset_path("context_templates")
    return tuple(sorted(p.stem for p in root.iterdir() if p.name.endswith(".json")))


def default_context_template(domain: str) -> str:
    for template_id in context_template_ids():
        if load_context_template(template_id).get("simulator_id") == domain:
            return template_id
    raise TemplateFieldMissing(f"no context template registered for domain {domain!r}")


def _outlook_text(output: SimulationOutput) -> str:
    peak = format_scalar(output.scalars["peak_hospital_prevalence_median"])
    week = format_scalar(output.scalars["peak_week"])
    phase = output.labels["growth_phase"]
    return (
        f"\n- Median peak hospital prevalence: approximately {peak} patients."
        f"\n- Expected peak timing: around week {week} of the season."
        f"\n- Early growth phase: {phase}."
    )


def _split_scenario_suffix(name: str) -> tuple[str, int | None]:
    base, sep, tail = name.rpartition("__")
    if sep and base and tail.isdigit():
        return base, int(tail)
    return name, None


def resolve_placeholder(
    name: str,
    scenarios: list[tuple[ParamSettings, SimulationOutput | None]],
    extra: dict[str, str] | None = None,
) -> str:
    """Format one placeholder from the scenario list.

    Plain names read the first scenario; a ``__N`` suffix selects the Nth
    (1-based). ``extra`` carries template-computed derived values and wins
    over everything.
    """
    if extra and name in extra:
        return extra[name]
    base, index = _split_scenario_suffix(name)
    if extra and index is not None and base in extra:
        # Derived values are scenario-free; a suffixed reference is a
        # template author error, not a lookup miss.
        raise UnknownPlaceholder(f"derived value {base!r} cannot take a scenario suffix")
    scenario_idx = (index - 1) if index is not None else 0
    if not 0 <= scenario_idx < len(scenarios):
        raise UnknownPlaceholder(
            f"placeholder {name!r} addresses scenario {index} "
            f"but only {len(scenarios)} scenario(s) exist"
        )
    settings, output = scenarios[scenario_idx]
    kind, target = ALIASES.get(base, ("", base))
    if kind == "const":
        return target
    if kind == "outlook":
        if output is None:
            raise UnknownPlaceholder(f"placeholder {name!r} needs simulation output")
        return _outlook_text(output)
    if kind == "param_percent":
        if target in settings.values:
            return format_percent_fraction(float(settings.values[target]))
        raise UnknownPlaceholder(f"placeholder {name!r} -> missing parameter {target!r}")
    if kind in ("scalar", "label") or (not kind and output is not None):
        if output is not None:
            lookup = target
            if lookup in output.scalars:
                return format_scalar(output.scalars[lookup])
            if lookup in output.labels:
                return output.labels[lookup]
    if target in settings.values:
        return format_param(target, settings.values[target])
    raise UnknownPlaceholder(f"placeholder {name!r} does not resolve")


def fill_template_text(
    text: str,
    scenarios: list[tuple[ParamSettings, SimulationOutput | None]],
    extra: dict[str, str] | None = None,
) -> str:
    """Substitute every ``{{name}}`` in ``text``; unresolved names raise."""
    missing: list[str] = []

    def sub(match: re.Match) -> str:
        name = match.group(1)
        try:
            return resolve_placeholder(name, scenarios, extra)
        except UnknownPlaceholder:
            missing.append(name)
            return match.group(0)

    filled = _CONTEXT_PLACEHOLDER_RE.sub(sub, text)
    if missing:
        raise UnknownPlaceholder(f"unresolved placeholders: {sorted(set(missing))}")
    return filled


def extract_parameters(
    gateway: LlmGateway, question: Question, handbook: Handbook
) -> list[ParamSettings]:
    """Ask the gateway for parameter assignments and validate each one.

    Comparison questions legitimately yield several assignments; order is
    the completion's order and is preserved downstream.
    """
    request = ChatRequest(
        template_id="param_extract",
        bindings={"tools_handbook": render_handbook(handbook), "question": question.text},
    )
    try:
        objects = gateway.complete_structured(request, "object_array")
    except MalformedStructuredOutput as exc:
        raise ExtractionFailed(f"parameter extraction unparseable: {exc}") from exc
    settings_list = []
    for obj in objects:
        values = handbook.validate_values(obj)
        settings_list.append(
            ParamSettings(
                simulator_id=handbook.simulator_id, values=values, provenance="extracted"
            )
        )
    return settings_list


def run_and_contextualize(
    domain: str,
    settings_list: list[ParamSettings],
    template_id: str,
    seed: int,
    ensemble_size: int = 100,
) -> TextualContext:
    """Execute every parameter assignment and render one combined context.

    Multi-scenario questions get one rendered block per assignment, joined
    by blank lines in extraction order.
    """
    if not settings_list:
        raise TemplateFieldMissing("no parameter settings to render")
    template = load_context_template(template_id)
    simulator = get_simulator(domain)
    blocks: list[str] = []
    sources: list[SimulationOutput] = []
    for settings in settings_list:
        try:
            output = simulator.run(settings, seed=seed, ensemble_size=ensemble_size)
        except ValidationFailed as exc:
            raise ValidationFailed(
                f"{exc} (params: {settings.to_dict()})", fields=exc.fields
            ) from exc
        except OutOfRangeParam as exc:
            raise OutOfRangeParam(f"{exc} (params: {settings.to_dict()})") from exc
        sources.append(output)
        try:
            blocks.append(fill_template_text(template["result"], [(settings, output)]))
        except UnknownPlaceholder as exc:
            raise TemplateFieldMissing(str(exc)) from exc
    return TextualContext(
        template_id=template_id, text="\n\n".join(blocks), sources=tuple(sources)
    )
