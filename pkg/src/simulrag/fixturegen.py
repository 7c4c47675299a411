"""Deterministic fixture machinery for offline runs.

The scripted backend replays canned responses by content key, so tests
need a way to produce internally consistent response sets for whole
pipeline runs. The pieces here do that:

* ``IdealResponder`` computes a plausible, fully deterministic response
  for every prompt template from the request bindings alone. It answers
  like a careful model with an answer key: reference claims echo the
  simulation numbers, planted errors come with known corrections, and
  judgments follow simple textual rules.
* ``RecordingBackend`` wraps any backend and captures (key, response)
  pairs, which ``write_pack`` serializes as the JSON Lines packs the
  test suite replays.
* The ``build_*`` functions produce the committed packs: a pipeline
  grid over a small generated dataset, an all-in-boundary variant for
  budget-extreme checks, and the benchmark-generation pack.

Regenerate the packs with scripts/make_fixture_pack.py after changing
prompts, simulators, or pipeline behavior.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from pathlib import Path

from ._assets import asset_root
from . import evaluation
from . import pipeline as pl
from .benchgen import builtin_templates, derive_templates, generate_dataset, write_dataset
from .domain import ParamSettings, PipelineConfig, QAItem, Question
from .errors import SchemaViolation
from .gateway import ChatRequest, Completion, LlmGateway
from .retrieval import extract_parameters
from .simulators import get_handbook

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_NUM_RE = re.compile(r"\d+(?:\.\d+)?")
_NUMBERED_LINE = re.compile(r"^\d+\.\s(.*)$")
# Words that mark a claim as checkable against a categorical simulator
# output even without any number in it.
_LABEL_WORD = re.compile(r"\b(land|sea|explosive|rapid|gradual)\b")

SCOPE_SENTENCES = {
    "climate": "Local adaptation policy will determine how these conditions are experienced in practice.",
    "epidemiology": "Hospital staffing decisions will determine how well this wave is managed in practice.",
}
CORRECTION_LEAD = "Verification against the simulator run gives: "

E2E_SEED = 0
E2E_PER_DOMAIN = 3
BENCH_SEED = 0
BENCH_PER_DOMAIN = 10
CLOSED_LOOP_SEED = 1
CLOSED_LOOP_PER_DOMAIN = 10

E2E_PACK = "fixtures/e2e_pack.jsonl"
E2E_PACK_ALLBOUND = "fixtures/e2e_pack_allbound.jsonl"
BENCH_PACK = "fixtures/bench_pack.jsonl"
E2E_DATASET = "datasets/e2e.jsonl"

# The pipeline grid every e2e pack covers; acceptance tests replay these
# configurations verbatim, so extend rather than reshape.
FIXTURE_CONFIGS: dict[str, PipelineConfig] = {
    "ue_sba_t50": PipelineConfig(),
    "ue_sba_b25": PipelineConfig(selection_budget=0.25, selection_threshold=None),
    "uncertainty_b25": PipelineConfig(
        selection_strategy="uncertainty", selection_budget=0.25, selection_threshold=None
    ),
    "random_b25": PipelineConfig(
        selection_strategy="random", selection_budget=0.25, selection_threshold=None
    ),
    "verbalized_b25": PipelineConfig(
        selection_strategy="verbalized", selection_budget=0.25, selection_threshold=None
    ),
    "ue_sba_b0": PipelineConfig(selection_budget=0.0, selection_threshold=None),
    "ue_sba_b100": PipelineConfig(selection_budget=1.0, selection_threshold=None),
    "no_rag": PipelineConfig(generation_mode="no_rag"),
    "input_layer": PipelineConfig(generation_mode="input_layer"),
    "output_layer": PipelineConfig(generation_mode="output_layer"),
}
ALLBOUND_CONFIG_NAMES = ("ue_sba_b0", "ue_sba_b100")


def _norm(text: str) -> str:
    return " ".join(text.split()).casefold()


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(text.strip()) if s]


def _numerals(text: str) -> set:
    return set(_NUM_RE.findall(text))


def _label_words(text: str) -> set:
    return set(_LABEL_WORD.findall(text.casefold()))


def _parse_numbered(block: str) -> list[str]:
    out = []
    for line in block.splitlines():
        match = _NUMBERED_LINE.match(line.strip())
        if match:
            out.append(match.group(1))
    return out


def perturb_numeral(text: str) -> str:
    """Corrupt one number in a sentence, deterministically.

    Prefers the last decimal-pointed token (usually a simulated output,
    not a year), falling back to the last number of any shape.
    """
    matches = list(_NUM_RE.finditer(text))
    if not matches:
        raise SchemaViolation(f"cannot perturb a number-free sentence: {text!r}")
    decimal = [m for m in matches if "." in m.group(0)]
    target = (decimal or matches)[-1]
    token = target.group(0)
    value = float(token) * 2.0 + 1.0
    if "." in token:
        wrong = f"{value:.{len(token.rsplit('.', 1)[1])}f}"
    else:
        wrong = str(int(value))
    return text[: target.start()] + wrong + text[target.end() :]


def _result_prose(result: str) -> str:
    lines = [line.strip() for line in result.splitlines()]
    lines = [line[2:] if line.startswith("- ") else line for line in lines if line]
    return " ".join(lines)


def split_params(params: ParamSettings) -> list[dict]:
    """Invert the scenario-suffix flattening of a QAItem's parameter bag."""
    suffixed = {}
    shared = {}
    n = 1
    for key, value in params.values.items():
        match = re.fullmatch(r"(.*)__(\d+)", key)
        if match:
            idx = int(match.group(2))
            suffixed.setdefault(match.group(1), {})[idx] = value
            n = max(n, idx)
        else:
            shared[key] = value
    out = []
    for i in range(1, n + 1):
        values = dict(shared)
        for base, per in suffixed.items():
            if i in per:
                values[base] = per[i]
        out.append(values)
    return out


class IdealResponder:
    """Backend computing consistent responses instead of looking them up.

    ``oracle`` maps a question's text to its answer key: the reference
    claims every sample repeats, per-sample planted extras, and the true
    parameter assignments. ``corrections`` maps normalized wrong text to
    its repaired version. ``all_bound`` forces every boundary judgment
    to 1, which models a simulator whose scope covers every claim.
    """

    def __init__(self, all_bound: bool = False) -> None:
        self.all_bound = all_bound
        self.oracle: dict[str, dict] = {}
        self.corrections: dict[str, str] = {}

    # -- answer key construction ------------------------------------------

    def teach(self, items: list[QAItem]) -> None:
        for item in items:
            if item.text in self.oracle:
                raise SchemaViolation(f"duplicate question text: {item.text[:60]!r}")
            refs = list(item.reference_claims)
            wrong = perturb_numeral(refs[0])
            corrected = CORRECTION_LEAD + refs[0]
            self.corrections[_norm(wrong)] = corrected
            draft = " ".join(refs + [wrong])
            self.corrections[_norm(draft)] = " ".join(refs + [corrected])
            self.oracle[item.text] = {
                "claims": refs,
                "extras": {0: [wrong], 1: [SCOPE_SENTENCES[item.domain]]},
                "params": split_params(item.params),
            }

    # -- backend protocol ---------------------------------------------------

    def complete(self, request: ChatRequest, prompt: str) -> Completion:
        text = self._respond(request.template_id, request.bindings)
        return Completion(text=text, backend_tag="ideal")

    def _entry(self, question: str) -> dict:
        if question not in self.oracle:
            raise SchemaViolation(f"no answer key for question {question[:60]!r}")
        return self.oracle[question]

    def _respond(self, template_id: str, b: dict) -> str:
        if template_id == "answer_sample":
            entry = self._entry(b["question"])
            idx = int(b["sample_index"])
            return " ".join(entry["claims"] + entry["extras"].get(idx, []))

        if template_id == "claim_decompose":
            sentences = split_sentences(b["original_text"])
            return "\n".join(json.dumps({"claim": s}, ensure_ascii=False) for s in sentences)

        if template_id == "claim_merge":
            existing = [_norm(t) for t in _parse_numbered(b["existing_claim_set"])]
            incoming = [_norm(t) for t in _parse_numbered(b["new_claim_set"])]
            pairs = [
                [i, j]
                for i, old in enumerate(existing)
                for j, new in enumerate(incoming)
                if old == new
            ]
            return json.dumps(pairs)

        if template_id == "boundary_assess":
            claim = b["claim"]
            bound = 1 if self.all_bound or _NUM_RE.search(claim) or _label_words(claim) else 0
            return json.dumps({"tool_confidence": bound})

        if template_id == "verify_update":
            claim, context = b["claim"], b["textual_context"]
            if _norm(claim) in self.corrections:
                return json.dumps(
                    {
                        "is_included": True,
                        "should_update": True,
                        "updated_claim": self.corrections[_norm(claim)],
                    },
                    ensure_ascii=False,
                )
            nums = _numerals(claim)
            if nums and nums <= _numerals(context):
                return json.dumps({"is_included": True, "should_update": False})
            words = _label_words(claim)
            if not nums and words and words <= _label_words(context):
                return json.dumps({"is_included": True, "should_update": False})
            return json.dumps({"is_included": False, "should_update": False})

        if template_id == "entailment_judge":
            premise, hypothesis = _norm(b["premise"]), _norm(b["hypothesis"])
            nums = _numerals(hypothesis)
            if hypothesis in premise or (nums and nums <= _numerals(premise)):
                return "entails"
            return "neutral"

        if template_id == "verbalized_conf":
            digest = hashlib.sha256(_norm(b["claim"]).encode("utf-8")).hexdigest()
            return f"{(int(digest[:8], 16) % 900 + 50) / 1000:.3f}"

        if template_id == "final_answer":
            return " ".join(_parse_numbered(b["claims_text"]))

        if template_id == "param_extract":
            entry = self._entry(b["question"])
            return json.dumps(entry["params"], ensure_ascii=False)

        if template_id == "qa_generate":
            return json.dumps(
                {"question": b["query"], "reference_answer": _result_prose(b["result"])},
                ensure_ascii=False,
            )

        if template_id == "template_derive":
            templates = builtin_templates(b["domain"])
            return json.dumps([t.to_dict() for t in templates], ensure_ascii=False)

        raise SchemaViolation(f"ideal responder has no rule for template {template_id!r}")


class RecordingBackend:
    """Backend wrapper capturing every (fixture key, response) pair."""

    def __init__(self, inner) -> None:
        self.inner = inner
        self.records: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest, prompt: str) -> Completion:
        completion = self.inner.complete(request, prompt)
        key = request.fixture_key()
        with self._lock:
            known = self.records.get(key)
            if known is not None and known != completion.text:
                raise SchemaViolation(f"nondeterministic response for fixture key {key}")
            self.records[key] = completion.text
        return completion

    def write_pack(self, path) -> int:
        return write_pack(self.records, path)


def write_pack(records: dict, path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(records):
            fh.write(
                json.dumps({"key": key, "response": records[key]}, ensure_ascii=False)
            )
            fh.write("\n")
    return len(records)


def question_of(item: QAItem) -> Question:
    return Question(id=item.id, text=item.text, domain=item.domain)


def build_e2e_items(gateway: LlmGateway) -> list[QAItem]:
    items = []
    for domain in ("climate", "epidemiology"):
        items.extend(generate_dataset(gateway, domain, E2E_PER_DOMAIN, seed=E2E_SEED))
    return items


def build_e2e_pack(root: Path) -> dict:
    """Generate the e2e dataset and record the full pipeline grid over it."""
    responder = IdealResponder()
    plain = LlmGateway(responder)
    items = build_e2e_items(plain)
    write_dataset(items, root / E2E_DATASET)
    responder.teach(items)

    recorder = RecordingBackend(responder)
    gateway = LlmGateway(recorder)
    for config in FIXTURE_CONFIGS.values():
        for item in items:
            pl.run(question_of(item), config, gateway)
    # Evaluation passes replay the same pipeline keys and add the
    # entailment-judge labeling traffic.
    evaluation.run_comparison(gateway, items, PipelineConfig(), budgets=[0.25])
    evaluation.compare_generation_modes(gateway, items, PipelineConfig())
    count = recorder.write_pack(root / E2E_PACK)
    return {"items": len(items), "fixtures": count}


def build_allbound_pack(root: Path) -> dict:
    """Budget-extreme variant where every claim is judged in-boundary."""
    responder = IdealResponder(all_bound=True)
    plain = LlmGateway(responder)
    items = build_e2e_items(plain)  # same seed, same items; nothing written
    responder.teach(items)

    recorder = RecordingBackend(responder)
    gateway = LlmGateway(recorder)
    for name in ALLBOUND_CONFIG_NAMES:
        for item in items:
            pl.run(question_of(item), FIXTURE_CONFIGS[name], gateway)
    count = recorder.write_pack(root / E2E_PACK_ALLBOUND)
    return {"items": len(items), "fixtures": count}


def build_bench_pack(root: Path) -> dict:
    """Benchmark-generation traffic: derivation, generation, closed loop."""
    responder = IdealResponder()
    recorder = RecordingBackend(responder)
    gateway = LlmGateway(recorder)

    for domain in ("climate", "epidemiology"):
        derive_templates(gateway, domain)
        generate_dataset(gateway, domain, BENCH_PER_DOMAIN, seed=BENCH_SEED)

    # Closed-loop extraction items use single-scenario templates only, so
    # the generating parameters are directly a runnable assignment.
    loop_items = []
    for domain, template_id in (
        ("climate", "bench_climate_point_v1"),
        ("epidemiology", "bench_epi_outlook_v1"),
    ):
        template = next(
            t for t in builtin_templates(domain) if t.template_id == template_id
        )
        loop_items.extend(
            generate_dataset(
                gateway,
                domain,
                CLOSED_LOOP_PER_DOMAIN,
                seed=CLOSED_LOOP_SEED,
                templates=[template],
            )
        )
    responder.teach(loop_items)
    for item in loop_items:
        extract_parameters(gateway, question_of(item), get_handbook(item.domain))
    count = recorder.write_pack(root / BENCH_PACK)
    return {"loop_items": len(loop_items), "fixtures": count}


def build_all(root: Path | None = None) -> dict:
    root = Path(root) if root is not None else asset_root()
    return {
        "e2e": build_e2e_pack(root),
        "allbound": build_allbound_pack(root),
        "bench": build_bench_pack(root),
    }
