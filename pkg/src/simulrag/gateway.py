"""LLM access layer: prompt templates, backends, structured-output parsing.

Two backends share one interface. The scripted backend serves canned
responses keyed by content (template id plus a digest of the bindings), so
any run against a fixture pack is exactly reproducible and touches no
network. The HTTP backend speaks the common chat-completions wire shape.

Structured-output parsing is deliberately forgiving about wrapping (code
fences, surrounding prose) and strict about payload shape. A parse failure
triggers exactly one repair re-prompt before giving up.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol

from ._assets import asset_json, asset_text
from .domain import canonical_json_bytes, read_jsonl
from .errors import (
    FixtureMissing,
    MalformedStructuredOutput,
    MissingBinding,
    RateLimited,
    SchemaViolation,
    TransportError,
    UnknownTemplate,
)

# {name} placeholders; doubled braces (literal JSON examples, context-template
# slots quoted inside prompt bodies) are not placeholders.
_PLACEHOLDER_RE = re.compile(r"(?<!\{)\{([a-z_][a-z0-9_]*)\}(?!\})")

# Reserved binding: when present its value is appended to the rendered prompt
# and its presence changes the fixture key, which is how the single repair
# re-prompt stays content-addressable under scripted backends.
REPAIR_BINDING = "__repair__"
REPAIR_NOTE = (
    "Your previous response could not be parsed. "
    "Respond again with ONLY the valid structured output requested above."
)

STRUCTURED_SHAPES = (
    "jsonl_claims",
    "pair_array",
    "tool_confidence",
    "verify_verdict",
    "object_array",
    "qa_object",
    "probability",
    "entailment_label",
    "free_text",
)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 1024
DEFAULT_IN_FLIGHT_LIMIT = 4

_API_KEY_ENV = "SIMULRAG_API_KEY"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    version: str
    placeholders: tuple[str, ...]

    def __post_init__(self) -> None:
        found = set(_PLACEHOLDER_RE.findall(self.body))
        declared = set(self.placeholders)
        if found != declared:
            raise SchemaViolation(
                f"template {self.template_id!r}: body placeholders {sorted(found)} "
                f"do not match declared {sorted(declared)}"
            )


_TEMPLATE_CACHE: dict[str, PromptTemplate] | None = None
_TEMPLATE_LOCK = threading.Lock()


def _load_templates() -> dict[str, PromptTemplate]:
    global _TEMPLATE_CACHE
    with _TEMPLATE_LOCK:
        if _TEMPLATE_CACHE is None:
            manifest = asset_json("prompts/manifest.json")
            registry = {}
            for template_id, meta in manifest.items():
                body = asset_text(f"prompts/{meta['file']}").rstrip("\n")
                registry[template_id] = PromptTemplate(
                    template_id=template_id,
                    body=body,
                    version=meta["version"],
                    placeholders=tuple(meta["placeholders"]),
                )
            _TEMPLATE_CACHE = registry
        return _TEMPLATE_CACHE


def get_template(template_id: str) -> PromptTemplate:
    registry = _load_templates()
    if template_id not in registry:
        raise UnknownTemplate(f"no prompt template named {template_id!r}")
    return registry[template_id]


def template_ids() -> tuple[str, ...]:
    return tuple(sorted(_load_templates()))


def template_versions() -> dict[str, str]:
    return {tid: tpl.version for tid, tpl in sorted(_load_templates().items())}


def render_prompt(template_id: str, bindings: dict[str, str]) -> str:
    """Fill a template's placeholders from ``bindings``.

    Every declared placeholder must be covered; extra bindings are legal
    (they feed the fixture key but not the text). Values are inserted in a
    single pass, so a value containing something brace-shaped is never
    re-expanded.
    """
    template = get_template(template_id)
    missing = [name for name in template.placeholders if name not in bindings]
    if missing:
        raise MissingBinding(
            f"template {template_id!r} is missing bindings for {missing}"
        )

    def _sub(match: re.Match) -> str:
        return str(bindings[match.group(1)])

    rendered = _PLACEHOLDER_RE.sub(_sub, template.body)
    if REPAIR_BINDING in bindings:
        rendered = rendered + "\n\n" + str(bindings[REPAIR_BINDING])
    return rendered


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    bindings: dict
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        for key, value in self.bindings.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise SchemaViolation(
                    f"ChatRequest bindings must map str->str, got {key!r}={type(value).__name__}"
                )
        # Fails fast on unknown template ids and uncovered placeholders.
        template = get_template(self.template_id)
        missing = [n for n in template.placeholders if n not in self.bindings]
        if missing:
            raise MissingBinding(
                f"ChatRequest for {self.template_id!r} lacks bindings {missing}"
            )

    def fixture_key(self) -> str:
        return fixture_key(self.template_id, self.bindings)

    def render(self) -> str:
        return render_prompt(self.template_id, self.bindings)


def fixture_key(template_id: str, bindings: dict) -> str:
    digest = hashlib.sha256(canonical_json_bytes(bindings)).hexdigest()
    return f"{template_id}:{digest}"


@dataclass(frozen=True)
class Completion:
    text: str
    backend_tag: str
    usage: dict = field(default_factory=dict)


class Backend(Protocol):
    def complete(self, request: ChatRequest, prompt: str) -> Completion: ...


class ScriptedBackend:
    """Deterministic backend serving canned responses.

    Content-addressed mode looks responses up by fixture key; ordered
    playback mode replays a recorded list of responses in sequence (and is
    therefore only safe for sequential request streams).
    """

    def __init__(
        self,
        fixtures: dict[str, str] | None = None,
        playback: list[str] | None = None,
    ) -> None:
        if (fixtures is None) == (playback is None):
            raise SchemaViolation("ScriptedBackend needs exactly one of fixtures/playback")
        self.fixtures = dict(fixtures) if fixtures is not None else None
        self._playback = list(playback) if playback is not None else None
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        fixtures: dict[str, str] = {}
        for row in read_jsonl(path):
            fixtures[row["key"]] = row["response"]
        return cls(fixtures=fixtures)

    def complete(self, request: ChatRequest, prompt: str) -> Completion:
        if self.fixtures is not None:
            key = request.fixture_key()
            if key not in self.fixtures:
                raise FixtureMissing(key, request.template_id)
            return Completion(text=self.fixtures[key], backend_tag="scripted")
        with self._lock:
            assert self._playback is not None
            if self._cursor >= len(self._playback):
                raise FixtureMissing(
                    f"playback:{self._cursor}", request.template_id
                )
            text = self._playback[self._cursor]
            self._cursor += 1
        return Completion(text=text, backend_tag="scripted-playback")


class HttpBackend:
    """Chat-completions client with bounded retries.

    Talks to ``{base_url}/chat/completions`` with a bearer token taken from
    the SIMULRAG_API_KEY environment variable unless given explicitly.
    Transport failures, 5xx and 429 are retried with exponential backoff
    (429 also honors Retry-After); other client errors fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        sleeper: Callable[[float], None] = time.sleep,
        session: Any = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(_API_KEY_ENV, "")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.sleeper = sleeper
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def complete(self, request: ChatRequest, prompt: str) -> Completion:
        import requests

        url = f"{self.base_url}/chat/completions"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: str = ""
        rate_limited = False
        retry_after: float | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse_response(resp)
                if resp.status_code == 429:
                    rate_limited = True
                    header = resp.headers.get("Retry-After")
                    retry_after = float(header) if header else None
                    last_error = "rate limited (429)"
                elif resp.status_code >= 500:
                    rate_limited = False
                    last_error = f"server error ({resp.status_code})"
                else:
                    raise TransportError(
                        f"chat request rejected with status {resp.status_code}: {resp.text[:200]}"
                    )
            if attempt + 1 < self.max_attempts:
                wait = float(2**attempt)
                if retry_after is not None:
                    wait = max(wait, retry_after)
                self.sleeper(wait)
        if rate_limited:
            raise RateLimited(
                f"gave up after {self.max_attempts} attempts: {last_error}",
                retry_after=retry_after,
            )
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")

    def _parse_response(self, resp: Any) -> Completion:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response body: {exc}") from exc
        return Completion(
            text=text,
            backend_tag=f"http:{self.model}",
            usage=data.get("usage") or {},
        )


class LlmGateway:
    """Thread-safe front door for all model traffic.

    Enforces a global in-flight limit so concurrent pipeline stages cannot
    exceed the configured parallelism regardless of caller thread count.
    """

    def __init__(self, backend: Backend, in_flight_limit: int = DEFAULT_IN_FLIGHT_LIMIT) -> None:
        if in_flight_limit < 1:
            raise SchemaViolation("in_flight_limit must be >= 1")
        self.backend = backend
        self._gate = threading.BoundedSemaphore(in_flight_limit)

    def complete(self, request: ChatRequest) -> Completion:
        prompt = request.render()
        with self._gate:
            return self.backend.complete(request, prompt)

    def complete_validated(self, request: ChatRequest, parse: Callable[[str], Any]) -> Any:
        """Complete, parse, and on a parse failure repair exactly once."""
        completion = self.complete(request)
        try:
            return parse(completion.text)
        except MalformedStructuredOutput:
            repair = replace(
                request, bindings={**request.bindings, REPAIR_BINDING: REPAIR_NOTE}
            )
            second = self.complete(repair)
            return parse(second.text)

    def complete_structured(self, request: ChatRequest, expected_shape: str) -> Any:
        return self.complete_validated(
            request, lambda text: parse_structured(text, expected_shape)
        )


@dataclass(frozen=True)
class VerifyVerdict:
    is_included: bool
    should_update: bool
    updated_claim: str | None = None


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def _strip_fences(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def _first_json(text: str, kinds: tuple[type, ...]):
    """Return the first well-formed JSON value of the wanted kinds."""
    decoder = json.JSONDecoder()
    for idx, char in enumerate(text):
        if char not in "[{":
            continue
        try:
            value, _ = decoder.raw_decode(text[idx:])
        except ValueError:
            continue
        if isinstance(value, kinds):
            return value
    return None


def _parse_jsonl_claims(text: str) -> list[str]:
    body = _strip_fences(text)
    decoder = json.JSONDecoder()
    raw: list[str] = []
    for line in body.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            value, _ = decoder.raw_decode(line)
        except ValueError:
            continue
        if isinstance(value, dict) and isinstance(value.get("claim"), str):
            raw.append(value["claim"].strip())
    if not raw:
        # Tolerate a single JSON array of {"claim": ...} objects.
        arr = _first_json(body, (list,))
        if isinstance(arr, list):
            for value in arr:
                if isinstance(value, dict) and isinstance(value.get("claim"), str):
                    raw.append(value["claim"].strip())
    claims: list[str] = []
    for text_ in raw:
        if text_ and text_ not in claims:
            claims.append(text_)
    if claims:
        return claims
    if body.strip() == "[]":
        return []
    raise MalformedStructuredOutput("no {claim: ...} lines found in completion")


def _parse_pair_array(text: str) -> list[tuple[int, int]]:
    arr = _first_json(_strip_fences(text), (list,))
    if arr is None:
        raise MalformedStructuredOutput("no JSON array found in completion")
    pairs: list[tuple[int, int]] = []
    for item in arr:
        ok = (
            isinstance(item, (list, tuple))
            and len(item) == 2
            and all(isinstance(v, int) and not isinstance(v, bool) for v in item)
        )
        if not ok:
            raise MalformedStructuredOutput(f"pair array entry is not [int, int]: {item!r}")
        pairs.append((item[0], item[1]))
    return pairs


def _parse_tool_confidence(text: str) -> int:
    obj = _first_json(_strip_fences(text), (dict,))
    if obj is None or "tool_confidence" not in obj:
        raise MalformedStructuredOutput("no {\"tool_confidence\": ...} object found")
    value = obj["tool_confidence"]
    if value in (0, 1):
        return int(value)
    raise MalformedStructuredOutput(f"tool_confidence must be 0 or 1, got {value!r}")


def _parse_verify_verdict(text: str) -> VerifyVerdict:
    obj = _first_json(_strip_fences(text), (dict,))
    if obj is None:
        raise MalformedStructuredOutput("no verdict object found")
    is_included = obj.get("is_included")
    if not isinstance(is_included, bool):
        raise MalformedStructuredOutput("verdict is_included must be a JSON boolean")
    should_update = obj.get("should_update", False)
    if not isinstance(should_update, bool):
        raise MalformedStructuredOutput("verdict should_update must be a JSON boolean")
    updated = obj.get("updated_claim")
    if should_update:
        if not isinstance(updated, str) or not updated.strip():
            raise MalformedStructuredOutput(
                "verdict says should_update but has no updated_claim text"
            )
        updated = updated.strip()
    else:
        updated = updated.strip() if isinstance(updated, str) and updated.strip() else None
    return VerifyVerdict(
        is_included=is_included, should_update=should_update, updated_claim=updated
    )


def _parse_object_array(text: str) -> list[dict]:
    body = _strip_fences(text)
    value = _first_json(body, (list, dict))
    if isinstance(value, dict):
        value = [value]
    if not isinstance(value, list) or not value:
        raise MalformedStructuredOutput("no non-empty JSON array of objects found")
    for item in value:
        if not isinstance(item, dict):
            raise MalformedStructuredOutput(f"array entry is not an object: {item!r}")
    return value


def _parse_qa_object(text: str) -> dict:
    obj = _first_json(_strip_fences(text), (dict,))
    if obj is None:
        raise MalformedStructuredOutput("no JSON object found in completion")
    question = obj.get("question")
    answer = obj.get("reference_answer")
    if not (isinstance(question, str) and question.strip()):
        raise MalformedStructuredOutput("qa object needs a non-empty question string")
    if not (isinstance(answer, str) and answer.strip()):
        raise MalformedStructuredOutput("qa object needs a non-empty reference_answer string")
    return {"question": question.strip(), "reference_answer": answer.strip()}


ENTAILMENT_LABELS = ("entails", "neutral", "contradicts")


def _parse_entailment_label(text: str) -> str:
    word = _strip_fences(text).strip().split()
    label = word[0].strip(".,:;\"'").lower() if word else ""
    if label in ENTAILMENT_LABELS:
        return label
    raise MalformedStructuredOutput(
        f"entailment label must be one of {ENTAILMENT_LABELS}, got {text!r}"
    )


_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _parse_probability(text: str) -> float:
    match = _NUMBER_RE.search(_strip_fences(text))
    if match is None:
        raise MalformedStructuredOutput("no number found in completion")
    value = float(match.group(0))
    if not 0.0 <= value <= 1.0:
        raise MalformedStructuredOutput(f"probability must lie in [0, 1], got {value}")
    return value


def parse_structured(text: str, expected_shape: str):
    """Extract a payload of the expected shape from raw completion text.

    Parsing never mutates an already-clean payload: feeding the canonical
    encoding back through yields the same value.
    """
    if expected_shape == "free_text":
        return text
    if expected_shape == "jsonl_claims":
        return _parse_jsonl_claims(text)
    if expected_shape == "pair_array":
        return _parse_pair_array(text)
    if expected_shape == "tool_confidence":
        return _parse_tool_confidence(text)
    if expected_shape == "verify_verdict":
        return _parse_verify_verdict(text)
    if expected_shape == "object_array":
        return _parse_object_array(text)
    if expected_shape == "qa_object":
        return _parse_qa_object(text)
    if expected_shape == "probability":
        return _parse_probability(text)
    if expected_shape == "entailment_label":
        return _parse_entailment_label(text)
    raise SchemaViolation(f"unknown structured shape {expected_shape!r}")
