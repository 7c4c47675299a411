"""Claim-level answer processing.

An answer set is turned into a deduplicated claim set by decomposing each
answer into atomic claims and left-folding a coverage merge over the
answers in sample order. Claims keep the id they were born with; a merged
(absorbed) claim contributes its origin answers to the keeper and its id
shows up in the MergeMap aliases.

Confidence comes from the bipartite answer-claim entailment graph: an
edge means the answer entails the claim, either by provenance (the claim
was decomposed out of that answer) or by an explicit entailment judgment.
Centrality over that graph, min-max normalized across claim nodes, is the
per-claim confidence score.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import centrality
from .domain import Answer, Claim, Question, TextualContext
from .errors import MalformedStructuredOutput, SchemaViolation
from .gateway import ChatRequest, LlmGateway

ANSWER_TEMPERATURE = 1.0


@dataclass(frozen=True)
class EntailmentGraph:
    """Bipartite answer-claim graph; node ids live in disjoint namespaces."""

    answer_nodes: tuple[str, ...]
    claim_nodes: tuple[str, ...]
    edges: frozenset

    def __post_init__(self) -> None:
        answers = tuple(self.answer_nodes)
        claims = tuple(self.claim_nodes)
        if len(set(answers)) != len(answers):
            raise SchemaViolation("duplicate answer nodes")
        if len(set(claims)) != len(claims):
            raise SchemaViolation("duplicate claim nodes")
        if set(answers) & set(claims):
            raise SchemaViolation("a node id appears on both sides of the partition")
        edge_set = frozenset((a, c) for a, c in self.edges)
        for a, c in edge_set:
            if a not in set(answers) or c not in set(claims):
                raise SchemaViolation(f"edge ({a!r}, {c!r}) leaves the bipartition")
        object.__setattr__(self, "answer_nodes", answers)
        object.__setattr__(self, "claim_nodes", claims)
        object.__setattr__(self, "edges", edge_set)

    def adjacency(self) -> dict[str, set]:
        adj: dict[str, set] = {node: set() for node in self.answer_nodes + self.claim_nodes}
        for a, c in self.edges:
            adj[a].add(c)
            adj[c].add(a)
        return adj

    def to_dict(self) -> dict:
        return {
            "answer_nodes": list(self.answer_nodes),
            "claim_nodes": list(self.claim_nodes),
            "edges": sorted([a, c] for a, c in self.edges),
        }


@dataclass(frozen=True)
class MergeMap:
    """Outcome of deduplication: surviving ids plus absorbed-id redirects."""

    kept: tuple[str, ...]
    aliases: dict

    def __post_init__(self) -> None:
        kept = tuple(self.kept)
        kept_set = set(kept)
        for absorbed, keeper in self.aliases.items():
            if keeper not in kept_set:
                raise SchemaViolation(f"alias target {keeper!r} is not a kept claim")
            if absorbed in kept_set:
                raise SchemaViolation(f"absorbed claim {absorbed!r} is also kept")
            if keeper in self.aliases:
                raise SchemaViolation(f"alias chain through {keeper!r}")
        object.__setattr__(self, "kept", kept)

    def to_dict(self) -> dict:
        return {"kept": list(self.kept), "aliases": dict(sorted(self.aliases.items()))}


def sample_answers(
    gateway: LlmGateway,
    question: Question,
    m: int,
    context: TextualContext | None = None,
) -> list[Answer]:
    """Draw m answer samples at temperature 1.

    The sample index rides along as an extra binding so scripted fixtures
    can return m distinct texts for one identical rendered prompt.
    """
    if m < 1:
        raise SchemaViolation("m must be >= 1")
    prefix = f"Context:\n{context.text}\n\n" if context is not None else ""
    answers = []
    for index in range(m):
        request = ChatRequest(
            template_id="answer_sample",
            bindings={
                "context": prefix,
                "question": question.text,
                "sample_index": str(index),
            },
            temperature=ANSWER_TEMPERATURE,
        )
        completion = gateway.complete(request)
        answers.append(
            Answer(
                id=f"{question.id}/a{index}",
                question_id=question.id,
                text=completion.text.strip(),
                sample_index=index,
                generation_params={"temperature": ANSWER_TEMPERATURE},
            )
        )
    return answers


def decompose(gateway: LlmGateway, answer: Answer) -> list[Claim]:
    """Split one answer into atomic claims (duplicates dropped, order kept)."""
    request = ChatRequest(
        template_id="claim_decompose", bindings={"original_text": answer.text}
    )
    texts = gateway.complete_structured(request, "jsonl_claims")
    return [
        Claim(id=f"{answer.id}/c{j}", text=text, origin_answer_ids=(answer.id,))
        for j, text in enumerate(texts)
    ]


def _numbered(texts: list[str]) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(texts))


def apply_merge(
    existing: list[Claim], incoming: list[Claim], pairs: list[tuple[int, int]]
) -> tuple[list[Claim], dict]:
    """Fold judged coverage pairs into the claim set.

    ``pairs`` entries are (existing_index, incoming_index). A covered
    incoming claim is absorbed: the keeper keeps its text and gains the
    newcomer's origin answers. When several pairs cover the same incoming
    claim the first one wins. Uncovered incoming claims are appended.
    """
    for i, j in pairs:
        if not (0 <= i < len(existing) and 0 <= j < len(incoming)):
            raise MalformedStructuredOutput(
                f"merge pair ({i}, {j}) out of range for sets of "
                f"{len(existing)} existing / {len(incoming)} incoming claims"
            )
    keeper_of: dict[int, int] = {}
    for i, j in pairs:
        keeper_of.setdefault(j, i)
    merged = list(existing)
    aliases: dict[str, str] = {}
    for j, claim in enumerate(incoming):
        if j in keeper_of:
            i = keeper_of[j]
            keeper = merged[i]
            merged[i] = replace(
                keeper,
                origin_answer_ids=keeper.origin_answer_ids + claim.origin_answer_ids,
            )
            aliases[claim.id] = keeper.id
        else:
            merged.append(claim)
    return merged, aliases


def merge_claims(
    gateway: LlmGateway, existing: list[Claim], incoming: list[Claim]
) -> tuple[list[Claim], dict]:
    """Judge coverage of ``incoming`` against ``existing`` and merge.

    Empty sides short-circuit without a gateway call; there is nothing to
    judge.
    """
    if not existing or not incoming:
        return list(existing) + list(incoming), {}
    request = ChatRequest(
        template_id="claim_merge",
        bindings={
            "existing_claim_set": _numbered([c.text for c in existing]),
            "new_claim_set": _numbered([c.text for c in incoming]),
        },
    )
    pairs = gateway.complete_structured(request, "pair_array")
    return apply_merge(existing, incoming, pairs)


def merge_all(
    gateway: LlmGateway, claims_per_answer: list[list[Claim]]
) -> tuple[list[Claim], MergeMap]:
    """Left-fold the pairwise merge over answers in sample order."""
    merged: list[Claim] = []
    aliases: dict[str, str] = {}
    for claims in claims_per_answer:
        merged, delta = merge_claims(gateway, merged, claims)
        aliases.update(delta)
    return merged, MergeMap(kept=tuple(c.id for c in merged), aliases=aliases)


def build_entailment_graph(
    gateway: LlmGateway, answers: list[Answer], claims: list[Claim]
) -> EntailmentGraph:
    """Connect answers to the claims they entail.

    Provenance edges are free; every other answer-claim pair goes through
    the entailment judge. Pairs are visited in (answer, claim) list order
    so fixture playback and live runs agree.
    """
    answer_ids = tuple(a.id for a in answers)
    claim_ids = tuple(c.id for c in claims)
    edges: set[tuple[str, str]] = set()
    for claim in claims:
        for a_id in claim.origin_answer_ids:
            edges.add((a_id, claim.id))
    for answer in answers:
        for claim in claims:
            if answer.id in claim.origin_answer_ids:
                continue
            request = ChatRequest(
                template_id="entailment_judge",
                bindings={"premise": answer.text, "hypothesis": claim.text},
            )
            label = gateway.complete_structured(request, "entailment_label")
            if label == "entails":
                edges.add((answer.id, claim.id))
    return EntailmentGraph(
        answer_nodes=answer_ids, claim_nodes=claim_ids, edges=frozenset(edges)
    )


def score_confidence(
    graph: EntailmentGraph,
    metric: str = "closeness",
    closeness_variant: str = "as_written",
) -> dict:
    """Per-claim confidence: centrality min-max normalized over claim nodes."""
    if not graph.claim_nodes:
        return {}
    raw = centrality.raw_centrality(
        graph.adjacency(), metric, closeness_variant=closeness_variant
    )
    return centrality.minmax_normalize(raw, list(graph.claim_nodes))
