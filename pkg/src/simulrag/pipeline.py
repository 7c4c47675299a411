"""Orchestration of the claim-verification answer pipeline.

One run walks: simulator retrieval -> answer sampling -> decomposition ->
merge -> confidence scoring -> boundary assessment -> selection ->
verification/update -> confidence filter -> synthesis. Three ablation
modes reuse pieces of the walk: ``input_layer`` prepends the retrieved
context to a single answer prompt, ``output_layer`` refines a single
answer against the context afterwards, ``no_rag`` runs the claim pipeline
without the simulator (so a zero verification budget and ``no_rag``
produce identical claim content by construction).

Every stage appends one entry to an audit list that ends up in the
PipelineResult; any stage failure raises PipelineAborted carrying the
partial audit. Intra-stage processing is ordered by claim id so repeated
runs are byte-identical under scripted fixtures.
"""

from __future__ import annotations

import math
import random
from dataclasses import replace

from .claims import (
    EntailmentGraph,
    build_entailment_graph,
    decompose,
    merge_all,
    sample_answers,
    score_confidence,
)
from .domain import (
    Claim,
    Handbook,
    PipelineConfig,
    PipelineResult,
    Question,
    TextualContext,
)
from .errors import (
    MalformedStructuredOutput,
    PipelineAborted,
    SchemaViolation,
    SimulragError,
)
from .gateway import ChatRequest, LlmGateway
from .retrieval import (
    default_context_template,
    extract_parameters,
    render_handbook,
    run_and_contextualize,
)
from .simulators import get_handbook

REFUSAL_TEXT = (
    "I do not have enough verified information to answer this question confidently."
)


def assess_boundary(
    gateway: LlmGateway, claim: Claim, question: Question, handbook: Handbook
) -> tuple[int, str | None]:
    """Binary simulator-compatibility judgment for one claim.

    Returns (bound, warning). Unparseable judgments fail closed to 0 so a
    broken judge can only shrink the verification candidate set, never
    spend budget on claims the simulator cannot check.
    """
    request = ChatRequest(
        template_id="boundary_assess",
        bindings={
            "tools_handbook": render_handbook(handbook),
            "question": question.text,
            "claim": claim.text,
        },
    )
    try:
        return gateway.complete_structured(request, "tool_confidence"), None
    except MalformedStructuredOutput as exc:
        return 0, f"boundary judgment unparseable for {claim.id}: {exc}"


def verbalized_confidence(gateway: LlmGateway, claim: Claim, question: Question) -> float:
    request = ChatRequest(
        template_id="verbalized_conf",
        bindings={"question": question.text, "claim": claim.text},
    )
    return gateway.complete_structured(request, "probability")


def budget_size(budget: float, k: int) -> int:
    """Number of claims a fractional budget buys out of k.

    The product is rounded to 9 decimals before the ceiling so artifacts
    like 0.15 * 20 = 3.0000000000000004 do not buy a fourth claim.
    """
    return math.ceil(round(budget * k, 9))


def select_claims(
    claims: list[Claim],
    scores: dict,
    bounds: dict | None,
    strategy: str,
    threshold: float | None = None,
    budget: float | None = None,
    selector_seed: int = 0,
) -> list[str]:
    """Pick claim ids for verification.

    ue_sba restricts candidates to bound=1 claims; every other strategy
    considers all claims. Threshold mode takes candidates scoring under
    tau; budget mode takes the ceil(B*k) lowest-scoring candidates with
    ties broken by ascending claim id (k counts all claims, so the budget
    means the same thing whatever the candidate filter kept).
    """
    if (threshold is None) == (budget is None):
        raise SchemaViolation("exactly one of threshold / budget must be given")
    if strategy == "ue_sba":
        if bounds is None:
            raise SchemaViolation("ue_sba selection requires boundary judgments")
        candidates = [c for c in claims if bounds.get(c.id) == 1]
    else:
        candidates = list(claims)

    if strategy == "random":
        if budget is None:
            raise SchemaViolation("random selection is only defined in budget mode")
        n = min(budget_size(budget, len(claims)), len(candidates))
        pool = sorted(c.id for c in candidates)
        rng = random.Random(selector_seed)
        return sorted(rng.sample(pool, n))

    ranked = sorted(candidates, key=lambda c: (scores[c.id], c.id))
    if threshold is not None:
        return sorted(c.id for c in ranked if scores[c.id] < threshold)
    n = min(budget_size(budget, len(claims)), len(ranked))
    return sorted(c.id for c in ranked[:n])


def verify_and_update(
    gateway: LlmGateway, claim: Claim, context: TextualContext
) -> tuple[Claim, str, str | None]:
    """Check one claim against the rendered simulator context.

    Returns (claim, verdict_tag, warning). Verification is authoritative:
    included claims leave with confidence pinned to 1, whether or not the
    text changed. Claims the context does not cover come back
    indeterminate with their confidence untouched.
    """
    request = ChatRequest(
        template_id="verify_update",
        bindings={"claim": claim.text, "textual_context": context.text},
    )
    try:
        verdict = gateway.complete_structured(request, "verify_verdict")
    except MalformedStructuredOutput as exc:
        return (
            replace(claim, status="indeterminate"),
            "malformed",
            f"verification verdict unparseable for {claim.id}: {exc}",
        )
    if not verdict.is_included:
        return replace(claim, status="indeterminate"), "not_included", None
    if not verdict.should_update:
        return replace(claim, status="verified_aligned", confidence=1.0), "aligned", None
    return (
        replace(claim, text=verdict.updated_claim, status="updated", confidence=1.0),
        "updated",
        None,
    )


def synthesize_answer(
    gateway: LlmGateway, question: Question, final_claims: list[Claim]
) -> str:
    if not final_claims:
        return REFUSAL_TEXT
    claims_text = "\n".join(f"{i + 1}. {c.text}" for i, c in enumerate(final_claims))
    request = ChatRequest(
        template_id="final_answer",
        bindings={"question": question.text, "claims_text": claims_text},
    )
    return gateway.complete(request).text.strip()


def _stage(audit: list, name: str, **data) -> None:
    audit.append({"stage": name, **data})


def _retrieve(gateway, question, config, audit) -> TextualContext:
    handbook = get_handbook(question.domain)
    template_id = default_context_template(question.domain)
    settings = extract_parameters(gateway, question, handbook)
    context = run_and_contextualize(
        question.domain,
        settings,
        template_id,
        seed=config.seed_simulator,
        ensemble_size=config.ensemble_size,
    )
    _stage(
        audit,
        "retrieval",
        template_id=template_id,
        settings=[s.to_dict() for s in settings],
        context=context.text,
    )
    return context


def _claim_stage(gateway, question, config, audit) -> tuple[list, list[Claim], EntailmentGraph, dict]:
    answers = sample_answers(gateway, question, config.m)
    _stage(audit, "answers", texts=[a.text for a in answers])
    per_answer = [decompose(gateway, a) for a in answers]
    _stage(audit, "decompose", counts=[len(cs) for cs in per_answer])
    merged, merge_map = merge_all(gateway, per_answer)
    _stage(audit, "merge", **merge_map.to_dict())
    graph = build_entailment_graph(gateway, answers, merged)
    scores = score_confidence(
        graph, config.centrality_metric, config.closeness_variant
    )
    _stage(
        audit,
        "score",
        metric=config.centrality_metric,
        graph=graph.to_dict(),
        scores={cid: scores[cid] for cid in sorted(scores)},
    )
    return answers, merged, graph, scores


def run(question: Question, config: PipelineConfig, gateway: LlmGateway) -> PipelineResult:
    """Execute one question end to end under the configured mode."""
    audit: list[dict] = []
    stage_name = "setup"
    try:
        if config.generation_mode == "input_layer":
            stage_name = "retrieval"
            context = _retrieve(gateway, question, config, audit)
            stage_name = "answer"
            answers = sample_answers(gateway, question, 1, context=context)
            final_answer = answers[0].text
            stage_name = "report_claims"
            report = decompose(gateway, answers[0])
            _stage(audit, "report_claims", ids=[c.id for c in report])
            return PipelineResult(
                question=question,
                final_answer=final_answer,
                final_claims=tuple(report),
                audit=tuple(audit),
            )

        if config.generation_mode == "output_layer":
            stage_name = "answer"
            answers = sample_answers(gateway, question, 1)
            draft = answers[0]
            stage_name = "retrieval"
            context = _retrieve(gateway, question, config, audit)
            stage_name = "refine"
            whole = Claim(id=f"{question.id}/draft", text=draft.text, origin_answer_ids=(draft.id,))
            refined, tag, warning = verify_and_update(gateway, whole, context)
            _stage(
                audit,
                "refine",
                verdict=tag,
                warnings=[warning] if warning else [],
            )
            final_answer = refined.text
            stage_name = "report_claims"
            report = decompose(
                gateway, replace(draft, text=final_answer, generation_params={})
            )
            _stage(audit, "report_claims", ids=[c.id for c in report])
            return PipelineResult(
                question=question,
                final_answer=final_answer,
                final_claims=tuple(report),
                audit=tuple(audit),
            )

        # simulrag and no_rag share the claim pipeline; no_rag skips the
        # simulator stages entirely.
        context = None
        if config.generation_mode == "simulrag":
            stage_name = "retrieval"
            context = _retrieve(gateway, question, config, audit)

        stage_name = "claims"
        answers, merged, graph, scores = _claim_stage(gateway, question, config, audit)

        stage_name = "confidence"
        if config.selection_strategy == "verbalized" and config.generation_mode == "simulrag":
            conf_map = {
                c.id: verbalized_confidence(gateway, c, question) for c in merged
            }
            _stage(audit, "verbalized", scores={cid: conf_map[cid] for cid in sorted(conf_map)})
        else:
            conf_map = scores
        merged = [replace(c, confidence=conf_map[c.id]) for c in merged]

        selected_ids: list[str] = []
        bounds: dict | None = None
        if config.generation_mode == "simulrag":
            stage_name = "boundary"
            warnings: list[str] = []
            if config.selection_strategy == "ue_sba":
                bounds = {}
                for claim in sorted(merged, key=lambda c: c.id):
                    bound, warning = assess_boundary(
                        gateway, claim, question, get_handbook(question.domain)
                    )
                    bounds[claim.id] = bound
                    if warning:
                        warnings.append(warning)
                _stage(
                    audit,
                    "boundary",
                    bounds={cid: bounds[cid] for cid in sorted(bounds)},
                    warnings=warnings,
                )

            stage_name = "select"
            selected_ids = select_claims(
                merged,
                conf_map,
                bounds,
                config.selection_strategy,
                threshold=config.selection_threshold,
                budget=config.selection_budget,
                selector_seed=config.seed_selector,
            )
            target = (
                budget_size(config.selection_budget, len(merged))
                if config.selection_budget is not None
                else None
            )
            _stage(
                audit,
                "select",
                strategy=config.selection_strategy,
                k=len(merged),
                selected=selected_ids,
                target=target,
                shortfall=(max(0, target - len(selected_ids)) if target is not None else 0),
            )

            stage_name = "verify"
            verified: dict[str, Claim] = {}
            verdicts: dict[str, str] = {}
            verify_warnings: list[str] = []
            for claim in sorted(
                (c for c in merged if c.id in set(selected_ids)), key=lambda c: c.id
            ):
                updated, tag, warning = verify_and_update(gateway, claim, context)
                verified[claim.id] = updated
                verdicts[claim.id] = tag
                if warning:
                    verify_warnings.append(warning)
            merged = [verified.get(c.id, c) for c in merged]
            _stage(audit, "verify", verdicts=verdicts, warnings=verify_warnings)

        stage_name = "filter"
        final = [
            c for c in merged if c.confidence is not None and c.confidence >= config.kappa
        ]
        _stage(
            audit,
            "filter",
            kappa=config.kappa,
            kept=[c.id for c in final],
            dropped=[c.id for c in merged if c not in final],
        )

        stage_name = "synthesize"
        final_answer = synthesize_answer(gateway, question, final)
        if not final:
            _stage(audit, "synthesize", note="no claims above kappa", refusal=True)
        else:
            _stage(audit, "synthesize", refusal=False)

        result = PipelineResult(
            question=question,
            final_answer=final_answer,
            final_claims=tuple(final),
            audit=tuple(audit),
        )
        if config.generation_mode == "simulrag":
            check_invariants(result, config)
        return result
    except PipelineAborted:
        raise
    except SimulragError as exc:
        raise PipelineAborted(stage_name, exc, tuple(audit)) from exc


def check_invariants(result: PipelineResult, config: PipelineConfig) -> None:
    """Assert the selection/verification contract on a finished run.

    Called automatically at the end of every simulrag-mode run; raises
    SchemaViolation on the first violated property.
    """
    stages = {entry["stage"]: entry for entry in result.audit}
    select = stages.get("select")
    merge = stages.get("merge")
    if select is None or merge is None:
        raise SchemaViolation("audit lacks select/merge stages")
    k = select["k"]
    selected = list(select["selected"])
    if config.selection_budget is not None:
        allowed = budget_size(config.selection_budget, k)
        if len(selected) > allowed:
            raise SchemaViolation(
                f"budget violated: {len(selected)} selected, budget allows {allowed}"
            )
    if config.selection_strategy == "ue_sba":
        bounds = stages["boundary"]["bounds"]
        if any(bounds.get(cid) != 1 for cid in selected):
            raise SchemaViolation("a selected claim has bound != 1 under ue_sba")
        score_stage = stages.get("verbalized") or stages["score"]
        conf = score_stage["scores"]
        unselected = [
            cid for cid, b in bounds.items() if b == 1 and cid not in set(selected)
        ]
        if selected and unselected and config.selection_budget is not None:
            if min(conf[cid] for cid in unselected) < max(conf[cid] for cid in selected):
                raise SchemaViolation(
                    "an unselected bound=1 claim scores strictly below a selected claim"
                )
    for claim in result.final_claims:
        if claim.status in ("verified_aligned", "updated") and claim.confidence != 1.0:
            raise SchemaViolation(f"verified claim {claim.id} has confidence != 1")
        if claim.confidence is None or claim.confidence < config.kappa:
            raise SchemaViolation(f"final claim {claim.id} slips under kappa")
    kept = set(merge["kept"])
    for claim in result.final_claims:
        if claim.id not in kept:
            raise SchemaViolation(f"final claim {claim.id} is not in the merged set")
