"""Selection, verification, and full pipeline runs against fixture packs."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulrag.domain import Claim, PipelineConfig, PipelineResult, Question, TextualContext
from simulrag.errors import PipelineAborted, SchemaViolation
from simulrag.fixturegen import FIXTURE_CONFIGS, question_of
from simulrag.gateway import LlmGateway, ScriptedBackend, fixture_key
from simulrag.pipeline import (
    REFUSAL_TEXT,
    budget_size,
    check_invariants,
    run,
    select_claims,
    synthesize_answer,
    verify_and_update,
)


def claim(cid, conf=None, text="t"):
    return Claim(id=cid, text=text, origin_answer_ids=("q/a0",), confidence=conf)


def playback(*texts):
    return LlmGateway(ScriptedBackend(playback=list(texts)))


# ---------------------------------------------------------------------------
# budget_size


def test_budget_size_is_ceiling():
    assert budget_size(0.25, 10) == 3
    assert budget_size(0.5, 4) == 2
    assert budget_size(0.0, 7) == 0
    assert budget_size(1.0, 7) == 7
    assert budget_size(0.01, 1) == 1


def test_budget_size_float_artifact_guard():
    # 0.07 * 100 evaluates to 7.000000000000001; the ceiling must not see it
    assert 0.07 * 100 > 7.0
    assert budget_size(0.07, 100) == 7
    assert budget_size(0.15, 20) == 3
    assert budget_size(0.45, 20) == 9


@settings(max_examples=200)
@given(
    st.integers(0, 100).map(lambda n: n / 100.0),
    st.integers(0, 64),
)
def test_budget_size_bounds(budget, k):
    n = budget_size(budget, k)
    assert 0 <= n <= k or (k == 0 and n == 0)
    # never buys an extra claim beyond the exact fraction's ceiling
    assert n == math.ceil(round(budget * k, 9))


# ---------------------------------------------------------------------------
# select_claims


def four_claims():
    return [
        claim("c0", 0.1),
        claim("c1", 0.9),
        claim("c2", 0.4),
        claim("c3", 0.4),
    ]


def scores_of(claims):
    return {c.id: c.confidence for c in claims}


def test_threshold_mode_picks_strictly_under_tau():
    claims = four_claims()
    out = select_claims(claims, scores_of(claims), None, "uncertainty", threshold=0.4)
    assert out == ["c0"]
    out = select_claims(claims, scores_of(claims), None, "uncertainty", threshold=0.5)
    assert out == ["c0", "c2", "c3"]


def test_budget_mode_takes_lowest_scores_with_id_tiebreak():
    claims = four_claims()
    out = select_claims(claims, scores_of(claims), None, "uncertainty", budget=0.5)
    assert out == ["c0", "c2"]  # c2 beats c3 on id at equal score
    out = select_claims(claims, scores_of(claims), None, "uncertainty", budget=0.75)
    assert out == ["c0", "c2", "c3"]


def test_exactly_one_mode_required():
    claims = four_claims()
    with pytest.raises(SchemaViolation):
        select_claims(claims, scores_of(claims), None, "uncertainty")
    with pytest.raises(SchemaViolation):
        select_claims(claims, scores_of(claims), None, "uncertainty", threshold=0.4, budget=0.5)


def test_ue_sba_restricts_to_bound_one():
    claims = four_claims()
    bounds = {"c0": 0, "c1": 1, "c2": 1, "c3": 0}
    out = select_claims(claims, scores_of(claims), bounds, "ue_sba", threshold=0.95)
    assert out == ["c1", "c2"]
    # bound filter shrinks candidates but k still counts every claim
    out = select_claims(claims, scores_of(claims), bounds, "ue_sba", budget=0.25)
    assert out == ["c2"]  # ceil(0.25*4)=1, lowest-scoring bound=1 claim
    with pytest.raises(SchemaViolation):
        select_claims(claims, scores_of(claims), None, "ue_sba", threshold=0.5)


def test_budget_cannot_exceed_candidate_pool():
    claims = four_claims()
    bounds = {"c0": 0, "c1": 1, "c2": 0, "c3": 0}
    out = select_claims(claims, scores_of(claims), bounds, "ue_sba", budget=1.0)
    assert out == ["c1"]


def test_random_mode_is_seeded_and_needs_budget():
    claims = four_claims()
    a = select_claims(claims, scores_of(claims), None, "random", budget=0.5, selector_seed=7)
    b = select_claims(claims, scores_of(claims), None, "random", budget=0.5, selector_seed=7)
    assert a == b == sorted(a)
    assert len(a) == 2
    assert set(a) <= {"c0", "c1", "c2", "c3"}
    c = select_claims(claims, scores_of(claims), None, "random", budget=0.5, selector_seed=8)
    assert len(c) == 2
    with pytest.raises(SchemaViolation):
        select_claims(claims, scores_of(claims), None, "random", threshold=0.5)


# ---------------------------------------------------------------------------
# verify_and_update


def _ctx():
    return TextualContext(template_id="t", text="The temperature is 13.72C.")


def test_verify_aligned_pins_confidence():
    gw = playback('{"is_included": true, "should_update": false}')
    before = claim("c0", 0.4, text="Temp is 13.72C.")
    after, tag, warning = verify_and_update(gw, before, _ctx())
    assert tag == "aligned"
    assert warning is None
    assert after.status == "verified_aligned"
    assert after.confidence == 1.0
    assert after.text == before.text


def test_verify_updated_rewrites_text():
    gw = playback(
        '{"is_included": true, "should_update": true, "updated_claim": "Temp is 13.72C."}'
    )
    after, tag, _ = verify_and_update(gw, claim("c0", 0.2, text="Temp is 99C."), _ctx())
    assert tag == "updated"
    assert after.status == "updated"
    assert after.text == "Temp is 13.72C."
    assert after.confidence == 1.0


def test_verify_not_included_keeps_confidence():
    gw = playback('{"is_included": false}')
    after, tag, _ = verify_and_update(gw, claim("c0", 0.33), _ctx())
    assert tag == "not_included"
    assert after.status == "indeterminate"
    assert after.confidence == 0.33


def test_verify_malformed_twice_degrades_gracefully():
    gw = playback("mush", "more mush")
    after, tag, warning = verify_and_update(gw, claim("c0", 0.5), _ctx())
    assert tag == "malformed"
    assert "unparseable" in warning
    assert after.status == "indeterminate"
    assert after.confidence == 0.5


# ---------------------------------------------------------------------------
# synthesize_answer


def test_synthesize_refuses_without_claims():
    # no playback entries: a gateway call would raise
    assert synthesize_answer(playback(), Question(id="q", text="?", domain="climate"), []) == REFUSAL_TEXT


def test_synthesize_numbers_claims_from_one():
    q = Question(id="q", text="How hot?", domain="climate")
    claims = [claim("c0", 0.9, text="First."), claim("c1", 1.0, text="Second.")]
    key = fixture_key(
        "final_answer", {"question": "How hot?", "claims_text": "1. First.\n2. Second."}
    )
    gw = LlmGateway(ScriptedBackend(fixtures={key: " Synthesized. "}))
    assert synthesize_answer(gw, q, claims) == "Synthesized."


# ---------------------------------------------------------------------------
# full runs against the recorded pack


def test_default_mode_full_run(e2e_items, e2e_gateway):
    item = e2e_items[0]
    result = run(question_of(item), FIXTURE_CONFIGS["ue_sba_t50"], e2e_gateway)
    stages = [entry["stage"] for entry in result.audit]
    for expected in ("retrieval", "answers", "decompose", "merge", "score",
                     "boundary", "select", "verify", "filter", "synthesize"):
        assert expected in stages
    assert result.final_answer
    assert result.final_claims
    for c in result.final_claims:
        assert c.confidence is not None and c.confidence >= 0.3
    # run() already checked invariants; a second explicit pass is free
    check_invariants(result, FIXTURE_CONFIGS["ue_sba_t50"])


def test_no_rag_mode_skips_simulator(e2e_items, e2e_gateway):
    item = e2e_items[0]
    result = run(question_of(item), FIXTURE_CONFIGS["no_rag"], e2e_gateway)
    stages = [entry["stage"] for entry in result.audit]
    assert "retrieval" not in stages
    assert "boundary" not in stages
    assert "verify" not in stages
    assert "filter" in stages
    assert all(c.status == "original" for c in result.final_claims)


def test_input_layer_mode(e2e_items, e2e_gateway):
    item = e2e_items[0]
    result = run(question_of(item), FIXTURE_CONFIGS["input_layer"], e2e_gateway)
    stages = [entry["stage"] for entry in result.audit]
    assert stages[0] == "retrieval"
    assert "report_claims" in stages
    assert "select" not in stages
    assert result.final_answer
    # report claims decompose the context-conditioned answer itself
    assert all(c.status == "original" for c in result.final_claims)


def test_output_layer_mode(e2e_items, e2e_gateway):
    item = e2e_items[0]
    result = run(question_of(item), FIXTURE_CONFIGS["output_layer"], e2e_gateway)
    stages = [entry["stage"] for entry in result.audit]
    assert "refine" in stages
    assert "report_claims" in stages
    assert "select" not in stages
    assert result.final_answer


def test_every_config_replays_deterministically(e2e_items, e2e_gateway):
    from simulrag._assets import asset_path
    from simulrag.domain import canonical_json

    item = e2e_items[0]
    pack = asset_path("fixtures/e2e_pack.jsonl")
    for name, config in FIXTURE_CONFIGS.items():
        if name in ("ue_sba_b0", "ue_sba_b100"):
            continue  # recorded under the all-bound responder pack
        first = run(question_of(item), config, e2e_gateway)
        again = run(question_of(item), config, LlmGateway(ScriptedBackend.from_jsonl(pack)))
        assert canonical_json(first.to_dict()) == canonical_json(again.to_dict()), name


def test_budget_extremes_replay(e2e_items, allbound_gateway):
    item = e2e_items[0]
    zero = run(question_of(item), FIXTURE_CONFIGS["ue_sba_b0"], allbound_gateway)
    select = next(e for e in zero.audit if e["stage"] == "select")
    assert select["selected"] == []
    full = run(question_of(item), FIXTURE_CONFIGS["ue_sba_b100"], allbound_gateway)
    select = next(e for e in full.audit if e["stage"] == "select")
    merge = next(e for e in full.audit if e["stage"] == "merge")
    assert sorted(select["selected"]) == sorted(merge["kept"])


def test_missing_fixture_aborts_with_stage(e2e_items):
    gw = LlmGateway(ScriptedBackend(fixtures={}))
    with pytest.raises(PipelineAborted) as exc:
        run(question_of(e2e_items[0]), FIXTURE_CONFIGS["ue_sba_t50"], gw)
    assert exc.value.stage == "retrieval"
    assert isinstance(exc.value.audit, tuple)


def test_abort_in_claim_stage_reports_it(e2e_items, e2e_gateway):
    # strip answer_sample fixtures so retrieval succeeds but sampling fails
    backend = e2e_gateway.backend
    pruned = {
        k: v for k, v in backend.fixtures.items() if not k.startswith("answer_sample:")
    }
    gw = LlmGateway(ScriptedBackend(fixtures=pruned))
    with pytest.raises(PipelineAborted) as exc:
        run(question_of(e2e_items[0]), FIXTURE_CONFIGS["ue_sba_t50"], gw)
    assert exc.value.stage == "claims"
    assert any(entry["stage"] == "retrieval" for entry in exc.value.audit)


# ---------------------------------------------------------------------------
# check_invariants on hand-built results


def _fabricated_result(selected, bounds, scores, kept, finals, k=4):
    audit = (
        {"stage": "merge", "kept": kept, "aliases": {}},
        {"stage": "score", "scores": scores},
        {"stage": "boundary", "bounds": bounds, "warnings": []},
        {"stage": "select", "strategy": "ue_sba", "k": k, "selected": selected,
         "target": None, "shortfall": 0},
        {"stage": "verify", "verdicts": {}, "warnings": []},
        {"stage": "filter", "kappa": 0.3, "kept": [c.id for c in finals], "dropped": []},
    )
    return PipelineResult(
        question=Question(id="q", text="?", domain="climate"),
        final_answer="a",
        final_claims=tuple(finals),
        audit=audit,
    )


def test_invariant_budget_violation_detected():
    cfg = PipelineConfig(selection_budget=0.25, selection_threshold=None)
    result = _fabricated_result(
        selected=["c0", "c1"],  # budget allows ceil(0.25*4)=1
        bounds={"c0": 1, "c1": 1, "c2": 1, "c3": 1},
        scores={"c0": 0.0, "c1": 0.1, "c2": 0.5, "c3": 0.9},
        kept=["c0", "c1", "c2", "c3"],
        finals=[claim("c0", 1.0)],
    )
    with pytest.raises(SchemaViolation, match="budget"):
        check_invariants(result, cfg)


def test_invariant_bound_zero_selection_detected():
    cfg = PipelineConfig(selection_threshold=0.5)
    result = _fabricated_result(
        selected=["c0"],
        bounds={"c0": 0, "c1": 1},
        scores={"c0": 0.0, "c1": 0.4},
        kept=["c0", "c1"],
        finals=[claim("c1", 0.4)],
        k=2,
    )
    with pytest.raises(SchemaViolation, match="bound"):
        check_invariants(result, cfg)


def test_invariant_nonminimal_selection_detected():
    cfg = PipelineConfig(selection_budget=0.5, selection_threshold=None)
    result = _fabricated_result(
        selected=["c1"],  # c0 scores lower and is bound=1, so c1 is wrong
        bounds={"c0": 1, "c1": 1},
        scores={"c0": 0.0, "c1": 0.9},
        kept=["c0", "c1"],
        finals=[claim("c1", 1.0)],
        k=2,
    )
    with pytest.raises(SchemaViolation, match="scores strictly below"):
        check_invariants(result, cfg)


def test_invariant_kappa_leak_detected():
    cfg = PipelineConfig(selection_threshold=0.5, kappa=0.3)
    result = _fabricated_result(
        selected=[],
        bounds={"c0": 1},
        scores={"c0": 0.6},
        kept=["c0"],
        finals=[claim("c0", 0.1)],
        k=1,
    )
    with pytest.raises(SchemaViolation, match="kappa"):
        check_invariants(result, cfg)


def test_invariant_verified_confidence_detected():
    # a verified claim with conf != 1 cannot even be constructed; the
    # invariant checker guards the serialized form instead
    cfg = PipelineConfig(selection_threshold=0.5)
    with pytest.raises(SchemaViolation):
        Claim(
            id="c0", text="t", origin_answer_ids=("a",),
            status="verified_aligned", confidence=0.9,
        )
    result = _fabricated_result(
        selected=["c0"],
        bounds={"c0": 1},
        scores={"c0": 0.0},
        kept=["c0"],
        finals=[claim("c0", 1.0)],
        k=1,
    )
    check_invariants(result, cfg)  # sane fabricated run passes


def test_invariant_foreign_final_claim_detected():
    cfg = PipelineConfig(selection_threshold=0.5)
    result = _fabricated_result(
        selected=[],
        bounds={},
        scores={"c0": 1.0},
        kept=["c0"],
        finals=[claim("stranger", 0.9)],
        k=1,
    )
    with pytest.raises(SchemaViolation, match="merged set"):
        check_invariants(result, cfg)
