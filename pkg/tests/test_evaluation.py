"""Labeling, ranked metrics against brute-force oracles, comparison grids."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulrag.domain import Claim, ParamSettings, PipelineConfig, QAItem
from simulrag.errors import SchemaViolation
from simulrag.evaluation import (
    answer_metrics,
    compare_generation_modes,
    dedupe_claims,
    false_probability,
    label_claims,
    normalize_claim_text,
    ranking_metrics,
    run_comparison,
    selector_study,
    synthesize_question,
)
from simulrag.gateway import LlmGateway, ScriptedBackend

from oracles import pairwise_auroc, sweep_aupr, sweep_balanced, sweep_pr


def claim(cid, text, conf=None):
    return Claim(id=cid, text=text, origin_answer_ids=("q/a0",), confidence=conf)


def reference_item():
    return QAItem(
        id="ref",
        domain="climate",
        text="How hot is it?",
        reference_answer="It reaches 13.72C. The point is on land.",
        reference_claims=("It reaches 13.72C.", "The point is on land."),
        params=ParamSettings(simulator_id="climate", values={"location": "x"}, provenance="benchmark"),
        template_id="t",
    )


# ---------------------------------------------------------------------------
# text normalization and labeling


def test_normalize_claim_text():
    assert normalize_claim_text("  It   reaches 13.72C. ") == "it reaches 13.72c"
    assert normalize_claim_text("IT REACHES 13.72C") == "it reaches 13.72c"


def test_dedupe_claims_keeps_first():
    claims = [
        claim("c0", "It rains."),
        claim("c1", "it RAINS"),
        claim("c2", "It pours."),
    ]
    assert [c.id for c in dedupe_claims(claims)] == ["c0", "c2"]


def test_label_claims_exact_match_short_circuits():
    # gateway with no entries: any judged pair would raise
    gateway = LlmGateway(ScriptedBackend(playback=[]))
    claims = [claim("c0", "it reaches 13.72c."), claim("c1", "THE POINT IS ON LAND")]
    labels = label_claims(gateway, claims, reference_item())
    assert labels == {"c0": True, "c1": True}


def test_label_claims_judge_path():
    gateway = LlmGateway(ScriptedBackend(playback=["entails", "neutral"]))
    claims = [claim("c0", "Warm there."), claim("c1", "Made of cheese.")]
    labels = label_claims(gateway, claims, reference_item())
    assert labels == {"c0": True, "c1": False}


def test_label_claims_overrides_win():
    gateway = LlmGateway(ScriptedBackend(playback=[]))
    claims = [claim("c0", "it reaches 13.72c")]
    labels = label_claims(gateway, claims, reference_item(), overrides={"c0": False})
    assert labels == {"c0": False}


def test_label_claims_judge_failure_labels_false():
    # two malformed responses exhaust the repair; the claim turns false
    gateway = LlmGateway(ScriptedBackend(playback=["mush", "mush"]))
    labels = label_claims(gateway, [claim("c0", "Unjudgeable.")], reference_item())
    assert labels == {"c0": False}


def test_answer_metrics():
    claims = [
        claim("c0", "A."),
        claim("c1", "a"),  # duplicate of c0 after normalization
        claim("c2", "B."),
    ]
    labels = {"c0": True, "c1": True, "c2": False}
    m = answer_metrics(labels, claims)
    assert m.informativeness == 1  # unique true claims
    assert m.factuality == pytest.approx(2 / 3)
    assert m.factuality_defined
    empty = answer_metrics({}, [])
    assert (empty.informativeness, empty.factuality, empty.factuality_defined) == (0, 0.0, False)


# ---------------------------------------------------------------------------
# ranking metrics vs oracles


def test_ranking_metrics_rejects_bad_input():
    with pytest.raises(SchemaViolation):
        ranking_metrics([], [])
    with pytest.raises(SchemaViolation):
        ranking_metrics([0.1], [True, False])


def test_ranking_metrics_no_positives_degenerates():
    report = ranking_metrics([0.3, 0.8], [False, False])
    assert report.degenerate
    assert (report.f1, report.precision, report.recall) == (0.0, 0.0, 0.0)
    assert report.aupr == 0.0
    assert report.auroc == 0.5
    assert report.pr_curve == ()


def test_ranking_metrics_no_negatives_degenerates():
    report = ranking_metrics([0.3, 0.8], [True, True])
    assert report.degenerate
    assert report.precision == 1.0
    assert report.f1 == 1.0
    assert report.aupr == 1.0
    assert report.auroc == 0.5


def test_ranking_metrics_perfect_separation():
    report = ranking_metrics([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert report.auroc == 1.0
    assert report.aupr == 1.0
    assert report.f1 == 1.0
    assert report.threshold == 0.8


def test_ranking_metrics_ties_average_ranks():
    report = ranking_metrics([0.5, 0.5, 0.5, 0.5], [True, False, True, False])
    assert report.auroc == 0.5


def test_balanced_threshold_minimizes_precision_recall_gap():
    scores = [0.9, 0.7, 0.6, 0.4, 0.3, 0.1]
    labels = [True, False, True, True, False, False]
    report = ranking_metrics(scores, labels)
    thr, f1 = sweep_balanced(scores, labels)
    assert report.threshold == thr
    assert report.f1 == pytest.approx(f1, abs=1e-15)
    # no threshold in the full sweep beats the reported gap
    gap = abs(report.precision - report.recall)
    assert all(abs(p - r) >= gap - 1e-15 for _, p, r, _ in sweep_pr(scores, labels))


@settings(max_examples=300)
@given(st.data())
def test_ranking_metrics_match_bruteforce(data):
    n = data.draw(st.integers(2, 48))
    rng = random.Random(data.draw(st.integers(0, 10**6)))
    # quantized scores force plenty of ties
    scores = [round(rng.random(), 2) for _ in range(n)]
    labels = [rng.random() < 0.5 for _ in range(n)]
    if not any(labels) or all(labels):
        return  # degenerate paths covered above
    report = ranking_metrics(scores, labels)
    assert report.auroc == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)
    assert report.aupr == pytest.approx(sweep_aupr(scores, labels), abs=1e-12)
    thr, f1 = sweep_balanced(scores, labels)
    assert report.threshold == thr
    assert report.f1 == pytest.approx(f1, abs=1e-12)


def test_report_dict_roundtrip_shape():
    report = ranking_metrics([0.9, 0.1], [True, False])
    data = report.to_dict()
    assert set(data) == {
        "f1", "precision", "recall", "threshold", "aupr", "auroc", "pr_curve", "degenerate",
    }
    assert data["pr_curve"] == [[0.9, 1.0, 1.0], [0.1, 0.5, 1.0]]


# ---------------------------------------------------------------------------
# comparison grids over the fixture pack


def test_run_comparison_grid(e2e_items, e2e_gateway):
    report = run_comparison(e2e_gateway, e2e_items, PipelineConfig(), budgets=[0.25])
    cells = report["cells"]
    assert set(cells) == {"random@0.25", "verbalized@0.25", "uncertainty@0.25", "ue_sba@0.25"}
    for cell in cells.values():
        assert cell["errors"] == {}
        assert 0.0 <= cell["factuality_mean"] <= 1.0
        assert cell["informativeness_mean"] >= 0.0
        assert "metrics" in cell
    assert len(report["records"]) == 4 * len(e2e_items)
    assert isinstance(report["reference_targets"], dict)
    # per-question records carry claim rows with scores and labels
    row = report["records"][0]
    assert {"question_id", "method", "budget", "claims"} <= set(row)
    assert all({"id", "text", "score", "label"} <= set(c) for c in row["claims"])


def test_compare_generation_modes_grid(e2e_items, e2e_gateway):
    report = compare_generation_modes(e2e_gateway, e2e_items, PipelineConfig())
    assert set(report["modes"]) == {"simulrag", "input_layer", "output_layer", "no_rag"}
    for mode, cell in report["modes"].items():
        assert cell["errors"] == {}, mode
        assert 0.0 <= cell["factuality_mean"] <= 1.0
    # answers checked against the simulator beat the unchecked baseline
    assert (
        report["modes"]["simulrag"]["factuality_mean"]
        >= report["modes"]["no_rag"]["factuality_mean"]
    )


# ---------------------------------------------------------------------------
# synthetic selector study


def test_false_probability_strictly_decreasing():
    probs = [false_probability(s) for s in range(1, 6)]
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert all(a > b for a, b in zip(probs, probs[1:]))


def test_synthesize_question_structure():
    rng = random.Random(0)
    q = synthesize_question(rng, "q0")
    assert 8 <= len(q["claims"]) <= 14
    claim_ids = {c.id for c in q["claims"]}
    assert set(q["labels"]) == claim_ids
    assert set(q["bounds"]) == claim_ids
    assert set(q["graph"].claim_nodes) == claim_ids
    assert len(q["graph"].answer_nodes) == 5
    for a, c in q["graph"].edges:
        assert a in q["graph"].answer_nodes and c in claim_ids
    # deterministic under an equally seeded rng
    q2 = synthesize_question(random.Random(0), "q0")
    assert q2["labels"] == q["labels"] and q2["bounds"] == q["bounds"]
    assert q2["graph"].edges == q["graph"].edges


def test_selector_study_smoke():
    report = selector_study(n_questions=6, budgets=(0.25,), seeds=(0, 1))
    means = report["mean_f1"]
    assert set(means) == {"random", "uncertainty", "ue_sba"}
    for strategy in means:
        assert set(means[strategy]) == {0.25}
        assert 0.0 <= means[strategy][0.25] <= 1.0
        assert len(report["per_seed_f1"][strategy][0.25]) == 2
    # identical call reproduces identical numbers
    again = selector_study(n_questions=6, budgets=(0.25,), seeds=(0, 1))
    assert again["mean_f1"] == means
