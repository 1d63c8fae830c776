import json
import random
from fractions import Fraction

import pytest

from spkatt.corpus import Annotation, RoleLabel, Span
from spkatt.metrics import (
    CUES,
    JOINT,
    ROLES,
    Score,
    ScoreReport,
    ScoringError,
    Subtask,
    match_annotations,
    proportional_scores,
    render_report,
    round3,
    score_corpus,
)

from oracles import oracle_scores, random_instance, to_annotations


def ann(cue, **roles):
    return Annotation(Span(tuple((0, t) for t in cue)),
                      {RoleLabel(k): Span(tuple((0, t) for t in v)) for k, v in roles.items()})


def prf(score):
    return score.precision, score.recall, score.f1


def test_match_exact():
    assert [(m.predicted, m.gold, m.cue_overlap) for m in match_annotations([ann([2])], [ann([2])])] == [(0, 0, 1)]


def test_match_disjoint():
    assert match_annotations([ann([2])], [ann([7])]) == []


def test_match_prefers_larger_overlap():
    # tokens 0..4: gold cue {1,2,3}; pred A shares one token, pred B shares two
    gold = [ann([1, 2, 3])]
    pred = [ann([0, 1]), ann([2, 3, 4])]
    pairs = match_annotations(pred, gold)
    assert [(m.predicted, m.gold, m.cue_overlap) for m in pairs] == [(1, 0, 2)]


def test_match_tie_earliest_gold_then_pred():
    pairs = match_annotations([ann([1]), ann([1, 2])], [ann([1, 5]), ann([1, 6])])
    assert [(m.predicted, m.gold) for m in pairs] == [(0, 0), (1, 1)]


def test_roles_partial_overlap():
    pred = [ann([0], Message=[7, 8, 9])]
    gold = [ann([0], Message=[5, 6, 7, 8])]
    r = proportional_scores(pred, gold)
    assert prf(r[ROLES]) == (Fraction(2, 3), Fraction(1, 2), Fraction(4, 7))
    assert round3(r[ROLES].f1) == "0.571"
    assert prf(r[CUES]) == (1, 1, 1)
    # cue token pooled in: 3 of 4 predicted, 3 of 5 gold
    assert prf(r[JOINT])[:2] == (Fraction(3, 4), Fraction(3, 5))


def test_perfect_prediction(fig1_speech):
    r = proportional_scores(list(fig1_speech.annotations), list(fig1_speech.annotations))
    for cat in (CUES, ROLES, JOINT):
        assert prf(r[cat]) == (1, 1, 1)


def test_empty_vs_empty():
    r = proportional_scores([], [])
    assert all(prf(r[c]) == (1, 1, 1) for c in (CUES, ROLES, JOINT))


def test_empty_vs_nonempty(fig1_speech):
    r = proportional_scores([], list(fig1_speech.annotations))
    assert all(prf(r[c]) == (0, 0, 0) for c in (CUES, ROLES, JOINT))
    r = proportional_scores(list(fig1_speech.annotations), [])
    assert all(prf(r[c]) == (0, 0, 0) for c in (CUES, ROLES, JOINT))


def test_unmatched_prediction_only_adds_denominator():
    gold = [ann([0], Source=[1])]
    pred = [ann([0], Source=[1]), ann([5], Source=[6, 7])]
    r = proportional_scores(pred, gold)
    assert prf(r[ROLES])[:2] == (Fraction(1, 3), Fraction(1))
    assert (r.matched, r.unmatched_predicted, r.unmatched_gold) == (1, 1, 0)


def test_roles_only_matches_identical_cues():
    gold = [ann([0], Source=[1]), ann([4], Message=[5, 6])]
    pred = [ann([4], Message=[6]), ann([0])]
    r = proportional_scores(pred, gold, "roles_only")
    assert r.subtask is Subtask.ROLES
    assert prf(r[ROLES])[:2] == (Fraction(1), Fraction(1, 3))


def test_roles_only_rejects_cue_mismatch():
    with pytest.raises(ScoringError):
        proportional_scores([ann([1])], [ann([0])], Subtask.ROLES)
    with pytest.raises(ScoringError):
        proportional_scores([ann([0]), ann([3])], [ann([0])], Subtask.ROLES)


def test_score_corpus_sums_counts():
    a = {"s1": [ann([0], Message=[7, 8, 9])], "s2": []}
    b = {"s1": [ann([0], Message=[5, 6, 7, 8])], "s2": [ann([1])]}
    r = score_corpus(a, b)
    assert (r[CUES].overlap, r[CUES].predicted, r[CUES].gold) == (1, 1, 2)
    with pytest.raises(ScoringError):
        score_corpus({"s1": []}, b)


@pytest.mark.parametrize("x,expected", [
    (Fraction(889, 1000), "0.889"), (Fraction(1), "1.000"), (Fraction(0), "0.000"),
    (Fraction(8885, 10000), "0.889"), (Fraction(8884999, 10000000), "0.888"), (Fraction(4, 7), "0.571"),
    (Fraction(1, 2000), "0.001"), (Fraction(2, 3), "0.667"),
])
def test_round_half_up(x, expected):
    assert round3(x) == expected


def report_with(subtask, **cats):
    r = ScoreReport(Subtask(subtask))
    for name, (num, npred, ngold) in cats.items():
        r.categories[name] = Score(num, npred, ngold)
    return r


def test_render_full():
    r = report_with("full", **{CUES: (889, 1000, 1000), ROLES: (0, 0, 1), JOINT: (0, 0, 1)})
    lines = render_report(r).splitlines()
    assert lines[1].split() == ["Precision", "Recall", "F1"]
    assert lines[2].startswith("Cues") and lines[2].endswith("0.889 0.889 0.889")
    assert lines[4].startswith("Cues & Roles") and lines[4].endswith("0.000 0.000 0.000")


def test_render_roles_only():
    r = report_with("roles", **{ROLES: (873, 959, 1000)})
    lines = render_report(r).splitlines()
    assert len(lines) == 3 and lines[2].startswith("Roles")


def test_machine_readable_report():
    r = proportional_scores([ann([0], Message=[7, 8, 9])], [ann([0], Message=[5, 6, 7, 8])])
    doc = json.loads(json.dumps(r.to_json()))
    assert doc["categories"]["Roles"]["precision"] == {"numerator": 2, "denominator": 3, "rounded": "0.667"}
    assert doc["labels"]["Message"]["f1"]["numerator"] == 4


def check_against_oracle(pred_flat, gold_flat):
    expected = oracle_scores(pred_flat, gold_flat)
    r = proportional_scores(to_annotations(pred_flat), to_annotations(gold_flat))
    for name in (CUES, ROLES, JOINT):
        assert prf(r[name]) == expected[name], name
    for lab in RoleLabel:
        assert prf(r.labels[lab]) == expected[lab.value], lab


def test_oracle_agreement_random():
    rng = random.Random(20231)
    for _ in range(300):
        _, pred, gold = random_instance(rng)
        check_against_oracle(pred, gold)


def _tie_free(pred, gold):
    overlaps = [len(p["cue"] & g["cue"]) for p in pred for g in gold]
    positive = [o for o in overlaps if o]
    return len(positive) == len(set(positive))


def test_swap_symmetry():
    rng = random.Random(7)
    checked = 0
    while checked < 300:
        _, pred, gold = random_instance(rng)
        if not _tie_free(pred, gold):
            continue
        checked += 1
        a = proportional_scores(to_annotations(pred), to_annotations(gold))
        b = proportional_scores(to_annotations(gold), to_annotations(pred))
        for name in (CUES, ROLES, JOINT):
            assert (a[name].precision, a[name].recall, a[name].f1) == (b[name].recall, b[name].precision, b[name].f1)


def test_self_scoring_random():
    rng = random.Random(11)
    for _ in range(300):
        _, pred, _ = random_instance(rng)
        # self-scoring needs distinguishable cues
        cues = [frozenset(a["cue"]) for a in pred]
        if any(x & y for i, x in enumerate(cues) for y in cues[i + 1:]):
            continue
        r = proportional_scores(to_annotations(pred), to_annotations(pred))
        assert all(prf(r[c]) == (1, 1, 1) for c in (CUES, ROLES, JOINT))


def test_monotonicity_random():
    rng = random.Random(3)
    for _ in range(300):
        n, pred, gold = random_instance(rng)
        if not pred or not gold:
            continue
        base = proportional_scores(to_annotations(pred), to_annotations(gold))
        lab = rng.choice(["Message", "Source", "Addr"])
        gold_tokens = set().union(*(g["roles"].get(lab, set()) for g in gold))
        outside = [t for t in range(n + 3) if t not in gold_tokens]
        more = [dict(a, roles=dict(a["roles"])) for a in pred]
        target = more[rng.randrange(len(more))]
        target["roles"][lab] = target["roles"].get(lab, set()) | {rng.choice(outside)}
        after = proportional_scores(to_annotations(more), to_annotations(gold))
        assert after[ROLES].precision <= base[ROLES].precision

        pairs = match_annotations(to_annotations(pred), to_annotations(gold))
        if not pairs:
            continue
        pair = pairs[0]
        g = gold[pair.gold]
        if not g["roles"]:
            continue
        lab = sorted(g["roles"])[0]
        more = [dict(a, roles=dict(a["roles"])) for a in pred]
        p = more[pair.predicted]
        p["roles"][lab] = p["roles"].get(lab, set()) | {rng.choice(sorted(g["roles"][lab]))}
        after = proportional_scores(to_annotations(more), to_annotations(gold))
        assert after[ROLES].recall >= base[ROLES].recall
