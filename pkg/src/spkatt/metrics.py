"""Proportional precision, recall and F1 over token overlap.

Predicted and gold annotations of a speech are paired greedily by cue
overlap. Within a pair, the shared tokens of the cue (and of each role,
label by label) count towards both precision and recall; every predicted
token counts in the precision denominator and every gold token in the
recall denominator, matched or not. All arithmetic is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .corpus import Annotation, RoleLabel


class Subtask(str, Enum):
    FULL = "full"
    ROLES = "roles"

    @classmethod
    def parse(cls, value: "str | Subtask") -> "Subtask":
        if isinstance(value, Subtask):
            return value
        return cls.ROLES if value in ("roles", "roles_only") else cls(value)


CUES, ROLES, JOINT = "Cues", "Roles", "Cues & Roles"


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class MatchedPair:
    predicted: int
    gold: int
    cue_overlap: int


def match_annotations(pred: Sequence[Annotation], gold: Sequence[Annotation]) -> list[MatchedPair]:
    """Greedy pairing by largest shared-cue-token count (ties: earliest gold, then pred)."""
    edges = []
    for gi, g in enumerate(gold):
        for pi, p in enumerate(pred):
            n = p.cue.overlap(g.cue)
            if n:
                edges.append((-n, gi, pi))
    edges.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, gi, pi in edges:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        pairs.append(MatchedPair(pi, gi, -neg))
    return pairs


def _ratio(num: int, den: int, both_empty: bool) -> Fraction:
    if den == 0:
        return Fraction(1) if both_empty else Fraction(0)
    return Fraction(num, den)


@dataclass
class Score:
    overlap: int = 0
    predicted: int = 0
    gold: int = 0

    def add(self, other: "Score") -> None:
        self.overlap += other.overlap
        self.predicted += other.predicted
        self.gold += other.gold

    @property
    def precision(self) -> Fraction:
        return _ratio(self.overlap, self.predicted, self.predicted == self.gold == 0)

    @property
    def recall(self) -> Fraction:
        return _ratio(self.overlap, self.gold, self.predicted == self.gold == 0)

    @property
    def f1(self) -> Fraction:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else Fraction(0)


def round3(x: Fraction) -> str:
    """Round half up to three decimals."""
    n = (x.numerator * 2000 + x.denominator) // (2 * x.denominator)
    return f"{n // 1000}.{n % 1000:03d}"


@dataclass
class ScoreReport:
    subtask: Subtask
    categories: dict[str, Score] = field(default_factory=dict)
    labels: dict[RoleLabel, Score] = field(default_factory=dict)
    matched: int = 0
    unmatched_predicted: int = 0
    unmatched_gold: int = 0

    def __getitem__(self, category: str) -> Score:
        return self.categories[category]

    def add(self, other: "ScoreReport") -> None:
        for name, s in other.categories.items():
            self.categories.setdefault(name, Score()).add(s)
        for label, s in other.labels.items():
            self.labels.setdefault(label, Score()).add(s)
        self.matched += other.matched
        self.unmatched_predicted += other.unmatched_predicted
        self.unmatched_gold += other.unmatched_gold

    @property
    def rows(self) -> list[str]:
        return [CUES, ROLES, JOINT] if self.subtask is Subtask.FULL else [ROLES]

    def to_json(self) -> dict[str, Any]:
        def enc(s: Score) -> dict[str, Any]:
            out: dict[str, Any] = {"overlap": s.overlap, "predicted": s.predicted, "gold": s.gold}
            for name in ("precision", "recall", "f1"):
                v = getattr(s, name)
                out[name] = {"numerator": v.numerator, "denominator": v.denominator, "rounded": round3(v)}
            return out

        return {
            "subtask": self.subtask.value,
            "categories": {name: enc(self.categories[name]) for name in self.rows},
            "labels": {lab.value: enc(self.labels[lab]) for lab in RoleLabel if lab in self.labels},
            "matched": self.matched,
            "unmatched_predicted": self.unmatched_predicted,
            "unmatched_gold": self.unmatched_gold,
        }


def _empty_report(subtask: Subtask) -> ScoreReport:
    return ScoreReport(
        subtask,
        categories={CUES: Score(), ROLES: Score(), JOINT: Score()},
        labels={lab: Score() for lab in RoleLabel},
    )


def _pairs_by_identical_cue(pred: Sequence[Annotation], gold: Sequence[Annotation]) -> list[MatchedPair]:
    free = list(range(len(pred)))
    pairs = []
    for gi, g in enumerate(gold):
        hit = next((pi for pi in free if pred[pi].cue == g.cue), None)
        if hit is None:
            raise ScoringError(f"gold cue {g.cue.to_json()} has no predicted annotation with the same cue")
        free.remove(hit)
        pairs.append(MatchedPair(hit, gi, len(g.cue)))
    if free:
        raise ScoringError(f"{len(free)} predicted annotation(s) carry cues absent from gold")
    return pairs


def proportional_scores(
    pred: Sequence[Annotation], gold: Sequence[Annotation], subtask: str | Subtask = Subtask.FULL
) -> ScoreReport:
    """Score the annotations of a single speech."""
    subtask = Subtask.parse(subtask)
    if subtask is Subtask.FULL:
        pairs = match_annotations(pred, gold)
    else:
        pairs = _pairs_by_identical_cue(pred, gold)
    report = _empty_report(subtask)
    cues, roles, joint = report[CUES], report[ROLES], report[JOINT]

    for a in pred:
        cues.predicted += len(a.cue)
        for lab, span in a.roles.items():
            report.labels[lab].predicted += len(span)
    for a in gold:
        cues.gold += len(a.cue)
        for lab, span in a.roles.items():
            report.labels[lab].gold += len(span)
    for pair in pairs:
        p, g = pred[pair.predicted], gold[pair.gold]
        cues.overlap += p.cue.overlap(g.cue)
        for lab in RoleLabel:
            if lab in p.roles and lab in g.roles:
                report.labels[lab].overlap += p.roles[lab].overlap(g.roles[lab])

    for s in report.labels.values():
        roles.add(s)
    joint.add(cues)
    joint.add(roles)
    report.matched = len(pairs)
    report.unmatched_predicted = len(pred) - len(pairs)
    report.unmatched_gold = len(gold) - len(pairs)
    return report


def score_corpus(
    pred: Mapping[str, Sequence[Annotation]],
    gold: Mapping[str, Sequence[Annotation]],
    subtask: str | Subtask = Subtask.FULL,
) -> ScoreReport:
    """Sum per-speech counts; speech ids of both sides must agree."""
    subtask = Subtask.parse(subtask)
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))
        extra = sorted(set(pred) - set(gold))
        raise ScoringError(f"speech ids differ: missing {missing[:5]}, unexpected {extra[:5]}")
    total = _empty_report(subtask)
    for sid in sorted(gold):
        total.add(proportional_scores(pred[sid], gold[sid], subtask))
    return total


def render_report(report: ScoreReport) -> str:
    title = "Subtask 1 (full annotation)" if report.subtask is Subtask.FULL else "Subtask 2 (role detection)"
    width = 14
    lines = [title, f"{'':<{width}}Precision Recall F1"]
    for name in report.rows:
        s = report.categories[name]
        lines.append(f"{name:<{width}}{round3(s.precision)} {round3(s.recall)} {round3(s.f1)}")
    return "\n".join(lines)


def dump_report(report: ScoreReport) -> str:
    return json.dumps(report.to_json(), indent=1, sort_keys=True)
