"""Debate corpus data model, loading, validation and summary statistics.

A corpus is a list of speeches. Each speech is an ordered list of samples
(sentence-like units), each sample an ordered list of elements (words and
punctuation). Gold annotations address elements through ``TokenRef`` pairs
so that roles can reach into the samples following the cue.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Sequence

#: Number of samples after the anchor that a role may reach into.
WINDOW_FOLLOWING = 2


class CorpusError(ValueError):
    """Raised when a corpus document cannot be loaded."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


def is_punct(text: str) -> bool:
    """True iff ``text`` contains no letter and no digit (Unicode-aware)."""
    return not any(unicodedata.category(ch)[0] in "LN" for ch in text)


@dataclass(frozen=True)
class Element:
    text: str

    @property
    def is_punct(self) -> bool:
        return is_punct(self.text)


@dataclass(frozen=True)
class Sample:
    index: int
    elements: tuple[Element, ...]

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.elements]

    def __len__(self) -> int:
        return len(self.elements)


class TokenRef(NamedTuple):
    sample_index: int
    element_index: int


@dataclass(frozen=True)
class Span:
    """Sorted, duplicate-free set of token references (may be non-contiguous)."""

    refs: tuple[TokenRef, ...] = ()

    def __post_init__(self):
        refs = sorted({TokenRef(int(s), int(e)) for s, e in self.refs})
        object.__setattr__(self, "refs", tuple(refs))

    @classmethod
    def of(cls, *refs: tuple[int, int]) -> "Span":
        return cls(tuple(refs))

    def __iter__(self) -> Iterator[TokenRef]:
        return iter(self.refs)

    def __len__(self) -> int:
        return len(self.refs)

    def __bool__(self) -> bool:
        return bool(self.refs)

    def __contains__(self, ref) -> bool:
        return tuple(ref) in self.refset

    @property
    def refset(self) -> frozenset[TokenRef]:
        return frozenset(self.refs)

    @property
    def sample_indices(self) -> set[int]:
        return {r.sample_index for r in self.refs}

    def union(self, other: "Span") -> "Span":
        return Span(self.refs + other.refs)

    def overlap(self, other: "Span") -> int:
        return len(self.refset & other.refset)

    def to_json(self) -> list[list[int]]:
        return [[r.sample_index, r.element_index] for r in self.refs]


class RoleLabel(str, Enum):
    ADDR = "Addr"
    EVIDENCE = "Evidence"
    MEDIUM = "Medium"
    MESSAGE = "Message"
    SOURCE = "Source"
    TOPIC = "Topic"
    PTC = "PTC"

    @property
    def key(self) -> str:
        """Lower-case name used in prompt targets (``addr``, ``ptc``, ...)."""
        return self.value.lower()


@dataclass(frozen=True)
class Annotation:
    cue: Span
    roles: Mapping[RoleLabel, Span] = field(default_factory=dict)

    @property
    def anchor(self) -> int:
        """Index of the sample holding the (first) cue token."""
        return self.cue.refs[0].sample_index

    def role(self, label: RoleLabel) -> Span | None:
        return self.roles.get(label)

    def to_json(self) -> dict[str, Any]:
        return {
            "cue": self.cue.to_json(),
            "roles": {lab.value: self.roles[lab].to_json() for lab in RoleLabel if lab in self.roles},
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Annotation":
        roles = {}
        for name, refs in (obj.get("roles") or {}).items():
            try:
                label = RoleLabel(name)
            except ValueError:
                raise CorpusError(f"unknown role label {name!r}") from None
            roles[label] = _span_from_json(refs)
        return cls(cue=_span_from_json(obj.get("cue", [])), roles=roles)


@dataclass(frozen=True)
class Speech:
    id: str
    group: str
    samples: tuple[Sample, ...]
    annotations: tuple[Annotation, ...] = ()

    def element(self, ref: TokenRef) -> Element:
        return self.samples[ref.sample_index].elements[ref.element_index]

    def resolves(self, ref: TokenRef) -> bool:
        s, e = ref
        return 0 <= s < len(self.samples) and 0 <= e < len(self.samples[s])

    def annotations_at(self, anchor: int) -> list[Annotation]:
        return [a for a in self.annotations if a.cue and a.anchor == anchor]


@dataclass(frozen=True)
class Corpus:
    split_name: str
    speeches: tuple[Speech, ...] = ()

    def __iter__(self) -> Iterator[Speech]:
        return iter(self.speeches)

    def __len__(self) -> int:
        return len(self.speeches)

    def speech(self, speech_id: str) -> Speech:
        for sp in self.speeches:
            if sp.id == speech_id:
                return sp
        raise KeyError(speech_id)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    speech_id: str | None = None
    sample_index: int | None = None
    annotation_index: int | None = None

    def __str__(self) -> str:
        where = []
        if self.speech_id is not None:
            where.append(f"speech {self.speech_id}")
        if self.sample_index is not None:
            where.append(f"sample {self.sample_index}")
        if self.annotation_index is not None:
            where.append(f"annotation {self.annotation_index}")
        loc = ", ".join(where)
        return f"{self.code}: {self.message}" + (f" ({loc})" if loc else "")


# Flip to True to accept cues spread over several samples.
ALLOW_MULTI_SAMPLE_CUES = False


def validate_corpus(corpus: Corpus) -> list[Violation]:
    violations: list[Violation] = []
    seen = Counter(sp.id for sp in corpus.speeches)
    for sid, n in seen.items():
        if n > 1:
            violations.append(Violation("DuplicateSpeechId", f"speech id occurs {n} times", sid))

    for sp in corpus.speeches:
        for pos, sample in enumerate(sp.samples):
            if sample.index != pos:
                violations.append(Violation(
                    "NonConsecutiveSampleIndex", f"expected index {pos}, got {sample.index}", sp.id, pos))
            if not sample.elements:
                violations.append(Violation("EmptySample", "sample has no elements", sp.id, pos))
            for el in sample.elements:
                if not el.text:
                    violations.append(Violation("EmptyElement", "element text is empty", sp.id, pos))
                elif any(ch.isspace() for ch in el.text):
                    violations.append(Violation(
                        "WhitespaceInElement", f"element {el.text!r} contains whitespace", sp.id, pos))

        for ai, ann in enumerate(sp.annotations):
            violations.extend(_check_annotation(sp, ai, ann))
    return violations


def _check_annotation(sp: Speech, ai: int, ann: Annotation) -> list[Violation]:
    out = []

    def bad(code, msg, sample=None):
        out.append(Violation(code, msg, sp.id, sample, ai))

    if not ann.cue:
        bad("EmptyCue", "annotation has no cue tokens")
        return out
    for ref in ann.cue:
        if not sp.resolves(ref):
            bad("RefOutOfRange", f"cue reference {tuple(ref)} does not resolve", ref.sample_index)
    if len(ann.cue.sample_indices) > 1 and not ALLOW_MULTI_SAMPLE_CUES:
        bad("MultiSampleCue", f"cue spans samples {sorted(ann.cue.sample_indices)}", ann.anchor)

    anchor = ann.anchor
    for label, span in ann.roles.items():
        if not span:
            bad("EmptyRole", f"role {label.value} is present but empty", anchor)
            continue
        for ref in span:
            if not sp.resolves(ref):
                bad("RefOutOfRange", f"{label.value} reference {tuple(ref)} does not resolve",
                    ref.sample_index)
            elif ref.sample_index > anchor + WINDOW_FOLLOWING:
                bad("RoleBeyondWindow",
                    f"{label.value} reference {tuple(ref)} lies beyond sample {anchor + WINDOW_FOLLOWING}",
                    ref.sample_index)
    return out


def _span_from_json(refs: Any) -> Span:
    if not isinstance(refs, list):
        raise CorpusError(f"span must be a list of pairs, got {type(refs).__name__}")
    pairs = []
    for pair in refs:
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in pair)):
            raise CorpusError(f"malformed token reference {pair!r}")
        pairs.append(TokenRef(*pair))
    return Span(tuple(pairs))


def speech_from_json(obj: Mapping[str, Any]) -> Speech:
    try:
        sid = obj["id"]
        raw_samples = obj["samples"]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"speech object is missing field {exc}") from None
    if not isinstance(raw_samples, list) or not all(isinstance(s, list) for s in raw_samples):
        raise CorpusError(f"speech {sid}: samples must be a list of element lists")
    samples = []
    for i, elements in enumerate(raw_samples):
        if not all(isinstance(t, str) for t in elements):
            raise CorpusError(f"speech {sid}, sample {i}: elements must be strings")
        samples.append(Sample(i, tuple(Element(t) for t in elements)))
    anns = []
    for ai, a in enumerate(obj.get("annotations") or []):
        try:
            anns.append(Annotation.from_json(a))
        except CorpusError as exc:
            raise CorpusError(f"speech {sid}, annotation {ai}: {exc}") from None
    return Speech(str(sid), str(obj.get("group", "")), tuple(samples), tuple(anns))


def speech_to_json(sp: Speech) -> dict[str, Any]:
    return {
        "id": sp.id,
        "group": sp.group,
        "samples": [s.texts for s in sp.samples],
        "annotations": [a.to_json() for a in sp.annotations],
    }


def corpus_from_json(doc: Any) -> Corpus:
    if not isinstance(doc, dict) or "speeches" not in doc:
        raise CorpusError("corpus document must be an object with 'split_name' and 'speeches'")
    if not isinstance(doc["speeches"], list):
        raise CorpusError("'speeches' must be a list")
    speeches = tuple(speech_from_json(s) for s in doc["speeches"])
    return Corpus(str(doc.get("split_name", "")), speeches)


def corpus_to_json(corpus: Corpus) -> dict[str, Any]:
    return {"split_name": corpus.split_name, "speeches": [speech_to_json(s) for s in corpus.speeches]}


def load_corpus(path: str | Path) -> Corpus:
    """Read and validate a corpus file; raise ``CorpusError`` on any violation."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: not a valid JSON document ({exc})") from None
    corpus = corpus_from_json(doc)
    violations = validate_corpus(corpus)
    if violations:
        detail = "; ".join(str(v) for v in violations[:10])
        raise CorpusError(f"{path}: {len(violations)} validation violation(s): {detail}", violations)
    return corpus


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_json(corpus), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def convert_spkatt(paths: Iterable[str | Path], split_name: str, group: str = "unknown") -> Corpus:
    """Convert per-speech shared-task JSON files into a ``Corpus``.

    Assumed layout (unverified against the official release): each file holds
    ``Sentences`` (objects with ``SentenceId`` and ``Tokens``) and
    ``Annotations`` (objects with ``Cue`` and one key per role, each a list of
    ``"sentence:token"`` strings). The file stem becomes the speech id.
    """
    speeches = []
    for p in sorted(Path(x) for x in paths):
        doc = json.loads(p.read_text(encoding="utf-8"))
        sents = sorted(doc.get("Sentences", []), key=lambda s: int(s["SentenceId"]))
        id_to_index = {int(s["SentenceId"]): i for i, s in enumerate(sents)}
        samples = tuple(Sample(i, tuple(Element(t) for t in s["Tokens"])) for i, s in enumerate(sents))

        def refs(items):
            out = []
            for item in items or []:
                s, e = str(item).split(":")
                out.append(TokenRef(id_to_index[int(s)], int(e)))
            return Span(tuple(out))

        anns = []
        for a in doc.get("Annotations", []):
            roles = {lab: refs(a.get(lab.value)) for lab in RoleLabel}
            anns.append(Annotation(refs(a.get("Cue")), {k: v for k, v in roles.items() if v}))
        speeches.append(Speech(p.stem, doc.get("Group", group), samples, tuple(anns)))
    return Corpus(split_name, tuple(speeches))


@dataclass
class StatsReport:
    split_name: str
    speeches: int = 0
    samples: int = 0
    annotations: int = 0
    by_group: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "split_name": self.split_name,
            "speeches": self.speeches,
            "samples": self.samples,
            "annotations": self.annotations,
            "by_group": self.by_group,
        }

    def render(self) -> str:
        width = max([len("Parliamentary group"), *(len(g) for g in self.by_group)]) + 2
        lines = [f"{'Parliamentary group':<{width}}{'Speeches':>10}{'Samples':>10}{'Annotations':>13}"]
        for g in sorted(self.by_group, key=lambda g: (-self.by_group[g]["speeches"], g)):
            c = self.by_group[g]
            lines.append(f"{g:<{width}}{c['speeches']:>10}{c['samples']:>10}{c['annotations']:>13}")
        lines.append(f"{'Total':<{width}}{self.speeches:>10}{self.samples:>10}{self.annotations:>13}")
        return "\n".join(lines)


def corpus_stats(corpus: Corpus) -> StatsReport:
    report = StatsReport(corpus.split_name)
    for sp in corpus.speeches:
        g = report.by_group.setdefault(sp.group, {"speeches": 0, "samples": 0, "annotations": 0})
        g["speeches"] += 1
        g["samples"] += len(sp.samples)
        g["annotations"] += len(sp.annotations)
        report.speeches += 1
        report.samples += len(sp.samples)
        report.annotations += len(sp.annotations)
    return report
