"""Turn raw model text into annotations grounded on corpus tokens.

Steps, in order of application:

* strict output parsing; anything off-format reads as ``#UNK#``
* grounding of each emitted word on an element of the prompt text, falling
  back to elements at edit distance 1 and dropping words with no match
* disambiguation of repeated words by counting selected words among the two
  elements on either side
* merging of overlapping cues
* adding punctuation enclosed by selected words
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import Annotation, RoleLabel, Span, TokenRef, is_punct
from .preprocess import SampleText
from .prompt import CUE_PREFIX, EOS, ROLE_ORDER, UNK

NEIGHBORHOOD = 2

_ROLE_KEYS = {label.key: label for label in RoleLabel}


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class ParsedCueOutput:
    cue_groups: tuple[tuple[str, ...], ...] = ()


@dataclass(frozen=True)
class ParsedRoleOutput:
    cue_echo: tuple[str, ...] = ()
    roles: Mapping[RoleLabel, tuple[str, ...]] = field(default_factory=dict)


def _clean(text: str) -> str:
    text = text.strip()
    if text.endswith(EOS):
        text = text[: -len(EOS)].rstrip()
    return text


def _split_words(value: str) -> list[str] | None:
    words = value.split(", ")
    # corpus elements never hold whitespace
    return None if any(not w or any(ch.isspace() for ch in w) for w in words) else words


def parse_cue_output(text: str) -> ParsedCueOutput:
    body = _clean(text)
    if not body.startswith(CUE_PREFIX):
        return ParsedCueOutput()
    body = body[len(CUE_PREFIX):]
    if body == UNK:
        return ParsedCueOutput()
    groups = []
    rest = body
    while True:
        if not rest.startswith("["):
            return ParsedCueOutput()
        close = rest.find("]", 1)
        # a "]" token inside a group is followed by ", " rather than "], [" or the end
        while close != -1 and not (close == len(rest) - 1 or rest.startswith("], [", close)):
            close = rest.find("]", close + 1)
        if close == -1:
            return ParsedCueOutput()
        words = _split_words(rest[1:close])
        if not words:
            return ParsedCueOutput()
        groups.append(tuple(words))
        rest = rest[close + 1:]
        if not rest:
            break
        if not rest.startswith(", "):
            return ParsedCueOutput()
        rest = rest[2:]
    return ParsedCueOutput(tuple(groups))


def parse_role_output(text: str) -> ParsedRoleOutput:
    body = _clean(text)
    seen: dict[str, tuple[str, ...] | None] = {}
    for line in body.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(": ")
        key = key.strip()
        if not sep or (key != "cue" and key not in _ROLE_KEYS) or key in seen:
            return ParsedRoleOutput()
        value = value.strip()
        if value == UNK:
            seen[key] = None
            continue
        words = _split_words(value)
        if not words:
            return ParsedRoleOutput()
        seen[key] = tuple(words)
    if "cue" not in seen:
        return ParsedRoleOutput()
    roles = {_ROLE_KEYS[k]: v for k, v in seen.items() if k != "cue" and v}
    return ParsedRoleOutput(seen["cue"] or (), roles)


@dataclass(frozen=True)
class GroundingContext:
    """The element sequence a model saw in its prompt, addressed by ``TokenRef``."""

    refs: tuple[TokenRef, ...]
    texts: tuple[str, ...]

    @classmethod
    def from_text(cls, view: SampleText) -> "GroundingContext":
        return cls(tuple(view.refs), tuple(view.tokens))

    def __len__(self) -> int:
        return len(self.refs)

    def position(self) -> dict[TokenRef, int]:
        return {r: i for i, r in enumerate(self.refs)}

    def is_punct(self, i: int) -> bool:
        return is_punct(self.texts[i])


def neighborhood_score(ctx: GroundingContext, pos: int, vocab: set[str]) -> int:
    lo, hi = max(0, pos - NEIGHBORHOOD), min(len(ctx), pos + NEIGHBORHOOD + 1)
    return sum(1 for i in range(lo, hi) if i != pos and ctx.texts[i] in vocab)


def choose_occurrence(ctx: GroundingContext, candidates: Iterable[int], vocab: set[str]) -> int:
    """Highest neighborhood score wins; ties go to the leftmost position."""
    return min(candidates, key=lambda p: (-neighborhood_score(ctx, p, vocab), p))


def ground_words(
    words: Sequence[str], ctx: GroundingContext, claimed: set[TokenRef] | None = None
) -> Span | None:
    """Map emitted words onto unclaimed context elements. Mutates ``claimed``."""
    if claimed is None:
        claimed = set()
    vocab = set(words)
    chosen = []
    for word in words:
        free = [i for i, r in enumerate(ctx.refs) if r not in claimed]
        candidates = [i for i in free if ctx.texts[i] == word]
        if not candidates:
            candidates = [i for i in free if levenshtein(ctx.texts[i], word) == 1]
        if not candidates:
            continue
        ref = ctx.refs[choose_occurrence(ctx, candidates, vocab)]
        claimed.add(ref)
        chosen.append(ref)
    return Span(tuple(chosen)) if chosen else None


@dataclass
class _Group:
    members: list[int]
    refs: set[TokenRef]


def _merge_groups(spans: Sequence[Span]) -> list[tuple[Span, list[int]]]:
    groups = [_Group([i], set(s.refs)) for i, s in enumerate(spans)]
    i = 0
    while i < len(groups):
        j = i + 1
        while j < len(groups):
            if groups[i].refs & groups[j].refs:
                g = groups.pop(j)
                groups[i].members.extend(g.members)
                groups[i].refs |= g.refs
                j = i + 1  # grown group may now touch earlier-checked ones
            else:
                j += 1
        i += 1
    groups.sort(key=lambda g: min(g.refs))
    return [(Span(tuple(g.refs)), sorted(g.members)) for g in groups]


def merge_overlapping_cues(spans: Sequence[Span]) -> list[Span]:
    """Union cues sharing a token (transitively); result ordered by first token."""
    return [span for span, _ in _merge_groups(spans)]


def include_surrounded_punctuation(span: Span, ctx: GroundingContext) -> Span:
    pos = ctx.position()
    selected = {pos[r] for r in span if r in pos}
    extra = [r for r in span if r not in pos]
    grew = True
    while grew:
        grew = False
        for i in range(1, len(ctx) - 1):
            if i not in selected and ctx.is_punct(i) and i - 1 in selected and i + 1 in selected:
                selected.add(i)
                grew = True
    return Span(tuple(ctx.refs[i] for i in selected) + tuple(extra))


def ground_roles(parsed: ParsedRoleOutput, window: GroundingContext) -> dict[RoleLabel, Span]:
    """Ground every role of one annotation; roles share one claimed set."""
    claimed: set[TokenRef] = set()
    roles = {}
    for label in ROLE_ORDER:
        words = parsed.roles.get(label)
        if not words:
            continue
        span = ground_words(words, window, claimed)
        if span is not None:
            roles[label] = include_surrounded_punctuation(span, window)
    return roles


def ground_cues(parsed: ParsedCueOutput, sample: GroundingContext) -> list[Span | None]:
    return [ground_words(group, sample, set()) for group in parsed.cue_groups]


def merge_role_outputs(outputs: Sequence[ParsedRoleOutput]) -> ParsedRoleOutput:
    echo: list[str] = []
    roles: dict[RoleLabel, tuple[str, ...]] = {}
    for out in outputs:
        echo.extend(out.cue_echo)
        for label in ROLE_ORDER:
            if label in out.roles:
                roles[label] = roles.get(label, ()) + tuple(out.roles[label])
    return ParsedRoleOutput(tuple(echo), roles)


def assemble_prediction(
    sample: SampleText | GroundingContext,
    window: SampleText | GroundingContext,
    parsed_cue: ParsedCueOutput,
    parsed_roles: Sequence[ParsedRoleOutput],
) -> list[Annotation]:
    """Build annotations for one anchor sample.

    ``parsed_roles`` holds one entry per cue group that grounds, in cue order.
    """
    sample_ctx = sample if isinstance(sample, GroundingContext) else GroundingContext.from_text(sample)
    window_ctx = window if isinstance(window, GroundingContext) else GroundingContext.from_text(window)
    cues = [s for s in ground_cues(parsed_cue, sample_ctx) if s is not None]
    if len(cues) != len(parsed_roles):
        raise ValueError(f"{len(cues)} grounded cues but {len(parsed_roles)} role outputs")
    annotations = []
    for cue, members in _merge_groups(cues):
        merged = merge_role_outputs([parsed_roles[i] for i in members])
        annotations.append(Annotation(cue, ground_roles(merged, window_ctx)))
    return annotations
