"""Build the text strings placed into prompts, with per-element offsets."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import WINDOW_FOLLOWING, Sample, Speech, TokenRef


def fix_trailing_colon(text: str) -> str:
    """Replace a colon that is the last non-whitespace character by a period."""
    stripped = text.rstrip()
    if stripped.endswith(":"):
        i = len(stripped) - 1
        return text[:i] + "." + text[i + 1:]
    return text


@dataclass(frozen=True)
class SampleText:
    text: str
    offsets: tuple[tuple[int, int], ...]
    refs: tuple[TokenRef, ...]

    @property
    def tokens(self) -> list[str]:
        """Element texts as they appear in ``text`` (colon repair included)."""
        return [self.text[a:b] for a, b in self.offsets]


@dataclass(frozen=True)
class ContextText(SampleText):
    boundaries: tuple[int, ...] = ()


def _join(token_lists: list[tuple[int, list[str]]], repair: bool):
    parts, offsets, refs = [], [], []
    pos = 0
    for si, tokens in token_lists:
        for ei, tok in enumerate(tokens):
            if parts:
                pos += 1
            parts.append(tok)
            offsets.append((pos, pos + len(tok)))
            refs.append(TokenRef(si, ei))
            pos += len(tok)
    text = " ".join(parts)
    if repair:
        # elements hold no whitespace, so the repair never shifts offsets
        text = fix_trailing_colon(text)
    return text, tuple(offsets), tuple(refs)


def sample_text(sample: Sample) -> SampleText:
    text, offsets, refs = _join([(sample.index, sample.texts)], repair=True)
    return SampleText(text, offsets, refs)


def context_window(speech: Speech, anchor: int) -> ContextText:
    """Anchor sample plus up to two following samples of the same speech."""
    if not 0 <= anchor < len(speech.samples):
        raise IndexError(f"anchor {anchor} out of range for speech {speech.id}")
    included = speech.samples[anchor:anchor + WINDOW_FOLLOWING + 1]
    text, offsets, refs = _join([(s.index, s.texts) for s in included], repair=True)
    return ContextText(text, offsets, refs, boundaries=tuple(s.index for s in included))
