"""Cue/role prompt rendering, training targets and instruction-pair export."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

from .corpus import Annotation, Corpus, RoleLabel, Sample, Speech
from .preprocess import ContextText, SampleText, context_window, sample_text

EOS = "</s>"
UNK = "#UNK#"
CUE_PREFIX = "Cues: "

#: Line order of role targets; ``cue`` first, then the roles.
ROLE_ORDER = (
    RoleLabel.PTC,
    RoleLabel.EVIDENCE,
    RoleLabel.MEDIUM,
    RoleLabel.TOPIC,
    RoleLabel.ADDR,
    RoleLabel.MESSAGE,
    RoleLabel.SOURCE,
)

_TEMPLATE_FILES = ("cue_prompt.txt", "role_prompt.txt")


def _template(name: str) -> str:
    return resources.files("spkatt").joinpath("templates", name).read_text(encoding="utf-8")


CUE_TEMPLATE = _template("cue_prompt.txt")
ROLE_TEMPLATE = _template("role_prompt.txt")


def template_hash() -> str:
    h = hashlib.sha256()
    for name in _TEMPLATE_FILES:
        h.update(name.encode())
        h.update(b"\0")
        h.update(resources.files("spkatt").joinpath("templates", name).read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def strip_eos(text: str) -> str:
    text = text.rstrip()
    if text.endswith(EOS):
        text = text[: -len(EOS)].rstrip()
    return text


def build_cue_prompt(sample: Sample | SampleText) -> str:
    st = sample if isinstance(sample, SampleText) else sample_text(sample)
    return CUE_TEMPLATE.format(sentence=st.text)


def cue_exchange(cue_prompt: str, cue_output: str) -> str:
    """Cue prompt followed by the cue answer, used as the role prompt prefix."""
    return f"{cue_prompt}\n{strip_eos(cue_output)}"


def build_role_prompt(speech: Speech, anchor: int, cue_words: Sequence[str], exchange: str) -> str:
    if not cue_words:
        raise ValueError("cue_words must not be empty")
    window = context_window(speech, anchor)
    body = ROLE_TEMPLATE.format(text=window.text, cue=", ".join(cue_words))
    return f"{exchange}\n{body}" if exchange else body


def _words(span, view: SampleText) -> list[str]:
    lookup = dict(zip(view.refs, view.tokens))
    return [lookup[r] for r in span if r in lookup]


def render_cue_target(annotations: Sequence[Annotation], sample: Sample | SampleText) -> str:
    st = sample if isinstance(sample, SampleText) else sample_text(sample)
    groups = [_words(a.cue, st) for a in annotations]
    groups = [g for g in groups if g]
    if not groups:
        return f"{CUE_PREFIX}{UNK}{EOS}"
    return CUE_PREFIX + ", ".join(f"[{', '.join(g)}]" for g in groups) + EOS


def render_role_target(annotation: Annotation, window: ContextText) -> str:
    """Eight ``label: words`` lines; references outside the window are dropped."""
    lines = [f"cue: {', '.join(_words(annotation.cue, window)) or UNK}"]
    for label in ROLE_ORDER:
        span = annotation.roles.get(label)
        words = _words(span, window) if span else []
        lines.append(f"{label.key}: {', '.join(words) if words else UNK}")
    return "\n".join(lines) + EOS


class TokenCounter(Protocol):
    def count(self, text: str) -> int: ...

    def truncate(self, text: str, limit: int) -> str: ...


_FIELD = re.compile(r"\S+")


@dataclass(frozen=True)
class HeuristicCounter:
    """Approximates tokenizer length as ``ceil(1.4 * whitespace fields)``."""

    ratio: float = 1.4
    name: str = "heuristic"

    def count(self, text: str) -> int:
        return math.ceil(len(text.split()) * self.ratio - 1e-9)

    def truncate(self, text: str, limit: int) -> str:
        keep = max(0, math.floor(limit / self.ratio + 1e-9))
        while keep and math.ceil(keep * self.ratio - 1e-9) > limit:
            keep -= 1
        ends = [m.end() for m in _FIELD.finditer(text)]
        if keep >= len(ends):
            return text
        return text[: ends[keep - 1]] if keep else ""


class TransformersCounter:
    """Adapter around a Hugging Face tokenizer (anything with encode/decode)."""

    def __init__(self, tokenizer, name: str = "external"):
        self.tokenizer = tokenizer
        self.name = name

    @classmethod
    def from_pretrained(cls, name_or_path: str) -> "TransformersCounter":
        from transformers import AutoTokenizer

        return cls(AutoTokenizer.from_pretrained(name_or_path), name=name_or_path)

    def _ids(self, text: str) -> list[int]:
        return list(self.tokenizer.encode(text, add_special_tokens=False))

    def count(self, text: str) -> int:
        return len(self._ids(text))

    def truncate(self, text: str, limit: int) -> str:
        ids = self._ids(text)
        if len(ids) <= limit:
            return text
        out = self.tokenizer.decode(ids[: max(limit, 0)])
        # decode/encode is not always a round trip
        while out and self.count(out) > limit:
            out = out[:-1]
        return out


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.0001
    warmup_fraction: float = 0.03
    lora_dropout: float = 0.05
    cue_steps: int = 2000
    cue_batch: int = 16
    cue_grad_accum: int = 1
    role_steps: int = 2500
    role_batch: int = 8
    role_grad_accum: int = 2
    cue_max_input_tokens: int = 256
    cue_max_output_tokens: int = 64
    role_max_input_tokens: int = 640
    role_max_output_tokens: int = 256

    @property
    def cue_effective_batch(self) -> int:
        return self.cue_batch * self.cue_grad_accum

    @property
    def role_effective_batch(self) -> int:
        return self.role_batch * self.role_grad_accum


def emit_training_config(config: TrainingConfig, path: str | Path) -> Path:
    path = Path(path)
    lines = [f"{f.name} = {getattr(config, f.name)!r}" for f in fields(config)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_training_config(path: str | Path) -> TrainingConfig:
    types = {f.name: f.type for f in fields(TrainingConfig)}
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ValueError(f"unknown training config key {key!r}")
        values[key] = float(raw) if types[key] in (float, "float") else int(raw)
    return TrainingConfig(**values)


@dataclass(frozen=True)
class PromptPair:
    input: str
    output: str
    kind: str
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"input": self.input, "output": self.output, "provenance": self.provenance}


@dataclass
class TruncationReport:
    cue_inputs: int = 0
    cue_outputs: int = 0
    role_inputs: int = 0
    role_outputs: int = 0

    def to_json(self) -> dict[str, int]:
        return asdict(self)


def fit_budget(text: str, limit: int, counter: TokenCounter, suffix: str) -> tuple[str, bool]:
    """Drop tail tokens of ``text`` until it fits ``limit``, keeping ``suffix`` intact."""
    if counter.count(text) <= limit:
        return text, False
    head = text[: -len(suffix)] if suffix and text.endswith(suffix) else text
    budget = limit - counter.count(suffix)
    while budget >= 0:
        candidate = counter.truncate(head, budget).rstrip() + suffix
        if counter.count(candidate) <= limit:
            return candidate, True
        budget -= 1
    return counter.truncate(text, limit), True


def training_pairs_for_speech(speech: Speech) -> tuple[list[PromptPair], list[PromptPair]]:
    cue_pairs, role_pairs = [], []
    for sample in speech.samples:
        st = sample_text(sample)
        anchored = speech.annotations_at(sample.index)
        prompt = build_cue_prompt(st)
        target = render_cue_target(anchored, st)
        cue_pairs.append(PromptPair(prompt, target, "cue", {"speech": speech.id, "sample": sample.index}))
        if not anchored:
            continue
        exchange = cue_exchange(prompt, target)
        window = context_window(speech, sample.index)
        for ann in anchored:
            cue_words = [speech.element(r).text for r in ann.cue]
            role_pairs.append(PromptPair(
                build_role_prompt(speech, sample.index, cue_words, exchange),
                render_role_target(ann, window),
                "role",
                {"speech": speech.id, "sample": sample.index, "cue": ann.cue.to_json()},
            ))
    return cue_pairs, role_pairs


def build_training_set(
    corpus: Corpus, counter: TokenCounter | None = None, config: TrainingConfig | None = None
) -> tuple[list[PromptPair], list[PromptPair], TruncationReport]:
    counter = counter or HeuristicCounter()
    config = config or TrainingConfig()
    report = TruncationReport()
    cues, roles = [], []
    for speech in corpus.speeches:
        c, r = training_pairs_for_speech(speech)
        cues.extend(c)
        roles.extend(r)

    def clip(pairs, in_limit, out_limit, kind):
        out = []
        for p in pairs:
            inp, cut_in = fit_budget(p.input, in_limit, counter, "\nAssistant:")
            outp, cut_out = fit_budget(p.output, out_limit, counter, EOS)
            setattr(report, f"{kind}_inputs", getattr(report, f"{kind}_inputs") + cut_in)
            setattr(report, f"{kind}_outputs", getattr(report, f"{kind}_outputs") + cut_out)
            out.append(PromptPair(inp, outp, p.kind, p.provenance))
        return out

    cues = clip(cues, config.cue_max_input_tokens, config.cue_max_output_tokens, "cue")
    roles = clip(roles, config.role_max_input_tokens, config.role_max_output_tokens, "role")
    return cues, roles, report


def write_jsonl(pairs: Iterable[PromptPair], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n
