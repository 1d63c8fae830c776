"""Two-step prediction: cue prompt per sample, then one role prompt per cue."""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backend import (
    CUE_MAX_NEW_TOKENS,
    ROLE_MAX_NEW_TOKENS,
    Backend,
    CompletionRequest,
)
from .corpus import Annotation, Corpus, CorpusError, Speech
from .metrics import Subtask
from .postprocess import (
    GroundingContext,
    assemble_prediction,
    ground_cues,
    ground_roles,
    parse_cue_output,
    parse_role_output,
)
from .preprocess import context_window, sample_text
from .prompt import build_cue_prompt, build_role_prompt, cue_exchange, render_cue_target, template_hash

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    corpus: str
    backend: str = "replay"
    endpoint: str | None = None
    replay_store: str | None = None
    subtask: str = "full"
    jobs: int = 1
    out: str = "out"
    tokenizer: str = "heuristic"

    def __post_init__(self):
        if self.backend not in ("wire", "replay"):
            raise ValueError(f"unknown backend kind {self.backend!r}")
        if self.backend == "replay" and not self.replay_store:
            raise ValueError("the replay backend needs a replay store path")
        if self.backend == "wire" and not self.endpoint:
            raise ValueError("the wire backend needs an endpoint")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        Subtask.parse(self.subtask)

    def digest(self) -> str:
        # jobs and out do not influence predictions
        d = asdict(self)
        d.pop("jobs")
        d.pop("out")
        d["subtask"] = Subtask.parse(self.subtask).value
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


class _Limited:
    def __init__(self, backend: Backend, jobs: int):
        self.backend = backend
        self.sem = asyncio.Semaphore(jobs)

    async def complete(self, request: CompletionRequest):
        async with self.sem:
            return await self.backend.complete(request)


async def _predict_sample_full(speech: Speech, anchor: int, backend) -> list[Annotation]:
    st = sample_text(speech.samples[anchor])
    prompt = build_cue_prompt(st)
    cue_resp = await backend.complete(CompletionRequest(prompt, CUE_MAX_NEW_TOKENS))
    parsed = parse_cue_output(cue_resp.text)
    cues = [s for s in ground_cues(parsed, GroundingContext.from_text(st)) if s is not None]
    if not cues:
        return []
    exchange = cue_exchange(prompt, cue_resp.text)
    lookup = dict(zip(st.refs, st.tokens))
    role_prompts = [build_role_prompt(speech, anchor, [lookup[r] for r in cue], exchange) for cue in cues]
    responses = await asyncio.gather(
        *(backend.complete(CompletionRequest(p, ROLE_MAX_NEW_TOKENS)) for p in role_prompts))
    outputs = [parse_role_output(r.text) for r in responses]
    return assemble_prediction(st, context_window(speech, anchor), parsed, outputs)


async def _predict_sample_roles(speech: Speech, anchor: int, backend) -> list[Annotation]:
    gold = speech.annotations_at(anchor)
    if not gold:
        return []
    st = sample_text(speech.samples[anchor])
    exchange = cue_exchange(build_cue_prompt(st), render_cue_target(gold, st))
    window = GroundingContext.from_text(context_window(speech, anchor))
    requests = [
        CompletionRequest(
            build_role_prompt(speech, anchor, [speech.element(r).text for r in ann.cue], exchange),
            ROLE_MAX_NEW_TOKENS,
        )
        for ann in gold
    ]
    responses = await asyncio.gather(*(backend.complete(r) for r in requests))
    return [
        Annotation(ann.cue, ground_roles(parse_role_output(resp.text), window))
        for ann, resp in zip(gold, responses)
    ]


async def predict_speech(speech: Speech, backend, subtask: str | Subtask = Subtask.FULL) -> list[Annotation]:
    subtask = Subtask.parse(subtask)
    step = _predict_sample_full if subtask is Subtask.FULL else _predict_sample_roles
    per_sample = await asyncio.gather(*(step(speech, s.index, backend) for s in speech.samples))
    return [a for anns in per_sample for a in anns]


async def predict_corpus(
    corpus: Corpus,
    backend: Backend,
    subtask: str | Subtask = Subtask.FULL,
    jobs: int = 1,
    done: Mapping[str, list[Annotation]] | None = None,
    on_speech=None,
) -> dict[str, list[Annotation]]:
    """Predict every speech. ``done`` holds results to reuse; ``on_speech`` is
    called with (speech id, annotations) as each speech completes."""
    limited = _Limited(backend, jobs)
    results: dict[str, list[Annotation]] = dict(done or {})

    async def run(speech: Speech):
        anns = await predict_speech(speech, limited, subtask)
        results[speech.id] = anns
        if on_speech is not None:
            on_speech(speech.id, anns)

    tasks = [asyncio.ensure_future(run(sp)) for sp in corpus.speeches if sp.id not in results]
    if tasks:
        finished, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
        for t in pending:
            t.cancel()
        if pending:
            await asyncio.gather(*pending, return_exceptions=True)
        for t in finished:
            if t.exception() is not None:
                raise t.exception()
    return {sp.id: results[sp.id] for sp in corpus.speeches}


def predictions_to_json(split_name: str, subtask: Subtask, preds: Mapping[str, Sequence[Annotation]]) -> dict:
    return {
        "split_name": split_name,
        "subtask": subtask.value,
        "predictions": {sid: [a.to_json() for a in preds[sid]] for sid in sorted(preds)},
    }


def load_predictions(path: str | Path) -> dict[str, list[Annotation]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        raw = doc["predictions"]
        return {sid: [Annotation.from_json(a) for a in anns] for sid, anns in raw.items()}
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CorpusError(f"{path}: malformed predictions document ({exc})") from None


def _dump(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n"


def run_predict(config: RunConfig, corpus: Corpus, backend: Backend) -> tuple[Path, Path]:
    """Run prediction with per-speech checkpointing; returns (predictions, manifest) paths."""
    subtask = Subtask.parse(config.subtask)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": config.digest(),
        "template_hash": template_hash(),
        "backend": backend.identity,
        "subtask": subtask.value,
        "split_name": corpus.split_name,
        "speeches": len(corpus),
    }
    run_key = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    ckpt = out / "checkpoint.jsonl"
    done = _read_checkpoint(ckpt, run_key)
    if done:
        log.info("resuming: %d speech(es) restored from checkpoint", len(done))
    else:
        ckpt.write_text(json.dumps({"run_key": run_key}) + "\n", encoding="utf-8")

    def save(sid, anns):
        with open(ckpt, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"speech": sid, "annotations": [a.to_json() for a in anns]},
                                ensure_ascii=False) + "\n")

    preds = asyncio.run(_predict_and_close(corpus, backend, subtask, config.jobs, done, save))

    pred_path = out / "predictions.json"
    man_path = out / "manifest.json"
    pred_path.write_text(_dump(predictions_to_json(corpus.split_name, subtask, preds)), encoding="utf-8")
    man_path.write_text(_dump(manifest), encoding="utf-8")
    ckpt.unlink()
    return pred_path, man_path


async def _predict_and_close(corpus, backend, subtask, jobs, done, save):
    try:
        return await predict_corpus(corpus, backend, subtask, jobs, done, save)
    finally:
        close = getattr(backend, "aclose", None) or getattr(getattr(backend, "inner", None), "aclose", None)
        if close is not None:
            await close()


def _read_checkpoint(path: Path, run_key: str) -> dict[str, list[Annotation]]:
    if not path.exists():
        return {}
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or json.loads(lines[0]).get("run_key") != run_key:
        return {}
    done = {}
    for line in lines[1:]:
        try:
            rec = json.loads(line)
        except ValueError:
            break  # torn final line from an interrupted write
        done[rec["speech"]] = [Annotation.from_json(a) for a in rec["annotations"]]
    return done
