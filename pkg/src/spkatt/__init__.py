"""Speaker attribution toolkit: prompts, two-step inference, grounding, scoring."""

from .corpus import (
    Annotation,
    Corpus,
    CorpusError,
    Element,
    RoleLabel,
    Sample,
    Span,
    Speech,
    TokenRef,
    corpus_stats,
    load_corpus,
    validate_corpus,
)
from .metrics import ScoreReport, Subtask, proportional_scores, render_report, score_corpus
from .postprocess import assemble_prediction, parse_cue_output, parse_role_output
from .prompt import build_cue_prompt, build_role_prompt, render_cue_target, render_role_target

__version__ = "0.1.0"
