import socket
import time
from pathlib import Path

import pytest

from spkatt.backend import CompletionRequest, CompletionResponse, ReplayBackend, record_replay
from spkatt.corpus import load_corpus
from spkatt.preprocess import context_window, sample_text
from spkatt.prompt import (
    build_cue_prompt,
    build_role_prompt,
    cue_exchange,
    render_cue_target,
    render_role_target,
)

HERE = Path(__file__).parent
DATA = HERE / "data"
GOLDEN = HERE / "golden"


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


@pytest.fixture
def fig1():
    return load_corpus(DATA / "fig1.json")


@pytest.fixture
def fig1_speech(fig1):
    return fig1.speeches[0]


def oracle_exchanges(corpus):
    """(prompt, response) pairs answering every full-subtask prompt with the gold target."""
    for sp in corpus.speeches:
        for sample in sp.samples:
            st = sample_text(sample)
            anchored = sp.annotations_at(sample.index)
            prompt = build_cue_prompt(st)
            target = render_cue_target(anchored, st)
            yield prompt, target
            exchange = cue_exchange(prompt, target)
            window = context_window(sp, sample.index)
            for ann in anchored:
                words = [sp.element(r).text for r in ann.cue]
                yield build_role_prompt(sp, sample.index, words, exchange), render_role_target(ann, window)


def oracle_replay(corpus) -> ReplayBackend:
    backend = ReplayBackend()
    for prompt, response in oracle_exchanges(corpus):
        backend.seed(prompt, response)
    return backend


def write_store(path, pairs):
    for prompt, response in pairs:
        record_replay(path, CompletionRequest(prompt, 64), CompletionResponse(response))
    return path


_acceptance: list[tuple[str, str]] = []
_started = time.perf_counter()
SUITE_BUDGET_S = 60.0


@pytest.fixture(autouse=True, scope="session")
def no_network():
    def refuse(self, address, *args, **kwargs):
        raise OSError(f"network access attempted during tests: {address!r}")

    original = socket.socket.connect
    socket.socket.connect = refuse
    yield
    socket.socket.connect = original


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance.append((name, "PASS" if report.passed else "FAIL"))
    elif report.when == "setup" and report.skipped:
        _acceptance.append((name, "SKIP"))
    elif report.failed:
        _acceptance.append((name, "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{outcome:4}  {name}")
    elapsed = time.perf_counter() - _started
    failed = terminalreporter.stats.get("failed", [])
    ok = elapsed < SUITE_BUDGET_S and not failed
    terminalreporter.write_line(
        f"{'PASS' if ok else 'FAIL'}  whole suite offline in {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
