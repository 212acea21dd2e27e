import numpy as np
import pytest

from numtag import synth
from numtag.dataset import build_instances, build_vocab, encode_instances

ACCEPTANCE_RESULTS = {}


def record_acceptance(number, name, ok, detail=""):
    ACCEPTANCE_RESULTS[number] = (name, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")


@pytest.fixture(scope="session")
def small_docs():
    return synth.corpus_docs(synth.generate_corpus(60, seed=11))


@pytest.fixture(scope="session")
def small_encoded(small_docs):
    vocab = build_vocab(small_docs)
    return vocab, encode_instances(build_instances(small_docs), vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
