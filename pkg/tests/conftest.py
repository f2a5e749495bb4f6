from __future__ import annotations

import numpy as np
import pytest

from correctsched.corpus import Transcript, Word
from correctsched.harness.synth import SynthCorpusConfig, synth_corpus
from correctsched.segmenter import SpanTable


def make_transcript(tokens, confs=None, reference=None, word_s=0.4) -> Transcript:
    confs = confs if confs is not None else [0.9] * len(tokens)
    words = tuple(Word(t, c, k * word_s, (k + 1) * word_s) for k, (t, c) in enumerate(zip(tokens, confs)))
    return Transcript(words, None if reference is None else tuple(reference))


def random_table(rng: np.random.Generator, n: int, r: int, additive: bool = False):
    """A span table with random utilities and overhead-style noisy costs.

    Returns the table and plain nested lists ``util[i][L-1]``/``cost[i][L-1]``
    for the brute-force oracles.
    """
    util = np.full((n, r), np.nan)
    cost = np.full((n, r), np.nan)
    doubt = rng.beta(1.2, 3.0, n)
    for i in range(n):
        for L in range(1, r + 1):
            if i + L > n:
                break
            u = doubt[i : i + L].sum()
            if not additive:
                u *= rng.uniform(0.6, 1.4)
            util[i, L - 1] = u
            cost[i, L - 1] = (2.0 + L) * (1.0 if additive else rng.lognormal(0.0, 0.3))
    return SpanTable.from_arrays(util, cost), util.tolist(), cost.tolist()


@pytest.fixture(scope="session")
def small_corpus() -> Transcript:
    return synth_corpus(SynthCorpusConfig(n_words=600, n_talks=2, seed=11))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
