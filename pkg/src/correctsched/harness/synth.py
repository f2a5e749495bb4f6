"""Synthetic erroneous transcripts with references.

Errors cluster in "difficult" regions whose error rate is scaled by a
gamma-distributed factor, and erroneous words get lower confidences than
correct ones, so confidences are informative but imperfect.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import Transcript, Word, levenshtein_distance


@dataclass(frozen=True)
class SynthCorpusConfig:
    n_words: int = 17800
    target_wer: float = 0.223
    vocab_size: int = 5000
    n_talks: int = 10
    error_mix: tuple[float, float, float] = (0.65, 0.15, 0.20)  # substitution, insertion, deletion
    region_words: int = 12
    burstiness: float = 0.7  # gamma shape of the regional error-rate factor; smaller is burstier
    correct_conf: tuple[float, float] = (6.0, 1.2)  # beta parameters
    error_conf: tuple[float, float] = (2.0, 2.5)
    word_seconds: float = 0.35
    word_seconds_shape: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.target_wer <= 1.0:
            raise ValueError(f"target_wer must lie in [0, 1], got {self.target_wer}")
        if self.n_words < 1 or self.n_talks < 1 or self.n_talks > self.n_words:
            raise ValueError("need at least one word per talk")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 so substitutions change the word")
        if len(self.error_mix) != 3 or min(self.error_mix) < 0 or sum(self.error_mix) <= 0:
            raise ValueError("error_mix needs three non-negative weights")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthCorpusConfig:
        d = dict(d)
        for key in ("error_mix", "correct_conf", "error_conf"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _talk(n_ref: int, n_edits: int, config: SynthCorpusConfig, rng: np.random.Generator) -> Transcript:
    ranks = np.arange(1, config.vocab_size + 1)
    zipf = 1.0 / ranks**1.1
    zipf /= zipf.sum()
    ref_ids = rng.choice(config.vocab_size, size=n_ref, p=zipf)

    n_regions = -(-n_ref // config.region_words)
    factor = rng.gamma(config.burstiness, 1.0 / config.burstiness, n_regions)
    weight = np.repeat(factor, config.region_words)[:n_ref] + 1e-9
    sites = rng.choice(n_ref, size=min(n_edits, n_ref), replace=False, p=weight / weight.sum())
    mix = np.asarray(config.error_mix, dtype=float)
    kinds = rng.choice(3, size=len(sites), p=mix / mix.sum())
    kind_at = np.full(n_ref, -1)
    kind_at[sites] = kinds

    tokens: list[str] = []
    wrong: list[bool] = []
    for i in range(n_ref):
        word = f"w{ref_ids[i]}"
        k = kind_at[i]
        if k == 0:
            alt = (ref_ids[i] + 1 + rng.integers(config.vocab_size - 1)) % config.vocab_size
            tokens.append(f"w{alt}")
            wrong.append(True)
        elif k == 1:
            tokens.append(word)
            wrong.append(False)
            tokens.append(f"w{rng.integers(config.vocab_size)}")
            wrong.append(True)
        elif k == 2:
            continue
        else:
            tokens.append(word)
            wrong.append(False)

    wrong_arr = np.array(wrong, dtype=bool)
    conf = np.where(
        wrong_arr,
        rng.beta(*config.error_conf, size=len(tokens)),
        rng.beta(*config.correct_conf, size=len(tokens)),
    )
    dur = rng.gamma(config.word_seconds_shape, config.word_seconds / config.word_seconds_shape, len(tokens))
    ends = np.cumsum(dur)
    starts = ends - dur
    words = tuple(Word(t, float(c), float(s), float(e)) for t, c, s, e in zip(tokens, conf, starts, ends))
    return Transcript(words, tuple(f"w{r}" for r in ref_ids))


def synth_talks(config: SynthCorpusConfig, rng: np.random.Generator | None = None) -> list[Transcript]:
    """Talks whose concatenation hits the target WER within 1% absolute.

    Adjacent insertions and deletions can merge into a single substitution,
    so the edit count is rescaled once or twice against the measured WER.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    seed = int(rng.integers(2**63))
    sizes = np.full(config.n_talks, config.n_words // config.n_talks)
    sizes[: config.n_words % config.n_talks] += 1
    scale = 1.0
    for attempt in range(4):
        sub = np.random.default_rng([seed, attempt])
        talks = [_talk(int(n), int(round(config.target_wer * scale * n)), config, sub) for n in sizes]
        achieved = corpus_wer(talks)
        if abs(achieved - config.target_wer) <= 0.002 or achieved == 0:
            break
        scale *= config.target_wer / achieved
    if abs(achieved - config.target_wer) > 0.01:
        raise ValueError(f"target WER {config.target_wer} unattainable (got {achieved:.4f})")
    return talks


def corpus_wer(talks: list[Transcript]) -> float:
    errors = sum(levenshtein_distance(t.tokens, t.reference) for t in talks)
    return errors / sum(len(t.reference) for t in talks)


def concat_talks(talks: list[Transcript], order=None) -> Transcript:
    """Join talks back to back, shifting word times so the clock keeps running."""
    order = range(len(talks)) if order is None else order
    words: list[Word] = []
    reference: list[str] = []
    offset = 0.0
    for k in order:
        talk = talks[int(k)]
        for w in talk.words:
            words.append(Word(w.token, w.confidence, w.start_s + offset, w.end_s + offset))
        if talk.words:
            offset = words[-1].end_s
        reference.extend(talk.reference)
    return Transcript(tuple(words), tuple(reference))


def synth_corpus(config: SynthCorpusConfig, rng: np.random.Generator | None = None) -> Transcript:
    return concat_talks(synth_talks(config, rng))
