"""Wall-clock scaling of the budgeted segmenter with the prior cost model."""

from __future__ import annotations

import time

import numpy as np

from ..costmodel import CostConfig, CostModel
from ..segmenter import DEFAULT_EPSILON, segment_transcript
from ..utility import UtilityModel
from .synth import SynthCorpusConfig, synth_corpus

DEFAULT_SIZES = (1000, 2000, 4000, 8000, 16000, 32000, 64000)
# 100 minutes for 17.8k words, scaled with transcript length
SECONDS_PER_WORD = 6000.0 / 17800.0
BENCH_FIELDS = ("n_words", "max_len", "budget_s", "seconds", "iterations", "method", "utility", "cost_s")


def bench_segmentation(
    sizes=DEFAULT_SIZES,
    max_lens=(20,),
    repeats: int = 3,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    seconds_per_word: float = SECONDS_PER_WORD,
) -> list[dict]:
    """Time end-to-end segmentation (span table plus optimization), single-threaded.

    Each cell reports the fastest of ``repeats`` runs after a warm-up that
    triggers JIT compilation.
    """
    if any(n < 1 for n in sizes) or repeats < 1:
        raise ValueError("sizes and repeats must be positive")
    model = CostModel.fit((), CostConfig())
    utility = UtilityModel()
    warm = synth_corpus(SynthCorpusConfig(n_words=200, n_talks=1, seed=seed))
    segment_transcript(warm, model, utility, 60.0)

    rows = []
    for n in sizes:
        transcript = synth_corpus(SynthCorpusConfig(n_words=int(n), n_talks=1, seed=seed))
        budget = seconds_per_word * n
        for r in max_lens:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                seg = segment_transcript(transcript, model, utility, budget, epsilon=epsilon, max_len=int(r))
                best = min(best, time.perf_counter() - t0)
            rows.append(
                {
                    "n_words": len(transcript),
                    "max_len": int(r),
                    "budget_s": budget,
                    "seconds": best,
                    "iterations": seg.stats.get("iterations", 0),
                    "method": seg.stats.get("method", ""),
                    "utility": seg.total_utility,
                    "cost_s": seg.total_cost_s,
                }
            )
    return rows


def scaling_ratios(rows, max_len: int = 20) -> list[tuple[int, int, float]]:
    """Time ratio between consecutive sizes at one segment-length cap."""
    pts = sorted((r["n_words"], r["seconds"]) for r in rows if r["max_len"] == max_len)
    return [(a, b, tb / ta) for (a, ta), (b, tb) in zip(pts, pts[1:])]
