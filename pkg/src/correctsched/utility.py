"""Confidence-based utility model.

Utility estimates how many word errors verifying a segment removes. The
model is transcriber-agnostic and never retrained. Skip segments have zero
utility by definition, so only the Verify mode is modelled here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Alignment, Transcript, Word, segment_errors


class UtilityMode(str, enum.Enum):
    EXPECTED_ERRORS = "expected-errors"
    LITERAL_MEAN = "literal-mean"


def predict_utility(words: Sequence[Word] | Sequence[float], mode: UtilityMode | str = UtilityMode.EXPECTED_ERRORS) -> float:
    """Predicted utility of verifying one segment.

    ``expected-errors`` gives ``length * (1 - mean confidence)``;
    ``literal-mean`` gives ``1 - mean confidence``. Accepts words or raw
    confidences.
    """
    if len(words) == 0:
        raise ValueError("cannot predict utility of an empty segment")
    conf = np.array([w.confidence if isinstance(w, Word) else w for w in words], dtype=float)
    mode = UtilityMode(mode)
    doubt = float(np.sum(1.0 - conf))
    if mode is UtilityMode.LITERAL_MEAN:
        return max(0.0, doubt / len(conf))
    return max(0.0, doubt)


@dataclass(frozen=True)
class UtilityModel:
    mode: UtilityMode = UtilityMode.EXPECTED_ERRORS

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", UtilityMode(self.mode))

    def predict(self, words: Sequence[Word] | Sequence[float]) -> float:
        return predict_utility(words, self.mode)

    def span_table(self, confidences: np.ndarray, max_len: int) -> np.ndarray:
        """Utilities of every span ``[i, i + L)``, shape ``(N, max_len)``.

        Column ``L - 1`` holds spans of length ``L``; spans running past the
        end are NaN.
        """
        doubt = np.concatenate(([0.0], np.cumsum(1.0 - np.asarray(confidences, dtype=float))))
        n = len(doubt) - 1
        out = np.full((n, max_len), np.nan)
        for length in range(1, max_len + 1):
            if length > n:
                break
            vals = doubt[length:] - doubt[:-length]
            if self.mode is UtilityMode.LITERAL_MEAN:
                vals = vals / length
            out[: n - length + 1, length - 1] = np.maximum(vals, 0.0)
        return out


def true_utility(transcript: Transcript, alignment: Alignment | None, start: int, stop: int) -> int:
    """Actual number of errors removed by correcting ``[start, stop)``.

    Evaluation only; schedulers never see this.
    """
    return segment_errors(transcript, alignment, start, stop)
