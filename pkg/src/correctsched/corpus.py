"""Transcript data model, word-level alignment and error metrics.

Word positions are 0-based and spans are half-open ``[start, stop)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np
from rapidfuzz.distance import Levenshtein as _rf_levenshtein

MATCH = "match"
SUBSTITUTION = "substitution"
INSERTION = "insertion"  # hypothesis word with no reference counterpart
DELETION = "deletion"  # reference word missing from the hypothesis

_KINDS = (MATCH, SUBSTITUTION, DELETION, INSERTION)

# Below this many DP cells the alignment is computed over the full matrix.
_FULL_MATRIX_CELLS = 1 << 20
_INITIAL_BAND = 64


class TranscriptFormatError(ValueError):
    """Raised when a transcript document is malformed."""


class NoReferenceError(ValueError):
    """Raised when an operation needs a reference transcript that is absent."""


@dataclass(frozen=True)
class Word:
    token: str
    confidence: float
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.start_s < 0:
            raise ValueError(f"start_s must be >= 0, got {self.start_s}")
        if self.end_s < self.start_s:
            raise ValueError(f"end_s ({self.end_s}) < start_s ({self.start_s})")


@dataclass(frozen=True)
class Transcript:
    words: tuple[Word, ...]
    reference: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(self.reference))
        for k in range(1, len(self.words)):
            if self.words[k].start_s < self.words[k - 1].start_s:
                raise ValueError(f"words[{k}] starts before words[{k - 1}]")

    def __len__(self) -> int:
        return len(self.words)

    @property
    def tokens(self) -> list[str]:
        return [w.token for w in self.words]

    @cached_property
    def confidences(self) -> np.ndarray:
        return np.array([w.confidence for w in self.words], dtype=float)

    @cached_property
    def starts(self) -> np.ndarray:
        return np.array([w.start_s for w in self.words], dtype=float)

    @cached_property
    def ends(self) -> np.ndarray:
        return np.array([w.end_s for w in self.words], dtype=float)

    @cached_property
    def alignment(self) -> Alignment:
        """Alignment of the hypothesis words against the reference (cached)."""
        if self.reference is None:
            raise NoReferenceError("no reference available")
        return levenshtein(self.tokens, self.reference)[1]

    @classmethod
    def from_dict(cls, doc: dict) -> Transcript:
        if not isinstance(doc, dict):
            raise TranscriptFormatError("transcript document must be a JSON object")
        if "words" not in doc or not isinstance(doc["words"], list):
            raise TranscriptFormatError("words: missing or not a list")
        words = []
        for k, item in enumerate(doc["words"]):
            where = f"words[{k}]"
            if not isinstance(item, dict):
                raise TranscriptFormatError(f"{where}: expected an object")
            for key in ("t", "conf", "start", "end"):
                if key not in item:
                    raise TranscriptFormatError(f"{where}.{key}: missing")
            if not isinstance(item["t"], str):
                raise TranscriptFormatError(f"{where}.t: expected a string")
            for key in ("conf", "start", "end"):
                if isinstance(item[key], bool) or not isinstance(item[key], (int, float)):
                    raise TranscriptFormatError(f"{where}.{key}: expected a number")
            try:
                words.append(
                    Word(item["t"], float(item["conf"]), float(item["start"]), float(item["end"]))
                )
            except ValueError as exc:
                raise TranscriptFormatError(f"{where}: {exc}") from None
        reference = doc.get("reference")
        if reference is not None:
            if not isinstance(reference, list) or not all(isinstance(t, str) for t in reference):
                raise TranscriptFormatError("reference: expected a list of strings")
        try:
            return cls(tuple(words), None if reference is None else tuple(reference))
        except ValueError as exc:
            raise TranscriptFormatError(f"words: {exc}") from None

    def to_dict(self) -> dict:
        doc: dict = {
            "words": [
                {"t": w.token, "conf": w.confidence, "start": w.start_s, "end": w.end_s}
                for w in self.words
            ]
        }
        if self.reference is not None:
            doc["reference"] = list(self.reference)
        return doc

    @classmethod
    def load(cls, path) -> Transcript:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise TranscriptFormatError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)


class AlignOp(NamedTuple):
    kind: str
    hyp_index: int | None
    ref_index: int | None


@dataclass(frozen=True)
class Alignment:
    """Edit operations turning a hypothesis into a reference.

    Each hypothesis position owns the reference slice
    ``reference[ref_bounds[p]:ref_bounds[p + 1]]``. Deletions are owned by the
    hypothesis word they precede; trailing deletions by the last word.
    """

    ops: tuple[AlignOp, ...]
    n_hyp: int
    n_ref: int
    word_errors: np.ndarray = field(repr=False, compare=False)
    ref_bounds: np.ndarray = field(repr=False, compare=False)

    @property
    def distance(self) -> int:
        return sum(op.kind != MATCH for op in self.ops)

    @cached_property
    def _error_prefix(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.word_errors)))

    def span_errors(self, start: int, stop: int) -> int:
        return int(self._error_prefix[stop] - self._error_prefix[start])

    def ref_slice(self, start: int, stop: int) -> slice:
        if start >= stop:
            return slice(0, 0)
        return slice(int(self.ref_bounds[start]), int(self.ref_bounds[stop]))

    @classmethod
    def from_ops(cls, ops: Sequence[AlignOp], n_hyp: int, n_ref: int) -> Alignment:
        errors = np.zeros(n_hyp, dtype=np.int64)
        bounds = np.zeros(n_hyp + 1, dtype=np.int64)
        pending = 0
        r = 0
        for op in ops:
            if op.kind == DELETION:
                pending += 1
                r += 1
                continue
            p = op.hyp_index
            if op.kind != INSERTION:
                r += 1
            errors[p] += pending + (op.kind != MATCH)
            pending = 0
            bounds[p + 1] = r
        if n_hyp:
            errors[n_hyp - 1] += pending
            bounds[n_hyp] = n_ref
        return cls(tuple(ops), n_hyp, n_ref, errors, bounds)


def normalize_token(token: str) -> str:
    return token.strip().lower()


def _encode(a: Iterable[str], b: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    ia = [vocab.setdefault(normalize_token(t), len(vocab)) for t in a]
    ib = [vocab.setdefault(normalize_token(t), len(vocab)) for t in b]
    return np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64)


def levenshtein_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Word-level edit distance without alignment."""
    ia, ib = _encode(a, b)
    return int(_rf_levenshtein.distance(ia.tolist(), ib.tolist()))


@numba.njit(cache=True)
def _banded_table(a, b, width):
    n, m = a.shape[0], b.shape[0]
    big = n + m + 1
    band = 2 * width + 1
    lo = np.empty(n + 1, dtype=np.int64)
    table = np.full((n + 1, band), big, dtype=np.int64)
    for i in range(n + 1):
        centre = (i * m) // n if n > 0 else 0
        lo[i] = max(0, centre - width)
    for j in range(min(m, lo[0] + band - 1) + 1):
        table[0, j - lo[0]] = j
    for i in range(1, n + 1):
        l_cur, l_prev = lo[i], lo[i - 1]
        for col in range(band):
            j = l_cur + col
            if j > m:
                break
            best = big
            if j == 0:
                best = i
            else:
                dc = j - 1 - l_prev
                if 0 <= dc < band:
                    best = table[i - 1, dc] + (0 if a[i - 1] == b[j - 1] else 1)
                if col > 0:
                    left = table[i, col - 1] + 1
                    if left < best:
                        best = left
            uc = j - l_prev
            if 0 <= uc < band:
                up = table[i - 1, uc] + 1
                if up < best:
                    best = up
            table[i, col] = best
    return table, lo


@numba.njit(cache=True)
def _cell(table, lo, band, big, i, j):
    c = j - lo[i]
    if c < 0 or c >= band:
        return big
    return table[i, c]


@numba.njit(cache=True)
def _backtrace(a, b, table, lo):
    # kind codes: 0 match, 1 substitution, 2 deletion, 3 insertion
    n, m = a.shape[0], b.shape[0]
    band = table.shape[1]
    big = n + m + 1
    kinds = np.empty(n + m, dtype=np.int64)
    hyp = np.empty(n + m, dtype=np.int64)
    ref = np.empty(n + m, dtype=np.int64)
    k = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = _cell(table, lo, band, big, i, j)
        if i > 0 and j > 0:
            diag = _cell(table, lo, band, big, i - 1, j - 1)
            if a[i - 1] == b[j - 1] and diag == here:
                kinds[k], hyp[k], ref[k] = 0, i - 1, j - 1
                k += 1
                i -= 1
                j -= 1
                continue
            if diag + 1 == here:
                kinds[k], hyp[k], ref[k] = 1, i - 1, j - 1
                k += 1
                i -= 1
                j -= 1
                continue
        if j > 0 and _cell(table, lo, band, big, i, j - 1) + 1 == here:
            kinds[k], hyp[k], ref[k] = 2, -1, j - 1
            k += 1
            j -= 1
            continue
        kinds[k], hyp[k], ref[k] = 3, i - 1, -1
        k += 1
        i -= 1
    return kinds[:k][::-1], hyp[:k][::-1], ref[:k][::-1]


def levenshtein(a: Sequence[str], b: Sequence[str]) -> tuple[int, Alignment]:
    """Word-level Levenshtein distance from hypothesis ``a`` to reference ``b``.

    Returns the distance together with an alignment realizing it. Among
    equal-cost alignments the backtrace prefers match, then substitution,
    then deletion, then insertion at every cell. Large inputs are aligned
    inside a diagonal band that is widened until its distance agrees with an
    unbanded distance computation.
    """
    ia, ib = _encode(a, b)
    n, m = len(ia), len(ib)
    full = max(n, m)
    if (n + 1) * (m + 1) <= _FULL_MATRIX_CELLS:
        width = full + 1
        target = None
    else:
        width = _INITIAL_BAND
        target = int(_rf_levenshtein.distance(ia.tolist(), ib.tolist()))
    while True:
        table, lo = _banded_table(ia, ib, width)
        dist = int(table[n, m - lo[n]])
        if target is None or dist == target or width > full:
            break
        width *= 2
    kinds, hyp, ref = _backtrace(ia, ib, table, lo)
    ops = [
        AlignOp(_KINDS[kd], None if h < 0 else int(h), None if r < 0 else int(r))
        for kd, h, r in zip(kinds.tolist(), hyp.tolist(), ref.tolist())
    ]
    return dist, Alignment.from_ops(ops, n, m)


def segment_errors(transcript: Transcript, alignment: Alignment | None, start: int, stop: int) -> int:
    """Number of edit operations attributed to hypothesis words ``[start, stop)``."""
    if transcript.reference is None:
        raise NoReferenceError("no reference available")
    if not 0 <= start <= stop <= len(transcript):
        raise ValueError(f"invalid span [{start}, {stop}) for {len(transcript)} words")
    if alignment is None:
        alignment = transcript.alignment
    return alignment.span_errors(start, stop)


def wer(hyp: Sequence[str], ref: Sequence[str]) -> float:
    if len(ref) == 0:
        raise ValueError("word error rate is undefined for an empty reference")
    return levenshtein_distance(hyp, ref) / len(ref)


def apply_corrections(tokens: Sequence[str], corrections: Iterable[tuple[int, int, Sequence[str]]]) -> list[str]:
    """Replace hypothesis spans ``[start, stop)`` with corrected token lists."""
    out: list[str] = []
    pos = 0
    for start, stop, fixed in sorted(corrections, key=lambda c: c[0]):
        if start < pos:
            raise ValueError(f"overlapping correction at {start}")
        out.extend(tokens[pos:start])
        out.extend(fixed)
        pos = stop
    out.extend(tokens[pos:])
    return out
