"""Budget-constrained segmentation.

A segmentation tiles a stretch of transcript into contiguous segments, each
either verified by the annotator or skipped. We want maximal predicted
utility subject to predicted cost within a budget. The constraint is moved
into the objective with a penalty ``lam`` (score = utility - lam * cost),
which a linear-time dynamic program maximizes exactly; ``lam`` is bracketed
and then bisected until the feasible and infeasible solutions are within a
factor ``1 + epsilon`` in utility.

All span tables are indexed ``[i, L - 1]`` for the span ``[i, i + L)``
relative to the table's offset into the transcript.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .corpus import Transcript
from .utility import UtilityModel

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.01
DEFAULT_MAX_LEN = 20
BRUTE_FORCE_MAX_WORDS = 16

_TOL = 1e-9


class Mode(str, enum.Enum):
    VERIFY = "verify"
    SKIP = "skip"


class BracketError(RuntimeError):
    """The penalty could not be bracketed; model outputs are pathological."""


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    mode: Mode
    predicted_cost_s: float = 0.0
    predicted_utility: float = 0.0

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"empty segment [{self.start}, {self.end})")
        if self.mode is Mode.SKIP and (self.predicted_cost_s or self.predicted_utility):
            raise ValueError("skip segments carry zero cost and utility")

    def __len__(self) -> int:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "mode": self.mode.value,
            "pred_cost": self.predicted_cost_s,
            "pred_util": self.predicted_utility,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Segment:
        return cls(int(d["start"]), int(d["end"]), Mode(d["mode"]), float(d["pred_cost"]), float(d["pred_util"]))


@dataclass(frozen=True)
class Segmentation:
    segments: tuple[Segment, ...]
    total_utility: float = 0.0
    total_cost_s: float = 0.0
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def of(cls, segments, **stats) -> Segmentation:
        segments = tuple(segments)
        for a, b in zip(segments, segments[1:]):
            if a.end != b.start:
                raise ValueError(f"segments do not tile: {a.end} != {b.start}")
        util = math.fsum(s.predicted_utility for s in segments)
        cost = math.fsum(s.predicted_cost_s for s in segments)
        return cls(segments, util, cost, stats)

    @property
    def verify_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.mode is Mode.VERIFY]

    @property
    def boundaries(self) -> tuple[int, ...]:
        if not self.segments:
            return ()
        return tuple(s.start for s in self.segments) + (self.segments[-1].end,)

    def to_dict(self) -> dict:
        return {
            "segments": [s.to_dict() for s in self.segments],
            "total_utility": self.total_utility,
            "total_cost": self.total_cost_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Segmentation:
        return cls.of(Segment.from_dict(s) for s in d["segments"])


@dataclass(frozen=True)
class PenaltyState:
    lambda_lower: float
    lambda_upper: float
    lower: Segmentation
    upper: Segmentation
    budget: float
    epsilon: float = DEFAULT_EPSILON
    scalings: int = 0


@dataclass(frozen=True, eq=False)
class SpanTable:
    """Predicted utility and Verify cost of every candidate span.

    Values are computed once and reused by every DP pass of a search.
    """

    util: np.ndarray
    cost: np.ndarray
    offset: int = 0

    @property
    def n_words(self) -> int:
        return self.util.shape[0]

    @property
    def max_len(self) -> int:
        return self.util.shape[1]

    @classmethod
    def from_arrays(cls, util, cost, offset: int = 0) -> SpanTable:
        util = np.ascontiguousarray(util, dtype=float)
        cost = np.ascontiguousarray(cost, dtype=float)
        if util.shape != cost.shape or util.ndim != 2:
            raise ValueError("util and cost tables must share a 2-d shape")
        n, r = util.shape
        for length in range(1, r + 1):
            valid = slice(0, max(0, n - length + 1))
            if np.any(util[valid, length - 1] < 0) or np.any(cost[valid, length - 1] < 0):
                raise ValueError("utilities and costs must be non-negative")
            if np.any(~np.isfinite(util[valid, length - 1])) or np.any(~np.isfinite(cost[valid, length - 1])):
                raise ValueError("utilities and costs must be finite")
        return cls(util, cost, offset)

    @classmethod
    def from_word_utilities(cls, word_util, max_len: int, cost_fn=lambda n: 2.0 + n) -> SpanTable:
        """Additive utilities with a length-only cost, used by tests and benchmarks."""
        word_util = np.asarray(word_util, dtype=float)
        n = len(word_util)
        csum = np.concatenate(([0.0], np.cumsum(word_util)))
        util = np.full((n, max_len), np.nan)
        cost = np.full((n, max_len), np.nan)
        for length in range(1, min(max_len, n) + 1):
            util[: n - length + 1, length - 1] = csum[length:] - csum[:-length]
            cost[: n - length + 1, length - 1] = cost_fn(length)
        return cls.from_arrays(util, cost)

    @classmethod
    def from_models(
        cls,
        transcript: Transcript,
        cost_model,
        utility_model: UtilityModel,
        max_len: int = DEFAULT_MAX_LEN,
        start: int = 0,
        stop: int | None = None,
    ) -> SpanTable:
        stop = len(transcript) if stop is None else stop
        conf = transcript.confidences[start:stop]
        util = utility_model.span_table(conf, max_len)
        lengths, X = span_features(transcript, max_len, start, stop)
        cost = np.full(util.shape, np.nan)
        if len(X):
            times = cost_model.predict_time(X)
            rows = np.concatenate([np.arange(stop - start - L + 1) for L in lengths])
            cols = np.repeat(lengths - 1, [stop - start - L + 1 for L in lengths])
            cost[rows, cols] = times
        return cls.from_arrays(util, cost, start)


def span_features(transcript: Transcript, max_len: int, start: int = 0, stop: int | None = None):
    """Cost-model features for every span in ``[start, stop)``.

    Returns the span lengths covered and a ``(n_spans, 3)`` matrix ordered
    by length, then start position.
    """
    stop = len(transcript) if stop is None else stop
    n = stop - start
    conf = transcript.confidences[start:stop]
    starts = transcript.starts[start:stop]
    ends = transcript.ends[start:stop]
    csum = np.concatenate(([0.0], np.cumsum(conf)))
    lengths = np.arange(1, min(max_len, n) + 1)
    blocks = []
    for L in lengths:
        m = n - L + 1
        blocks.append(
            np.column_stack(
                [
                    np.full(m, float(L)),
                    ends[L - 1 :] - starts[:m],
                    np.clip((csum[L:] - csum[:-L]) / L, 0.0, 1.0),
                ]
            )
        )
    X = np.concatenate(blocks) if blocks else np.empty((0, 3))
    return lengths, X


@numba.njit(cache=True)
def _better(s, c, k, bs, bc, bk, tol):
    scale = tol * (1.0 + abs(bs)) if bs > -np.inf else 0.0
    if s > bs + scale:
        return True
    if s < bs - scale:
        return False
    ctol = tol * (1.0 + abs(bc))
    if c < bc - ctol:
        return True
    if c > bc + ctol:
        return False
    return k < bk


@numba.njit(cache=True)
def _dp_kernel(util, cost, lam, tol):
    # runs right to left so that, on ties, the first segment is the longest
    n, r = util.shape
    score = np.zeros(n + 1)
    tcost = np.zeros(n + 1)
    nseg = np.zeros(n + 1, dtype=np.int64)
    nxt = np.zeros(n + 1, dtype=np.int64)
    mode = np.zeros(n + 1, dtype=np.int8)
    for i in range(n - 1, -1, -1):
        bs = -np.inf
        bc = np.inf
        bk = n + 2
        bj = -1
        bm = 0
        for L in range(min(r, n - i), 0, -1):
            j = i + L
            if _better(score[j], tcost[j], nseg[j] + 1, bs, bc, bk, tol):
                bs, bc, bk, bj, bm = score[j], tcost[j], nseg[j] + 1, j, 0
            c = cost[i, L - 1]
            s = score[j] + util[i, L - 1] - lam * c
            if _better(s, tcost[j] + c, nseg[j] + 1, bs, bc, bk, tol):
                bs, bc, bk, bj, bm = s, tcost[j] + c, nseg[j] + 1, j, 1
        score[i] = bs
        tcost[i] = bc
        nseg[i] = bk
        nxt[i] = bj
        mode[i] = bm
    starts = np.empty(n, dtype=np.int64)
    modes = np.empty(n, dtype=np.int8)
    k = 0
    i = 0
    tu = 0.0
    tc = 0.0
    while i < n:
        j = nxt[i]
        starts[k] = i
        modes[k] = mode[i]
        if mode[i] == 1:
            tu += util[i, j - i - 1]
            tc += cost[i, j - i - 1]
        k += 1
        i = j
    return starts[:k].copy(), modes[:k].copy(), tu, tc, score[0]


@numba.njit(cache=True)
def _suffix_scores(util, cost, lam):
    n, r = util.shape
    best = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        b = best[i + 1]
        for L in range(1, min(r, n - i) + 1):
            s = util[i, L - 1] - lam * cost[i, L - 1] + best[i + L]
            if s > b:
                b = s
        best[i] = b
    return best


@dataclass(frozen=True)
class _Path:
    """Lightweight DP result; materialized into a Segmentation on demand."""

    starts: np.ndarray
    modes: np.ndarray
    utility: float
    cost: float
    score: float


def _run_dp(table: SpanTable, lam: float) -> _Path:
    if table.n_words == 0:
        return _Path(np.empty(0, np.int64), np.empty(0, np.int8), 0.0, 0.0, 0.0)
    starts, modes, tu, tc, sc = _dp_kernel(table.util, table.cost, float(lam), _TOL)
    return _Path(starts, modes, float(tu), float(tc), float(sc))


def _materialize(table: SpanTable, starts, modes, **stats) -> Segmentation:
    n = table.n_words
    off = table.offset
    ends = list(starts[1:]) + [n]
    segments: list[Segment] = []
    for s, e, m in zip(starts, ends, modes):
        s, e = int(s), int(e)
        if m == 1:
            segments.append(
                Segment(s + off, e + off, Mode.VERIFY, float(table.cost[s, e - s - 1]), float(table.util[s, e - s - 1]))
            )
        elif segments and segments[-1].mode is Mode.SKIP:
            segments[-1] = Segment(segments[-1].start, e + off, Mode.SKIP)
        else:
            segments.append(Segment(s + off, e + off, Mode.SKIP))
    return Segmentation.of(segments, **stats)


def penalized_score(table: SpanTable, start: int, length: int, mode: Mode | str, lam: float) -> float:
    """Utility minus ``lam`` times cost for one span; zero for Skip."""
    if Mode(mode) is Mode.SKIP:
        return 0.0
    return float(table.util[start, length - 1] - lam * table.cost[start, length - 1])


def segment_dp(table: SpanTable, lam: float) -> Segmentation:
    """Segmentation maximizing total penalized score at penalty ``lam``.

    Ties prefer lower cost, then fewer segments, then the longest leading
    segment, which makes the maximizer Pareto-optimal in (cost, utility).
    """
    if lam < 0:
        raise ValueError("penalty must be non-negative")
    path = _run_dp(table, lam)
    return _materialize(table, path.starts, path.modes, lam=lam, score=path.score)


def _ratio_exceeds(upper: _Path, lower: _Path, epsilon: float) -> bool:
    if lower.utility <= 0:
        return upper.utility > 0
    return upper.utility / lower.utility > 1.0 + epsilon


def _feasible(path: _Path, budget: float) -> bool:
    return path.cost <= budget * (1.0 + _TOL) + _TOL


def _bracket(table: SpanTable, budget: float, lam0: float, factor: float, max_scalings: int):
    lam = lam0
    path = _run_dp(table, lam)
    if _feasible(path, budget):
        lo_lam, lo = lam, path
        for k in range(1, max_scalings + 1):
            lam /= factor
            path = _run_dp(table, lam)
            if not _feasible(path, budget):
                return lo_lam, lo, lam, path, k
            lo_lam, lo = lam, path
    else:
        up_lam, up = lam, path
        for k in range(1, max_scalings + 1):
            lam *= factor
            path = _run_dp(table, lam)
            if _feasible(path, budget):
                return lam, path, up_lam, up, k
            up_lam, up = lam, path
    raise BracketError(f"no bracketing penalty within {max_scalings} scalings of {lam0}")


def bracket_lambda(
    table: SpanTable,
    budget: float,
    lam0: float = 1.0,
    epsilon: float = DEFAULT_EPSILON,
    factor: float = 10.0,
    max_scalings: int = 50,
) -> PenaltyState:
    """Find penalties giving a feasible (lower) and an infeasible (upper) solution.

    Larger penalties make cost more expensive, so the feasible side always
    carries the larger penalty.
    """
    lam_l, lo, lam_u, up, k = _bracket(table, budget, lam0, factor, max_scalings)
    return PenaltyState(
        lam_l,
        lam_u,
        _materialize(table, lo.starts, lo.modes, lam=lam_l),
        _materialize(table, up.starts, up.modes, lam=lam_u),
        budget,
        epsilon,
        k,
    )


def optimize_segmentation(
    table: SpanTable,
    budget: float,
    epsilon: float = DEFAULT_EPSILON,
    lam0: float = 1.0,
    max_iterations: int = 60,
    max_scalings: int = 50,
    exact_fallback: bool = True,
    exact_max_words: int = 100,
    max_labels: int = 50_000,
) -> Segmentation:
    """Feasible segmentation within a factor ``1 + epsilon`` of the best utility.

    The returned segmentation always satisfies the budget. Bisection on the
    penalty can stall on a gap in the convex hull of achievable
    (cost, utility) pairs. Up to ``exact_max_words`` words the gap is closed
    exactly by a label search with Lagrangian bounds; longer inputs splice
    the two bracketing solutions at a shared boundary instead, and the
    ``1 + epsilon`` guarantee then holds only when bisection converged.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = table.n_words
    if n == 0:
        return Segmentation.of((), iterations=0, method="empty")

    best = _run_dp(table, 0.0)
    if _feasible(best, budget):
        return _materialize(table, best.starts, best.modes, iterations=0, method="unconstrained", lam=0.0)

    if not _any_useful_span(table, budget):
        return Segmentation.of([Segment(table.offset, table.offset + n, Mode.SKIP)], iterations=0, method="nothing-affordable")

    lam_l, lo, lam_u, up, scalings = _bracket(table, budget, lam0, 10.0, max_scalings)
    iterations = 0
    while _ratio_exceeds(up, lo, epsilon) and iterations < max_iterations:
        if abs(lam_l - lam_u) <= 1e-12 * max(lam_l, lam_u):
            break
        lam = 0.5 * (lam_u + lam_l)
        path = _run_dp(table, lam)
        iterations += 1
        if _feasible(path, budget):
            lam_l, lo = lam, path
        else:
            lam_u, up = lam, path

    stats = dict(iterations=iterations, scalings=scalings, lam=lam_l, upper_utility=up.utility)
    if not _ratio_exceeds(up, lo, epsilon):
        return _materialize(table, lo.starts, lo.modes, method="bisection", **stats)
    if exact_fallback and n <= exact_max_words:
        found = _close_gap(table, budget, lo, (lam_l, lam_u), max_labels)
        if found is not None:
            starts, modes = found
            return _materialize(table, starts, modes, method="gap-search", **stats)
        log.info("gap search exceeded %d labels; splicing instead", max_labels)
    starts, modes = _splice(table, lo, up, budget)
    return _materialize(table, starts, modes, method="splice", **stats)


def _prefix_totals(table: SpanTable, path: _Path) -> dict[int, tuple[float, float]]:
    """Utility and cost accumulated before each boundary of a path."""
    out = {0: (0.0, 0.0)}
    ends = list(path.starts[1:]) + [table.n_words]
    u = c = 0.0
    for s, e, m in zip(path.starts, ends, path.modes):
        if m == 1:
            u += table.util[s, e - s - 1]
            c += table.cost[s, e - s - 1]
        out[int(e)] = (u, c)
    return out


def _splice(table: SpanTable, lo: _Path, up: _Path, budget: float):
    """Best feasible join of one path's prefix with the other's suffix."""
    pl, pu = _prefix_totals(table, lo), _prefix_totals(table, up)
    best = (lo.utility, -1, None)
    for p in sorted(set(pl) & set(pu)):
        for head, tail, ph, pt, total in ((up, lo, pu, pl, lo), (lo, up, pl, pu, up)):
            u = ph[p][0] + total.utility - pt[p][0]
            c = ph[p][1] + total.cost - pt[p][1]
            if c <= budget * (1.0 + _TOL) + _TOL and u > best[0] + _TOL * (1.0 + best[0]):
                best = (u, p, (head, tail))
    if best[2] is None:
        return lo.starts, lo.modes
    p, (head, tail) = best[1], best[2]
    keep_h, keep_t = head.starts < p, tail.starts >= p
    return (
        np.concatenate([head.starts[keep_h], tail.starts[keep_t]]),
        np.concatenate([head.modes[keep_h], tail.modes[keep_t]]),
    )


def _any_useful_span(table: SpanTable, budget: float) -> bool:
    util, cost = table.util, table.cost
    with np.errstate(invalid="ignore"):
        ok = (util > 0) & (cost <= budget * (1.0 + _TOL) + _TOL)
    return bool(np.any(ok))


def _close_gap(table: SpanTable, budget: float, incumbent: _Path, lams, max_labels: int):
    """Exact constrained optimum by label search over word positions.

    Labels are partial solutions (cost, utility) covering a prefix. They are
    pruned when over budget, dominated at the same position, or when a
    Lagrangian bound on the best completion cannot beat the incumbent.
    """
    n, r = table.util.shape
    util, cost = table.util, table.cost
    bounds = [(lam, _suffix_scores(util, cost, lam)) for lam in lams]
    limit = budget * (1.0 + _TOL) + _TOL

    def bound(pos: int, c: float) -> float:
        return min(b[pos] + lam * max(budget - c, 0.0) for lam, b in bounds)

    target = incumbent.utility
    # label: (cost, util, parent position, parent label index, verify length or 0 for skip)
    labels: list[list[tuple]] = [[] for _ in range(n + 1)]
    labels[0].append((0.0, 0.0, -1, -1, 0))
    processed = 0
    for p in range(n):
        front = _pareto(labels[p])
        labels[p] = front
        for idx, (c, u, *_rest) in enumerate(front):
            processed += 1
            if processed > max_labels:
                return None
            labels[p + 1].append((c, u, p, idx, 0))
            for L in range(1, min(r, n - p) + 1):
                c2 = c + cost[p, L - 1]
                if c2 > limit:
                    continue
                u2 = u + util[p, L - 1]
                if u2 + bound(p + L, c2) <= target + _TOL * (1.0 + target):
                    continue
                labels[p + L].append((c2, u2, p, idx, L))
    final = _pareto(labels[n])
    labels[n] = final
    winner = None
    for k, (_c, u, *_rest) in enumerate(final):
        if u > target + _TOL * (1.0 + target) and (winner is None or u > final[winner][1]):
            winner = k
    if winner is None:
        return incumbent.starts, incumbent.modes
    # walk parents back to the start
    starts, modes = [], []
    pos, k = n, winner
    while pos > 0:
        _c, _u, ppos, pidx, L = labels[pos][k]
        starts.append(ppos)
        modes.append(1 if L else 0)
        pos, k = ppos, pidx
    return np.array(starts[::-1], dtype=np.int64), np.array(modes[::-1], dtype=np.int8)


def _pareto(items: list[tuple]) -> list[tuple]:
    items = sorted(items, key=lambda t: (t[0], -t[1]))
    out: list[tuple] = []
    best = -math.inf
    for it in items:
        if it[1] > best + _TOL * (1.0 + abs(best) if best > -math.inf else 1.0):
            out.append(it)
            best = it[1]
    return out


def enumerate_outcomes(table: SpanTable):
    """Every distinct choice of disjoint Verify spans.

    Skipped words carry no cost or utility, so a choice of Verify spans
    determines the outcome of all tilings that agree on them. Returns
    ``(costs, utils, verify_spans)``.
    """
    n, r = table.util.shape
    if n > BRUTE_FORCE_MAX_WORDS:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_MAX_WORDS} words, got {n}")
    # states[p]: arrays over all selections confined to [0, p)
    costs = [np.zeros(1)]
    utils = [np.zeros(1)]
    spans: list[list[tuple[tuple[int, int], ...]]] = [[()]]
    for p in range(1, n + 1):
        c_parts = [costs[p - 1]]
        u_parts = [utils[p - 1]]
        s_parts = list(spans[p - 1])
        for L in range(1, min(r, p) + 1):
            i = p - L
            c_parts.append(costs[i] + table.cost[i, L - 1])
            u_parts.append(utils[i] + table.util[i, L - 1])
            s_parts.extend(sp + ((i, p),) for sp in spans[i])
        costs.append(np.concatenate(c_parts))
        utils.append(np.concatenate(u_parts))
        spans.append(s_parts)
    return costs[n], utils[n], spans[n]


def _from_spans(table: SpanTable, verify_spans) -> Segmentation:
    n = table.n_words
    starts, modes = [], []
    pos = 0
    for a, b in verify_spans:
        if a > pos:
            starts.append(pos)
            modes.append(0)
        starts.append(a)
        modes.append(1)
        pos = b
    if pos < n:
        starts.append(pos)
        modes.append(0)
    return _materialize(table, np.array(starts, dtype=np.int64), np.array(modes, dtype=np.int8), method="brute-force")


def brute_force_segmentation(table: SpanTable, budget: float) -> Segmentation:
    """Exact constrained optimum by exhaustive enumeration (small inputs only).

    Ties go to the lowest cost, then to the lexicographically smallest
    boundary sequence.
    """
    costs, utils, spans = enumerate_outcomes(table)
    feasible = costs <= budget * (1.0 + _TOL) + _TOL
    if table.n_words == 0:
        return Segmentation.of(())
    u_best = utils[feasible].max()
    tied = np.flatnonzero(feasible & (utils >= u_best - _TOL * (1.0 + u_best)))
    c_best = costs[tied].min()
    tied = tied[costs[tied] <= c_best + _TOL * (1.0 + c_best)]
    candidates = [_from_spans(table, spans[k]) for k in tied]
    return min(candidates, key=lambda s: s.boundaries)


def segment_transcript(
    transcript: Transcript,
    cost_model,
    utility_model: UtilityModel,
    budget: float,
    start: int = 0,
    stop: int | None = None,
    epsilon: float = DEFAULT_EPSILON,
    max_len: int = DEFAULT_MAX_LEN,
) -> Segmentation:
    """Build the span table for ``[start, stop)`` and optimize it."""
    table = SpanTable.from_models(transcript, cost_model, utility_model, max_len, start, stop)
    return optimize_segmentation(table, budget, epsilon)
