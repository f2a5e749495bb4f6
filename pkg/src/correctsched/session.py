"""Annotation sessions: who corrects what, in which order, against a clock.

Dynamic policies alternate between supervising a batch of segments,
retraining the cost model on the observed times, and re-segmenting the
untouched remainder of the transcript under the budget actually left.
Static and fixed-order baselines plan once.

Simulated time only advances while segments are supervised; planning is free.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .corpus import Alignment, Transcript
from .costmodel import CostConfig, CostModel, CostObservation, TimeModel, segment_features
from .segmenter import DEFAULT_EPSILON, DEFAULT_MAX_LEN, Mode, Segment, Segmentation, SpanTable, optimize_segmentation
from .utility import UtilityModel, UtilityMode

log = logging.getLogger(__name__)

DEFAULT_BATCH_SECONDS = 150.0


class PolicyKind(str, enum.Enum):
    DYNAMIC_PROPOSED = "dynamic_proposed"
    DYNAMIC_ORACLE_CM = "dynamic_oracle_cm"
    DYNAMIC_FIXED_CM = "dynamic_fixed_cm"
    DYNAMIC_NAIVE_PRIOR = "dynamic_naive_prior"
    STATIC = "static"
    RANKED_CONF = "ranked_conf"
    LINEAR = "linear"


_DYNAMIC = {
    PolicyKind.DYNAMIC_PROPOSED,
    PolicyKind.DYNAMIC_ORACLE_CM,
    PolicyKind.DYNAMIC_FIXED_CM,
    PolicyKind.DYNAMIC_NAIVE_PRIOR,
}
_UPDATING = {PolicyKind.DYNAMIC_PROPOSED, PolicyKind.DYNAMIC_NAIVE_PRIOR}
_ENROLLING = {PolicyKind.DYNAMIC_FIXED_CM, PolicyKind.STATIC}
_FIXED_GRID = {PolicyKind.RANKED_CONF, PolicyKind.LINEAR}


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    batch_seconds: float = DEFAULT_BATCH_SECONDS
    enrollment_seconds: float = 0.0
    fixed_segment_len: int = 10
    epsilon: float = DEFAULT_EPSILON
    max_segment_len: int = DEFAULT_MAX_LEN
    utility_mode: UtilityMode = UtilityMode.EXPECTED_ERRORS

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "utility_mode", UtilityMode(self.utility_mode))
        if self.dynamic and not self.batch_seconds > 0:
            raise ValueError("dynamic policies need a positive batch size")
        if self.fixed_segment_len < 1:
            raise ValueError("fixed_segment_len must be >= 1")
        if self.enrollment_seconds < 0:
            raise ValueError("enrollment_seconds must be >= 0")

    @property
    def dynamic(self) -> bool:
        return self.kind in _DYNAMIC

    @property
    def updates_cost_model(self) -> bool:
        return self.kind in _UPDATING

    @property
    def enrolls(self) -> bool:
        return self.kind in _ENROLLING and self.enrollment_seconds > 0

    @property
    def cost_prior(self) -> str:
        return "naive" if self.kind is PolicyKind.DYNAMIC_NAIVE_PRIOR else "overhead"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["utility_mode"] = self.utility_mode.value
        return d


class Transcriber(Protocol):
    """Supplies the time taken and the corrected text for one segment."""

    def supervise(self, transcript: Transcript, start: int, stop: int) -> tuple[float, Sequence[str]]: ...


@dataclass(frozen=True)
class Event:
    start: int
    end: int
    predicted_cost_s: float | None
    observed_time_s: float
    errors_corrected: int | None
    clock_after_s: float
    batch: int

    @property
    def clock_before_s(self) -> float:
        return self.clock_after_s - self.observed_time_s


@dataclass(frozen=True)
class Resegmentation:
    clock_s: float
    position: int
    remaining_budget_s: float
    segment_count: int
    verify_count: int
    predicted_cost_s: float
    predicted_utility: float


@dataclass
class SessionTrace:
    policy: Policy
    budget_s: float
    n_words: int
    events: list[Event] = field(default_factory=list)
    enrollment: list[Event] = field(default_factory=list)
    resegmentations: list[Resegmentation] = field(default_factory=list)
    corrections: list[tuple[int, int, list[str]]] = field(default_factory=list)
    final_position: int = 0
    spent_s: float = 0.0
    unfinished_segments: int = 0
    temporal_order_violated: bool = False
    stop_reason: str = ""
    error: str | None = None

    @property
    def errors_corrected(self) -> int:
        return sum(e.errors_corrected or 0 for e in self.events)

    @property
    def supervised_seconds(self) -> float:
        return math.fsum(e.observed_time_s for e in self.events)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "budget_s": self.budget_s,
            "n_words": self.n_words,
            "spent_s": self.spent_s,
            "final_position": self.final_position,
            "unfinished_segments": self.unfinished_segments,
            "temporal_order_violated": self.temporal_order_violated,
            "stop_reason": self.stop_reason,
            "error": self.error,
            "errors_corrected": self.errors_corrected,
            "events": [asdict(e) for e in self.events],
            "enrollment": [asdict(e) for e in self.enrollment],
            "resegmentations": [asdict(r) for r in self.resegmentations],
        }

    CSV_FIELDS = ("position", "end", "predicted_cost", "observed_time", "errors_corrected", "clock", "batch")

    def csv_rows(self) -> list[tuple]:
        return [
            (e.start, e.end, e.predicted_cost_s, e.observed_time_s, e.errors_corrected, e.clock_after_s, e.batch)
            for e in self.events
        ]


class _Clock:
    """Session bookkeeping shared by all policies."""

    def __init__(self, transcript, trace, transcriber, alignment):
        self.transcript = transcript
        self.trace = trace
        self.transcriber = transcriber
        self.alignment = alignment
        self.now = 0.0

    def supervise(self, start: int, stop: int, predicted: float | None, batch: int, enrollment: bool = False):
        taken, tokens = self.transcriber.supervise(self.transcript, start, stop)
        taken = float(taken)
        if not taken > 0:
            raise ValueError(f"transcriber reported non-positive time {taken}")
        self.now += taken
        errors = None
        if not enrollment and self.alignment is not None:
            errors = self.alignment.span_errors(start, stop)
        event = Event(start, stop, predicted, taken, errors, self.now, batch)
        if enrollment:
            self.trace.enrollment.append(event)
        else:
            self.trace.events.append(event)
            self.trace.corrections.append((start, stop, list(tokens)))
        self.trace.spent_s = self.now
        return CostObservation(segment_features(self.transcript, start, stop), taken)


def run_session(
    transcript: Transcript,
    policy: Policy,
    budget_s: float,
    transcriber: Transcriber,
    *,
    cost_model: TimeModel | None = None,
    cost_config: CostConfig | None = None,
    rng: np.random.Generator | int | None = 0,
    alignment: Alignment | None = None,
) -> SessionTrace:
    """Simulate one annotation session and return its trace.

    ``cost_model`` overrides the initial cost model (required for
    ``dynamic_oracle_cm``). The alignment, when available, is used only to
    report true errors per supervised segment. A transcriber failure ends the
    session; the trace up to that point is returned with ``error`` set.
    """
    if budget_s < 0:
        raise ValueError("budget must be non-negative")
    rng = np.random.default_rng(rng)
    if alignment is None and transcript.reference is not None:
        alignment = transcript.alignment
    trace = SessionTrace(policy, float(budget_s), len(transcript))
    clock = _Clock(transcript, trace, transcriber, alignment)
    utility_model = UtilityModel(policy.utility_mode)

    if policy.kind is PolicyKind.DYNAMIC_ORACLE_CM and cost_model is None:
        raise ValueError("dynamic_oracle_cm needs the oracle's time model")
    if cost_model is None:
        config = cost_config or CostConfig()
        if config.prior != policy.cost_prior and isinstance(config.prior, str):
            config = CostConfig(policy.cost_prior, config.window, config.signal_var, config.noise_var, config.lengthscale)
        cost_model = CostModel.fit((), config)

    try:
        if budget_s <= 0 or len(transcript) == 0:
            trace.stop_reason = "no budget" if budget_s <= 0 else "empty transcript"
        elif policy.kind in _FIXED_GRID:
            _run_fixed_grid(clock, policy, budget_s, utility_model)
        else:
            if policy.enrolls:
                obs = _enroll(clock, policy, rng)
                cost_model = CostModel.fit(obs, getattr(cost_model, "config", None))
            if policy.dynamic:
                _run_dynamic(clock, policy, budget_s, cost_model, utility_model)
            else:
                _run_static(clock, policy, budget_s, cost_model, utility_model)
    except Exception as exc:  # transcriber failures end the session, not the caller
        log.warning("session aborted: %r", exc)
        trace.error = repr(exc)
        trace.stop_reason = "error"
    trace.spent_s = clock.now
    return trace


def _plan(clock: _Clock, policy: Policy, start: int, budget: float, cost_model, utility_model) -> Segmentation:
    table = SpanTable.from_models(clock.transcript, cost_model, utility_model, policy.max_segment_len, start)
    plan = optimize_segmentation(table, max(budget, 0.0), policy.epsilon)
    clock.trace.resegmentations.append(
        Resegmentation(
            clock.now,
            start,
            budget,
            len(plan.segments),
            len(plan.verify_segments),
            plan.total_cost_s,
            plan.total_utility,
        )
    )
    return plan


def supervise_batch(clock: _Clock, plan: Sequence[Segment], position: int, allotment: float, batch: int):
    """Supervise planned Verify segments from ``position`` for ``allotment`` seconds.

    A segment started before the allotment runs out is always finished.
    Returns the new observations, the position after the last supervised
    segment and whether the plan has no Verify segments left.
    """
    used = 0.0
    observations = []
    todo = [s for s in plan if s.mode is Mode.VERIFY and s.start >= position]
    for seg in todo:
        if used >= allotment:
            return observations, position, False
        before = clock.now
        observations.append(clock.supervise(seg.start, seg.end, seg.predicted_cost_s, batch))
        used += clock.now - before
        position = seg.end
    return observations, position, True


def _run_dynamic(clock: _Clock, policy: Policy, budget: float, cost_model, utility_model) -> None:
    trace = clock.trace
    n = len(clock.transcript)
    position = 0
    remaining = budget - clock.now
    plan = _plan(clock, policy, position, remaining, cost_model, utility_model) if remaining > 0 else None
    batch = 0
    while remaining > 0 and position < n:
        if not plan.verify_segments:
            trace.stop_reason = "nothing worth verifying"
            break
        observations, position, _ = supervise_batch(
            clock, plan.segments, position, min(policy.batch_seconds, remaining), batch
        )
        batch += 1
        remaining = budget - clock.now
        if policy.updates_cost_model:
            cost_model = cost_model.update(observations)
        if remaining <= 0 or position >= n:
            break
        plan = _plan(clock, policy, position, remaining, cost_model, utility_model)
    if not trace.stop_reason:
        trace.stop_reason = "budget exhausted" if remaining <= 0 else "end of transcript"
    trace.final_position = position
    if plan is not None:
        trace.unfinished_segments = sum(1 for s in plan.verify_segments if s.start >= position)


def _run_static(clock: _Clock, policy: Policy, budget: float, cost_model, utility_model) -> None:
    trace = clock.trace
    remaining = budget - clock.now
    if remaining <= 0:
        trace.stop_reason = "budget spent on enrollment"
        return
    plan = _plan(clock, policy, 0, remaining, cost_model, utility_model)
    position = 0
    todo = plan.verify_segments
    done = 0
    for seg in todo:
        if clock.now >= budget:
            break
        clock.supervise(seg.start, seg.end, seg.predicted_cost_s, 0)
        position = seg.end
        done += 1
    trace.final_position = position
    trace.unfinished_segments = len(todo) - done
    trace.stop_reason = "budget exhausted" if trace.unfinished_segments else "plan completed"


def fixed_segments(n_words: int, length: int) -> list[tuple[int, int]]:
    return [(s, min(s + length, n_words)) for s in range(0, n_words, length)]


def _run_fixed_grid(clock: _Clock, policy: Policy, budget: float, utility_model: UtilityModel) -> None:
    trace = clock.trace
    spans = fixed_segments(len(clock.transcript), policy.fixed_segment_len)
    if policy.kind is PolicyKind.RANKED_CONF:
        conf = clock.transcript.confidences
        scored = [(-utility_model.predict(conf[a:b]), a, b) for a, b in spans]
        spans = [(a, b) for _u, a, b in sorted(scored)]
    done = 0
    last = -1
    for a, b in spans:
        if clock.now >= budget:
            break
        clock.supervise(a, b, None, 0)
        if a < last:
            trace.temporal_order_violated = True
        last = a
        done += 1
    trace.final_position = max((e.end for e in trace.events), default=0)
    trace.unfinished_segments = len(spans) - done
    trace.stop_reason = "budget exhausted" if done < len(spans) else "end of transcript"


def enrollment_spans(transcript: Transcript, rng: np.random.Generator, max_len: int, n_length_bins: int = 4, n_conf_bins: int = 3):
    """Endless stream of random spans balanced over length and confidence strata."""
    n = len(transcript)
    max_len = min(max_len, n)
    pool = 4000
    lengths = rng.integers(1, max_len + 1, size=pool)
    starts = (rng.random(pool) * (n - lengths + 1)).astype(int)
    csum = np.concatenate(([0.0], np.cumsum(transcript.confidences)))
    mean_conf = (csum[starts + lengths] - csum[starts]) / lengths
    len_bin = np.minimum((lengths - 1) * n_length_bins // max_len, n_length_bins - 1)
    edges = np.quantile(mean_conf, np.linspace(0, 1, n_conf_bins + 1)[1:-1])
    conf_bin = np.searchsorted(edges, mean_conf, side="right")
    strata: dict[tuple[int, int], list[int]] = {}
    for k in range(pool):
        strata.setdefault((int(len_bin[k]), int(conf_bin[k])), []).append(k)
    keys = sorted(strata)
    while True:
        for key in rng.permutation(len(keys)):
            members = strata[keys[key]]
            k = members[int(rng.integers(len(members)))]
            yield int(starts[k]), int(starts[k] + lengths[k])


def _enroll(clock: _Clock, policy: Policy, rng: np.random.Generator) -> list[CostObservation]:
    """Spend the enrollment allowance timing random segments; corrections are discarded."""
    observations = []
    spans = enrollment_spans(clock.transcript, rng, policy.max_segment_len)
    while clock.now < policy.enrollment_seconds:
        a, b = next(spans)
        observations.append(clock.supervise(a, b, None, -1, enrollment=True))
    return observations
