"""Multi-run policy comparison on a synthetic corpus with an oracle transcriber."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from ..corpus import apply_corrections, levenshtein, levenshtein_distance
from ..costmodel import CostConfig
from ..session import Policy, PolicyKind, SessionTrace, run_session
from .oracle import LogLinearTime, OracleTranscriber, fit_gp_oracle
from .synth import SynthCorpusConfig, concat_talks, synth_talks

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "loglinear"  # or "gp"
    intercept: float = LogLinearTime.intercept
    per_word: float = LogLinearTime.per_word
    per_second: float = LogLinearTime.per_second
    per_doubt: float = LogLinearTime.per_doubt
    noise_var: float = 0.01
    gp_segments: int = 200

    def __post_init__(self) -> None:
        if self.kind not in ("loglinear", "gp"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.noise_var < 0:
            raise ValueError("oracle noise variance must be >= 0")

    @property
    def time_model(self) -> LogLinearTime:
        return LogLinearTime(self.intercept, self.per_word, self.per_second, self.per_doubt)


@dataclass(frozen=True)
class Setting:
    """A labelled policy, optionally with its own oracle noise level."""

    label: str
    policy: Policy
    noise_var: float | None = None

    def to_dict(self) -> dict:
        return {"label": self.label, "policy": self.policy.to_dict(), "noise_var": self.noise_var}

    @classmethod
    def from_dict(cls, d: dict) -> Setting:
        p = dict(d["policy"])
        p["kind"] = PolicyKind(p["kind"])
        return cls(d["label"], Policy(**p), d.get("noise_var"))


def replication_settings(batch_sizes=(150, 300, 600, 1200, 2400)) -> tuple[Setting, ...]:
    """The policy grid behind the headline comparison."""
    out = [Setting(f"dynamic_proposed_B{b:g}", Policy(PolicyKind.DYNAMIC_PROPOSED, batch_seconds=b)) for b in batch_sizes]
    lo, hi = min(batch_sizes), max(batch_sizes)
    out += [
        Setting(f"dynamic_oracle_cm_B{lo:g}", Policy(PolicyKind.DYNAMIC_ORACLE_CM, batch_seconds=lo)),
        Setting(f"dynamic_naive_prior_B{lo:g}", Policy(PolicyKind.DYNAMIC_NAIVE_PRIOR, batch_seconds=lo)),
        Setting(f"dynamic_naive_prior_B{hi:g}", Policy(PolicyKind.DYNAMIC_NAIVE_PRIOR, batch_seconds=hi)),
        Setting("dynamic_fixed_cm_E600", Policy(PolicyKind.DYNAMIC_FIXED_CM, batch_seconds=lo, enrollment_seconds=600)),
        Setting("static_E0", Policy(PolicyKind.STATIC)),
        Setting("static_E600", Policy(PolicyKind.STATIC, enrollment_seconds=600)),
        Setting("ranked_conf", Policy(PolicyKind.RANKED_CONF)),
        Setting("linear", Policy(PolicyKind.LINEAR)),
        Setting("static_E0_noiseless", Policy(PolicyKind.STATIC), noise_var=0.0),
    ]
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: SynthCorpusConfig = field(default_factory=SynthCorpusConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    settings: tuple[Setting, ...] = field(default_factory=replication_settings)
    budget_s: float = 6000.0
    runs: int = 10
    seed: int = 0
    efficiency_bin_s: float = 60.0

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.budget_s < 0:
            raise ValueError("budget must be non-negative")
        labels = [s.label for s in self.settings]
        if len(set(labels)) != len(labels):
            raise ValueError("setting labels must be unique")
        if not isinstance(self.cost.prior, str):
            raise ValueError("experiment cost prior must be named")

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus.to_dict(),
            "oracle": asdict(self.oracle),
            "cost": asdict(self.cost),
            "settings": [s.to_dict() for s in self.settings],
            "budget_s": self.budget_s,
            "runs": self.runs,
            "seed": self.seed,
            "efficiency_bin_s": self.efficiency_bin_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        kw = {}
        if "corpus" in d:
            kw["corpus"] = SynthCorpusConfig.from_dict(d.pop("corpus"))
        if "oracle" in d:
            kw["oracle"] = OracleConfig(**d.pop("oracle"))
        if "cost" in d:
            kw["cost"] = CostConfig(**d.pop("cost"))
        if "settings" in d:
            kw["settings"] = tuple(Setting.from_dict(s) for s in d.pop("settings"))
        unknown = set(d) - {"budget_s", "runs", "seed", "efficiency_bin_s"}
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**kw, **d)


@dataclass
class RunResult:
    label: str
    run: int
    errors_corrected: int
    trace_errors: int
    initial_errors: int
    final_wer: float
    spent_s: float
    events: int
    unfinished_segments: int
    final_position: int
    stop_reason: str
    error: str | None
    last_segment_s: float
    trace: SessionTrace = field(repr=False, compare=False)

    @property
    def scoring_consistent(self) -> bool:
        return self.errors_corrected == self.trace_errors

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "trace"}
        d["policy"] = self.trace.policy.kind.value
        d["batch_seconds"] = self.trace.policy.batch_seconds
        d["scoring_consistent"] = self.scoring_consistent
        return d


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    corpus_stats: dict
    results: list[RunResult]
    aborted: bool = False

    def by_label(self, label: str) -> list[RunResult]:
        return [r for r in self.results if r.label == label]

    def aggregates(self) -> dict[str, dict]:
        out = {}
        for s in self.config.settings:
            rows = self.by_label(s.label)
            if not rows:
                continue
            agg = {"runs": len(rows)}
            for metric in ("errors_corrected", "final_wer", "spent_s", "unfinished_segments"):
                vals = np.array([getattr(r, metric) for r in rows], dtype=float)
                agg[metric] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
            out[s.label] = agg
        return out

    def to_dict(self) -> dict:
        return {
            "status": "aborted" if self.aborted else "complete",
            "config": self.config.to_dict(),
            "corpus": self.corpus_stats,
            "aggregates": self.aggregates(),
            "runs": [r.to_dict() for r in self.results],
            "notes": ["re-segmentation costs zero simulated seconds"],
        }


def run_seed(config: ExperimentConfig, run: int, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([config.seed, run, stream])


def _run_one(config: ExperimentConfig, talks, run: int) -> list[RunResult]:
    order = np.random.default_rng(run_seed(config, run)).permutation(len(talks))
    transcript = concat_talks(talks, order)
    d0, alignment = levenshtein(transcript.tokens, transcript.reference)
    truth = config.oracle.time_model
    if config.oracle.kind == "gp":
        truth = fit_gp_oracle(transcript, np.random.default_rng(run_seed(config, run, 1)), truth, config.oracle.gp_segments)

    results = []
    for k, setting in enumerate(config.settings):
        noise = config.oracle.noise_var if setting.noise_var is None else setting.noise_var
        transcriber = OracleTranscriber(truth, noise, np.random.default_rng(run_seed(config, run, 100 + k)), alignment)
        oracle_cm = truth if setting.policy.kind is PolicyKind.DYNAMIC_ORACLE_CM else None
        trace = run_session(
            transcript,
            setting.policy,
            config.budget_s,
            transcriber,
            cost_model=oracle_cm,
            cost_config=config.cost,
            rng=run_seed(config, run, 200 + k),
            alignment=alignment,
        )
        final = apply_corrections(transcript.tokens, trace.corrections)
        d1 = levenshtein_distance(final, transcript.reference)
        results.append(
            RunResult(
                setting.label,
                run,
                d0 - d1,
                trace.errors_corrected,
                d0,
                d1 / len(transcript.reference),
                trace.spent_s,
                len(trace.events),
                trace.unfinished_segments,
                trace.final_position,
                trace.stop_reason,
                trace.error,
                trace.events[-1].observed_time_s if trace.events else 0.0,
                trace,
            )
        )
        if trace.error:
            break
    return results


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run every setting on every run; runs may execute in parallel processes.

    Results are ordered by run then setting irrespective of ``workers``. A
    failed session stops the experiment; the report then holds the results
    gathered so far and is flagged as aborted.
    """
    talks = synth_talks(config.corpus)
    n_ref = sum(len(t.reference) for t in talks)
    d0 = sum(levenshtein_distance(t.tokens, t.reference) for t in talks)
    corpus_stats = {
        "n_words": sum(len(t) for t in talks),
        "n_reference": n_ref,
        "errors": d0,
        "wer": d0 / n_ref,
        "talks": len(talks),
    }
    results: list[RunResult] = []
    aborted = False
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_run_one, config, talks, r) for r in range(config.runs)]
            batches = [f.result() for f in futures]
    else:
        batches = (_run_one(config, talks, r) for r in range(config.runs))
    for batch in batches:
        results.extend(batch)
        log.info("run %d done", batch[0].run if batch else -1)
        if any(r.error for r in batch):
            aborted = True
            break
    return ExperimentReport(config, corpus_stats, results, aborted)


def efficiency_over_time(traces, bin_seconds: float = 60.0) -> dict[int, float]:
    """Errors corrected per supervised second, binned by segment start time.

    Each trace contributes its own per-bin efficiency; bins are averaged over
    the traces that have events in them. Bins with no events are absent.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    sums: dict[int, list[float]] = {}
    for trace in traces:
        for b, eff in trace_efficiency(trace, bin_seconds).items():
            sums.setdefault(b, []).append(eff)
    return {b: math.fsum(v) / len(v) for b, v in sorted(sums.items())}


def trace_efficiency(trace: SessionTrace, bin_seconds: float = 60.0) -> dict[int, float]:
    if bin_seconds <= 0:
        raise ValueError("bin width must be positive")
    errors: dict[int, float] = {}
    seconds: dict[int, float] = {}
    for e in trace.events:
        b = int(e.clock_before_s // bin_seconds)
        errors[b] = errors.get(b, 0.0) + (e.errors_corrected or 0)
        seconds[b] = seconds.get(b, 0.0) + e.observed_time_s
    return {b: errors[b] / seconds[b] for b in sorted(errors)}


def efficiency_trend(traces, bin_seconds: float = 60.0) -> float:
    """Mean over traces of the Spearman correlation between bin index and efficiency."""
    rhos = []
    for trace in traces:
        prof = trace_efficiency(trace, bin_seconds)
        if len(prof) >= 3:
            rho = stats.spearmanr(list(prof), list(prof.values())).statistic
            if np.isfinite(rho):
                rhos.append(float(rho))
    return float(np.mean(rhos)) if rhos else float("nan")


def efficiency_slope_test(traces, bin_seconds: float = 60.0):
    """Per-trace least-squares slopes of bin efficiency over time, tested against zero.

    Bins within one session share its transcript order, so runs (not bins)
    are the independent units. Returns the slopes and the one-sample t-test.
    """
    slopes = []
    for trace in traces:
        prof = trace_efficiency(trace, bin_seconds)
        if len(prof) >= 3:
            slopes.append(float(stats.linregress(list(prof), list(prof.values())).slope))
    if len(slopes) < 2:
        raise ValueError("slope test needs at least two traces with three bins")
    return np.array(slopes), stats.ttest_1samp(slopes, 0.0)


def batch_sweep(config: ExperimentConfig, kind: PolicyKind | str) -> dict[float, str]:
    """Labels of the default-noise settings of one policy kind, keyed by batch size."""
    kind = PolicyKind(kind)
    return {
        s.policy.batch_seconds: s.label
        for s in config.settings
        if s.policy.kind is kind and s.noise_var is None and s.policy.enrollment_seconds == 0
    }


def batch_trend(report: ExperimentReport, labels_by_batch: dict[float, str] | None = None):
    """Spearman test of errors corrected against batch size over all runs."""
    if labels_by_batch is None:
        labels_by_batch = batch_sweep(report.config, PolicyKind.DYNAMIC_PROPOSED)
    xs, ys = [], []
    for b, label in sorted(labels_by_batch.items()):
        for r in report.by_label(label):
            xs.append(b)
            ys.append(r.errors_corrected)
    return stats.spearmanr(xs, ys)
