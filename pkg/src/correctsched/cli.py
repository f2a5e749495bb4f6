"""Command-line interface.

Settings resolve in three layers: built-in defaults, then an optional JSON
``--config`` file, then explicit flags. The resolved configuration is echoed
into every JSON output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numba
import numpy as np

from . import __version__
from ._io import dumps, write_csv, write_json
from .corpus import NoReferenceError, Transcript, TranscriptFormatError, levenshtein, levenshtein_distance, apply_corrections
from .costmodel import CostConfig, CostModel
from .segmenter import DEFAULT_EPSILON, DEFAULT_MAX_LEN, segment_transcript
from .session import Policy, PolicyKind, run_session
from .utility import UtilityMode, UtilityModel

OUT_ENV = "CORRECTSCHED_OUT"
DEFAULT_OUT = "correctsched-out"

log = logging.getLogger("correctsched")


class UsageError(Exception):
    """Invalid or conflicting options; reported with exit status 2."""


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def version_string() -> str:
    return (
        f"correctsched {__version__} "
        f"(python {platform.python_version()}, numpy {np.__version__}, numba {numba.__version__})"
    )


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def _layer(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """Merge nested dicts; later layers win and ``None`` flags are ignored."""
    out = json.loads(json.dumps(defaults))
    for layer in (file_cfg, {k: v for k, v in flags.items() if v is not None}):
        for key, value in layer.items():
            if key not in out:
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(out[key], dict) and isinstance(value, dict):
                unknown = set(value) - set(out[key])
                if unknown:
                    raise UsageError(f"unknown keys under {key!r}: {sorted(unknown)}")
                out[key].update(value)
            else:
                out[key] = value
    return out


def _load_transcript(path) -> Transcript:
    try:
        return Transcript.load(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except TranscriptFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _cost_defaults() -> dict:
    return asdict(CostConfig())


# segment ------------------------------------------------------------------


def cmd_segment(args) -> int:
    flags = {
        "budget_s": args.budget_seconds,
        "epsilon": args.epsilon,
        "max_segment_len": args.max_segment_len,
        "utility_mode": args.utility_mode,
        "cost": {"prior": args.cost_prior} if args.cost_prior else None,
    }
    defaults = {
        "budget_s": None,
        "epsilon": DEFAULT_EPSILON,
        "max_segment_len": DEFAULT_MAX_LEN,
        "utility_mode": UtilityMode.EXPECTED_ERRORS.value,
        "cost": _cost_defaults(),
    }
    cfg = _layer(defaults, _load_config(args.config), flags)
    if cfg["budget_s"] is None:
        raise UsageError("segment needs --budget-seconds (or budget_s in the config file)")
    transcript = _load_transcript(args.input)
    model = CostModel.fit((), CostConfig(**cfg["cost"]))
    seg = segment_transcript(
        transcript,
        model,
        UtilityModel(cfg["utility_mode"]),
        float(cfg["budget_s"]),
        epsilon=float(cfg["epsilon"]),
        max_len=int(cfg["max_segment_len"]),
    )
    doc = {"config": cfg, **seg.to_dict(), "method": seg.stats.get("method", "direct")}
    if args.out:
        write_json(args.out, doc)
    else:
        sys.stdout.write(dumps(doc))
    return 0


# simulate -----------------------------------------------------------------


def _simulate_defaults() -> dict:
    from .harness.experiment import OracleConfig
    from .harness.synth import SynthCorpusConfig

    return {
        "input": None,
        "policy": Policy(PolicyKind.DYNAMIC_PROPOSED).to_dict(),
        "budget_s": 6000.0,
        "seed": 0,
        "oracle": asdict(OracleConfig()),
        "cost": _cost_defaults(),
        "corpus": SynthCorpusConfig().to_dict(),
    }


def cmd_simulate(args) -> int:
    from .harness.experiment import OracleConfig, efficiency_over_time
    from .harness.oracle import OracleTranscriber, fit_gp_oracle
    from .harness.report import write_trace_csv
    from .harness.synth import SynthCorpusConfig, synth_corpus

    policy_flags = {
        "kind": args.policy,
        "batch_seconds": args.batch_seconds,
        "enrollment_seconds": args.enrollment_seconds,
        "epsilon": args.epsilon,
        "max_segment_len": args.max_segment_len,
        "utility_mode": args.utility_mode,
    }
    policy_flags = {k: v for k, v in policy_flags.items() if v is not None}
    flags = {
        "input": args.input,
        "budget_s": args.budget_seconds,
        "seed": args.seed,
        "policy": policy_flags or None,
        "oracle": {"noise_var": args.noise_var} if args.noise_var is not None else None,
    }
    cfg = _layer(_simulate_defaults(), _load_config(args.config), flags)
    try:
        policy = Policy(**cfg["policy"])
        oracle_cfg = OracleConfig(**cfg["oracle"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"session config: {exc}") from None
    _check_policy_flags(policy, args)
    cfg["policy"] = policy.to_dict()
    seed = int(cfg["seed"])

    if cfg["input"]:
        transcript = _load_transcript(cfg["input"])
    else:
        transcript = synth_corpus(SynthCorpusConfig.from_dict(cfg["corpus"]))
    if transcript.reference is None:
        raise UsageError("simulate needs a transcript with a reference")
    d0, alignment = levenshtein(transcript.tokens, transcript.reference)

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    truth = oracle_cfg.time_model
    if oracle_cfg.kind == "gp":
        truth = fit_gp_oracle(transcript, streams[2], truth, oracle_cfg.gp_segments)
    transcriber = OracleTranscriber(truth, oracle_cfg.noise_var, streams[0], alignment)
    trace = run_session(
        transcript,
        policy,
        float(cfg["budget_s"]),
        transcriber,
        cost_model=truth if policy.kind is PolicyKind.DYNAMIC_ORACLE_CM else None,
        cost_config=CostConfig(**cfg["cost"]),
        rng=streams[1],
        alignment=alignment,
    )
    final = apply_corrections(transcript.tokens, trace.corrections)
    d1 = levenshtein_distance(final, transcript.reference)

    out = Path(args.out) if args.out else default_out_dir() / "simulate"
    doc = {
        "config": cfg,
        "initial_errors": d0,
        "final_errors": d1,
        "errors_corrected": d0 - d1,
        "trace": trace.to_dict(),
    }
    write_json(out / "trace.json", doc)
    write_trace_csv(trace, out / "events.csv")
    if trace.events:
        prof = efficiency_over_time([trace])
        write_csv(out / "efficiency.csv", ("bin_start_s", "errors_per_second"), [(b * 60.0, e) for b, e in prof.items()])
        _efficiency_figure(trace, out / "figures" / "efficiency_over_time.png")
    print(f"{policy.kind.value}: corrected {d0 - d1} of {d0} errors in {trace.spent_s:.1f} s -> {out}")
    return 1 if trace.error else 0


def _efficiency_figure(trace, path):
    import matplotlib.pyplot as plt

    from .harness.experiment import efficiency_over_time
    from .harness.plots import STYLE, _save

    prof = efficiency_over_time([trace])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([b for b in prof], list(prof.values()), marker=".", lw=1)
        ax.set_xlabel("session time (min)")
        ax.set_ylabel("errors corrected per second")
        _save(fig, path)


def _check_policy_flags(policy: Policy, args) -> None:
    if args.batch_seconds is not None and not policy.dynamic:
        raise UsageError(f"--batch-seconds does not apply to policy {policy.kind.value}")
    if args.enrollment_seconds is not None and policy.kind not in (PolicyKind.STATIC, PolicyKind.DYNAMIC_FIXED_CM):
        raise UsageError(f"--enrollment-seconds does not apply to policy {policy.kind.value}")


# experiment ---------------------------------------------------------------


def cmd_experiment(args) -> int:
    from .harness.experiment import ExperimentConfig, run_experiment
    from .harness.report import write_experiment

    defaults = ExperimentConfig().to_dict()
    flags = {"runs": args.runs, "seed": args.seed, "budget_s": args.budget_seconds}
    cfg = _layer(defaults, _load_config(args.config), flags)
    try:
        config = ExperimentConfig.from_dict(cfg)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"experiment config: {exc}") from None
    out = Path(args.out) if args.out else default_out_dir() / "experiment"
    report = run_experiment(config, workers=args.workers)
    write_experiment(report, out, figures=not args.no_figures)
    for label, agg in report.aggregates().items():
        m = agg["errors_corrected"]
        print(f"{label:28s} {m['mean']:8.1f} ± {m['std']:.1f}")
    print(f"report written to {out}")
    if report.aborted:
        print("experiment aborted after a failed session; results are partial", file=sys.stderr)
        return 1
    return 0


# synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .harness.synth import SynthCorpusConfig, synth_corpus

    flags = {"n_words": args.n_words, "target_wer": args.wer, "n_talks": args.talks, "seed": args.seed}
    cfg = _layer(SynthCorpusConfig().to_dict(), _load_config(args.config), flags)
    try:
        config = SynthCorpusConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"corpus config: {exc}") from None
    transcript = synth_corpus(config)
    out = Path(args.out) if args.out else default_out_dir() / "corpus.json"
    write_json(out, transcript.to_dict())
    n_err = levenshtein_distance(transcript.tokens, transcript.reference)
    print(f"{len(transcript)} words, WER {n_err / len(transcript.reference):.4f} -> {out}")
    return 0


# bench --------------------------------------------------------------------


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def cmd_bench(args) -> int:
    from .harness.bench import BENCH_FIELDS, DEFAULT_SIZES, bench_segmentation
    from .harness.plots import bench_plot

    rows = bench_segmentation(args.sizes or DEFAULT_SIZES, args.max_len or (DEFAULT_MAX_LEN,), args.repeats, args.seed)
    out = Path(args.out) if args.out else default_out_dir() / "bench"
    write_csv(out / "bench.csv", BENCH_FIELDS, [tuple(r[k] for k in BENCH_FIELDS) for r in rows])
    bench_plot(rows, out / "bench.png")
    for r in rows:
        print(f"N={r['n_words']:6d} R={r['max_len']:3d} {r['seconds']:.3f} s ({r['method']}, {r['iterations']} it)")
    return 0


# parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="correctsched", description="Budget-constrained transcript correction scheduling.")
    p.add_argument("--version", action="version", version=version_string())
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    env_note = f"(default: ${OUT_ENV} or ./{DEFAULT_OUT})"

    s = sub.add_parser("segment", help="optimize a budgeted segmentation of a transcript")
    s.add_argument("input", help="transcript JSON")
    s.add_argument("--budget-seconds", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--max-segment-len", type=int)
    s.add_argument("--utility-mode", choices=[m.value for m in UtilityMode])
    s.add_argument("--cost-prior", choices=["overhead", "naive"])
    s.add_argument("--config")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("simulate", help="run one annotation session against the oracle transcriber")
    s.add_argument("--input", help="transcript JSON with reference (default: synthetic corpus)")
    s.add_argument("--policy", choices=[k.value for k in PolicyKind])
    s.add_argument("--budget-seconds", type=float)
    s.add_argument("--batch-seconds", type=float)
    s.add_argument("--enrollment-seconds", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--max-segment-len", type=int)
    s.add_argument("--utility-mode", choices=[m.value for m in UtilityMode])
    s.add_argument("--noise-var", type=float, help="oracle gamma noise variance")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", help=f"output directory {env_note}")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("experiment", help="multi-run policy comparison")
    s.add_argument("--config")
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--budget-seconds", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--out", help=f"output directory {env_note}")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("synth", help="write a synthetic corpus with reference")
    s.add_argument("--n-words", type=int)
    s.add_argument("--wer", type=float)
    s.add_argument("--talks", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", help=f"output file {env_note}")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bench", help="time segmentation across transcript sizes")
    s.add_argument("--sizes", type=_int_list)
    s.add_argument("--max-len", type=_int_list)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help=f"output directory {env_note}")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(2, f"correctsched {args.command}: error: {exc}\n")
    except (ValueError, NoReferenceError) as exc:
        parser.exit(2, f"correctsched {args.command}: error: {exc}\n")
    except OSError as exc:
        parser.exit(1, f"correctsched {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
