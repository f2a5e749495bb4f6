"""Writes experiment and simulation outputs to a directory."""

from __future__ import annotations

import re
from pathlib import Path

from .._io import write_csv, write_json
from ..session import PolicyKind, SessionTrace
from . import plots
from .experiment import ExperimentReport, batch_sweep, efficiency_over_time

SUMMARY_FIELDS = (
    "setting",
    "runs",
    "errors_corrected_mean",
    "errors_corrected_std",
    "final_wer_mean",
    "final_wer_std",
    "spent_s_mean",
    "spent_s_std",
    "unfinished_segments_mean",
    "unfinished_segments_std",
)


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def write_trace_csv(trace: SessionTrace, path) -> Path:
    return write_csv(path, SessionTrace.CSV_FIELDS, trace.csv_rows())


def summary_rows(report: ExperimentReport) -> list[tuple]:
    rows = []
    for label, agg in report.aggregates().items():
        row = [label, agg["runs"]]
        for metric in ("errors_corrected", "final_wer", "spent_s", "unfinished_segments"):
            row += [agg[metric]["mean"], agg[metric]["std"]]
        rows.append(tuple(row))
    return rows


def write_experiment(report: ExperimentReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Emit report.json, summary.csv, one CSV per session trace and figures."""
    out = Path(out_dir)
    written = {
        "report": write_json(out / "report.json", report.to_dict()),
        "summary": write_csv(out / "summary.csv", SUMMARY_FIELDS, summary_rows(report)),
    }
    for r in report.results:
        write_trace_csv(r.trace, out / "traces" / f"{_slug(r.label)}_run{r.run:02d}.csv")

    profiles = {}
    for label in report.aggregates():
        traces = [r.trace for r in report.by_label(label) if r.trace.events]
        if traces:
            prof = efficiency_over_time(traces, report.config.efficiency_bin_s)
            profiles[label] = [(b * report.config.efficiency_bin_s, eff) for b, eff in prof.items()]
    written["efficiency"] = write_csv(
        out / "efficiency.csv",
        ("setting", "bin_start_s", "errors_per_second"),
        [(label, t, eff) for label, prof in profiles.items() for t, eff in prof],
    )

    if figures:
        figs = out / "figures"
        paths = {
            "errors_vs_batch": plots.errors_vs_batch(report, figs / "errors_vs_batch.png"),
            "errors_by_setting": plots.errors_by_setting(report, figs / "errors_by_setting.png"),
        }
        dyn = list(batch_sweep(report.config, PolicyKind.DYNAMIC_PROPOSED).values())[:1]
        static = [s.label for s in report.config.settings if s.policy.kind is PolicyKind.STATIC][:2]
        paths["efficiency"] = plots.efficiency_profiles(
            report, dyn + static, figs / "efficiency_over_time.png", report.config.efficiency_bin_s
        )
        written.update({k: v for k, v in paths.items() if v is not None})
    return written
