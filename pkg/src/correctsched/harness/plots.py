"""Report figures. Rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..session import PolicyKind  # noqa: E402
from .experiment import ExperimentReport, batch_sweep, efficiency_over_time  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

# PNG metadata would otherwise embed the matplotlib version
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def errors_vs_batch(report: ExperimentReport, path: Path) -> Path | None:
    sweep = batch_sweep(report.config, PolicyKind.DYNAMIC_PROPOSED)
    agg = report.aggregates()
    sweep = {b: lab for b, lab in sweep.items() if lab in agg}
    if not sweep:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bs = np.array(sorted(sweep)) / 60.0
        mean = [agg[sweep[b]]["errors_corrected"]["mean"] for b in sorted(sweep)]
        std = [agg[sweep[b]]["errors_corrected"]["std"] for b in sorted(sweep)]
        ax.errorbar(bs, mean, yerr=std, marker="o", capsize=3, label="dynamic_proposed")
        for label, m in agg.items():
            if label in sweep.values() or label.endswith("noiseless"):
                continue
            ax.axhline(m["errors_corrected"]["mean"], ls="--", lw=0.8, color="0.5")
            ax.annotate(label, (bs[-1], m["errors_corrected"]["mean"]), fontsize=6, ha="right", va="bottom")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("batch size B (min)")
        ax.set_ylabel("errors corrected")
        ax.legend(loc="lower left")
        return _save(fig, path)


def errors_by_setting(report: ExperimentReport, path: Path) -> Path | None:
    agg = report.aggregates()
    if not agg:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 0.3 * len(agg) + 1.2))
        labels = list(agg)
        y = np.arange(len(labels))
        ax.barh(
            y,
            [agg[k]["errors_corrected"]["mean"] for k in labels],
            xerr=[agg[k]["errors_corrected"]["std"] for k in labels],
            color="C0",
            capsize=2,
        )
        ax.set_yticks(y, labels, fontsize=7)
        ax.invert_yaxis()
        ax.set_xlabel("errors corrected (mean ± std over runs)")
        return _save(fig, path)


def efficiency_profiles(report: ExperimentReport, labels, path: Path, bin_seconds: float = 60.0) -> Path | None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        drawn = False
        for label in labels:
            traces = [r.trace for r in report.by_label(label) if r.trace.events]
            if not traces:
                continue
            prof = efficiency_over_time(traces, bin_seconds)
            ax.plot(np.array(list(prof)) * bin_seconds / 60.0, list(prof.values()), lw=1, label=label)
            drawn = True
        if not drawn:
            plt.close(fig)
            return None
        ax.set_xlabel("session time (min)")
        ax.set_ylabel("errors corrected per second")
        ax.legend()
        return _save(fig, path)


def bench_plot(rows, path: Path) -> Path:
    """Wall time against transcript length, one line per segment-length cap."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r in sorted({row["max_len"] for row in rows}):
            sub = sorted((row["n_words"], row["seconds"]) for row in rows if row["max_len"] == r)
            ax.plot(*zip(*sub), marker="o", label=f"R={r}")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("words")
        ax.set_ylabel("optimize time (s)")
        ax.legend()
        return _save(fig, path)
