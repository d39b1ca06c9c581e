"""Figures for run reports.

Renders per-window metric series next to the CSV export. Uses the Agg
backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRICS = ("utilization", "blocking", "preemption", "devolution")
LIMIT_FIELDS = {"blocking": "blocking", "preemption": "preemption", "devolution": "devolution",
                "utilization": "min_utilization"}
BAM_LEVELS = {"MAM": 0, "RDM": 1, "ATCS": 2}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _series(report: dict, metric: str, tc: int) -> tuple[list[int], list[float]]:
    rows = report["windows"]
    return [r["window"] for r in rows], [r[metric][tc] for r in rows]


def plot_metrics(report: dict, path: str | Path) -> Path:
    """2x2 panel of the four per-TC metrics, with tolerances and BAM switches."""
    path = Path(path)
    n_tc = len(report["windows"][0]["blocking"]) if report["windows"] else 0
    limits = report.get("tolerance", {})
    with mpl.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(8, 5.5), sharex=True)
        for ax, metric in zip(axes.flat, METRICS):
            for tc in range(n_tc):
                x, y = _series(report, metric, tc)
                line, = ax.plot(x, y, marker="o", ms=3, lw=1.2, label=f"TC{tc}")
                lim = limits.get(LIMIT_FIELDS[metric])
                if lim:
                    ax.axhline(lim[tc], color=line.get_color(), ls=":", lw=0.8)
            for sw in report.get("switches", []):
                ax.axvline(sw["window"] + 0.5, color="0.4", ls="--", lw=0.8)
            ax.set_title(metric)
            ax.set_ylim(-3, 103)
            ax.set_ylabel("%")
        for ax in axes[1]:
            ax.set_xlabel("window")
        axes[0, 0].legend(loc="best", frameon=False)
        fig.suptitle(f"{report.get('scenario', 'run')} (seed {report.get('seed')})")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_bam_timeline(report: dict, path: str | Path) -> Path:
    """Step plot of the BAM in use per window, with fired alerts marked."""
    path = Path(path)
    rows = report["windows"]
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 2.4))
        x = [r["window"] for r in rows]
        y = [BAM_LEVELS[r["bam"]] for r in rows]
        ax.step(x, y, where="mid", color="C0", lw=1.5)
        fired = [a for a in report.get("alerts", []) if a.get("fired")]
        if fired:
            ax.scatter([a["window"] for a in fired], [BAM_LEVELS[rows[a["window"]]["bam"]] for a in fired],
                       color="C3", zorder=3, s=20, label="alert")
            ax.legend(loc="best", frameon=False)
        ax.set_yticks(list(BAM_LEVELS.values()), list(BAM_LEVELS))
        ax.set_ylim(-0.5, 2.5)
        ax.set_xlabel("window")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report_figures(report: dict, outdir: str | Path, fmt: str = "png") -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not report.get("windows"):
        return []
    return [
        plot_metrics(report, outdir / f"metrics.{fmt}"),
        plot_bam_timeline(report, outdir / f"bam_timeline.{fmt}"),
    ]
