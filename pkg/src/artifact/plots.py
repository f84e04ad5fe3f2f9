"""Figures for sweep summaries and daily reports, rendered off-screen to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import DailyReport  # noqa: E402
from .sweep import SweepPoint  # noqa: E402

PARAM_LABELS = {
    "T_c": "C&C score threshold",
    "T_score": "similarity score threshold",
    "J_T": "Jeffrey divergence threshold",
}
COUNT_LABELS = {
    "T_c": "C&C-flagged domains",
    "T_score": "domains labeled by expansion",
    "J_T": "automated (host, domain) pairs",
}
REASON_COLORS = {"cc": "#b2182b", "similarity": "#2166ac", "seed": "#4d4d4d"}

# small, print-friendly defaults; applied per figure so importing has no side effects
STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_sweep(points: Sequence[SweepPoint], path) -> Path:
    """Count per threshold value as bars, TDR on a second axis when ground truth exists."""
    if not points:
        raise ValueError("nothing to plot")
    param = points[0].param
    xs = [p.value for p in points]
    counts = [p.count for p in points]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        width = (min(b - a for a, b in zip(xs, xs[1:])) * 0.6) if len(xs) > 1 else 0.01
        ax.bar(xs, counts, width=width, color="#9ecae1", edgecolor="#3182bd", label=COUNT_LABELS[param])
        ax.set_xlabel(PARAM_LABELS[param])
        ax.set_ylabel(COUNT_LABELS[param])
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{x:g}" for x in xs])
        if all(p.tdr is not None for p in points):
            ax2 = ax.twinx()
            ax2.plot(xs, [p.tdr for p in points], "o-", color="#de2d26", label="TDR")
            ax2.set_ylim(0.0, 1.05)
            ax2.set_ylabel("true detection rate")
            ax2.spines["top"].set_visible(False)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out)
        plt.close(fig)
    return out


def plot_report(report: DailyReport, path) -> Path:
    """Horizontal bars of report scores, coloured by the reason each domain was labeled."""
    entries = report.entries
    with plt.rc_context(STYLE):
        height = max(1.5, 0.22 * len(entries) + 0.8)
        fig, ax = plt.subplots(figsize=(5.0, height))
        if entries:
            ys = list(range(len(entries)))[::-1]
            ax.barh(ys, [e.score for e in entries], color=[REASON_COLORS.get(e.reason, "#999999") for e in entries])
            ax.set_yticks(ys)
            ax.set_yticklabels([f"{e.rank}. {e.domain}" for e in entries])
            for reason, color in REASON_COLORS.items():
                if any(e.reason == reason for e in entries):
                    ax.barh([], [], color=color, label=reason)
            ax.legend(loc="lower right", frameon=False)
        else:
            ax.text(0.5, 0.5, "no detections", ha="center", va="center", transform=ax.transAxes)
            ax.set_yticks([])
        ax.set_xlabel("score")
        ax.set_title(f"day {report.day}, {report.mode}", fontsize=9)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out)
        plt.close(fig)
    return out
