"""Run report rendering: delimited summaries plus matplotlib figures.

The ``report`` CLI path writes a CSV of per-unit phases and attempts next
to the JSON report, and optionally renders two figures: the pipeline
board (phase per unit, attempts annotated) and the token-usage gauge
against the configured budget.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

PHASE_COLORS = {
    "Pending": "#b0bec5",
    "Generating": "#64b5f6",
    "Linting": "#4dd0e1",
    "Testing": "#7986cb",
    "AwaitingApproval": "#ffb74d",
    "ApplyingFix": "#ba68c8",
    "Verified": "#81c784",
    "Escalated": "#e57373",
}

PHASE_ORDER = list(PHASE_COLORS)


def report_rows(report: dict) -> list[dict]:
    rows = []
    for name, unit in report["units"].items():
        rows.append(
            {
                "unit": name,
                "kind": unit["kind"],
                "phase": unit["phase"],
                "attempts": unit["attempts"],
            }
        )
    return rows


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["unit", "kind", "phase", "attempts"])
    writer.writeheader()
    writer.writerows(report_rows(report))
    return buf.getvalue()


def write_report_csv(report: dict, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(report_csv(report))
    return path


def render_figures(report: dict, outdir: Path | str) -> list[Path]:
    """Render the pipeline board and usage gauge as PNG files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [
        _pipeline_figure(report, outdir / "pipeline.png"),
        _usage_figure(report, outdir / "usage.png"),
    ]
    return written


def _pipeline_figure(report: dict, path: Path) -> Path:
    rows = report_rows(report)
    names = [r["unit"] for r in rows][::-1]
    phases = [r["phase"] for r in rows][::-1]
    attempts = [r["attempts"] for r in rows][::-1]
    colors = [PHASE_COLORS.get(p, "#90a4ae") for p in phases]

    height = max(2.5, 0.4 * len(names) + 1.2)
    fig, ax = plt.subplots(figsize=(8, height))
    positions = [PHASE_ORDER.index(p) + 1 if p in PHASE_ORDER else 0 for p in phases]
    ax.barh(names, positions, color=colors)
    for i, (pos, att) in enumerate(zip(positions, attempts)):
        label = PHASE_ORDER[pos - 1] if pos else "?"
        if att:
            label += f" ({att} attempt{'s' if att != 1 else ''})"
        ax.text(pos + 0.1, i, label, va="center", fontsize=8)
    ax.set_xlim(0, len(PHASE_ORDER) + 3)
    ax.set_xticks(range(1, len(PHASE_ORDER) + 1))
    ax.set_xticklabels(PHASE_ORDER, rotation=30, ha="right", fontsize=8)
    ax.set_title(f"{report['project']} - run {report['run_id']} ({report['status']})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _usage_figure(report: dict, path: Path) -> Path:
    usage = report.get("usage", {})
    per_model = usage.get("per_model", [])
    budget = report.get("token_budget", 0)
    total = usage.get("total", 0)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    if per_model:
        labels = [u["model"] or "(unattributed)" for u in per_model]
        prompts = [u["prompt_tokens"] for u in per_model]
        completions = [u["completion_tokens"] for u in per_model]
        ax.bar(labels, prompts, label="prompt", color="#64b5f6")
        ax.bar(labels, completions, bottom=prompts, label="completion", color="#ffb74d")
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no usage recorded", ha="center", va="center",
                transform=ax.transAxes)
    if budget:
        ax.axhline(budget, color="#e57373", linestyle="--", linewidth=1,
                   label=f"budget {budget:,}")
        pct = 100.0 * total / budget if budget else 0.0
        ax.set_title(f"token usage: {total:,} / {budget:,} ({pct:.1f}%)")
    else:
        ax.set_title(f"token usage: {total:,}")
    ax.set_ylabel("tokens")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
