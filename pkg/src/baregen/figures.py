"""Matplotlib renderings of the report types, written next to the CSV/JSON.

All figures use the Agg backend so report emission works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import CoverageReport, IRReport, SimilarityReport


def save_similarity_histogram(report: SimilarityReport, path: str | Path,
                              title: str | None = None) -> Path:
    """Histogram of pairwise cosine similarities, mean marked."""
    path = Path(path)
    lowers = [lo for lo, _ in report.histogram]
    counts = [c for _, c in report.histogram]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(lowers, counts, width=report.bin_width, align="edge",
           color="#4878cf", edgecolor="none")
    ax.axvline(report.mean_similarity, color="#d65f5f", linestyle="--",
               label=f"mean = {report.mean_similarity:.3f}")
    ax.set_xlabel("pairwise cosine similarity")
    ax.set_ylabel("frequency")
    ax.set_title(title or f"Pairwise similarity ({report.pair_count} pairs)")
    ax.legend()
    # Zoom to the occupied range; the full [-1, 1] axis is usually empty.
    occupied = [lo for lo, c in report.histogram if c > 0]
    if occupied:
        ax.set_xlim(min(occupied) - 0.05, max(occupied) + report.bin_width + 0.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_coverage_chart(report: CoverageReport, class_set: Sequence[str],
                        path: str | Path, title: str | None = None) -> Path:
    """One bar per class, filled when covered."""
    path = Path(path)
    covered = set(report.covered)
    labels = list(class_set)
    values = [1 if c in covered else 0 for c in labels]
    colors = ["#4878cf" if v else "#d0d0d0" for v in values]
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(labels)), 4))
    ax.bar(range(len(labels)), [1] * len(labels), color=colors, edgecolor="white")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_yticks([])
    ax.set_title(title or
                 f"Class coverage: {len(covered)}/{report.class_set_size} "
                 f"({report.coverage_fraction:.0%})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_ir_chart(report: IRReport, path: str | Path,
                  title: str | None = None) -> Path:
    """Bar of the indistinguishability rate with trial counts annotated."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.bar([0], [report.rate], width=0.5, color="#4878cf")
    ax.set_xticks([0])
    ax.set_xticklabels(["synthetic dataset"])
    ax.set_ylim(0, 1)
    ax.set_ylabel("indistinguishability rate")
    ax.set_title(title or f"IR = {report.rate:.2%}")
    ax.annotate(f"{report.fooled}/{report.trials - report.unparseable} fooled\n"
                f"{report.unparseable} unparseable",
                xy=(0, report.rate), xytext=(0, min(report.rate + 0.05, 0.9)),
                ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_comparison_chart(rows: Sequence[dict[str, Any]], path: str | Path) -> Path:
    """Grouped bars of mean similarity and IR across runs."""
    path = Path(path)
    names = [str(r.get("run", i)) for i, r in enumerate(rows)]
    sims = [r.get("mean_similarity") for r in rows]
    irs = [r.get("ir_rate") for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(rows)), 4))
    width = 0.38
    ax.bar([i - width / 2 for i in x],
           [s if s is not None else 0 for s in sims],
           width, label="mean similarity", color="#4878cf")
    ax.bar([i + width / 2 for i in x],
           [r if r is not None else 0 for r in irs],
           width, label="IR", color="#d65f5f")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("Run comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
