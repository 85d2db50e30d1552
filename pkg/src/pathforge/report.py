"""Delimited reports and the matplotlib figures rendered next to them.

Every CLI report path writes a CSV and a PNG side by side so a run can be
audited from the output directory alone.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .kg_store import GraphStats
from .qa_forge import DatasetStats


def write_csv(destination: str | Path, header: Sequence[str],
              rows: Sequence[Sequence]) -> None:
    with Path(destination).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _save(fig, destination: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(destination, dpi=120)
    plt.close(fig)


def _bar(ax, labels: Sequence[str], values: Sequence[int], title: str) -> None:
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_title(title)


def render_graph_stats(stats: GraphStats, destination: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    _bar(ax1, list(stats.nodes_per_type), list(stats.nodes_per_type.values()),
         f"nodes by type (total {stats.node_count})")
    _bar(ax2, list(stats.edges_per_relation), list(stats.edges_per_relation.values()),
         f"edges by relation (total {stats.edge_count})")
    _save(fig, destination)


def render_dataset_stats(stats: DatasetStats, destination: str | Path) -> None:
    splits = sorted({k[0] for k in stats.rows})
    categories = sorted({k[1] for k in stats.rows})
    levels = ["Basic", "Medium", "Hard"]
    colors = {"Basic": "#6aa84f", "Medium": "#e69138", "Hard": "#cc4125"}
    fig, axes = plt.subplots(1, max(len(splits), 1), figsize=(4.5 * max(len(splits), 1), 4),
                             squeeze=False)
    for ax, split in zip(axes[0], splits or ["all"]):
        bottoms = [0] * len(categories)
        for level in levels:
            values = [stats.rows.get((split, cat, level), 0) for cat in categories]
            ax.bar(range(len(categories)), values, bottom=bottoms,
                   label=level, color=colors[level])
            bottoms = [b + v for b, v in zip(bottoms, values)]
        ax.set_xticks(range(len(categories)))
        ax.set_xticklabels(categories, rotation=45, ha="right", fontsize=7)
        ax.set_title(f"{split} ({sum(bottoms)} items)")
    axes[0][0].legend(fontsize=7)
    _save(fig, destination)


def render_histogram(values: Sequence[float], destination: str | Path,
                     title: str, bins: int | Sequence[float] = 20) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    if values:
        ax.hist(values, bins=bins, color="#4878a8", edgecolor="white")
    ax.set_title(title)
    _save(fig, destination)


def render_reward_counts(totals: Sequence[int], destination: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    buckets = [0, 1, 5, 6]
    counts = [sum(1 for t in totals if t == b) for b in buckets]
    _bar(ax, [str(b) for b in buckets], counts, "reward totals")
    _save(fig, destination)
