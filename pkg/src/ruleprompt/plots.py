"""Figure rendering for run reports and run comparisons.

Figures are written straight to files (Agg backend) next to the CSV/JSON
outputs, one metrics chart per report and a grouped chart per comparison.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import ComparisonTable, RunResult

METRIC_KEYS = ("accuracy", "recall", "precision", "f1")


def save_run_figure(result: RunResult, path: str | Path) -> Path:
    """Two panels: the run's headline metrics and its prompt-size distribution."""
    path = Path(path)
    fig, (ax_metrics, ax_tokens) = plt.subplots(1, 2, figsize=(9, 3.5))

    values = [getattr(result.metrics, key) for key in METRIC_KEYS]
    ax_metrics.bar(METRIC_KEYS, values, color="#4878a8")
    ax_metrics.set_ylim(0.0, 1.05)
    ax_metrics.set_ylabel("score")
    ax_metrics.set_title("detection metrics")
    for i, v in enumerate(values):
        ax_metrics.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)

    tokens = [r["prompt_tokens"] for r in result.per_sample]
    ax_tokens.hist(tokens, bins=min(30, max(5, len(set(tokens)))), color="#a85448")
    ax_tokens.set_xlabel("prompt tokens")
    ax_tokens.set_ylabel("samples")
    ax_tokens.set_title("prompt size")

    cfg = result.manifest.get("run_config", {})
    fig.suptitle(f"{cfg.get('paradigm', '?')} / {cfg.get('style', '?')}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_comparison_figure(table: ComparisonTable, path: str | Path) -> Path:
    """Grouped metric bars per run, with mean prompt tokens on a twin axis."""
    path = Path(path)
    labels = [row["run"] for row in table.rows]
    x = np.arange(len(labels))
    width = 0.18

    fig, ax = plt.subplots(figsize=(max(6, 1.8 * len(labels)), 4))
    for k, key in enumerate(METRIC_KEYS):
        values = [row[key] for row in table.rows]
        ax.bar(x + (k - 1.5) * width, values, width, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8, ncol=4, loc="lower right")

    ax_tokens = ax.twinx()
    mean_tokens = [row["mean_tokens"] for row in table.rows]
    ax_tokens.plot(x, mean_tokens, "ko--", markersize=4, linewidth=1)
    ax_tokens.set_ylabel("mean prompt tokens")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
