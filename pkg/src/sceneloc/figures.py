"""Box-plot rendering for benchmark and comparison reports.

Figures are display artifacts written next to the delimited data files; the
CSVs remain the interchange format. Rendering is kept deterministic (fixed
metadata, no timestamps) so reruns do not churn the output tree.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .heads import MODEL_NAMES  # noqa: E402

_PNG_METADATA = {"Software": "sceneloc"}


def render_accuracy_boxplot(
    per_model: dict[str, list[float]],
    title: str,
    path: str | Path,
) -> Path:
    """One box per model, accuracy on the y axis; returns the written path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [name for name in MODEL_NAMES if name in per_model]
    data = [[v * 100.0 for v in per_model[name]] for name in names]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.boxplot(data, tick_labels=names)
    ax.set_ylabel("accuracy [%]")
    ax.set_ylim(-2.0, 102.0)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.autofmt_xdate(rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)
    return path
