"""Accuracy aggregation and the six-way model comparison.

The unit of comparison is an accuracy run matrix indexed by
(model, episode, replicate). From it we derive the per-model summary table
(mean, std, quartiles in percent), the pairwise win-count matrix over
episodes, and the Friedman + pairwise Wilcoxon + Holm significance pipeline.
The paired observation for each pairwise test is the per-episode mean over
replicates.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .errors import RunMatrixError
from .features import FeatureDataset
from .heads import MODEL_NAMES, HeadModel, _forward_batch
from .stats import FriedmanResult, friedman_test, holm_adjust, wilcoxon_signed_rank

RUN_MATRIX_HEADER = ["model", "episode", "replicate", "accuracy"]


def accuracy(model: HeadModel, dataset: FeatureDataset) -> float:
    """Fraction of scenes whose argmax class matches the truth.

    Argmax ties resolve to the lowest class id, so a constant uniform model
    always predicts class 0.
    """
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    features = np.stack([seq.data for seq in dataset.sequences]).astype(np.float64)
    targets = np.array([seq.class_id for seq in dataset.sequences])
    outputs = _forward_batch(model, features).y
    predictions = outputs.argmax(axis=1)
    return float((predictions == targets).mean())


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    p25: float
    p50: float
    p75: float


def summarize(values) -> Summary:
    """Mean, sample std and quartiles of accuracy fractions, in percent."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError("need a non-empty 1-D list of values")
    scaled = values * 100.0
    std = float(scaled.std(ddof=1)) if len(values) > 1 else 0.0
    q25, q50, q75 = np.percentile(scaled, [25, 50, 75], method="linear")
    return Summary(
        mean=float(scaled.mean()), std=std, p25=float(q25), p50=float(q50), p75=float(q75)
    )


@dataclass
class EpisodeRunMatrix:
    """accuracy[model][episode][replicate], models in canonical order."""

    accuracies: np.ndarray  # (6, E, R)
    episodes: list[str]

    def __post_init__(self):
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64)
        if self.accuracies.ndim != 3 or self.accuracies.shape[0] != len(MODEL_NAMES):
            raise RunMatrixError(
                f"run matrix must have shape (6, E, R), got {self.accuracies.shape}"
            )
        if self.accuracies.shape[1] != len(self.episodes):
            raise RunMatrixError("episode axis does not match episode names")
        if np.any(np.isnan(self.accuracies)):
            raise RunMatrixError("run matrix has missing cells")
        if np.any((self.accuracies < 0) | (self.accuracies > 1)):
            raise RunMatrixError("accuracies must lie in [0, 1]")

    @property
    def num_episodes(self) -> int:
        return self.accuracies.shape[1]

    @property
    def num_replicates(self) -> int:
        return self.accuracies.shape[2]

    def episode_means(self) -> np.ndarray:
        """(6, E) replicate-mean accuracy per model and episode."""
        return self.accuracies.mean(axis=2)


def write_run_matrix(matrix: EpisodeRunMatrix, sink: IO[str] | str | Path) -> None:
    """CSV with header model,episode,replicate,accuracy."""
    own = isinstance(sink, (str, Path))
    handle = open(sink, "w", encoding="utf-8", newline="") if own else sink
    try:
        writer = csv.writer(handle)
        writer.writerow(RUN_MATRIX_HEADER)
        for m, name in enumerate(MODEL_NAMES):
            for e, episode in enumerate(matrix.episodes):
                for r in range(matrix.num_replicates):
                    writer.writerow([name, episode, r, repr(matrix.accuracies[m, e, r])])
    finally:
        if own:
            handle.close()


def read_run_matrix(source: IO[str] | str | Path) -> EpisodeRunMatrix:
    """Parse the CSV interchange form; missing cells are reported by name."""
    own = isinstance(source, (str, Path))
    handle = open(source, "r", encoding="utf-8", newline="") if own else source
    try:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != RUN_MATRIX_HEADER:
            raise RunMatrixError(
                f"expected header {','.join(RUN_MATRIX_HEADER)}, got {header}"
            )
        cells: dict[tuple[str, str, int], float] = {}
        episodes: list[str] = []
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise RunMatrixError(f"malformed row: {row}")
            name, episode, replicate, value = row
            if name not in MODEL_NAMES:
                raise RunMatrixError(f"unknown model {name!r}")
            if episode not in episodes:
                episodes.append(episode)
            key = (name, episode, int(replicate))
            if key in cells:
                raise RunMatrixError(f"duplicate cell {key}")
            cells[key] = float(value)
    finally:
        if own:
            handle.close()
    if not cells:
        raise RunMatrixError("empty run matrix")
    replicates = sorted({r for (_, _, r) in cells})
    expected_r = len(replicates)
    if replicates != list(range(expected_r)):
        raise RunMatrixError(f"replicate ids must be dense 0..R-1, got {replicates}")
    missing = [
        f"{name}/{episode}/r{r}"
        for name in MODEL_NAMES
        for episode in episodes
        for r in range(expected_r)
        if (name, episode, r) not in cells
    ]
    if missing:
        raise RunMatrixError(
            f"run matrix incomplete; missing cells: {', '.join(missing)}", missing=missing
        )
    data = np.empty((len(MODEL_NAMES), len(episodes), expected_r))
    for (name, episode, r), value in cells.items():
        data[MODEL_NAMES.index(name), episodes.index(episode), r] = value
    return EpisodeRunMatrix(accuracies=data, episodes=episodes)


def win_matrix(matrix: EpisodeRunMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Counts of episodes where the row model's replicate mean beats the column's.

    Strict inequality wins; equality counts as a tie for both orders, so
    wins[i][j] + wins[j][i] + ties[i][j] equals the episode count.
    """
    means = matrix.episode_means()
    k = means.shape[0]
    wins = np.zeros((k, k), dtype=np.int64)
    ties = np.zeros((k, k), dtype=np.int64)
    for i, j in itertools.permutations(range(k), 2):
        wins[i, j] = int((means[i] > means[j]).sum())
        if i < j:
            tie_count = int((means[i] == means[j]).sum())
            ties[i, j] = ties[j, i] = tie_count
    return wins, ties


@dataclass
class PairResult:
    row: str
    column: str
    wins_row: int
    wins_column: int
    ties: int
    statistic: float
    pvalue: float
    pvalue_holm: float
    significant: bool

    @property
    def winner(self) -> str:
        if not self.significant or self.wins_row == self.wins_column:
            return "none"
        return "row" if self.wins_row > self.wins_column else "column"


@dataclass
class ComparisonReport:
    alpha: float
    episodes: list[str]
    replicates: int
    summaries: dict[str, Summary]
    wins: np.ndarray
    ties: np.ndarray
    summary_scores: dict[str, int]
    friedman: FriedmanResult
    pairs: list[PairResult]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "models": MODEL_NAMES,
            "episodes": self.episodes,
            "replicates": self.replicates,
            "paired_observation": "episode mean over replicates",
            "friedman": {
                "statistic": self.friedman.statistic,
                "pvalue": self.friedman.pvalue,
                "treatments": len(MODEL_NAMES),
                "blocks": len(self.episodes),
            },
            "summary": {
                name: {
                    "mean": s.mean,
                    "std": s.std,
                    "p25": s.p25,
                    "p50": s.p50,
                    "p75": s.p75,
                }
                for name, s in self.summaries.items()
            },
            "wins": self.wins.tolist(),
            "ties": self.ties.tolist(),
            "summary_scores": self.summary_scores,
            "pairs": [
                {
                    "row": p.row,
                    "column": p.column,
                    "wins_row": p.wins_row,
                    "wins_column": p.wins_column,
                    "ties": p.ties,
                    "wilcoxon_statistic": p.statistic,
                    "pvalue": p.pvalue,
                    "pvalue_holm": p.pvalue_holm,
                    "significant": p.significant,
                    "winner": p.winner,
                }
                for p in self.pairs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def compare_heads(matrix: EpisodeRunMatrix, alpha: float = 0.05) -> ComparisonReport:
    """Full comparison: summaries, wins, Friedman, pairwise Wilcoxon with Holm."""
    if matrix.num_episodes < 2:
        raise ValueError("need at least 2 episodes to compare models")
    means = matrix.episode_means()
    summaries = {
        name: summarize(matrix.accuracies[m].reshape(-1))
        for m, name in enumerate(MODEL_NAMES)
    }
    wins, ties = win_matrix(matrix)
    scores = {name: int(wins[m].sum()) for m, name in enumerate(MODEL_NAMES)}
    friedman = friedman_test(means)

    index_pairs = list(itertools.combinations(range(len(MODEL_NAMES)), 2))
    results = [wilcoxon_signed_rank(means[i], means[j]) for i, j in index_pairs]
    adjusted, rejected = holm_adjust([r.pvalue for r in results], alpha)
    pairs = [
        PairResult(
            row=MODEL_NAMES[i],
            column=MODEL_NAMES[j],
            wins_row=int(wins[i, j]),
            wins_column=int(wins[j, i]),
            ties=int(ties[i, j]),
            statistic=res.statistic,
            pvalue=res.pvalue,
            pvalue_holm=adj,
            significant=flag,
        )
        for (i, j), res, adj, flag in zip(index_pairs, results, adjusted, rejected)
    ]
    return ComparisonReport(
        alpha=alpha,
        episodes=list(matrix.episodes),
        replicates=matrix.num_replicates,
        summaries=summaries,
        wins=wins,
        ties=ties,
        summary_scores=scores,
        friedman=friedman,
        pairs=pairs,
    )


def _pair_lookup(report: ComparisonReport) -> dict[tuple[str, str], PairResult]:
    table = {}
    for pair in report.pairs:
        table[(pair.row, pair.column)] = pair
        table[(pair.column, pair.row)] = pair
    return table


def render_win_table(report: ComparisonReport) -> str:
    """Aligned text table of pairwise wins; '*' marks significant pairs.

    Column order: the six models then SummaryScore; the score is the row sum
    of win counts.
    """
    lookup = _pair_lookup(report)
    headers = MODEL_NAMES + ["SummaryScore"]
    rows = []
    for i, name in enumerate(MODEL_NAMES):
        cells = [name]
        for j, other in enumerate(MODEL_NAMES):
            if i == j:
                cells.append("X")
                continue
            count = report.wins[i, j]
            marker = "*" if lookup[(name, other)].significant else ""
            cells.append(f"{count}{marker}")
        cells.append(str(report.summary_scores[name]))
        rows.append(cells)
    widths = [max(len(MODEL_NAMES[i]) for i in range(len(MODEL_NAMES)))] + [
        max(len(h), max(len(r[c + 1]) for r in rows)) for c, h in enumerate(headers)
    ]
    lines = [
        "Pairwise wins: episodes where the row model has higher mean accuracy",
        "than the column model ('*' = significant under Holm-adjusted Wilcoxon,"
        f" alpha={report.alpha:g})",
        "",
    ]
    header_line = " " * widths[0] + "  " + "  ".join(
        h.rjust(widths[c + 1]) for c, h in enumerate(headers)
    )
    lines.append(header_line)
    for cells in rows:
        line = cells[0].ljust(widths[0]) + "  " + "  ".join(
            cell.rjust(widths[c + 1]) for c, cell in enumerate(cells[1:])
        )
        lines.append(line)
    return "\n".join(lines) + "\n"


def render_stats_table(report: ComparisonReport) -> str:
    """Aligned text table of per-model accuracy statistics in percent."""
    headers = ["model", "mean", "std", "25%", "50%", "75%"]
    rows = []
    for name in MODEL_NAMES:
        s = report.summaries[name]
        rows.append(
            [name]
            + [f"{value:.1f}" for value in (s.mean, s.std, s.p25, s.p50, s.p75)]
        )
    return render_stats_rows(headers, rows)


def render_stats_rows(headers: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(headers[c]), max(len(r[c]) for r in rows)) for c in range(len(headers))
    ]
    lines = [
        headers[0].ljust(widths[0])
        + "  "
        + "  ".join(h.rjust(widths[c + 1]) for c, h in enumerate(headers[1:]))
    ]
    for row in rows:
        lines.append(
            row[0].ljust(widths[0])
            + "  "
            + "  ".join(cell.rjust(widths[c + 1]) for c, cell in enumerate(row[1:]))
        )
    return "\n".join(lines) + "\n"


def render_report_text(report: ComparisonReport) -> str:
    friedman_line = (
        f"Friedman test over {len(report.episodes)} episodes: "
        f"chi2 = {report.friedman.statistic:.4f}, p = {report.friedman.pvalue:.3e}"
    )
    return (
        render_win_table(report)
        + "\n"
        + render_stats_table(report)
        + "\n"
        + friedman_line
        + "\n"
    )
