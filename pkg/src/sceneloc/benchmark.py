"""Benchmark orchestration: all heads x all episodes x all replicates.

Cells are independent training runs. Each cell's seed is derived from the
base seed and the cell coordinates, so results do not depend on scheduling,
and every completed cell leaves a JSON marker that lets an interrupted
benchmark resume without recomputing.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import RunMatrixError, SceneLocError
from .evaluation import EpisodeRunMatrix
from .features import read_feature_file
from .heads import MODEL_NAMES, MODEL_ORDER
from .manifest import build_manifest, manifest_fingerprint, read_manifest, write_manifest
from .training import TrainConfig, train


@dataclass(frozen=True)
class CellSpec:
    model_index: int
    episode_index: int
    replicate: int
    feature_path: str
    episode: str
    seed: int


@dataclass
class CellResult:
    model: str
    episode: str
    replicate: int
    seed: int
    accuracy: float | None
    train_accuracy: float | None = None
    final_loss: float | None = None
    error: str | None = None
    error_kind: str | None = None


def cell_seed(base_seed: int, model_index: int, episode_index: int, replicate: int) -> int:
    state = np.random.SeedSequence(
        entropy=base_seed, spawn_key=(model_index, episode_index, replicate)
    ).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)


@lru_cache(maxsize=8)
def _load_dataset_cached(path: str):
    return read_feature_file(path)


def _run_cell(spec: CellSpec, config: TrainConfig) -> CellResult:
    kind = MODEL_ORDER[spec.model_index]
    try:
        dataset = _load_dataset_cached(spec.feature_path)
        cell_config = replace(config, seed=spec.seed)
        _, report = train(dataset, kind, cell_config)
        return CellResult(
            model=MODEL_NAMES[spec.model_index],
            episode=spec.episode,
            replicate=spec.replicate,
            seed=spec.seed,
            accuracy=report.test_accuracy,
            train_accuracy=report.train_accuracy,
            final_loss=report.losses[-1],
        )
    except SceneLocError as exc:
        return CellResult(
            model=MODEL_NAMES[spec.model_index],
            episode=spec.episode,
            replicate=spec.replicate,
            seed=spec.seed,
            accuracy=None,
            error=str(exc),
            error_kind=type(exc).__name__,
        )


def _cell_path(cells_dir: Path, spec: CellSpec) -> Path:
    return cells_dir / (
        f"m{spec.model_index}_e{spec.episode_index}_r{spec.replicate}.json"
    )


def _write_cell(path: Path, result: CellResult) -> None:
    body = {
        "model": result.model,
        "episode": result.episode,
        "replicate": result.replicate,
        "seed": result.seed,
        "accuracy": result.accuracy,
        "train_accuracy": result.train_accuracy,
        "final_loss": result.final_loss,
        "error": result.error,
        "error_kind": result.error_kind,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    tmp.replace(path)


def _read_cell(path: Path) -> CellResult:
    body = json.loads(path.read_text(encoding="utf-8"))
    return CellResult(**body)


@dataclass
class BenchmarkOutcome:
    matrix: EpisodeRunMatrix | None
    failures: list[CellResult]
    completed: int
    reused: int


def run_benchmark(
    feature_paths: list[str | Path],
    replicates: int,
    config: TrainConfig,
    out_dir: str | Path,
    base_seed: int,
    workers: int | None = None,
) -> BenchmarkOutcome:
    """Train every (model, episode, replicate) cell and assemble the run matrix.

    ``out_dir`` receives a manifest, per-cell JSON markers, and (on success)
    the run-matrix CSV is left to the caller. Resuming against the same
    manifest fingerprint skips completed cells; a different fingerprint on an
    existing output directory is refused.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if not feature_paths:
        raise ValueError("need at least one feature file")
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    episodes = [Path(p).stem for p in feature_paths]
    if len(set(episodes)) != len(episodes):
        raise ValueError(f"episode names derived from files are not unique: {episodes}")

    manifest = build_manifest(
        command="benchmark",
        config={
            "train": config.__dict__,
            "replicates": replicates,
            "episodes": episodes,
        },
        seed=base_seed,
        inputs={ep: path for ep, path in zip(episodes, feature_paths)},
    )
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        existing = read_manifest(manifest_path)
        if manifest_fingerprint(existing) != manifest["fingerprint"]:
            raise SceneLocError(
                f"output directory {out_dir} holds results for a different "
                "configuration; refusing to mix"
            )
    else:
        write_manifest(manifest, manifest_path)

    specs = [
        CellSpec(
            model_index=m,
            episode_index=e,
            replicate=r,
            feature_path=str(path),
            episode=episode,
            seed=cell_seed(base_seed, m, e, r),
        )
        for m in range(len(MODEL_ORDER))
        for e, (episode, path) in enumerate(zip(episodes, feature_paths))
        for r in range(replicates)
    ]

    pending: list[CellSpec] = []
    results: dict[tuple[int, int, int], CellResult] = {}
    for spec in specs:
        marker = _cell_path(cells_dir, spec)
        if marker.exists():
            results[(spec.model_index, spec.episode_index, spec.replicate)] = _read_cell(
                marker
            )
        else:
            pending.append(spec)
    reused = len(results)

    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for spec, result in zip(pending, pool.map(_run_cell, pending, [config] * len(pending))):
                _write_cell(_cell_path(cells_dir, spec), result)
                results[(spec.model_index, spec.episode_index, spec.replicate)] = result
    else:
        for spec in pending:
            result = _run_cell(spec, config)
            _write_cell(_cell_path(cells_dir, spec), result)
            results[(spec.model_index, spec.episode_index, spec.replicate)] = result

    failures = [r for r in results.values() if r.accuracy is None]
    matrix = None
    if not failures:
        data = np.empty((len(MODEL_ORDER), len(episodes), replicates))
        for (m, e, r), result in results.items():
            data[m, e, r] = result.accuracy
        matrix = EpisodeRunMatrix(accuracies=data, episodes=episodes)
    return BenchmarkOutcome(
        matrix=matrix,
        failures=failures,
        completed=len(results),
        reused=reused,
    )


def boxplot_data(matrix: EpisodeRunMatrix, episode_index: int) -> dict[str, list[float]]:
    """Replicate accuracy list per model for one episode (box-plot input)."""
    return {
        name: matrix.accuracies[m, episode_index].tolist()
        for m, name in enumerate(MODEL_NAMES)
    }


def write_boxplot_csv(matrix: EpisodeRunMatrix, episode_index: int, path: str | Path) -> None:
    data = boxplot_data(matrix, episode_index)
    lines = ["model,replicate,accuracy"]
    for name in MODEL_NAMES:
        for r, value in enumerate(data[name]):
            lines.append(f"{name},{r},{value!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _missing_from(outcome: BenchmarkOutcome) -> list[str]:
    return [
        f"{f.model}/{f.episode}/r{f.replicate}: {f.error}" for f in outcome.failures
    ]


def require_complete(outcome: BenchmarkOutcome) -> EpisodeRunMatrix:
    if outcome.matrix is None:
        raise RunMatrixError(
            "benchmark has failed cells:\n  " + "\n  ".join(_missing_from(outcome))
        )
    return outcome.matrix
