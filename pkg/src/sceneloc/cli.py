"""Command-line front end.

Subcommands wire the pipeline end to end: ``synth`` and ``extract`` produce
feature files, ``train`` fits one head, ``benchmark`` runs the full
head x episode x replicate grid, and ``compare`` turns a run matrix into the
comparison report. Exit codes are stable for scripting: 0 success, 2 usage or
validation, 3 numeric divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import benchmark as bench
from .catalog import cap_class_frequency, parse_catalog, sample_frame_indices
from .errors import DivergenceError, SceneLocError
from .evaluation import (
    compare_heads,
    read_run_matrix,
    render_report_text,
    write_run_matrix,
)
from .features import (
    BackboneSpec,
    FeatureFileWriter,
    open_backbone,
    read_feature_file,
    write_feature_file,
)
from .features import assemble_input
from .heads import MODEL_NAMES, HeadKind, save_checkpoint
from .manifest import build_manifest, write_manifest
from .synthetic import SyntheticSpec, generate_synthetic, parse_synthetic_spec
from .training import TrainConfig, load_train_config, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _parse_backbone(text: str, feature_dim: int, seed: int) -> BackboneSpec:
    if text == "mock":
        return BackboneSpec(kind="mock", feature_dim=feature_dim, seed=seed)
    if text.startswith("file:"):
        return BackboneSpec(kind="file", feature_dim=feature_dim, path=text[5:])
    raise ValueError(f"backbone must be 'mock' or 'file:<path>', got {text!r}")


def cmd_extract(args: argparse.Namespace) -> int:
    catalog_path = Path(args.catalog)
    if not catalog_path.exists():
        print(f"error: catalog file not found: {catalog_path}", file=sys.stderr)
        return EXIT_USAGE
    with open(catalog_path, "r", encoding="utf-8") as handle:
        catalog = parse_catalog(handle)
    if args.cap_factor is not None:
        catalog = cap_class_frequency(catalog, args.cap_factor, args.seed)

    backbone_spec = _parse_backbone(args.backbone, args.dim, args.seed)
    backbone = open_backbone(backbone_spec)
    if not isinstance(backbone, BackboneSpec):
        feature_dim = backbone.feature_dim
    else:
        feature_dim = args.dim

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    writer = FeatureFileWriter(
        out, args.frames, feature_dim, catalog.labels, len(catalog.scenes)
    )
    with writer:
        for record in catalog.scenes:
            plan = sample_frame_indices(record, args.frames)
            writer.write_scene(
                assemble_input(record, plan, backbone, catalog.class_id(record.label))
            )
    manifest = build_manifest(
        command="extract",
        config={
            "backbone": args.backbone,
            "frames": args.frames,
            "dim": feature_dim,
            "cap_factor": args.cap_factor,
        },
        seed=args.seed,
        inputs={"catalog": catalog_path},
    )
    write_manifest(manifest, Path(str(out) + ".manifest.json"))
    print(f"wrote {len(catalog.scenes)} scenes to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    try:
        kind = HeadKind.parse(args.head)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    features_path = Path(args.features)
    if not features_path.exists():
        print(f"error: feature file not found: {features_path}", file=sys.stderr)
        return EXIT_USAGE
    dataset = read_feature_file(features_path)
    config = _resolve_config(args)
    try:
        model, report = train(dataset, kind, config)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    report_path = Path(str(out) + ".report.json")
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    manifest = build_manifest(
        command="train",
        config={"head": kind.value, "train": config.__dict__},
        seed=config.seed,
        inputs={"features": features_path},
    )
    write_manifest(manifest, Path(str(out) + ".manifest.json"))
    print(
        f"trained {kind.display_name}: train accuracy "
        f"{report.train_accuracy:.3f}, test accuracy {report.test_accuracy:.3f}"
    )
    return EXIT_OK


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    if getattr(args, "config", None):
        config = load_train_config(args.config)
    else:
        config = TrainConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def cmd_benchmark(args: argparse.Namespace) -> int:
    for path in args.features:
        if not Path(path).exists():
            print(f"error: feature file not found: {path}", file=sys.stderr)
            return EXIT_USAGE
    if args.replicates < 1:
        print("error: --replicates must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    config = _resolve_config(args)
    out_dir = Path(args.out)
    outcome = bench.run_benchmark(
        feature_paths=list(args.features),
        replicates=args.replicates,
        config=config,
        out_dir=out_dir,
        base_seed=args.seed if args.seed is not None else config.seed,
        workers=args.workers,
    )
    if outcome.matrix is None:
        for failure in outcome.failures:
            print(
                f"failed cell {failure.model}/{failure.episode}/r{failure.replicate}: "
                f"{failure.error}",
                file=sys.stderr,
            )
        divergent = any(f.error_kind == "DivergenceError" for f in outcome.failures)
        return EXIT_DIVERGENCE if divergent else EXIT_IO

    matrix = outcome.matrix
    write_run_matrix(matrix, out_dir / "runmatrix.csv")
    for e, episode in enumerate(matrix.episodes):
        bench.write_boxplot_csv(matrix, e, out_dir / f"boxplot_{episode}.csv")
    if not args.no_figures:
        from .figures import render_accuracy_boxplot

        for e, episode in enumerate(matrix.episodes):
            render_accuracy_boxplot(
                bench.boxplot_data(matrix, e),
                title=f"accuracy by model, episode {episode}",
                path=out_dir / "figures" / f"box_{episode}.png",
            )
    print(
        f"benchmark complete: {outcome.completed} cells "
        f"({outcome.reused} reused), matrix at {out_dir / 'runmatrix.csv'}"
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    matrix_path = Path(args.matrix)
    if not matrix_path.exists():
        print(f"error: run matrix not found: {matrix_path}", file=sys.stderr)
        return EXIT_USAGE
    matrix = read_run_matrix(matrix_path)
    report = compare_heads(matrix, alpha=args.alpha)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    text = render_report_text(report)
    (out_dir / "tables.txt").write_text(text, encoding="utf-8")
    if not args.no_figures:
        from .figures import render_accuracy_boxplot

        pooled = {
            name: matrix.accuracies[m].reshape(-1).tolist()
            for m, name in enumerate(MODEL_NAMES)
        }
        render_accuracy_boxplot(
            pooled,
            title="accuracy by model, all episodes",
            path=out_dir / "figures" / "box_all_episodes.png",
        )
        for e, episode in enumerate(matrix.episodes):
            render_accuracy_boxplot(
                bench.boxplot_data(matrix, e),
                title=f"accuracy by model, episode {episode}",
                path=out_dir / "figures" / f"box_{episode}.png",
            )
    manifest = build_manifest(
        command="compare",
        config={"alpha": args.alpha},
        seed=None,
        inputs={"matrix": matrix_path},
    )
    write_manifest(manifest, out_dir / "manifest.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            print(f"error: spec file not found: {spec_path}", file=sys.stderr)
            return EXIT_USAGE
        with open(spec_path, "r", encoding="utf-8") as handle:
            spec = parse_synthetic_spec(handle, seed=args.seed)
    else:
        spec = SyntheticSpec(seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    if args.episodes == 1 and not out.is_dir() and out.suffix:
        targets = [(out, spec)]
    else:
        out.mkdir(parents=True, exist_ok=True)
        targets = [
            (out / f"episode_{i:02d}.slrf", replace(spec, seed=spec.seed + i))
            for i in range(args.episodes)
        ]
    for path, episode_spec in targets:
        dataset = generate_synthetic(episode_spec)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_feature_file(dataset, path)
        manifest = build_manifest(
            command="synth",
            config=episode_spec.__dict__,
            seed=episode_spec.seed,
            inputs={},
        )
        write_manifest(manifest, Path(str(path) + ".manifest.json"))
        print(f"wrote synthetic episode to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneloc",
        description="Scene-location recognition: features, heads, benchmarks, comparison",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="catalog -> feature file")
    p_extract.add_argument("--catalog", required=True)
    p_extract.add_argument("--backbone", default="mock", help="mock or file:<path>")
    p_extract.add_argument("--out", required=True)
    p_extract.add_argument("--frames", type=int, default=20)
    p_extract.add_argument("--dim", type=int, default=4096)
    p_extract.add_argument("--seed", type=int, default=0)
    p_extract.add_argument("--cap-factor", type=float, default=None)
    p_extract.set_defaults(func=cmd_extract)

    p_train = sub.add_parser("train", help="fit one head on a feature file")
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--head", required=True)
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_bench = sub.add_parser("benchmark", help="all heads x episodes x replicates")
    p_bench.add_argument("--features", nargs="+", required=True)
    p_bench.add_argument("--replicates", type=int, default=7)
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--no-figures", action="store_true")
    p_bench.set_defaults(func=cmd_benchmark)

    p_compare = sub.add_parser("compare", help="run matrix -> comparison report")
    p_compare.add_argument("--matrix", required=True)
    p_compare.add_argument("--alpha", type=float, default=0.05)
    p_compare.add_argument("--out", required=True)
    p_compare.add_argument("--no-figures", action="store_true")
    p_compare.set_defaults(func=cmd_compare)

    p_synth = sub.add_parser("synth", help="generate synthetic episode feature files")
    p_synth.add_argument("--spec", default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--episodes", type=int, default=1)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SceneLocError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
