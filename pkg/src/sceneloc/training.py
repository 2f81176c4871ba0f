"""Class-balanced stochastic training of a head on one episode's features.

Every run is single-threaded and fully determined by its config seed: the
train/test split, the parameter init, and the minibatch sampler each draw
from their own stream derived from that seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import DivergenceError, SamplingError, SplitError
from .features import FeatureDataset, FeatureSequence
from .heads import (
    HeadKind,
    HeadModel,
    _backward_batch,
    _forward_batch,
    init_params,
)

ADAM_EPSILON = 1e-8
LOG_CLAMP = 1e-12

OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    steps: int = 2500
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 4e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    split_fraction: float = 0.3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(
                f"split_fraction must be in (0, 1), got {self.split_fraction}"
            )


@dataclass
class TrainReport:
    losses: list[float]
    train_accuracy: float
    test_accuracy: float
    steps: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "seed": self.seed,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "losses": self.losses,
        }


_CONFIG_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def parse_train_config(source: Iterable[str] | IO[str], **overrides) -> TrainConfig:
    """Read ``key = value`` lines (# comments allowed) into a TrainConfig."""
    values: dict = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_FIELDS:
            valid = ", ".join(sorted(_CONFIG_FIELDS))
            raise ValueError(f"config line {lineno}: unknown key {key!r} (valid: {valid})")
        if key == "optimizer":
            values[key] = value
        elif key in ("steps", "batch_size", "seed"):
            values[key] = int(value)
        else:
            values[key] = float(value)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def load_train_config(path: str | Path, **overrides) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_train_config(handle, **overrides)


def stratified_split(
    dataset: FeatureDataset, split_fraction: float, seed
) -> tuple[FeatureDataset, FeatureDataset]:
    """Per class, move ceil(split_fraction * n) scenes to the test side."""
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must be in (0, 1)")
    by_class: dict[int, list[int]] = {}
    for pos, seq in enumerate(dataset.sequences):
        by_class.setdefault(seq.class_id, []).append(pos)
    rng = np.random.default_rng(seed)
    test_positions: set[int] = set()
    for class_id in sorted(by_class):
        positions = by_class[class_id]
        if len(positions) < 2:
            raise SplitError(
                f"class {dataset.labels[class_id]!r} has {len(positions)} scene(s); "
                "need >= 2 to split"
            )
        n_test = int(np.ceil(split_fraction * len(positions)))
        order = rng.permutation(len(positions))
        test_positions.update(positions[i] for i in order[:n_test])

    def subset(predicate) -> FeatureDataset:
        return FeatureDataset(
            sequences=[s for i, s in enumerate(dataset.sequences) if predicate(i)],
            frames_per_scene=dataset.frames_per_scene,
            feature_dim=dataset.feature_dim,
            labels=dataset.labels,
        )

    return subset(lambda i: i not in test_positions), subset(lambda i: i in test_positions)


class BalancedSampler:
    """Uniform over classes first, then uniform over that class's scenes."""

    def __init__(self, dataset: FeatureDataset):
        self.dataset = dataset
        self._by_class = [[] for _ in range(dataset.num_classes)]
        for pos, seq in enumerate(dataset.sequences):
            self._by_class[seq.class_id].append(pos)
        empty = [dataset.labels[c] for c, group in enumerate(self._by_class) if not group]
        if empty:
            raise SamplingError(f"classes with no scenes: {', '.join(empty)}")
        self._group_sizes = np.array([len(g) for g in self._by_class])
        self._groups = [np.array(g) for g in self._by_class]

    def draw(self, rng: np.random.Generator) -> FeatureSequence:
        class_id = int(rng.integers(self.dataset.num_classes))
        group = self._groups[class_id]
        return self.dataset.sequences[int(group[rng.integers(len(group))])]

    def draw_indices(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Vectorized batch of the same two-stage draw; one rng call per stage."""
        classes = rng.integers(self.dataset.num_classes, size=count)
        within = rng.integers(self._group_sizes[classes])
        return np.array(
            [self._groups[c][w] for c, w in zip(classes, within)], dtype=np.intp
        )


def balanced_sample(dataset: FeatureDataset, rng: np.random.Generator) -> FeatureSequence:
    """One draw of the two-stage sampler (class uniform, then scene uniform)."""
    return BalancedSampler(dataset).draw(rng)


def cross_entropy(y: np.ndarray, target: int) -> float:
    """Negative log probability of the target class, clamped away from -inf."""
    y = np.asarray(y)
    if not 0 <= target < y.shape[-1]:
        raise ValueError(f"target {target} out of range for C={y.shape[-1]}")
    return float(-np.log(max(float(y[target]), LOG_CLAMP)))


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict | None,
    config: TrainConfig,
) -> dict:
    """Apply one update in place; returns the (possibly fresh) optimizer state."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}", step=-1)
    if state is None:
        state = {"t": 0}
        if config.optimizer == "sgd":
            state["velocity"] = {k: np.zeros_like(v) for k, v in params.items()}
        else:
            state["m"] = {k: np.zeros_like(v) for k, v in params.items()}
            state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    state["t"] += 1
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for name, param in params.items():
            vel = state["velocity"][name]
            vel *= config.momentum
            vel += grads[name]
            param -= lr * vel
    else:
        t = state["t"]
        bias1 = 1.0 - config.beta1**t
        bias2 = 1.0 - config.beta2**t
        for name, param in params.items():
            m = state["m"][name]
            v = state["v"][name]
            m *= config.beta1
            m += (1.0 - config.beta1) * grads[name]
            v *= config.beta2
            v += (1.0 - config.beta2) * grads[name] ** 2
            param -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPSILON)
    return state


def _accuracy_on(model: HeadModel, dataset: FeatureDataset) -> float:
    from .evaluation import accuracy  # local import to avoid a cycle

    return accuracy(model, dataset)


def train(
    dataset: FeatureDataset, kind: HeadKind, config: TrainConfig
) -> tuple[HeadModel, TrainReport]:
    """Run the balanced minibatch loop; deterministic given (dataset, kind, config)."""
    if dataset.num_classes < 2:
        raise ValueError("training needs at least 2 classes")
    root = np.random.SeedSequence(config.seed)
    split_seed, init_seed, sampler_seed = root.spawn(3)
    train_set, test_set = stratified_split(dataset, config.split_fraction, split_seed)
    sampler = BalancedSampler(train_set)
    model = init_params(
        kind,
        dataset.frames_per_scene,
        dataset.feature_dim,
        dataset.num_classes,
        seed=init_seed,
    )
    params = model.params_dict()
    rng = np.random.default_rng(sampler_seed)
    state: dict | None = None
    losses: list[float] = []
    all_features = np.stack([seq.data for seq in train_set.sequences]).astype(np.float64)
    all_targets = np.array([seq.class_id for seq in train_set.sequences])
    for step in range(config.steps):
        picks = sampler.draw_indices(rng, config.batch_size)
        features = all_features[picks]
        targets = all_targets[picks]
        trace = _forward_batch(model, features)
        probs = trace.y[np.arange(config.batch_size), targets]
        losses.append(float(-np.log(np.maximum(probs, LOG_CLAMP)).mean()))
        grads = _backward_batch(model, trace, targets)
        for name in grads:
            grads[name] /= config.batch_size
        try:
            state = optimizer_step(params, grads, state, config)
        except DivergenceError as exc:
            raise DivergenceError("training diverged", step=step) from exc
    report = TrainReport(
        losses=losses,
        train_accuracy=_accuracy_on(model, train_set),
        test_accuracy=_accuracy_on(model, test_set),
        steps=config.steps,
        seed=config.seed,
    )
    return model, report


def grad_check(
    kind: HeadKind,
    dims: tuple[int, int, int],
    seed: int,
    h: float = 1e-5,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Builds a seeded random model and input, then perturbs every scalar
    parameter by +-h. The denominator is floored so near-zero gradients are
    compared absolutely at scale 1e-4.
    """
    from .heads import head_backward, head_forward  # late import keeps API surface tight

    if h <= 0:
        raise ValueError("h must be positive")
    frames, dim, classes = dims
    model = init_params(kind, frames, dim, classes, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    features = rng.random((frames, dim))
    target = int(rng.integers(classes))

    trace = head_forward(model, features)
    analytic = head_backward(model, features, trace, target)

    def loss() -> float:
        return cross_entropy(head_forward(model, features).output, target)

    worst = 0.0
    for name, array in model.named_params():
        grad = analytic[name]
        flat = array.reshape(-1)
        grad_flat = grad.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            plus = loss()
            flat[idx] = original - h
            minus = loss()
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            denom = max(abs(grad_flat[idx]), abs(numeric), 1e-4)
            worst = max(worst, abs(grad_flat[idx] - numeric) / denom)
    return worst
