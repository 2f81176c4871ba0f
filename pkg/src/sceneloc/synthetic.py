"""Synthetic episode datasets with an adversarial foreground analogue.

Each location class gets a random prototype feature vector; clean frames are
the prototype plus Gaussian noise. With a configurable probability a frame is
instead replaced by a distractor: a sparse set of random coordinates driven
to large magnitude, standing in for a foreground object that dominates the
frame. Distractors corrupt an elementwise max over frames but wash out of a
mean, which is exactly the failure mode the head comparison should surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .catalog import SceneRecord
from .features import FeatureDataset, FeatureSequence


@dataclass
class SyntheticSpec:
    num_classes: int = 12
    frames_per_scene: int = 20
    feature_dim: int = 128
    scenes_per_class: int = 100
    prototype_scale: float = 1.0
    distractor_prob: float = 0.5
    distractor_magnitude: float = 4.0
    distractor_coords: int = 32
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.num_classes,
            self.frames_per_scene,
            self.feature_dim,
            self.scenes_per_class,
            self.distractor_coords,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if not 0.0 <= self.distractor_prob <= 1.0:
            raise ValueError("distractor_prob must lie in [0, 1]")
        if self.distractor_coords > self.feature_dim:
            raise ValueError("distractor_coords cannot exceed feature_dim")


_SPEC_INT_FIELDS = {
    "num_classes",
    "frames_per_scene",
    "feature_dim",
    "scenes_per_class",
    "distractor_coords",
    "seed",
}
_SPEC_FLOAT_FIELDS = {
    "prototype_scale",
    "distractor_prob",
    "distractor_magnitude",
    "noise_std",
}


def parse_synthetic_spec(source: Iterable[str] | IO[str], **overrides) -> SyntheticSpec:
    """Read ``key = value`` lines into a SyntheticSpec."""
    values: dict = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"spec line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _SPEC_INT_FIELDS:
            values[key] = int(value)
        elif key in _SPEC_FLOAT_FIELDS:
            values[key] = float(value)
        else:
            valid = ", ".join(sorted(_SPEC_INT_FIELDS | _SPEC_FLOAT_FIELDS))
            raise ValueError(f"spec line {lineno}: unknown key {key!r} (valid: {valid})")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SyntheticSpec(**values)


def generate_synthetic(spec: SyntheticSpec) -> FeatureDataset:
    """Build one episode's dataset; identical specs give identical datasets."""
    rng = np.random.default_rng(spec.seed)
    C, F, D = spec.num_classes, spec.frames_per_scene, spec.feature_dim
    labels = [f"loc{c:02d}" for c in range(C)]
    prototypes = rng.random((C, D)) * spec.prototype_scale

    sequences: list[FeatureSequence] = []
    for class_id in range(C):
        for scene_index in range(spec.scenes_per_class):
            frames = prototypes[class_id] + rng.normal(0.0, spec.noise_std, size=(F, D))
            distractor_mask = rng.random(F) < spec.distractor_prob
            for t in np.flatnonzero(distractor_mask):
                frame = rng.normal(0.0, spec.noise_std, size=D)
                coords = rng.choice(D, size=spec.distractor_coords, replace=False)
                frame[coords] += spec.distractor_magnitude * rng.uniform(
                    0.5, 1.0, size=spec.distractor_coords
                )
                frames[t] = frame
            record = SceneRecord(
                video_path=f"synthetic/{labels[class_id]}",
                begin_frame=scene_index * F,
                frame_count=F,
                label=labels[class_id],
            )
            sequences.append(
                FeatureSequence(
                    data=frames.astype(np.float32),
                    scene=record,
                    class_id=class_id,
                )
            )
    return FeatureDataset(
        sequences=sequences,
        frames_per_scene=F,
        feature_dim=D,
        labels=labels,
    )
