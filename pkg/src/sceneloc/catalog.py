"""Scene catalogs: metadata parsing, class balance caps, and frame selection.

A catalog is a UTF-8 text file with one scene per line::

    # comment
    video_path,begin_frame,frame_count,label

Class ids are assigned by first appearance of each label, so the same file
always yields the same id assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .errors import CatalogError

COMMENT_PREFIX = "#"
FIELD_SEPARATOR = ","


@dataclass(frozen=True)
class SceneRecord:
    """One catalog row: where a scene lives and what location it shows."""

    video_path: str
    begin_frame: int
    frame_count: int
    label: str

    def __post_init__(self):
        if self.begin_frame < 0:
            raise ValueError(f"begin_frame must be >= 0, got {self.begin_frame}")
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        if not self.label:
            raise ValueError("label must be non-empty")


@dataclass
class Catalog:
    """An ordered collection of scenes plus the label <-> class id bijection.

    ``label_index`` is derived from the scene order (ids by first appearance)
    and is therefore stable under serialization round-trips.
    """

    scenes: list[SceneRecord]
    label_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        index: dict[str, int] = {}
        for record in self.scenes:
            if record.label not in index:
                index[record.label] = len(index)
        self.label_index = index

    @property
    def num_classes(self) -> int:
        return len(self.label_index)

    @property
    def labels(self) -> list[str]:
        """Labels ordered by class id."""
        return list(self.label_index)

    def class_id(self, label: str) -> int:
        return self.label_index[label]

    def class_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in self.label_index}
        for record in self.scenes:
            counts[record.label] += 1
        return counts

    def require_classes(self, minimum: int = 2) -> None:
        """Raise unless the catalog has at least ``minimum`` location classes."""
        if self.num_classes < minimum:
            raise CatalogError(
                f"catalog has {self.num_classes} location class(es); "
                f"at least {minimum} required"
            )


@dataclass(frozen=True)
class FramePlan:
    """Absolute frame ordinals chosen to represent one scene."""

    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


def parse_catalog(source: Iterable[str] | IO[str]) -> Catalog:
    """Parse catalog text into a :class:`Catalog`.

    ``source`` is any iterable of lines (an open text file works). Empty lines
    and lines starting with ``#`` are skipped. Errors carry the 1-based line
    number of the offending row.
    """
    scenes: list[SceneRecord] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith(COMMENT_PREFIX):
            continue
        parts = [part.strip() for part in line.split(FIELD_SEPARATOR)]
        if len(parts) != 4:
            raise CatalogError(
                f"expected 4 comma-separated fields, got {len(parts)}", line=lineno
            )
        video_path, begin_text, count_text, label = parts
        try:
            begin_frame = int(begin_text)
            frame_count = int(count_text)
        except ValueError:
            raise CatalogError(
                f"frame fields must be integers, got {begin_text!r}, {count_text!r}",
                line=lineno,
            ) from None
        try:
            scenes.append(SceneRecord(video_path, begin_frame, frame_count, label))
        except ValueError as exc:
            raise CatalogError(str(exc), line=lineno) from None
    return Catalog(scenes)


def serialize_catalog(catalog: Catalog) -> str:
    """Render a catalog back to its text form (inverse of :func:`parse_catalog`)."""
    lines = [
        FIELD_SEPARATOR.join(
            (r.video_path, str(r.begin_frame), str(r.frame_count), r.label)
        )
        for r in catalog.scenes
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def sample_frame_indices(record: SceneRecord, frames_per_scene: int) -> FramePlan:
    """Pick ``frames_per_scene`` frame ordinals spread over the whole scene.

    The k-th index is ``begin_frame + floor(k * frame_count / frames_per_scene)``,
    which spaces samples by the scene's own inter-frame distance and is exact
    whenever the frame count is a multiple of the sample count. Scenes shorter
    than the sample count yield repeated (non-decreasing) indices.
    """
    if frames_per_scene < 1:
        raise ValueError(f"frames_per_scene must be >= 1, got {frames_per_scene}")
    indices = tuple(
        record.begin_frame + (k * record.frame_count) // frames_per_scene
        for k in range(frames_per_scene)
    )
    return FramePlan(indices)


def cap_class_frequency(
    catalog: Catalog, cap_factor: float, rng_seed: int
) -> Catalog:
    """Undersample frequent classes down to ``cap_factor`` times the rarest one.

    Scenes above the cap are dropped uniformly at random under ``rng_seed``;
    the relative order of retained scenes is preserved. A catalog already
    within the cap is returned unchanged.
    """
    if cap_factor < 1:
        raise ValueError(f"cap_factor must be >= 1, got {cap_factor}")
    counts = catalog.class_counts()
    if not counts:
        return catalog
    cap = int(math.floor(cap_factor * min(counts.values())))
    if all(count <= cap for count in counts.values()):
        return catalog

    rng = np.random.default_rng(rng_seed)
    keep = np.ones(len(catalog.scenes), dtype=bool)
    positions: dict[str, list[int]] = {label: [] for label in counts}
    for pos, record in enumerate(catalog.scenes):
        positions[record.label].append(pos)
    # Iterate labels in class-id order so the draw sequence is reproducible.
    for label in catalog.label_index:
        slots = positions[label]
        if len(slots) <= cap:
            continue
        retained = rng.choice(len(slots), size=cap, replace=False)
        chosen = set(retained.tolist())
        for i, pos in enumerate(slots):
            if i not in chosen:
                keep[pos] = False
    retained_scenes = [r for r, flag in zip(catalog.scenes, keep) if flag]
    return Catalog(retained_scenes)
