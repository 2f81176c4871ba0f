"""Per-frame feature sequences and the feature file interchange format.

A feature source ("backbone") turns frame ordinals into fixed-width feature
vectors. Two kinds exist here: a deterministic mock used for tests and desk
runs, and a reader for files produced by an external extractor. Both meet at
the same binary layout so either side can be swapped out.

Feature file layout (little-endian), followed by a ``<file>.labels.json``
sidecar mapping class id to label text::

    magic  "SLRF"            4 bytes
    version u32              currently 1
    F u32, D u32, C u32      frames per scene, feature width, class count
    scene_count u64
    per scene:
        class_id u32
        path_len u16, path UTF-8
        begin_frame u64, frame_count u64
        F * D float32, row-major
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .catalog import Catalog, FramePlan, SceneRecord, sample_frame_indices
from .errors import FeatureFormatError, SceneLookupError

MAGIC = b"SLRF"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIIQ")
_SCENE_HEADER = struct.Struct("<IH")
_SCENE_FRAMES = struct.Struct("<QQ")


@dataclass(frozen=True)
class FeatureSequence:
    """Feature matrix for one scene: one row per sampled frame."""

    data: np.ndarray  # (F, D) float32
    scene: SceneRecord
    class_id: int

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got {self.data.ndim}-D")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature matrix contains non-finite entries")


@dataclass
class FeatureDataset:
    """All feature sequences of one episode, sharing F, D and a label set."""

    sequences: list[FeatureSequence]
    frames_per_scene: int
    feature_dim: int
    labels: list[str]  # position = class id

    def __post_init__(self):
        for seq in self.sequences:
            if seq.data.shape != (self.frames_per_scene, self.feature_dim):
                raise ValueError(
                    f"sequence for {seq.scene.video_path} has shape "
                    f"{seq.data.shape}, expected "
                    f"({self.frames_per_scene}, {self.feature_dim})"
                )
            if not 0 <= seq.class_id < len(self.labels):
                raise ValueError(f"class id {seq.class_id} out of range")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.sequences)


@dataclass(frozen=True)
class BackboneSpec:
    """Which feature source to use and its fixed output width."""

    kind: str  # "mock" | "file"
    feature_dim: int
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "file"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.kind == "file" and not self.path:
            raise ValueError("file backbone needs a path")


def mock_features(
    frame_key: tuple[str, int], feature_dim: int, seed: int
) -> np.ndarray:
    """Deterministic stand-in feature vector for one frame.

    The vector is a pure function of ``(video_path, frame_ordinal, seed)``:
    a keyed hash of the frame key seeds a counter-based generator, so results
    are identical across processes and platforms. Entries lie in ``[0, 1)``.
    """
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    video_path, frame_ordinal = frame_key
    digest = hashlib.blake2b(
        video_path.encode("utf-8") + b"\x00" + int(frame_ordinal).to_bytes(8, "little"),
        digest_size=16,
        key=int(seed).to_bytes(8, "little", signed=False),
    ).digest()
    bit_generator = np.random.Philox(key=int.from_bytes(digest, "little"))
    return np.random.Generator(bit_generator).random(feature_dim)


class _FileBackbone:
    """Read-only lookup of precomputed per-scene feature blocks."""

    def __init__(self, path: str | Path):
        dataset = read_feature_file(path)
        self.feature_dim = dataset.feature_dim
        self.frames_per_scene = dataset.frames_per_scene
        self._blocks = {
            (s.scene.video_path, s.scene.begin_frame, s.scene.frame_count): s.data
            for s in dataset.sequences
        }

    def lookup(self, record: SceneRecord) -> np.ndarray:
        key = (record.video_path, record.begin_frame, record.frame_count)
        block = self._blocks.get(key)
        if block is None:
            raise SceneLookupError(
                f"scene {record.video_path}[{record.begin_frame}:"
                f"{record.begin_frame + record.frame_count}] not present "
                "in feature file"
            )
        return block


def open_backbone(spec: BackboneSpec) -> "_FileBackbone | BackboneSpec":
    """Resolve a backbone spec to something :func:`assemble_input` accepts."""
    if spec.kind == "file":
        return _FileBackbone(spec.path)
    return spec


def assemble_input(
    record: SceneRecord,
    plan: FramePlan,
    backbone: "BackboneSpec | _FileBackbone",
    class_id: int,
) -> FeatureSequence:
    """Build the scene's feature matrix, one backbone vector per planned frame."""
    if isinstance(backbone, BackboneSpec):
        backbone = open_backbone(backbone)
    if isinstance(backbone, _FileBackbone):
        block = backbone.lookup(record)
        if block.shape[0] != len(plan):
            raise FeatureFormatError(
                f"feature file stores {block.shape[0]} frames per scene, "
                f"plan expects {len(plan)}"
            )
        return FeatureSequence(data=block, scene=record, class_id=class_id)
    rows = np.empty((len(plan), backbone.feature_dim), dtype=np.float32)
    for k, ordinal in enumerate(plan.indices):
        rows[k] = mock_features(
            (record.video_path, ordinal), backbone.feature_dim, backbone.seed
        )
    return FeatureSequence(data=rows, scene=record, class_id=class_id)


def assemble_dataset(
    catalog: Catalog, frames_per_scene: int, backbone: BackboneSpec
) -> Iterator[FeatureSequence]:
    """Yield feature sequences scene by scene (one F x D block in memory at a time)."""
    resolved = open_backbone(backbone)
    for record in catalog.scenes:
        plan = sample_frame_indices(record, frames_per_scene)
        yield assemble_input(record, plan, resolved, catalog.class_id(record.label))


def _labels_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".labels.json")


class FeatureFileWriter:
    """Incremental writer: header first, then one scene block per call."""

    def __init__(
        self,
        path: str | Path,
        frames_per_scene: int,
        feature_dim: int,
        labels: list[str],
        scene_count: int,
    ):
        self.path = Path(path)
        self.frames_per_scene = frames_per_scene
        self.feature_dim = feature_dim
        self.labels = labels
        self._handle: BinaryIO = open(self.path, "wb")
        self._handle.write(
            _HEADER.pack(
                MAGIC,
                FORMAT_VERSION,
                frames_per_scene,
                feature_dim,
                len(labels),
                scene_count,
            )
        )
        self._written = 0
        self._declared = scene_count

    def write_scene(self, sequence: FeatureSequence) -> None:
        if sequence.data.shape != (self.frames_per_scene, self.feature_dim):
            raise ValueError(
                f"scene block shape {sequence.data.shape} does not match header"
            )
        path_bytes = sequence.scene.video_path.encode("utf-8")
        if len(path_bytes) > 0xFFFF:
            raise ValueError("video path longer than 65535 UTF-8 bytes")
        self._handle.write(_SCENE_HEADER.pack(sequence.class_id, len(path_bytes)))
        self._handle.write(path_bytes)
        self._handle.write(
            _SCENE_FRAMES.pack(sequence.scene.begin_frame, sequence.scene.frame_count)
        )
        self._handle.write(
            np.ascontiguousarray(sequence.data, dtype="<f4").tobytes()
        )
        self._written += 1

    def close(self) -> None:
        self._handle.close()
        if self._written != self._declared:
            raise ValueError(
                f"header declared {self._declared} scenes, wrote {self._written}"
            )
        _labels_sidecar(self.path).write_text(
            json.dumps({str(i): label for i, label in enumerate(self.labels)}, indent=2)
            + "\n",
            encoding="utf-8",
        )

    def __enter__(self) -> "FeatureFileWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self._handle.close()


def write_feature_file(dataset: FeatureDataset, path: str | Path) -> None:
    """Write a whole dataset in the binary layout described in the module docs."""
    with FeatureFileWriter(
        path,
        dataset.frames_per_scene,
        dataset.feature_dim,
        dataset.labels,
        len(dataset.sequences),
    ) as writer:
        for sequence in dataset.sequences:
            writer.write_scene(sequence)


def _read_exact(handle: BinaryIO, count: int, offset: int, what: str) -> bytes:
    payload = handle.read(count)
    if len(payload) != count:
        raise FeatureFormatError(
            f"truncated file while reading {what}", offset=offset + len(payload)
        )
    return payload


def read_feature_file(path: str | Path) -> FeatureDataset:
    """Read a feature file and its labels sidecar back into a dataset.

    Raises :class:`FeatureFormatError` (with the failing byte offset) on bad
    magic, unknown version, truncation, or inconsistent dimensions.
    """
    path = Path(path)
    with open(path, "rb") as handle:
        offset = 0
        header = _read_exact(handle, _HEADER.size, offset, "header")
        magic, version, frames, dim, num_classes, scene_count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FeatureFormatError(
                f"bad magic {magic!r}, expected {MAGIC!r}", offset=0
            )
        if version != FORMAT_VERSION:
            raise FeatureFormatError(
                f"unsupported format version {version}", offset=4
            )
        if frames < 1 or dim < 1:
            raise FeatureFormatError(
                f"header declares degenerate dimensions F={frames}, D={dim}",
                offset=8,
            )
        offset += _HEADER.size

        sequences: list[FeatureSequence] = []
        block_bytes = frames * dim * 4
        for scene_index in range(scene_count):
            scene_header = _read_exact(
                handle, _SCENE_HEADER.size, offset, f"scene {scene_index} header"
            )
            class_id, path_len = _SCENE_HEADER.unpack(scene_header)
            offset += _SCENE_HEADER.size
            if class_id >= num_classes:
                raise FeatureFormatError(
                    f"scene {scene_index} class id {class_id} >= C={num_classes}",
                    offset=offset - _SCENE_HEADER.size,
                )
            path_bytes = _read_exact(
                handle, path_len, offset, f"scene {scene_index} path"
            )
            offset += path_len
            frame_fields = _read_exact(
                handle, _SCENE_FRAMES.size, offset, f"scene {scene_index} bounds"
            )
            begin_frame, frame_count = _SCENE_FRAMES.unpack(frame_fields)
            offset += _SCENE_FRAMES.size
            payload = _read_exact(
                handle, block_bytes, offset, f"scene {scene_index} features"
            )
            offset += block_bytes
            data = np.frombuffer(payload, dtype="<f4").reshape(frames, dim)
            sequences.append(
                (class_id, path_bytes.decode("utf-8"), begin_frame, frame_count, data)
            )
        trailing = handle.read(1)
        if trailing:
            raise FeatureFormatError("trailing bytes after last scene", offset=offset)

    sidecar = _labels_sidecar(path)
    if not sidecar.exists():
        raise FeatureFormatError(f"missing labels sidecar {sidecar}")
    raw_labels = json.loads(sidecar.read_text(encoding="utf-8"))
    labels = [raw_labels[str(i)] for i in range(num_classes)]

    built = [
        FeatureSequence(
            data=data.copy(),
            scene=SceneRecord(video_path, begin, count, labels[class_id]),
            class_id=class_id,
        )
        for class_id, video_path, begin, count, data in sequences
    ]
    return FeatureDataset(
        sequences=built,
        frames_per_scene=frames,
        feature_dim=dim,
        labels=labels,
    )
