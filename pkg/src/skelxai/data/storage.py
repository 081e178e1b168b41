"""Binary sequence files (``XGS1``) and the JSON dataset manifest."""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import KeypointGraph
from .streams import SkeletonSequence

SEQ_MAGIC = b"XGS1"
_HEADER = struct.Struct("<4sIIIfI")


class DataFormatError(Exception):
    """A data file could not be decoded; message names the file and byte offset."""

    def __init__(self, path, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {reason}")


def encode_sequence(seq: SkeletonSequence) -> bytes:
    T, V, C = seq.positions.shape
    payload = np.ascontiguousarray(seq.positions, dtype="<f4").tobytes()
    head = _HEADER.pack(SEQ_MAGIC, T, V, C, float(seq.fps), int(seq.label))
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def decode_sequence(data: bytes, path="<bytes>", subject_id: str = "") -> SkeletonSequence:
    if len(data) < _HEADER.size:
        raise DataFormatError(path, len(data), "truncated header")
    magic, T, V, C, fps, label = _HEADER.unpack_from(data, 0)
    if magic != SEQ_MAGIC:
        raise DataFormatError(path, 0, f"bad magic {magic!r}")
    n = T * V * C * 4
    end = _HEADER.size + n
    if len(data) < end:
        raise DataFormatError(path, len(data), f"truncated payload, expected {n} bytes")
    if len(data) < end + 4:
        raise DataFormatError(path, len(data), "missing checksum")
    if len(data) > end + 4:
        raise DataFormatError(path, end + 4, "trailing bytes after checksum")
    payload = data[_HEADER.size:end]
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(payload) != crc:
        raise DataFormatError(path, end, "checksum mismatch")
    pos = np.frombuffer(payload, dtype="<f4").reshape(T, V, C).astype(np.float32)
    return SkeletonSequence(pos, float(fps), int(label), subject_id)


def write_sequence(path, seq: SkeletonSequence) -> None:
    Path(path).write_bytes(encode_sequence(seq))


def read_sequence(path, subject_id: str = "") -> SkeletonSequence:
    return decode_sequence(Path(path).read_bytes(), path, subject_id)


@dataclass
class ManifestEntry:
    path: str
    label: int
    subject_id: str
    split: str

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ValueError(f"split must be train or val, got {self.split!r}")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    graph: KeypointGraph
    seed: int
    active_keypoints: list[list[int]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)

    def split(self, name: str) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.split == name]

    def to_dict(self) -> dict:
        return {
            "format": "xgs-manifest-1",
            "seed": self.seed,
            "graph": self.graph.to_dict(),
            "config": self.config,
            "active_keypoints": self.active_keypoints,
            "entries": [
                {"path": e.path, "label": e.label, "subject_id": e.subject_id, "split": e.split}
                for e in self.entries
            ],
            "checksums": self.checksums,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            entries=[ManifestEntry(**e) for e in d["entries"]],
            graph=KeypointGraph.from_dict(d["graph"]),
            seed=int(d["seed"]),
            active_keypoints=[list(a) for a in d.get("active_keypoints", [])],
            config=d.get("config", {}),
            checksums=d.get("checksums", {}),
        )


def save_dataset(manifest: DatasetManifest, sequences: list[SkeletonSequence], directory) -> Path:
    """Write one ``.xgs`` file per entry plus ``manifest.json``; returns the manifest path.

    Entry paths are stored relative to ``directory``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(sequences) != len(manifest.entries):
        raise ValueError("one sequence per manifest entry is required")
    checksums = {}
    for entry, seq in zip(manifest.entries, sequences):
        blob = encode_sequence(seq)
        (directory / entry.path).parent.mkdir(parents=True, exist_ok=True)
        (directory / entry.path).write_bytes(blob)
        checksums[entry.path] = "%08x" % zlib.crc32(blob)
    manifest.checksums = checksums
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataFormatError(path, err.pos, f"malformed manifest: {err.msg}") from None
    try:
        return DatasetManifest.from_dict(d)
    except (KeyError, TypeError, ValueError) as err:
        raise DataFormatError(path, 0, f"malformed manifest: {err}") from None


def load_dataset(manifest_path, verify: bool = True) -> tuple[DatasetManifest, list[SkeletonSequence]]:
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    seqs = []
    for e in manifest.entries:
        p = root / e.path
        if not p.exists():
            raise DataFormatError(p, 0, "file listed in manifest does not exist")
        blob = p.read_bytes()
        seq = decode_sequence(blob, p, e.subject_id)
        want: Optional[str] = manifest.checksums.get(e.path)
        if verify and want is not None and "%08x" % zlib.crc32(blob) != want:
            raise DataFormatError(p, 0, "file checksum differs from manifest")
        if seq.label != e.label:
            raise DataFormatError(p, 20, f"label {seq.label} disagrees with manifest label {e.label}")
        seqs.append(seq)
    return manifest, seqs


def file_digest(path) -> str:
    """Git-style blob hash (sha1 over ``blob <len>\\0`` + content)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


__all__ = [
    "DataFormatError",
    "DatasetManifest",
    "ManifestEntry",
    "decode_sequence",
    "encode_sequence",
    "file_digest",
    "load_dataset",
    "load_manifest",
    "read_sequence",
    "save_dataset",
    "write_sequence",
]
