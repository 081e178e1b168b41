"""Weight files (``XGW1``) and the JSON model description."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..data.graph import KeypointGraph
from .network import GcnModel, ModelConfig

WEIGHT_MAGIC = b"XGW1"
SCHEMA_VERSION = 1


class WeightFormatError(Exception):
    pass


def encode_weights(model: GcnModel) -> bytes:
    params = model.named_parameters()
    out = [WEIGHT_MAGIC, struct.pack("<II", SCHEMA_VERSION, len(params))]
    for name, arr in params:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_weights(data: bytes, source="<bytes>") -> list[tuple[str, np.ndarray]]:
    if len(data) < 16:
        raise WeightFormatError(f"{source}: file too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if data[:4] != WEIGHT_MAGIC:
        raise WeightFormatError(f"{source}: bad magic {data[:4]!r}")
    if zlib.crc32(body) != crc:
        raise WeightFormatError(f"{source}: checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != SCHEMA_VERSION:
        raise WeightFormatError(f"{source}: schema version {version}, expected {SCHEMA_VERSION}")
    off = 12
    tensors = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", body, off)
        name = body[off + 4:off + 4 + n].decode("utf-8")
        off += 4 + n
        (rank,) = struct.unpack_from("<I", body, off)
        dims = struct.unpack_from(f"<{rank}I", body, off + 4)
        off += 4 + 4 * rank
        size = int(np.prod(dims)) * 8
        if off + size > len(body):
            raise WeightFormatError(f"{source}: tensor {name!r} truncated")
        arr = np.frombuffer(body, dtype="<f8", count=size // 8, offset=off).reshape(dims).astype(np.float64)
        off += size
        tensors.append((name, arr))
    return tensors


def save_weights(model: GcnModel, path) -> None:
    Path(path).write_bytes(encode_weights(model))


def load_weights(model: GcnModel, path) -> GcnModel:
    """Copy of ``model`` with parameters read from ``path``."""
    tensors = dict(decode_weights(Path(path).read_bytes(), path))
    out = model.copy()
    for name, arr in out.named_parameters():
        if name not in tensors:
            raise WeightFormatError(f"{path}: missing tensor {name!r}")
        got = tensors.pop(name)
        if got.shape != arr.shape:
            raise WeightFormatError(f"{path}: tensor {name!r} has shape {got.shape}, model expects {arr.shape}")
        arr[...] = got
    if tensors:
        raise WeightFormatError(f"{path}: unexpected tensor {sorted(tensors)[0]!r}")
    return out


def model_description(model: GcnModel) -> dict:
    return {"config": model.config.to_dict(), "graph": model.graph.to_dict()}


def save_model(model: GcnModel, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = directory / "model.json"
    cfg.write_text(json.dumps(model_description(model), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    w = directory / "weights.xgw"
    save_weights(model, w)
    return cfg, w


def load_model(directory) -> GcnModel:
    directory = Path(directory)
    desc = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    skeleton = GcnModel.initialize(ModelConfig.from_dict(desc["config"]), KeypointGraph.from_dict(desc["graph"]))
    return load_weights(skeleton, directory / "weights.xgw")
