"""Model checkpoint files.

Layout (little-endian)::

    b"HADM" | u16 version | u64 header length | JSON header | float64 blob

The header holds the architecture, objective, training and model config and
the seed, serialized with sorted keys so equal models give equal bytes. The
blob holds each layer's weight (row-major) then bias in declaration order,
followed by the center vector when the objective uses one.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ..errors import FeatureFileError
from .mlp import DenseLayer, MlpParams
from .trainer import ModelConfig, TrainConfig, TrainResult

PathLike = Union[str, Path]

MAGIC = b"HADM"
VERSION = 1
_PREFIX = struct.Struct("<4sHQ")


def _known_fields(cls, data: dict) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


def checkpoint_bytes(result: TrainResult) -> bytes:
    """Serialize a trained head."""
    center = result.center
    header = {
        "architecture": result.params.architecture(),
        "objective": result.objective,
        "config": asdict(result.config),
        "model_config": asdict(result.model_config),
        "seed": result.config.seed,
        "center_dim": 0 if center is None else int(np.asarray(center).size),
    }
    header_blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = [a.ravel() for a in result.params.arrays()]
    if center is not None:
        arrays.append(np.asarray(center, dtype=np.float64).ravel())
    blob = np.concatenate(arrays).astype("<f8").tobytes()
    return _PREFIX.pack(MAGIC, VERSION, len(header_blob)) + header_blob + blob


def save_checkpoint(result: TrainResult, path: PathLike) -> None:
    Path(path).write_bytes(checkpoint_bytes(result))


def load_checkpoint(path: PathLike) -> TrainResult:
    """Read a checkpoint written by :func:`save_checkpoint`.

    The returned result has an empty loss trace.

    Raises:
        FileNotFoundError: If the file does not exist.
        FeatureFileError: If the file is malformed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    where = str(path)
    if len(data) < _PREFIX.size:
        raise FeatureFileError("truncated", "File shorter than its header", where)
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFileError("magic", f"Bad magic {magic!r}", where)
    if version != VERSION:
        raise FeatureFileError("version", f"Unsupported version {version}", where)
    offset = _PREFIX.size
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
        architecture = header["architecture"]
        config = TrainConfig(**_known_fields(TrainConfig, header["config"]))
        model_config = ModelConfig(**_known_fields(ModelConfig, header.get("model_config", {})))
        center_dim = int(header["center_dim"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise FeatureFileError("metadata", f"Malformed checkpoint header: {e}", where) from e
    offset += header_len

    n_values = sum(l["in"] * l["out"] + l["out"] for l in architecture) + center_dim
    if len(data) - offset != n_values * 8:
        raise FeatureFileError(
            "truncated", f"Expected {n_values} parameters, found {(len(data) - offset) // 8}", where
        )
    values = np.frombuffer(data, dtype="<f8", count=n_values, offset=offset).astype(np.float64)
    layers, pos = [], 0
    for spec in architecture:
        size = spec["in"] * spec["out"]
        weight = values[pos:pos + size].reshape(spec["out"], spec["in"])
        pos += size
        bias = values[pos:pos + spec["out"]]
        pos += spec["out"]
        layers.append(DenseLayer(weight.copy(), bias.copy(), spec["activation"]))
    center = values[pos:pos + center_dim].copy() if center_dim else None
    return TrainResult(params=MlpParams(layers), objective=header["objective"], config=config,
                       model_config=model_config, center=center)


def write_loss_trace(trace: Sequence[float], path: PathLike) -> None:
    """Write ``step,loss`` rows, losses with 9 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(trace):
            writer.writerow([step, f"{loss:.9g}"])
