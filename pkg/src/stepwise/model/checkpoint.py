"""Versioned binary checkpoint for :class:`~stepwise.model.lstm.TrainedModel`.

Layout (all integers little-endian)::

    magic        8 bytes   b"STPWCKPT"
    version      uint32    currently 1
    header_len   uint64    byte length of the JSON header
    header       UTF-8 JSON, keys sorted
    payload      concatenated tensors, little-endian float64, C order

The header holds ``config`` (every ModelConfig field), ``seq_len``,
``best_epoch``, ``feature_names`` and ``extra`` (both optional, may be null)
and ``tensors``: a list of
``{"name", "shape", "offset", "dtype": "<f8"}`` where ``offset`` counts bytes
from the start of the payload. Normalization statistics are stored as the
tensors ``norm_mean`` and ``norm_std``. Nothing time-dependent is written, so
identical models give identical files.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..cohort import FeatureStats
from .lstm import ModelConfig, TrainedModel

MAGIC = b"STPWCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: TrainedModel, path, feature_names=None, extra: dict | None = None) -> None:
    tensors = dict(model.params)
    tensors["norm_mean"] = model.train_stats.mean
    tensors["norm_std"] = model.train_stats.std
    table, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "<f8"})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": "stepwise-lstm",
        "config": asdict(model.config),
        "seq_len": model.seq_len,
        "best_epoch": model.best_epoch,
        "feature_names": list(feature_names) if feature_names is not None else None,
        "tensors": table,
        "extra": extra,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a stepwise checkpoint")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(fh.read(n))


def load_checkpoint(path) -> TrainedModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a stepwise checkpoint")
    version, n = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + n])
    payload = memoryview(data)[20 + n:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(float)
    stats = FeatureStats(tensors.pop("norm_mean"), tensors.pop("norm_std"))
    return TrainedModel(tensors, ModelConfig(**header["config"]), stats,
                        header["seq_len"], [], header["best_epoch"])
