"""Binary checkpoint container and model-level save/load.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON
header carrying the config plus an ordered manifest of (name, shape)
entries, the raw float32 little-endian arrays in manifest order, and a
sha256 trailer over everything preceding it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .tensor import Tensor, default_dtype
from .text import LabelSet, Vocab

MAGIC = b"ROLEIDC1"


class CheckpointError(ValueError):
    pass


def save_container(path, kind: str, config: dict, arrays: list[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    header = {
        "kind": kind,
        "config": config,
        "manifest": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for _, arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_container(path) -> tuple[str, dict, dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, trailer = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    offset = start + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        offset += count * 4
    if offset != len(body):
        raise CheckpointError(f"{path}: array payload size mismatch")
    return header["kind"], header["config"], arrays, header["meta"]


@dataclass
class ModelCheckpoint:
    params: ModelParams
    config: ModelConfig
    vocab: Vocab
    labels: LabelSet
    best_metric: float
    best_step: int


def save_model(path, ckpt: ModelCheckpoint) -> None:
    arrays = [(name, p.data) for name, p in ckpt.params.items()]
    meta = {
        "vocab_words": list(ckpt.vocab.words),
        "vocab_charset": ckpt.vocab.charset,
        "vocab_fingerprint": ckpt.vocab.fingerprint(),
        "labels": list(ckpt.labels.names),
        "best_metric": ckpt.best_metric,
        "best_step": ckpt.best_step,
    }
    save_container(path, "hsan", ckpt.config.to_dict(), arrays, meta)


def load_model(path) -> ModelCheckpoint:
    kind, config, arrays, meta = load_container(path)
    if kind != "hsan":
        raise CheckpointError(f"{path}: expected a model checkpoint, found kind={kind!r}")
    cfg = ModelConfig.from_dict(config)
    vocab = Vocab(meta["vocab_words"], charset=meta["vocab_charset"])
    if vocab.fingerprint() != meta["vocab_fingerprint"]:
        raise CheckpointError(f"{path}: vocabulary fingerprint mismatch")
    dt = default_dtype()
    params = {name: Tensor(arr.astype(dt), requires_grad=True) for name, arr in arrays.items()}
    return ModelCheckpoint(
        params=params,
        config=cfg,
        vocab=vocab,
        labels=LabelSet(tuple(meta["labels"])),
        best_metric=float(meta["best_metric"]),
        best_step=int(meta["best_step"]),
    )
