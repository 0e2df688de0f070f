"""Versioned binary checkpoints.

Layout (all integers and floats little-endian):

    magic b"CVKB" | u16 version | u8 kind | u8 flags | u32 k | u32 tau
    | u32 n_entities | u32 n_relations | u32 epoch
    | str config-json | n_entities x str | n_relations x str
    | arr entity | arr relation
    | [convkb] arr filters | arr biases | arr weight | str activation
    | [flags & 1] u64 adam_t | f64 beta1 | f64 beta2 | f64 eps | (arr m, arr v) per block
    | 32-byte sha256 of everything before it

where ``str`` is a u32 byte length plus UTF-8 bytes and ``arr`` is a u64
element count plus float64 values.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from convkb.data import KnowledgeBase, vocab_hash
from convkb.errors import CheckpointError
from convkb.model import ConvKB, ConvKBParams, EmbeddingStore, TransE
from convkb.training import AdamState, TrainConfig, param_blocks

MAGIC = b"CVKB"
VERSION = 1
_KINDS = ("transe", "convkb")
_HEADER = struct.Struct("<4sHBBIIIII")
_HAS_ADAM = 1


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    model: TransE | ConvKB
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    adam: AdamState | None = None
    epoch: int = 0
    version: int = VERSION

    def check_vocab(self, kb: KnowledgeBase) -> None:
        if (len(self.entities), len(self.relations)) != (kb.n_entities, kb.n_relations):
            raise CheckpointError(
                f"checkpoint vocabulary {len(self.entities)}/{len(self.relations)} does not match "
                f"dataset {kb.n_entities}/{kb.n_relations}")
        if vocab_hash(self.entities, self.relations) != kb.vocab_hash():
            raise CheckpointError("checkpoint vocabulary order differs from the dataset")


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def raw(self, b: bytes):
        self.buf.write(b)

    def string(self, s: str):
        b = s.encode("utf-8")
        self.raw(struct.pack("<I", len(b)) + b)

    def array(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype="<f8").ravel()
        self.raw(struct.pack("<Q", a.size) + a.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"bad string in checkpoint: {e}") from None

    def array(self, shape) -> np.ndarray:
        (n,) = self.unpack("<Q")
        if n != int(np.prod(shape)):
            raise CheckpointError(f"array of {n} values does not fit shape {shape}")
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    k = model.emb.k
    tau = model.params.tau if model.kind == "convkb" else 0
    w = _Writer()
    w.raw(_HEADER.pack(MAGIC, VERSION, _KINDS.index(model.kind), _HAS_ADAM if ckpt.adam else 0,
                       k, tau, len(ckpt.entities), len(ckpt.relations), ckpt.epoch))
    w.string(json.dumps(ckpt.config.to_dict(), sort_keys=True, separators=(",", ":")))
    for label in (*ckpt.entities, *ckpt.relations):
        w.string(label)
    w.array(model.emb.entity)
    w.array(model.emb.relation)
    if model.kind == "convkb":
        w.array(model.params.filters)
        w.array(model.params.biases)
        w.array(model.params.weight)
        w.string(model.params.activation)
    if ckpt.adam is not None:
        a = ckpt.adam
        w.raw(struct.pack("<Qddd", a.t, a.beta1, a.beta2, a.eps))
        for name in param_blocks(model):
            w.array(a.m[name])
            w.array(a.v[name])
    body = w.buf.getvalue()
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + 32:
        raise CheckpointError("checkpoint is truncated")
    body, digest = data[:-32], data[-32:]
    magic, version, kind, flags, k, tau, n_e, n_r, epoch = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted)")
    if kind >= len(_KINDS):
        raise CheckpointError(f"unknown model kind {kind}")
    r = _Reader(body)
    r.pos = _HEADER.size
    try:
        config = TrainConfig.from_dict(json.loads(r.string()))
    except (ValueError, TypeError) as e:
        raise CheckpointError(f"bad config section: {e}") from None
    labels = [r.string() for _ in range(n_e + n_r)]
    emb = EmbeddingStore(r.array((n_e, k)), r.array((n_r, k)))
    if _KINDS[kind] == "convkb":
        params = ConvKBParams(r.array((tau, 3)), r.array((tau,)), r.array((tau * k,)), r.string())
        model = ConvKB(emb, params)
    else:
        model = TransE(emb, config.p)
    adam = None
    if flags & _HAS_ADAM:
        t, b1, b2, eps = r.unpack("<Qddd")
        m, v = {}, {}
        for name, block in param_blocks(model).items():
            m[name] = r.array(block.shape)
            v[name] = r.array(block.shape)
        adam = AdamState(m, v, t, b1, b2, eps)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return Checkpoint(config, model, tuple(labels[:n_e]), tuple(labels[n_e:]), adam, epoch, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = to_bytes(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return from_bytes(data)
