"""Binary and text interchange formats.

Everything here is endianness-pinned (little-endian) so files round-trip
bit-exactly across platforms.  Writers go through a temp file in the
target directory followed by an atomic rename, so a crash never leaves a
half-written artifact at the destination path.

Embedding files:   magic "PAUE" | version u16 | modality u8 | n u64 |
                   d u32 | n*d float32 row-major.
Checkpoint files:  magic "PAUP" | version u16 | vision bank (k u32, d u32,
                   k*d float32) | text bank (same) | evidence kind u8 +
                   gamma/theta/tau f64 | beta1/beta2 f64 | metadata block
                   (u32 byte length, UTF-8 "key=value" lines, sorted).
Pair files:        text, one "v_index<TAB>t_index" per line, 0-based.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .embed import TEXT, VISION, EmbeddingSet, PairSet, normalize_rows
from .errors import (
    BadMagic,
    DimensionMismatch,
    InvariantViolation,
    ParseError,
    TruncatedFile,
    UnsupportedVersion,
)
from .evidence import EVIDENCE_KINDS, EvidenceConfig
from .rerank import RerankParams
from .train import PrototypeBank

EMBEDDINGS_MAGIC = b"PAUE"
CHECKPOINT_MAGIC = b"PAUP"
FORMAT_VERSION = 1

_MODALITY_CODES = {VISION: 0, TEXT: 1}
_MODALITY_NAMES = {code: name for name, code in _MODALITY_CODES.items()}
_KIND_CODES = {kind: i for i, kind in enumerate(EVIDENCE_KINDS)}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}

_EMBED_HEADER = struct.Struct("<4sHBQI")
_MAGIC_VERSION = struct.Struct("<4sH")
_BANK_HEADER = struct.Struct("<II")
_EVIDENCE_BLOCK = struct.Struct("<Bddd")
_RERANK_BLOCK = struct.Struct("<dd")
_META_LEN = struct.Struct("<I")


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


class _Cursor:
    """Sequential reader over a fully loaded file that typed-errors on EOF."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.blob):
            raise TruncatedFile(
                f"{self.path}: needed {count} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise InvariantViolation(
                f"{self.path}: {len(self.blob) - self.pos} trailing bytes "
                "after the declared payload"
            )


def _check_magic_version(cur: _Cursor, expected_magic: bytes) -> None:
    magic, version = cur.unpack(_MAGIC_VERSION)
    if magic != expected_magic:
        raise BadMagic(f"{cur.path}: expected {expected_magic!r}, found {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{cur.path}: format version {version}")


# ---- embeddings ----


def write_embeddings(embeddings: EmbeddingSet, path) -> None:
    header = _EMBED_HEADER.pack(
        EMBEDDINGS_MAGIC,
        FORMAT_VERSION,
        _MODALITY_CODES[embeddings.modality],
        embeddings.n,
        embeddings.d,
    )
    payload = np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def read_embeddings(path) -> EmbeddingSet:
    """Load a "PAUE" file; rows are re-normalized on the way in.

    Stored vectors are float32, so unit norms hold only to float32
    precision; re-normalizing restores the EmbeddingSet invariant and
    surfaces genuinely zero rows as ZeroVector.
    """
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    magic, version, modality_code, n, d = cur.unpack(_EMBED_HEADER)
    if magic != EMBEDDINGS_MAGIC:
        raise BadMagic(f"{path}: expected {EMBEDDINGS_MAGIC!r}, found {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}")
    if modality_code not in _MODALITY_NAMES:
        raise InvariantViolation(f"{path}: unknown modality byte {modality_code}")
    raw = np.frombuffer(cur.take(4 * n * d), dtype="<f4")
    cur.done()
    matrix = raw.astype(np.float64).reshape(n, d) if n else np.empty((0, d))
    return normalize_rows(matrix, _MODALITY_NAMES[modality_code])


def read_embeddings_csv(path, modality: str) -> EmbeddingSet:
    """CSV ingress: one vector per line, comma-separated, optional header.

    The first line is treated as a header iff any of its fields does not
    parse as a decimal.  Rows are re-normalized like the binary reader.
    """
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split(",")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"{path}:{lineno}: non-numeric field")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} fields, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no vector rows")
    return normalize_rows(np.array(rows, dtype=np.float64), modality)


# ---- pairs ----


def write_pairs(pairs: PairSet, path) -> None:
    body = "".join(f"{v}\t{t}\n" for v, t in pairs.pairs)
    _atomic_write(path, body.encode("utf-8"))


def read_pairs(path) -> PairSet:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\r\n")
            if not text:
                continue
            fields = text.split("\t")
            if len(fields) != 2:
                raise ParseError(
                    f"{path}:{lineno}: expected 'v<TAB>t', got {text!r}"
                )
            try:
                v, t = int(fields[0]), int(fields[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer index in {text!r}")
            entries.append((v, t))
    return PairSet(pairs=tuple(entries))


# ---- checkpoints ----


@dataclass(frozen=True)
class Checkpoint:
    """A trained model: both banks, evidence config, rerank penalties,
    and a free-form metadata block (seed, epochs, corpus digest, ...)."""

    bank_v: PrototypeBank
    bank_t: PrototypeBank
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    rerank: RerankParams = field(default_factory=RerankParams)
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.bank_v.modality != VISION or self.bank_t.modality != TEXT:
            raise InvariantViolation(
                f"banks must be (vision, text), got "
                f"({self.bank_v.modality}, {self.bank_t.modality})"
            )
        if self.bank_v.d != self.bank_t.d:
            raise DimensionMismatch(
                f"banks disagree on dimension: {self.bank_v.d} vs {self.bank_t.d}"
            )
        for key, value in self.train_meta.items():
            if "=" in key or "\n" in key or "\n" in str(value):
                raise InvariantViolation(f"metadata key {key!r} is not encodable")


def _pack_bank(bank: PrototypeBank) -> bytes:
    header = _BANK_HEADER.pack(bank.k, bank.d)
    return header + np.ascontiguousarray(bank.vectors, dtype="<f4").tobytes()


def _unpack_bank(cur: _Cursor, modality: str) -> PrototypeBank:
    k, d = cur.unpack(_BANK_HEADER)
    raw = np.frombuffer(cur.take(4 * k * d), dtype="<f4")
    return PrototypeBank(
        modality=modality, vectors=raw.astype(np.float64).reshape(k, d)
    )


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    meta_text = "".join(
        f"{k}={ckpt.train_meta[k]}\n" for k in sorted(ckpt.train_meta)
    )
    meta_bytes = meta_text.encode("utf-8")
    payload = (
        _MAGIC_VERSION.pack(CHECKPOINT_MAGIC, FORMAT_VERSION)
        + _pack_bank(ckpt.bank_v)
        + _pack_bank(ckpt.bank_t)
        + _EVIDENCE_BLOCK.pack(
            _KIND_CODES[ckpt.evidence.kind],
            ckpt.evidence.gamma,
            ckpt.evidence.theta,
            ckpt.evidence.tau,
        )
        + _RERANK_BLOCK.pack(ckpt.rerank.beta1, ckpt.rerank.beta2)
        + _META_LEN.pack(len(meta_bytes))
        + meta_bytes
    )
    _atomic_write(path, payload)


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    _check_magic_version(cur, CHECKPOINT_MAGIC)
    bank_v = _unpack_bank(cur, VISION)
    bank_t = _unpack_bank(cur, TEXT)
    kind_code, gamma, theta, tau = cur.unpack(_EVIDENCE_BLOCK)
    if kind_code not in _KIND_NAMES:
        raise InvariantViolation(f"{path}: unknown evidence kind byte {kind_code}")
    beta1, beta2 = cur.unpack(_RERANK_BLOCK)
    (meta_len,) = cur.unpack(_META_LEN)
    meta_bytes = cur.take(meta_len)
    cur.done()
    meta: dict = {}
    for lineno, line in enumerate(meta_bytes.decode("utf-8").splitlines(), start=1):
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: metadata line {lineno} has no '='")
        key, value = line.split("=", 1)
        meta[key] = value
    return Checkpoint(
        bank_v=bank_v,
        bank_t=bank_t,
        evidence=EvidenceConfig(kind=_KIND_NAMES[kind_code], gamma=gamma, theta=theta, tau=tau),
        rerank=RerankParams(beta1=beta1, beta2=beta2),
        train_meta=meta,
    )
