"""Embedding cache: little-endian binary records plus CSV export.

Layout: magic ``RGE1``, uint32 channel count, one byte pooling kind,
then per record (uint16 id length, id bytes, one gender byte, float64
bmi, C float32 values), and a trailing uint64 record count used as an
integrity check on reopen.

A sidecar ``<path>.meta.json`` records backbone, pooling, region norm
and seed so downstream stages can refuse mismatched artifacts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CacheIntegrityError
from .types import PoolKind

CACHE_MAGIC = b"RGE1"

_KIND_TAGS = {PoolKind.GAP: 0, PoolKind.REG_GAP: 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}
_GENDER_TAGS = {None: 0, "male": 1, "female": 2}
_TAG_GENDERS = {v: k for k, v in _GENDER_TAGS.items()}


@dataclass(frozen=True)
class CacheRecord:
    """One pooled embedding with its manifest row essentials."""

    id: str
    gender: Optional[str]
    bmi: float
    values: np.ndarray  # float32, length C


class EmbeddingCacheWriter:
    """Streaming writer; the trailing count is written on close."""

    def __init__(self, path: str | Path, channels: int, kind: PoolKind):
        self.path = Path(path)
        self.channels = channels
        self.kind = kind
        self._count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(CACHE_MAGIC)
        self._fh.write(struct.pack("<IB", channels, _KIND_TAGS[kind]))

    def add(self, record: CacheRecord) -> None:
        values = np.asarray(record.values, dtype="<f4")
        if values.shape != (self.channels,):
            raise CacheIntegrityError(
                f"record {record.id!r} has {values.shape} values, "
                f"cache expects ({self.channels},)"
            )
        encoded = record.id.encode("utf-8")
        self._fh.write(struct.pack("<H", len(encoded)))
        self._fh.write(encoded)
        self._fh.write(struct.pack("<Bd", _GENDER_TAGS[record.gender], record.bmi))
        self._fh.write(values.tobytes())
        self._count += 1

    def close(self) -> None:
        self._fh.write(struct.pack("<Q", self._count))
        self._fh.close()

    def __enter__(self) -> "EmbeddingCacheWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class EmbeddingCache:
    """Fully-read cache contents."""

    channels: int
    kind: PoolKind
    records: tuple[CacheRecord, ...]

    def by_id(self) -> dict[str, CacheRecord]:
        return {r.id: r for r in self.records}


def read_embedding_cache(path: str | Path) -> EmbeddingCache:
    """Read and verify a cache file (magic, bounds, trailing count)."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 5 + 8 or blob[:4] != CACHE_MAGIC:
        raise CacheIntegrityError(f"{path} is not an RGE1 embedding cache")
    channels, kind_tag = struct.unpack("<IB", blob[4:9])
    if kind_tag not in _TAG_KINDS:
        raise CacheIntegrityError(f"{path}: unknown pooling tag {kind_tag}")
    body_end = len(blob) - 8
    (expected_count,) = struct.unpack("<Q", blob[body_end:])
    offset = 9
    records = []
    while offset < body_end:
        if offset + 2 > body_end:
            raise CacheIntegrityError(f"{path}: truncated record at byte {offset}")
        (id_len,) = struct.unpack("<H", blob[offset : offset + 2])
        offset += 2
        record_len = id_len + 1 + 8 + 4 * channels
        if offset + record_len > body_end:
            raise CacheIntegrityError(f"{path}: truncated record at byte {offset}")
        record_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        gender_tag, bmi = struct.unpack("<Bd", blob[offset : offset + 9])
        offset += 9
        if gender_tag not in _TAG_GENDERS:
            raise CacheIntegrityError(f"{path}: unknown gender tag {gender_tag}")
        values = np.frombuffer(blob, dtype="<f4", count=channels, offset=offset)
        offset += 4 * channels
        records.append(CacheRecord(record_id, _TAG_GENDERS[gender_tag], bmi, values))
    if len(records) != expected_count:
        raise CacheIntegrityError(
            f"{path}: trailing count says {expected_count} records, "
            f"parsed {len(records)}"
        )
    return EmbeddingCache(channels, _TAG_KINDS[kind_tag], tuple(records))


def write_cache_sidecar(path: str | Path, metadata: dict) -> None:
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def read_cache_sidecar(path: str | Path) -> dict:
    sidecar = Path(str(path) + ".meta.json")
    if not sidecar.exists():
        raise CacheIntegrityError(f"missing cache sidecar {sidecar}")
    return json.loads(sidecar.read_text())


def export_embeddings_csv(cache: EmbeddingCache, out_path: str | Path) -> int:
    """Write ``id,gender,bmi,v0..v{C-1}``; returns the row count."""
    header = ["id", "gender", "bmi"] + [f"v{i}" for i in range(cache.channels)]
    lines = [",".join(header)]
    for record in cache.records:
        cells = [record.id, record.gender or "", repr(record.bmi)]
        cells.extend(repr(float(v)) for v in record.values)
        lines.append(",".join(cells))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(cache.records)
