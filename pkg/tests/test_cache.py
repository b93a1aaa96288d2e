"""Embedding cache binary format and CSV export."""

import struct

import numpy as np
import pytest

from reggap.cache import (
    CacheRecord,
    EmbeddingCacheWriter,
    export_embeddings_csv,
    read_embedding_cache,
)
from reggap.errors import CacheIntegrityError
from reggap.types import PoolKind


def sample_records(n=3, channels=4, seed=0):
    rng = np.random.default_rng(seed)
    genders = [None, "male", "female"]
    return [
        CacheRecord(
            f"rec-{i}",
            genders[i % 3],
            float(rng.uniform(17, 45)),
            rng.normal(size=channels).astype(np.float32),
        )
        for i in range(n)
    ]


def write_cache(path, records, channels=4, kind=PoolKind.REG_GAP):
    with EmbeddingCacheWriter(path, channels, kind) as writer:
        for record in records:
            writer.add(record)


class TestRoundTrip:
    def test_records_survive(self, tmp_path):
        path = tmp_path / "emb.rge"
        records = sample_records(5)
        write_cache(path, records)
        cache = read_embedding_cache(path)
        assert cache.channels == 4
        assert cache.kind is PoolKind.REG_GAP
        assert len(cache.records) == 5
        for original, loaded in zip(records, cache.records):
            assert loaded.id == original.id
            assert loaded.gender == original.gender
            assert loaded.bmi == original.bmi
            assert np.array_equal(loaded.values, original.values)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(1), kind=PoolKind.GAP)
        blob = path.read_bytes()
        assert blob[:4] == b"RGE1"
        channels, kind_tag = struct.unpack("<IB", blob[4:9])
        assert channels == 4 and kind_tag == 0

    def test_trailing_count(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(3))
        (count,) = struct.unpack("<Q", path.read_bytes()[-8:])
        assert count == 3

    def test_empty_cache(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, [])
        assert read_embedding_cache(path).records == ()


class TestIntegrity:
    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(3))
        path.write_bytes(path.read_bytes()[:-12])
        with pytest.raises(CacheIntegrityError):
            read_embedding_cache(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "emb.rge"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CacheIntegrityError):
            read_embedding_cache(path)

    def test_wrong_count_rejected(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(3))
        blob = bytearray(path.read_bytes())
        blob[-8:] = struct.pack("<Q", 7)
        path.write_bytes(bytes(blob))
        with pytest.raises(CacheIntegrityError):
            read_embedding_cache(path)

    def test_wrong_length_record_rejected(self, tmp_path):
        path = tmp_path / "emb.rge"
        with EmbeddingCacheWriter(path, 4, PoolKind.GAP) as writer:
            with pytest.raises(CacheIntegrityError):
                writer.add(CacheRecord("x", None, 25.0, np.zeros(3, np.float32)))
            writer.add(CacheRecord("x", None, 25.0, np.zeros(4, np.float32)))


class TestExport:
    def test_row_and_column_counts(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(3))
        out = tmp_path / "emb.csv"
        export_embeddings_csv(read_embedding_cache(path), out)
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 4  # header + 3
        assert lines[0] == "id,gender,bmi,v0,v1,v2,v3"
        assert all(len(line.split(",")) == 4 + 3 for line in lines)

    def test_values_round_trip_float32(self, tmp_path):
        path = tmp_path / "emb.rge"
        records = sample_records(2)
        write_cache(path, records)
        out = tmp_path / "emb.csv"
        export_embeddings_csv(read_embedding_cache(path), out)
        lines = out.read_text().strip().split("\n")[1:]
        for record, line in zip(records, lines):
            cells = line.split(",")
            values = np.array([float(v) for v in cells[3:]], dtype=np.float32)
            assert np.array_equal(values, record.values)
            assert float(cells[2]) == record.bmi

    def test_empty_gender_cell(self, tmp_path):
        path = tmp_path / "emb.rge"
        write_cache(path, sample_records(1))  # first record has gender None
        out = tmp_path / "emb.csv"
        export_embeddings_csv(read_embedding_cache(path), out)
        assert out.read_text().strip().split("\n")[1].split(",")[1] == ""
