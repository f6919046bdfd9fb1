import json
import struct

import numpy as np
import pytest

from capaug.embeddings import (
    EmbeddingKind,
    EmbeddingMatrix,
    load_embeddings,
    load_manifest,
    save_embeddings,
    synth_embeddings,
)
from capaug.errors import CorruptionError, FormatError, ShapeError, ValidationError


def write_manifest(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


class TestBinaryFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        payload = rng.standard_normal((4, 8)).astype(np.float32).astype(np.float64)
        emb = EmbeddingMatrix(payload, EmbeddingKind.VISUAL_REGIONS, source_tag="t")
        path = tmp_path / "v.c3em"
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert back.kind is EmbeddingKind.VISUAL_REGIONS
        assert back.payload.tobytes() == emb.payload.tobytes()

    def test_load_save_load_identity(self, tmp_path):
        emb = synth_embeddings(9, 3, 5, EmbeddingKind.ATTRIBUTE_TEXTS)
        p1, p2 = tmp_path / "a.c3em", tmp_path / "b.c3em"
        save_embeddings(emb, p1)
        save_embeddings(load_embeddings(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.c3em"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        # header says 3x5 but only 14 float32 values follow
        header = struct.pack("<4sHBII", b"C3EM", 1, 0, 3, 5)
        path = tmp_path / "trunc.c3em"
        path.write_bytes(header + b"\x00" * (14 * 4))
        with pytest.raises(CorruptionError, match="3x5"):
            load_embeddings(path)

    def test_unknown_kind_code(self, tmp_path):
        header = struct.pack("<4sHBII", b"C3EM", 1, 9, 1, 1)
        path = tmp_path / "kind.c3em"
        path.write_bytes(header + b"\x00" * 4)
        with pytest.raises(FormatError, match="kind"):
            load_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        header = struct.pack("<4sHBII", b"C3EM", 7, 0, 1, 1)
        path = tmp_path / "ver.c3em"
        path.write_bytes(header + b"\x00" * 4)
        with pytest.raises(FormatError, match="version"):
            load_embeddings(path)

    def test_degenerate_header_shape(self, tmp_path):
        header = struct.pack("<4sHBII", b"C3EM", 1, 0, 0, 4)
        path = tmp_path / "zero.c3em"
        path.write_bytes(header)
        with pytest.raises(FormatError, match="degenerate"):
            load_embeddings(path)


class TestSynth:
    def test_same_seed_identical(self):
        a = synth_embeddings(123, 6, 4, EmbeddingKind.VISUAL_REGIONS)
        b = synth_embeddings(123, 6, 4, EmbeddingKind.VISUAL_REGIONS)
        assert a.payload.tobytes() == b.payload.tobytes()

    def test_different_seeds_differ(self):
        a = synth_embeddings(1, 6, 4, EmbeddingKind.VISUAL_REGIONS)
        b = synth_embeddings(2, 6, 4, EmbeddingKind.VISUAL_REGIONS)
        assert not np.array_equal(a.payload, b.payload)

    def test_pooled_rows_unit_norm(self):
        emb = synth_embeddings(77, 40, 512, EmbeddingKind.POOLED_TEXT)
        norms = np.linalg.norm(emb.payload, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-6

    def test_zero_count_rejected(self):
        with pytest.raises(ShapeError):
            synth_embeddings(0, 0, 4, EmbeddingKind.VISUAL_REGIONS)
        with pytest.raises(ShapeError):
            synth_embeddings(0, 4, 0, EmbeddingKind.VISUAL_REGIONS)

    def test_pooled_round_trip_preserves_invariant(self, tmp_path):
        emb = synth_embeddings(8, 10, 768, EmbeddingKind.POOLED_IMAGE)
        path = tmp_path / "p.c3em"
        save_embeddings(emb, path)
        back = load_embeddings(path)  # __post_init__ revalidates norms
        assert back.kind is EmbeddingKind.POOLED_IMAGE


class TestEmbeddingMatrixInvariants:
    def test_non_unit_pooled_rejected(self):
        with pytest.raises(ValidationError, match="unit-normalized"):
            EmbeddingMatrix(np.ones((2, 3)), EmbeddingKind.POOLED_TEXT)

    def test_non_finite_rejected(self):
        bad = np.array([[1.0, np.inf]])
        with pytest.raises(Exception):
            EmbeddingMatrix(bad, EmbeddingKind.VISUAL_REGIONS)


class TestManifest:
    def rows(self):
        return [
            {
                "id": "s1",
                "image_ref": "img/s1.jpg",
                "caption": "青花瓷瓶与如意",
                "image_embedding_ref": "emb/s1.c3em",
            },
            {
                "id": "s2",
                "image_ref": "img/s2.jpg",
                "caption": "a rabbit looking back",
                "image_embedding_ref": "emb/s2.c3em",
                "attribute_embedding_ref": "emb/s2_attr.c3em",
            },
        ]

    def test_two_valid_lines_in_order(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, self.rows())
        samples = load_manifest(path)
        assert [s.id for s in samples] == ["s1", "s2"]
        assert samples[0].attribute_embedding_ref is None
        assert samples[1].attribute_embedding_ref == "emb/s2_attr.c3em"

    def test_duplicate_id_cites_both_lines(self, tmp_path):
        rows = self.rows()
        dup = dict(rows[0])
        rows += [dict(rows[1], id="s3"), dup]  # duplicate of line 1 on line 4
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        with pytest.raises(ValidationError, match=r"'s1' on lines 1 and 4"):
            load_manifest(path)

    def test_empty_caption_rejected(self, tmp_path):
        rows = [dict(self.rows()[0], caption="   ")]
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        with pytest.raises(ValidationError, match="caption"):
            load_manifest(path)

    def test_missing_field_cites_line(self, tmp_path):
        rows = self.rows()
        del rows[1]["image_embedding_ref"]
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        with pytest.raises(ValidationError, match=r":2:.*image_embedding_ref"):
            load_manifest(path)

    def test_invalid_json_cites_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "s1"\n', encoding="utf-8")
        with pytest.raises(ValidationError, match=":1:"):
            load_manifest(path)
