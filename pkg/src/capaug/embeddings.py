"""Embedding file I/O, synthetic fixtures, and dataset manifests.

Encoders run outside this engine; their outputs arrive as binary matrix
files and are paired with captions through a line-delimited JSON manifest.

Binary layout (little-endian), magic ``C3EM``::

    magic "C3EM" | version u16 | kind u8 | count u32 | dim u32
    | count*dim float32 values, row-major

Payloads are stored as float32 and widened exactly to float64 on load;
saving rounds to nearest float32. Matrices synthesized here are generated
on the float32 grid, so save/load round-trips them bit-exactly.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, ValidationError
from .linalg import as_matrix

MAGIC = b"C3EM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBII")


class EmbeddingKind(str, Enum):
    VISUAL_REGIONS = "visual_regions"
    ATTRIBUTE_TEXTS = "attribute_texts"
    POOLED_TEXT = "pooled_text"
    POOLED_IMAGE = "pooled_image"

    @property
    def pooled(self) -> bool:
        return self in (EmbeddingKind.POOLED_TEXT, EmbeddingKind.POOLED_IMAGE)


_KIND_CODES = {
    EmbeddingKind.VISUAL_REGIONS: 0,
    EmbeddingKind.ATTRIBUTE_TEXTS: 1,
    EmbeddingKind.POOLED_TEXT: 2,
    EmbeddingKind.POOLED_IMAGE: 3,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A dense embedding matrix with provenance.

    ``payload`` is float64, one embedding per row. Pooled kinds must have
    unit-normalized rows (L2 norm 1 +- 1e-6).
    """

    payload: np.ndarray
    kind: EmbeddingKind
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "payload", as_matrix(self.payload, "payload"))
        object.__setattr__(self, "kind", EmbeddingKind(self.kind))
        if self.kind.pooled:
            norms = np.linalg.norm(self.payload, axis=1)
            off = np.max(np.abs(norms - 1.0))
            if off > 1e-6:
                raise ValidationError(
                    f"{self.kind.value} rows must be unit-normalized; "
                    f"worst row deviates by {off:.3g}"
                )

    @property
    def count(self) -> int:
        return self.payload.shape[0]

    @property
    def dim(self) -> int:
        return self.payload.shape[1]


def save_embeddings(emb: EmbeddingMatrix, path) -> None:
    """Write ``emb`` to ``path`` atomically (temp file + rename)."""
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, _KIND_CODES[emb.kind], emb.count, emb.dim
    )
    payload = emb.payload.astype("<f4").tobytes()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_embeddings(path) -> EmbeddingMatrix:
    """Read an embedding matrix written by :func:`save_embeddings`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, kind_code, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown kind code {kind_code}")
    if count == 0 or dim == 0:
        raise FormatError(f"{path}: header declares degenerate shape {count}x{dim}")
    body = raw[_HEADER.size:]
    expected = count * dim * 4
    if len(body) != expected:
        raise CorruptionError(
            f"{path}: header declares {count}x{dim} ({expected} bytes) "
            f"but payload has {len(body)} bytes"
        )
    payload = (
        np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(count, dim)
    )
    return EmbeddingMatrix(payload, _CODE_KINDS[kind_code], source_tag=str(path))


def synth_embeddings(
    seed: int, count: int, dim: int, kind: EmbeddingKind, source_tag: str = ""
) -> EmbeddingMatrix:
    """Deterministic synthetic embeddings for fixtures and tests.

    Values are standard normal draws from NumPy's PCG64 bit generator
    seeded with ``seed`` (``np.random.Generator(np.random.PCG64(seed))``),
    rounded to the float32 grid so file round-trips are bit-exact. Pooled
    kinds are row-normalized before rounding.
    """
    if count < 1 or dim < 1:
        raise ShapeError(f"count and dim must be >= 1, got {count}x{dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = rng.standard_normal((count, dim))
    if EmbeddingKind(kind).pooled:
        values = values / np.linalg.norm(values, axis=1, keepdims=True)
    values = values.astype(np.float32).astype(np.float64)
    tag = source_tag or f"synth(seed={seed})"
    return EmbeddingMatrix(values, kind, source_tag=tag)


@dataclass(frozen=True)
class Sample:
    """One manifest row: a caption paired with embedding file references."""

    id: str
    image_ref: str
    caption: str
    image_embedding_ref: str
    attribute_embedding_ref: str | None = None


_REQUIRED_KEYS = ("id", "image_ref", "caption", "image_embedding_ref")


def load_manifest(path) -> list[Sample]:
    """Parse a line-delimited JSON manifest, preserving order.

    Each line is one JSON object with keys ``id``, ``image_ref``,
    ``caption``, ``image_embedding_ref`` and optionally
    ``attribute_embedding_ref``. Blank lines are skipped.
    """
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in _REQUIRED_KEYS if k not in record]
            if missing:
                raise ValidationError(
                    f"{path}:{lineno}: missing required field(s) {', '.join(missing)}"
                )
            sample_id = str(record["id"])
            if not sample_id:
                raise ValidationError(f"{path}:{lineno}: id must be nonempty")
            if sample_id in seen:
                raise ValidationError(
                    f"duplicate id {sample_id!r} on lines {seen[sample_id]} and {lineno}"
                )
            caption = str(record["caption"])
            if not caption.strip():
                raise ValidationError(
                    f"{path}:{lineno}: caption is empty after trimming"
                )
            seen[sample_id] = lineno
            samples.append(
                Sample(
                    id=sample_id,
                    image_ref=str(record["image_ref"]),
                    caption=caption,
                    image_embedding_ref=str(record["image_embedding_ref"]),
                    attribute_embedding_ref=(
                        str(record["attribute_embedding_ref"])
                        if record.get("attribute_embedding_ref") is not None
                        else None
                    ),
                )
            )
    return samples
