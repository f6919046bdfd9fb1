"""Bidirectional coverage attention and the unified completeness score.

Visual region embeddings attend over attribute embeddings and vice versa;
the per-row attention maxima become coverage vectors, whose means combine
through a harmonic mean into a single completeness score in [0, 1]. The
harmonic mean punishes imbalance: strong region coverage cannot hide
attributes that nothing in the image supports.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .embeddings import EmbeddingKind, EmbeddingMatrix
from .errors import EmptyPoolError, NumericError, ShapeError, ValidationError
from .linalg import as_matrix, as_vector, matmul, row_max, row_softmax

INIT_MODES = ("seeded_orthogonal", "identity_if_square", "file")


def _semi_orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded matrix with orthonormal columns (or rows, if cols > rows).

    QR of a standard-normal draw, sign-fixed so the decomposition is
    unique regardless of the underlying LAPACK.
    """
    tall = rows >= cols
    a = rng.standard_normal((rows, cols) if tall else (cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if tall else q.T


@dataclass(frozen=True)
class ProjectionSet:
    """The four frozen projections behind both attention directions.

    ``w_q`` (d_v x d_k) and ``w_k`` (d_t x d_k) serve region-to-attribute
    attention; ``w_q2`` (d_t x d_k) and ``w_k2`` (d_v x d_k) serve the
    reverse direction. All four share the common width ``d_k``.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_q2: np.ndarray
    w_k2: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_q2", "w_k2"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        widths = {m.shape[1] for m in (self.w_q, self.w_k, self.w_q2, self.w_k2)}
        if len(widths) != 1:
            raise ShapeError(f"projections disagree on d_k: {sorted(widths)}")
        if self.w_q2.shape[0] != self.w_k.shape[0]:
            raise ShapeError("w_q2 and w_k must share the text dimension")
        if self.w_k2.shape[0] != self.w_q.shape[0]:
            raise ShapeError("w_k2 and w_q must share the visual dimension")

    @property
    def d_v(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_t(self) -> int:
        return self.w_k.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def seeded_orthogonal(cls, d_v: int, d_t: int, d_k: int | None = None,
                          seed: int = 0) -> "ProjectionSet":
        """Default init: orthogonal projections from one seeded PCG64 stream.

        Draw order is w_q, w_k, w_q2, w_k2. ``d_k`` defaults to
        ``min(d_v, d_t)``.
        """
        if d_k is None:
            d_k = min(d_v, d_t)
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(
            w_q=_semi_orthogonal(d_v, d_k, rng),
            w_k=_semi_orthogonal(d_t, d_k, rng),
            w_q2=_semi_orthogonal(d_t, d_k, rng),
            w_k2=_semi_orthogonal(d_v, d_k, rng),
        )

    @classmethod
    def identity(cls, d_v: int, d_t: int, d_k: int | None = None) -> "ProjectionSet":
        """Identity projections; valid only when both input dims equal d_k."""
        if d_k is None:
            d_k = min(d_v, d_t)
        if d_v != d_k or d_t != d_k:
            raise ShapeError(
                f"identity init needs d_v == d_t == d_k, got {d_v}/{d_t}/{d_k}"
            )
        eye = np.eye(d_k)
        return cls(eye, eye.copy(), eye.copy(), eye.copy())

    def save(self, path) -> None:
        np.savez(path, w_q=self.w_q, w_k=self.w_k, w_q2=self.w_q2, w_k2=self.w_k2)

    @classmethod
    def load(cls, path) -> "ProjectionSet":
        if not Path(path).exists():
            raise ValidationError(f"projection file not found: {path}")
        with np.load(path) as data:
            try:
                return cls(data["w_q"], data["w_k"], data["w_q2"], data["w_k2"])
            except KeyError as exc:
                raise ValidationError(f"{path}: missing projection array {exc}") from exc


@dataclass(frozen=True)
class CoverageReport:
    """Everything the bidirectional pass produces for one sample."""

    att_v2a: np.ndarray
    att_a2v: np.ndarray
    c_region: np.ndarray
    c_attr: np.ndarray
    mean_region: float
    mean_attr: float
    score: float

    def __post_init__(self):
        n, m = self.att_v2a.shape
        if self.att_a2v.shape != (m, n):
            raise ShapeError(
                f"attention shapes disagree: {n}x{m} vs "
                f"{self.att_a2v.shape[0]}x{self.att_a2v.shape[1]}"
            )
        if self.c_region.shape != (n,) or self.c_attr.shape != (m,):
            raise ShapeError("coverage vector lengths do not match attention shapes")
        lo, hi = sorted((self.mean_region, self.mean_attr))
        if not (0.0 <= self.score <= 1.0 and lo - 1e-12 <= self.score <= hi + 1e-12):
            raise NumericError(f"score {self.score} outside [{lo}, {hi}]")

    def to_json(self, full: bool = False) -> dict:
        out = {
            "c_region": [float(x) for x in self.c_region],
            "c_attr": [float(x) for x in self.c_attr],
            "mean_region": self.mean_region,
            "mean_attr": self.mean_attr,
            "score": self.score,
        }
        if full:
            out["att_v2a"] = [[float(x) for x in row] for row in self.att_v2a]
            out["att_a2v"] = [[float(x) for x in row] for row in self.att_a2v]
        return out


def _payload(x, kind: EmbeddingKind, name: str) -> np.ndarray:
    if isinstance(x, EmbeddingMatrix):
        if x.kind is not kind:
            raise ValidationError(f"{name} must have kind {kind.value}, got {x.kind.value}")
        return x.payload
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == 0 and kind is EmbeddingKind.ATTRIBUTE_TEXTS:
        raise EmptyPoolError("cannot score an empty attribute pool (M = 0)")
    return as_matrix(arr, name)


def _scaled_attention(queries, keys, w_q, w_k) -> np.ndarray:
    if queries.shape[1] != w_q.shape[0]:
        raise ShapeError(
            f"query dim {queries.shape[1]} does not match projection dim {w_q.shape[0]}"
        )
    if keys.shape[1] != w_k.shape[0]:
        raise ShapeError(
            f"key dim {keys.shape[1]} does not match projection dim {w_k.shape[0]}"
        )
    d_k = w_q.shape[1]
    logits = matmul(matmul(queries, w_q), matmul(keys, w_k).T) / math.sqrt(d_k)
    return row_softmax(logits)


def attention_v2a(v, e, p: ProjectionSet) -> np.ndarray:
    """Region-to-attribute attention: N x M, rows stochastic."""
    return _scaled_attention(
        _payload(v, EmbeddingKind.VISUAL_REGIONS, "visual regions"),
        _payload(e, EmbeddingKind.ATTRIBUTE_TEXTS, "attribute embeddings"),
        p.w_q,
        p.w_k,
    )


def attention_a2v(e, v, p: ProjectionSet) -> np.ndarray:
    """Attribute-to-region attention: M x N, rows stochastic."""
    return _scaled_attention(
        _payload(e, EmbeddingKind.ATTRIBUTE_TEXTS, "attribute embeddings"),
        _payload(v, EmbeddingKind.VISUAL_REGIONS, "visual regions"),
        p.w_q2,
        p.w_k2,
    )


def coverage_vectors(att_v2a, att_a2v) -> tuple[np.ndarray, np.ndarray]:
    """Per-row attention maxima of both directions."""
    att_v2a = as_matrix(att_v2a, "att_v2a")
    att_a2v = as_matrix(att_a2v, "att_a2v")
    if att_v2a.shape != att_a2v.shape[::-1]:
        raise ShapeError(
            f"attention shapes must be transposes: {att_v2a.shape} vs {att_a2v.shape}"
        )
    return row_max(att_v2a), row_max(att_a2v)


def completeness_score(c_region, c_attr) -> tuple[float, float, float]:
    """Coverage means and their harmonic mean.

    Returns ``(mean_region, mean_attr, score)``. The harmonic mean at
    (0, 0) is defined as 0 by continuity; it cannot arise from softmax
    outputs but guards reports loaded from files.
    """
    c_region = as_vector(c_region, "c_region")
    c_attr = as_vector(c_attr, "c_attr")
    if (c_region <= 0).any() or (c_attr <= 0).any():
        raise NumericError("coverage entries must be strictly positive")
    mean_region = float(c_region.mean())
    mean_attr = float(c_attr.mean())
    if mean_region + mean_attr == 0.0:
        return mean_region, mean_attr, 0.0
    score = 2.0 * mean_region * mean_attr / (mean_region + mean_attr)
    return mean_region, mean_attr, score


def score_sample(v, e, p: ProjectionSet) -> CoverageReport:
    """Full bidirectional pass: attention, coverage, and the final score."""
    att_v2a = attention_v2a(v, e, p)
    att_a2v = attention_a2v(e, v, p)
    c_region, c_attr = coverage_vectors(att_v2a, att_a2v)
    mean_region, mean_attr, score = completeness_score(c_region, c_attr)
    return CoverageReport(att_v2a, att_a2v, c_region, c_attr,
                          mean_region, mean_attr, score)


def build_projections(
    d_v: int,
    d_t: int,
    d_k: int | None = None,
    init: str = "seeded_orthogonal",
    seed: int = 0,
    projections_file=None,
) -> ProjectionSet:
    """Construct (or load) projections for the given embedding dims."""
    if init not in INIT_MODES:
        raise ValidationError(f"unknown projection init {init!r}; choose from {INIT_MODES}")
    if init == "seeded_orthogonal":
        return ProjectionSet.seeded_orthogonal(d_v, d_t, d_k=d_k, seed=seed)
    if init == "identity_if_square":
        return ProjectionSet.identity(d_v, d_t, d_k=d_k)
    if projections_file is None:
        raise ValidationError("init='file' requires a projections file")
    loaded = ProjectionSet.load(projections_file)
    if loaded.d_v != d_v or loaded.d_t != d_t:
        raise ShapeError(
            f"loaded projections expect dims {loaded.d_v}/{loaded.d_t}, "
            f"embeddings have {d_v}/{d_t}"
        )
    return loaded


class CompletenessScorer(BaseEstimator):
    """Estimator-style front end for the coverage scorer.

    ``fit`` binds a frozen projection set to the embedding dimensions seen
    in the reference pair(s); ``transform`` then maps (visual, attribute)
    pairs to completeness scores, and ``report`` exposes the full
    per-sample coverage breakdown. Follows scikit-learn conventions
    (``get_params``/``set_params``, trailing-underscore fitted state) so
    the scorer drops into existing tooling.

    Parameters
    ----------
    d_k : int, default=None
        Attention width; defaults to ``min(d_v, d_t)``.
    init : {"seeded_orthogonal", "identity_if_square", "file"}
        Projection initialization mode.
    seed : int, default=0
        PCG64 seed for the orthogonal init.
    projections_file : path, default=None
        Source for externally trained projections when ``init="file"``.
    """

    def __init__(self, d_k=None, init="seeded_orthogonal", seed=0, projections_file=None):
        self.d_k = d_k
        self.init = init
        self.seed = seed
        self.projections_file = projections_file

    def fit(self, X, y=None):
        v, e = self._as_pair(X[0] if isinstance(X, list) else X)
        self.projections_ = build_projections(
            v.shape[1], e.shape[1], d_k=self.d_k, init=self.init,
            seed=self.seed, projections_file=self.projections_file,
        )
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "projections_")
        pairs = X if isinstance(X, list) else [X]
        return np.array([self.report(v, e).score for v, e in map(self._as_pair, pairs)])

    def report(self, visual, attributes) -> CoverageReport:
        check_is_fitted(self, "projections_")
        return score_sample(visual, attributes, self.projections_)

    @staticmethod
    def _as_pair(item):
        v, e = item
        return (
            _payload(v, EmbeddingKind.VISUAL_REGIONS, "visual regions"),
            _payload(e, EmbeddingKind.ATTRIBUTE_TEXTS, "attribute embeddings"),
        )
