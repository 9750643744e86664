"""Description embedders and the mean-based embedding aggregator.

Two embedder kinds mirror the two downstream text pathways: a single
vector per description (dimension c) for the deterministic model, and a
token matrix (n_i x e) for the sequence-encoder models. Embedders are
frozen: the same string always maps to the same array.

The aggregator combines the k per-description embeddings into one
``AggregatedEmbedding``. Vectors are averaged elementwise; token matrices
are zero-padded to the longest description (G rows) and averaged, with a
validity mask marking rows where at least one description contributed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import DimensionMismatch, EmptyList, EmptyText

VECTOR = "vector"
TOKEN_MATRIX = "token-matrix"


@dataclass(frozen=True)
class AggregatedEmbedding:
    """Aggregate of k description embeddings.

    ``values`` is (c,) for kind "vector" or (G, e) for kind "token-matrix";
    ``mask`` is a (G,) boolean row-validity mask (None for vectors).
    """

    kind: str
    values: np.ndarray
    mask: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])


class DescriptionEmbedder(Protocol):
    kind: str
    dim: int

    def embed(self, text: str) -> np.ndarray:
        ...


class HashingEmbedder:
    """Deterministic test embedder: seeded hash-to-unit-vector per token.

    Each whitespace token maps through sha256(seed|token) to a seeded RNG
    draw on the unit sphere. Kind "vector" returns the mean of the token
    vectors (dimension c); kind "token-matrix" returns one row per token
    (n_i x e). No learned weights, so it is frozen by construction.
    """

    def __init__(self, kind: str = TOKEN_MATRIX, dim: int = 16, seed: int = 0):
        if kind not in (VECTOR, TOKEN_MATRIX):
            raise ValueError(f"unknown embedder kind {kind!r}")
        self.kind = kind
        self.dim = int(dim)
        self.seed = int(seed)

    def token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}|{token}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    def tokenize(self, text: str) -> list[str]:
        return text.lower().split()

    def embed(self, text: str) -> np.ndarray:
        tokens = self.tokenize(text)
        if not tokens:
            raise EmptyText("cannot embed empty text")
        rows = np.stack([self.token_vector(t) for t in tokens])
        if self.kind == VECTOR:
            return rows.mean(axis=0)
        return rows


def embed_description(text: str, embedder: DescriptionEmbedder) -> np.ndarray:
    """Embed one description; (c,) for vector embedders, (n_i, e) for token ones."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    return np.asarray(embedder.embed(text), dtype=np.float64)


# Aggregation operators; "mean" is the default used throughout, alternates
# are pluggable by key.
AGGREGATION_OPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "mean": lambda stack: stack.mean(axis=0),
    "max": lambda stack: stack.max(axis=0),
}


def _resolve_op(op: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return AGGREGATION_OPS[op]
    except KeyError:
        raise ValueError(f"unknown aggregation op {op!r}") from None


def aggregate_vectors(vectors: list[np.ndarray], op: str = "mean") -> AggregatedEmbedding:
    """Combine k equal-dimension vectors elementwise (default: arithmetic mean)."""
    if len(vectors) == 0:
        raise EmptyList("need at least one embedding to aggregate")
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    dims = {a.shape for a in arrays}
    if len(dims) != 1 or arrays[0].ndim != 1:
        raise DimensionMismatch(f"expected equal 1-D shapes, got {sorted(dims)}")
    values = _resolve_op(op)(np.stack(arrays))
    return AggregatedEmbedding(kind=VECTOR, values=values, mask=None)


def aggregate_token_matrices(
    matrices: list[np.ndarray], op: str = "mean"
) -> AggregatedEmbedding:
    """Zero-pad k token matrices to G = max(n_i) rows, then combine elementwise.

    Padding rows contribute zeros to the average, so trailing rows are
    attenuated by the number of missing descriptions; mask row g is True
    iff at least one input had more than g tokens.
    """
    if len(matrices) == 0:
        raise EmptyList("need at least one embedding to aggregate")
    arrays = [np.asarray(m, dtype=np.float64) for m in matrices]
    if any(a.ndim != 2 or a.shape[0] < 1 for a in arrays):
        raise DimensionMismatch("token embeddings must be 2-D with at least one row")
    widths = {a.shape[1] for a in arrays}
    if len(widths) != 1:
        raise DimensionMismatch(f"token embedding dims differ: {sorted(widths)}")
    lengths = np.array([a.shape[0] for a in arrays])
    max_rows = int(lengths.max())
    width = arrays[0].shape[1]
    padded = np.zeros((len(arrays), max_rows, width), dtype=np.float64)
    for i, a in enumerate(arrays):
        padded[i, : a.shape[0]] = a
    values = _resolve_op(op)(padded)
    mask = np.arange(max_rows)[None, :] < lengths[:, None]
    return AggregatedEmbedding(kind=TOKEN_MATRIX, values=values, mask=mask.any(axis=0))


def embed_description_set(
    descriptions: list[str] | tuple[str, ...],
    embedder: DescriptionEmbedder,
    op: str = "mean",
) -> AggregatedEmbedding:
    """Embed each description and aggregate according to the embedder kind."""
    embedded = [embed_description(d, embedder) for d in descriptions]
    if embedder.kind == VECTOR:
        return aggregate_vectors(embedded, op=op)
    return aggregate_token_matrices(embedded, op=op)
