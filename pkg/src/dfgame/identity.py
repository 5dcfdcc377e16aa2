"""Face-identity embeddings and the ID-similarity creation-score term.

The built-in embedder is deliberately tiny and deterministic: bilinear
downsample of luma to 16x16, mean-centered, L2-normalized.  Any stronger
model can be plugged in through :class:`EmbeddingProvider` or supplied as
sidecar embedding files without touching the scoring paths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ParameterError, ShapeError
from .imagebuf import bilinear_resize, luma

EMBED_GRID = 16
EMBED_DIM = EMBED_GRID * EMBED_GRID


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension identity feature with its cached Euclidean norm."""

    values: np.ndarray
    norm: float
    degenerate: bool = False

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EmbeddingVector":
        v = np.asarray(values, dtype=np.float64)
        n = float(np.linalg.norm(v))
        return cls(values=v, norm=n, degenerate=(n == 0.0))

    @property
    def dimension(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class IdentityReference:
    """Mean embedding of a person's reference images (not renormalized)."""

    person_id: str
    mean_embedding: EmbeddingVector
    n_refs: int


@dataclass(frozen=True)
class EmbeddingProvider:
    """Deterministic image -> embedding function with a fixed dimension."""

    dimension: int
    embed: Callable[[object], EmbeddingVector] = field(repr=False)


def toy_embed(img) -> EmbeddingVector:
    """Downsample luma to 16x16, subtract the mean, L2-normalize.

    Constant images embed to a flagged zero vector.
    """
    cells = bilinear_resize(luma(img), (EMBED_GRID, EMBED_GRID)).ravel()
    cells = cells - cells.mean()
    n = float(np.linalg.norm(cells))
    if n == 0.0:
        return EmbeddingVector(values=cells, norm=0.0, degenerate=True)
    return EmbeddingVector(values=cells / n, norm=1.0)


TOY_PROVIDER = EmbeddingProvider(dimension=EMBED_DIM, embed=toy_embed)


def id_reference(
    images: Sequence, person_id: str, provider: EmbeddingProvider = TOY_PROVIDER
) -> IdentityReference:
    """Arithmetic mean of the images' embeddings (cosine absorbs scale later)."""
    if not images:
        raise ParameterError("reference image list must be non-empty")
    vecs = [provider.embed(img).values for img in images]
    mean = np.mean(np.stack(vecs, axis=0), axis=0)
    return IdentityReference(
        person_id=person_id,
        mean_embedding=EmbeddingVector.from_values(mean),
        n_refs=len(images),
    )


def reference_from_vectors(vectors: np.ndarray, person_id: str) -> IdentityReference:
    """Build a reference from pre-computed embedding rows (e.g. a sidecar file)."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ParameterError(f"expected a non-empty (count, dim) array, got {arr.shape}")
    return IdentityReference(
        person_id=person_id,
        mean_embedding=EmbeddingVector.from_values(arr.mean(axis=0)),
        n_refs=arr.shape[0],
    )


class IdSimilarity(NamedTuple):
    value: float
    degenerate: bool


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> IdSimilarity:
    """Cosine similarity; 0 with a degeneracy flag if either vector is zero."""
    if a.dimension != b.dimension:
        raise ShapeError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    if a.norm == 0.0 or b.norm == 0.0:
        return IdSimilarity(0.0, True)
    return IdSimilarity(float(a.values @ b.values / (a.norm * b.norm)), False)


def id_similarity(
    fake, ref: IdentityReference, provider: EmbeddingProvider = TOY_PROVIDER
) -> IdSimilarity:
    """Cosine between a fake image's embedding and a person's mean embedding."""
    if ref.mean_embedding.dimension != provider.dimension:
        raise ShapeError(
            f"reference dimension {ref.mean_embedding.dimension} does not match "
            f"provider dimension {provider.dimension}"
        )
    return cosine(provider.embed(fake), ref.mean_embedding)


# Sidecar embedding files: little-endian u32 dimension, u32 count, then
# count * dimension float32 values.
_SIDECAR_HEADER = struct.Struct("<II")


def write_embedding_sidecar(path: str | Path, vectors: np.ndarray) -> None:
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ParameterError(f"expected a non-empty (count, dim) array, got {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_SIDECAR_HEADER.pack(arr.shape[1], arr.shape[0]))
        fh.write(arr.astype("<f4").tobytes())


def read_embedding_sidecar(path: str | Path) -> np.ndarray:
    """Read a sidecar file back as a float64 (count, dim) array."""
    raw = Path(path).read_bytes()
    if len(raw) < _SIDECAR_HEADER.size:
        raise ParameterError(f"sidecar file {path} too short for its header")
    dim, count = _SIDECAR_HEADER.unpack_from(raw)
    expected = _SIDECAR_HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise ParameterError(
            f"sidecar file {path} has {len(raw)} bytes, expected {expected} "
            f"for dim={dim} count={count}"
        )
    vecs = np.frombuffer(raw, dtype="<f4", offset=_SIDECAR_HEADER.size)
    return vecs.reshape(count, dim).astype(np.float64)


def reference_from_sidecar(path: str | Path, person_id: str) -> IdentityReference:
    return reference_from_vectors(read_embedding_sidecar(path), person_id)
