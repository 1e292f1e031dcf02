"""Embeddings and exact cosine-similarity retrieval over target-side texts.

Indexing the styled (target) side of the pseudo-parallel corpus means shot
search runs over candidate *answers* rather than questions: at training time
the query is the pair's own target text, at inference time it is the sketch
produced by a first random-shot generation round.

The built-in embedder hashes character 3-5-grams into a fixed-width TF-IDF
vector. It is deterministic and dependency-free; a learned embedder can be
swapped in over HTTP, with fingerprinting keeping indexes unambiguous.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .dataset_builder import PseudoPair

logger = logging.getLogger(__name__)

_INDEX_MAGIC = b"SPVIX001"

QUERY_KINDS = ("target_side", "sketch", "random")


class EmbedError(ValueError):
    """Raised when a text produces no usable vector (code 'zero_vector')."""

    def __init__(self, message: str, code: str = "zero_vector"):
        super().__init__(message)
        self.code = code


class FingerprintMismatch(RuntimeError):
    """Persisted index was built by a different embedder configuration."""


def hashed_ngram_counts(
    text: str, dim: int, ngram_min: int = 3, ngram_max: int = 5
) -> dict[int, int]:
    """Hash character n-grams of the whitespace-normalized, lowercased text.

    Shared feature family for the retrieval embedder and the style
    classifier; CRC32 keeps the hashing stable across processes.
    """
    norm = " ".join(text.lower().split())
    if not norm:
        return {}
    padded = f" {norm} "
    counts: dict[int, int] = {}
    for n in range(ngram_min, ngram_max + 1):
        for i in range(len(padded) - n + 1):
            idx = zlib.crc32(padded[i : i + n].encode("utf-8")) % dim
            counts[idx] = counts.get(idx, 0) + 1
    return counts


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    @property
    def fingerprint(self) -> str: ...


class HashedTfidfEmbedder:
    """Hashed character 3-5-gram TF-IDF embedder, L2-normalized.

    Unfitted, it embeds raw term frequencies; after fit() over a corpus it
    applies smoothed IDF weights learned in the hashed feature space. Same
    text always maps to the same vector for a given fitted state.
    """

    def __init__(self, dim: int = 2**14, ngram_min: int = 3, ngram_max: int = 5):
        if dim < 1:
            raise ValueError("dim must be positive")
        if not 1 <= ngram_min <= ngram_max:
            raise ValueError("require 1 <= ngram_min <= ngram_max")
        self.dim = dim
        self.ngram_min = ngram_min
        self.ngram_max = ngram_max
        self.doc_freq: np.ndarray | None = None
        self.n_docs = 0

    def fit(self, texts: Iterable[str]) -> "HashedTfidfEmbedder":
        df = np.zeros(self.dim, dtype=np.uint32)
        n = 0
        for text in texts:
            for idx in hashed_ngram_counts(text, self.dim, self.ngram_min, self.ngram_max):
                df[idx] += 1
            n += 1
        self.doc_freq = df
        self.n_docs = n
        return self

    def _idf(self) -> np.ndarray | None:
        if self.doc_freq is None:
            return None
        return np.log((1.0 + self.n_docs) / (1.0 + self.doc_freq.astype(np.float64))) + 1.0

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbedError("cannot embed empty text")
        counts = hashed_ngram_counts(text, self.dim, self.ngram_min, self.ngram_max)
        if not counts:
            raise EmbedError(f"no features extracted from {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for idx, c in counts.items():
            vec[idx] = float(c)
        idf = self._idf()
        if idf is not None:
            vec *= idf
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise EmbedError(f"zero vector for {text!r}")
        return vec / norm

    @property
    def fingerprint(self) -> str:
        state = {
            "kind": "hashed_tfidf",
            "dim": self.dim,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "n_docs": self.n_docs,
            "df": hashlib.sha256(self.doc_freq.tobytes()).hexdigest()
            if self.doc_freq is not None
            else None,
        }
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    def state_header(self) -> dict:
        return {
            "kind": "hashed_tfidf",
            "dim": self.dim,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "n_docs": self.n_docs,
            "fitted": self.doc_freq is not None,
        }


class HttpEmbedder:
    """Remote embedding service: POST {"texts": [...]} -> {"vectors": [[...]]}."""

    def __init__(self, endpoint: str, dim: int, model_tag: str = "", timeout: float = 30.0):
        self.endpoint = endpoint
        self.dim = dim
        self.model_tag = model_tag
        self.timeout = timeout
        self.session = requests.Session()

    def embed(self, text: str) -> np.ndarray:
        resp = self.session.post(self.endpoint, json={"texts": [text]}, timeout=self.timeout)
        if resp.status_code != 200:
            raise EmbedError(f"embedder HTTP {resp.status_code}", code="http_error")
        vec = np.asarray(resp.json()["vectors"][0], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbedError(f"expected dim {self.dim}, got {vec.shape}", code="bad_dim")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise EmbedError("service returned a zero vector")
        return vec / norm

    @property
    def fingerprint(self) -> str:
        state = {"kind": "http_service", "endpoint": self.endpoint, "dim": self.dim, "model_tag": self.model_tag}
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    def state_header(self) -> dict:
        return {"kind": "http_service", "dim": self.dim, "model_tag": self.model_tag, "fitted": False}


@dataclass(frozen=True)
class Shot:
    pair: PseudoPair
    score: float


@dataclass(frozen=True)
class ShotSet:
    """Ordered retrieved example pairs with similarity scores."""

    shots: tuple[Shot, ...]
    k: int
    query_kind: str

    def __post_init__(self) -> None:
        if self.query_kind not in QUERY_KINDS:
            raise ValueError(f"unknown query_kind {self.query_kind!r}")
        if len(self.shots) > self.k:
            raise ValueError("more shots than requested k")
        scores = [s.score for s in self.shots]
        if any(a < b - 1e-12 for a, b in zip(scores, scores[1:])):
            raise ValueError("shot scores must be non-increasing")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.pair.id for s in self.shots)

    def __len__(self) -> int:
        return len(self.shots)


class VectorIndex:
    """Exact flat cosine index over unit vectors, keyed by pair id.

    Vectors are stored float32 on disk and scored in float64 in memory.
    Build sorts entries by id; after build the index is immutable and safe
    for concurrent readers.
    """

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, fingerprint: str):
        if not ids:
            raise ValueError("index must contain at least one entry")
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate ids in index")
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError("matrix shape does not match ids")
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self.ids = [ids[i] for i in order]
        self.matrix = np.ascontiguousarray(matrix[order].astype(np.float64))
        self.fingerprint = fingerprint
        self._pos = {pid: i for i, pid in enumerate(self.ids)}
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms < 1e-9):
            raise ValueError("zero vectors are not allowed in the index")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, pair_id: str) -> bool:
        return pair_id in self._pos

    def vector(self, pair_id: str) -> np.ndarray:
        return self.matrix[self._pos[pair_id]]

    def knn(
        self, query: np.ndarray, k: int, exclude_id: str | None = None
    ) -> list[tuple[str, float]]:
        """Exact top-k by cosine; ties broken by ascending id.

        Returns fewer than k entries only when the index (minus the
        exclusion) is smaller than k.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(self.ids) == 0:
            raise ValueError("index is empty")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query dim {q.shape} != index dim {self.dim}")
        # Row-wise dot products: BLAS gemv can give bit-different sums for
        # identical rows at different offsets, which would make the id
        # tie-break disagree with any per-row oracle.
        scores = np.array([np.dot(row, q) for row in self.matrix])
        ranked = sorted(
            (i for i in range(len(self.ids)) if self.ids[i] != exclude_id),
            key=lambda i: (-scores[i], self.ids[i]),
        )
        return [(self.ids[i], float(scores[i])) for i in ranked[:k]]

    def save(self, path: str | Path, embedder_header: dict | None = None, doc_freq: np.ndarray | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "dim": self.dim,
            "count": len(self.ids),
            "fingerprint": self.fingerprint,
            "embedder": embedder_header or {},
            "has_df": doc_freq is not None,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with path.open("wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            if doc_freq is not None:
                fh.write(doc_freq.astype("<u4").tobytes())
            for pid in self.ids:
                encoded = pid.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
            fh.write(self.matrix.astype("<f4").tobytes())

    @classmethod
    def load(
        cls, path: str | Path, expected_fingerprint: str | None = None
    ) -> tuple["VectorIndex", dict, np.ndarray | None]:
        """Load an index; returns (index, embedder header, doc_freq or None)."""
        path = Path(path)
        with path.open("rb") as fh:
            magic = fh.read(len(_INDEX_MAGIC))
            if magic != _INDEX_MAGIC:
                raise ValueError(f"{path}: not a stylepipe index file")
            (blob_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(blob_len).decode("utf-8"))
            if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
                raise FingerprintMismatch(
                    f"{path}: index fingerprint {header['fingerprint']} != expected {expected_fingerprint}"
                )
            dim, count = header["dim"], header["count"]
            doc_freq = None
            if header.get("has_df"):
                doc_freq = np.frombuffer(fh.read(4 * dim), dtype="<u4").copy()
            ids = []
            for _ in range(count):
                (id_len,) = struct.unpack("<H", fh.read(2))
                ids.append(fh.read(id_len).decode("utf-8"))
            matrix = np.frombuffer(fh.read(4 * dim * count), dtype="<f4").reshape(count, dim)
            index = cls(ids, matrix.astype(np.float64), header["fingerprint"])
        return index, header.get("embedder", {}), doc_freq


class ExampleRetriever:
    """Serves training-time, random, and sketch-first shot retrieval."""

    def __init__(self, index: VectorIndex, embedder: Embedder, pairs: Sequence[PseudoPair]):
        if index.fingerprint != embedder.fingerprint:
            raise FingerprintMismatch(
                f"index fingerprint {index.fingerprint} != embedder {embedder.fingerprint}"
            )
        self.index = index
        self.embedder = embedder
        self.pairs_by_id = {p.id: p for p in pairs}
        missing = [pid for pid in index.ids if pid not in self.pairs_by_id]
        if missing:
            raise ValueError(f"index entries missing from pair store: {missing[:5]}")

    @classmethod
    def build(
        cls,
        pairs: Sequence[PseudoPair],
        embedder: HashedTfidfEmbedder | None = None,
        fit: bool = True,
    ) -> "ExampleRetriever":
        """Embed and index the target side of every pair."""
        if not pairs:
            raise ValueError("cannot build a retriever over zero pairs")
        embedder = embedder or HashedTfidfEmbedder()
        if fit and isinstance(embedder, HashedTfidfEmbedder):
            embedder.fit(p.target for p in pairs)
        ids = [p.id for p in pairs]
        matrix = np.stack([embedder.embed(p.target) for p in pairs])
        index = VectorIndex(ids, matrix, embedder.fingerprint)
        return cls(index, embedder, pairs)

    def _shotset(self, ranked: list[tuple[str, float]], k: int, query_kind: str) -> ShotSet:
        shots = tuple(Shot(pair=self.pairs_by_id[pid], score=score) for pid, score in ranked)
        return ShotSet(shots=shots, k=k, query_kind=query_kind)

    def retrieve_train_shots(self, pair: PseudoPair, k: int) -> ShotSet:
        """Top-k most similar target-side examples, excluding the pair itself."""
        query = self.embedder.embed(pair.target)
        return self._shotset(self.index.knn(query, k, exclude_id=pair.id), k, "target_side")

    def retrieve_sketch_shots(self, sketch_text: str, k: int) -> ShotSet:
        """Top-k by similarity to a generated sketch; no exclusion."""
        query = self.embedder.embed(sketch_text)
        return self._shotset(self.index.knn(query, k), k, "sketch")

    def retrieve_random_shots(self, seed: int, k: int, exclude_id: str | None = None) -> ShotSet:
        """Uniform shots without replacement; deterministic under the seed."""
        rng = random.Random(seed)
        candidates = [pid for pid in self.index.ids if pid != exclude_id]
        chosen = rng.sample(candidates, min(k, len(candidates)))
        shots = tuple(Shot(pair=self.pairs_by_id[pid], score=0.0) for pid in chosen)
        return ShotSet(shots=shots, k=k, query_kind="random")

    def save(self, path: str | Path) -> None:
        doc_freq = getattr(self.embedder, "doc_freq", None)
        header = self.embedder.state_header() if hasattr(self.embedder, "state_header") else {}
        self.index.save(path, embedder_header=header, doc_freq=doc_freq)

    @classmethod
    def load(cls, path: str | Path, pairs: Sequence[PseudoPair]) -> "ExampleRetriever":
        """Load an index and reconstruct its embedder from the stored state."""
        index, header, doc_freq = VectorIndex.load(path)
        if header.get("kind") != "hashed_tfidf":
            raise ValueError(f"cannot reconstruct embedder of kind {header.get('kind')!r}")
        embedder = HashedTfidfEmbedder(
            dim=header["dim"], ngram_min=header["ngram_min"], ngram_max=header["ngram_max"]
        )
        if header.get("fitted"):
            embedder.doc_freq = doc_freq
            embedder.n_docs = header["n_docs"]
        if embedder.fingerprint != index.fingerprint:
            raise FingerprintMismatch(
                f"{path}: reconstructed embedder fingerprint mismatch"
            )
        return cls(index, embedder, pairs)
