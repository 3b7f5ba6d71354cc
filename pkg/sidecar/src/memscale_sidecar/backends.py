"""Retrieval backends served behind the wire protocol.

One process hosts exactly one backend instance. Each registry entry
documents which wire methods count against the caller's retrieval
budget and how the library's internal stages map onto the single
agent-visible retrieve call; keep that text current when touching a
backend.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import networkx as nx
import numpy as np
from sklearn.decomposition import TruncatedSVD
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import cosine_similarity, linear_kernel

WORDS_PER_CHUNK = 256
TOKENS_PER_WORD = 1.3
_WORD_RE = re.compile(r"[a-z0-9']+")

# include single-character tokens; sklearn's default pattern drops them
_VECTORIZER_TOKEN_PATTERN = r"(?u)\b\w+\b"


class BackendInitError(RuntimeError):
    """The requested backend is unknown or failed to construct."""


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    session_id: str
    text: str
    n_words: int


def _chunk_sessions(sessions: list[dict]) -> list[Chunk]:
    """Split wire-shape session records into fixed-size word chunks."""
    chunks = []
    for record in sessions:
        sid = record["session_id"]
        words = " ".join(turn["text"] for turn in record["turns"]).split()
        for start in range(0, len(words), WORDS_PER_CHUNK):
            piece = words[start : start + WORDS_PER_CHUNK]
            index = start // WORDS_PER_CHUNK
            chunks.append(Chunk(f"{sid}#{index:04d}", sid, " ".join(piece), len(piece)))
    return chunks


def _terms(text: str) -> frozenset[str]:
    return frozenset(_WORD_RE.findall(text.lower()))


class Backend:
    """Store chunks at index time, score them per retrieve call."""

    name = "base"
    family = "flat"

    def __init__(self):
        self._chunks: list[Chunk] = []

    @property
    def n_units(self) -> int:
        return len(self._chunks)

    def index(self, sessions: list[dict]) -> tuple[int, int]:
        """Replace the store; returns (n_units, q0_tokens)."""
        self._chunks = _chunk_sessions(sessions)
        self._fit()
        q0 = sum(int(round(c.n_words * TOKENS_PER_WORD)) for c in self._chunks)
        return len(self._chunks), q0

    def reset(self) -> None:
        self._chunks = []
        self._fit()

    def retrieve(self, query: str, top_k: int) -> list[dict]:
        scores = self._score(query)
        order = sorted(
            range(len(self._chunks)),
            key=lambda i: (-float(scores[i]), self._chunks[i].session_id, self._chunks[i].chunk_id),
        )
        units = []
        for rank, i in enumerate(order[:top_k], start=1):
            chunk = self._chunks[i]
            units.append(
                {
                    "id": chunk.chunk_id,
                    "session": chunk.session_id,
                    "text": chunk.text,
                    "rank": rank,
                    "score": float(scores[i]),
                }
            )
        return units

    def _fit(self) -> None:
        raise NotImplementedError

    def _score(self, query: str) -> np.ndarray:
        raise NotImplementedError


class TfidfBackend(Backend):
    """scikit-learn TF-IDF vector store; one similarity lookup per call."""

    name = "tfidf"
    family = "flat"

    def _fit(self) -> None:
        self._vectorizer = None
        self._matrix = None
        if not self._chunks:
            return
        vectorizer = TfidfVectorizer(token_pattern=_VECTORIZER_TOKEN_PATTERN)
        try:
            self._matrix = vectorizer.fit_transform(c.text for c in self._chunks)
        except ValueError:  # empty vocabulary
            return
        self._vectorizer = vectorizer

    def _score(self, query: str) -> np.ndarray:
        if self._vectorizer is None:
            return np.zeros(len(self._chunks))
        return linear_kernel(self._vectorizer.transform([query]), self._matrix)[0]


class LsaBackend(TfidfBackend):
    """TF-IDF followed by truncated SVD; cosine ranking in latent space.

    Falls back to plain TF-IDF scores when the store is too small to
    decompose.
    """

    name = "lsa"
    family = "planar"
    latent_components = 64

    def _fit(self) -> None:
        super()._fit()
        self._svd = None
        self._latent = None
        if self._matrix is None:
            return
        n_samples, n_features = self._matrix.shape
        components = min(self.latent_components, n_samples - 1, n_features - 1)
        if components < 1:
            return
        self._svd = TruncatedSVD(n_components=components, random_state=0)
        self._latent = self._svd.fit_transform(self._matrix)

    def _score(self, query: str) -> np.ndarray:
        if self._svd is None:
            return super()._score(query)
        projected = self._svd.transform(self._vectorizer.transform([query]))
        return cosine_similarity(projected, self._latent)[0]


class GraphBackend(Backend):
    """networkx chunk graph scored with a personalized PageRank walk.

    Edges connect chunks by term-set Jaccard overlap; the query seeds
    the walk through lexical overlap. All of that is one counted call.
    """

    name = "graph"
    family = "hierarchical"
    damping = 0.85

    def _fit(self) -> None:
        self._term_sets = [_terms(c.text) for c in self._chunks]
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self._chunks)))
        for i in range(len(self._chunks)):
            for j in range(i + 1, len(self._chunks)):
                union = self._term_sets[i] | self._term_sets[j]
                if not union:
                    continue
                overlap = len(self._term_sets[i] & self._term_sets[j]) / len(union)
                if overlap > 0:
                    graph.add_edge(i, j, weight=overlap)
        self._graph = graph

    def _score(self, query: str) -> np.ndarray:
        if not self._chunks:
            return np.zeros(0)
        query_terms = _terms(query)
        seeds = {i: len(query_terms & terms) for i, terms in enumerate(self._term_sets)}
        if not any(seeds.values()):
            seeds = {i: 1 for i in seeds}
        ranked = nx.pagerank(self._graph, alpha=self.damping, personalization=seeds, weight="weight")
        return np.array([ranked[i] for i in range(len(self._chunks))])


@dataclass(frozen=True)
class BackendSpec:
    name: str
    family: str
    factory: type[Backend]
    counted_methods: tuple[str, ...]
    call_mapping: str


REGISTRY: dict[str, BackendSpec] = {
    "tfidf": BackendSpec(
        name="tfidf",
        family="flat",
        factory=TfidfBackend,
        counted_methods=("retrieve",),
        call_mapping=(
            "vectorizer fit runs at index time and is uncounted; each counted "
            "retrieve is one vector-space similarity lookup"
        ),
    ),
    "lsa": BackendSpec(
        name="lsa",
        family="planar",
        factory=LsaBackend,
        counted_methods=("retrieve",),
        call_mapping=(
            "TF-IDF fit and SVD decomposition run at index time and are "
            "uncounted; query projection plus latent cosine ranking form one "
            "counted retrieve"
        ),
    ),
    "graph": BackendSpec(
        name="graph",
        family="hierarchical",
        factory=GraphBackend,
        counted_methods=("retrieve",),
        call_mapping=(
            "chunk-graph construction runs at index time and is uncounted; "
            "seed selection, the personalized walk, and final ranking collapse "
            "into one counted retrieve"
        ),
    ),
}


def make_backend(name: str) -> Backend:
    spec = REGISTRY.get(name)
    if spec is None:
        raise BackendInitError(f"unknown backend {name!r}; known: {sorted(REGISTRY)}")
    try:
        return spec.factory()
    except Exception as exc:
        raise BackendInitError(f"backend {name!r} failed to construct: {exc}") from exc
