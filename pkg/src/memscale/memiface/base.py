"""Memory-interface adapter contract.

An adapter exposes an agent-visible retrieval interface over an indexed
history. Calls to methods named in ``counted_methods`` increment the
trajectory's retrieval-call count; indexing and other backend work never
do.
"""

from __future__ import annotations

import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping

from ..corpus import ScaledHistory, Session
from ..errors import DataError, EndpointError, MemscaleError

ADAPTER_FAMILIES = ("flat", "planar", "hierarchical")

DEFAULT_TOP_K = 12
CHUNK_WORDS = 256


class IndexingFailure(MemscaleError):
    """Adapter-specific indexing failure, surfaced with adapter_id."""

    def __init__(self, adapter_id: str, message: str):
        super().__init__(f"[{adapter_id}] {message}")
        self.adapter_id = adapter_id


class AdapterUnavailable(EndpointError):
    """A wire-protocol adapter could not be reached or answered 5xx."""


class EmptyIndex(DataError):
    """Retrieval attempted against an index holding zero units."""


@dataclass(frozen=True)
class MemoryAdapterDescriptor:
    """Identity and budget-accounting surface of one adapter.

    ``counted_methods`` names the agent-visible methods that increment
    the retrieval-call count; everything else is uncounted backend work.
    """

    adapter_id: str
    family: str
    counted_methods: frozenset[str] = frozenset({"retrieve"})
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.family not in ADAPTER_FAMILIES:
            raise ValueError(f"unknown adapter family {self.family!r}")
        if not self.counted_methods:
            raise ValueError("counted_methods must be nonempty")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class EvidenceUnit:
    """One model-visible chunk of retrieved text (never an internal node ID)."""

    unit_id: str
    source_session_id: str
    text: str
    rank: int
    score: float

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class RetrievalResponse:
    units: tuple[EvidenceUnit, ...]
    counted: bool
    adapter_id: str

    def __post_init__(self) -> None:
        ranks = [u.rank for u in self.units]
        if len(set(ranks)) != len(ranks):
            raise ValueError("unit ranks must be unique within a response")

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(u.unit_id for u in self.units)


@dataclass(frozen=True)
class Chunk:
    unit_id: str
    session_id: str
    text: str
    terms: frozenset[str]


@dataclass(frozen=True)
class MemoryIndex:
    """Handle returned by ``index_history``; opaque payload per adapter.

    ``q0_tokens`` holds the preprocessing token estimate charged to the
    amortized (offline) bucket; it never touches the call budget.
    """

    adapter_id: str
    query_id: str
    level_id: str
    n_units: int
    q0_tokens: int
    payload: object = field(repr=False, default=None)


class RetrievalState:
    """Per-rollout mutable retrieval state.

    Planar adapters accumulate query terms across calls through this
    object; keeping it outside the adapter leaves adapters read-only
    after indexing and safe for concurrent retrieval.
    """

    def __init__(self) -> None:
        self.accumulated_terms: set[str] = set()
        self.calls = 0


_TERM_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _TERM_RE.findall(text.lower())


def chunk_session(session: Session, chunk_words: int = CHUNK_WORDS) -> list[Chunk]:
    """Split a session into fixed-size word chunks with provenance.

    Chunk IDs are ``{session_id}#{chunk_index:04d}`` so lexical order
    matches numeric chunk order during tie-breaking.
    """
    words = session.text.split()
    if not words:
        return []
    chunks = []
    for i in range(0, len(words), chunk_words):
        text = " ".join(words[i : i + chunk_words])
        chunks.append(
            Chunk(
                unit_id=f"{session.session_id}#{i // chunk_words:04d}",
                session_id=session.session_id,
                text=text,
                terms=frozenset(tokenize(text)),
            )
        )
    return chunks


def rank_chunks(scored: list[tuple[float, Chunk]], top_k: int) -> list[EvidenceUnit]:
    """Order scored chunks into ranked units.

    Ties break by (score desc, source session asc, unit asc) so rankings
    are total and reproducible across machines.
    """
    ordered = sorted(scored, key=lambda pair: (-pair[0], pair[1].session_id, pair[1].unit_id))
    return [
        EvidenceUnit(
            unit_id=chunk.unit_id,
            source_session_id=chunk.session_id,
            text=chunk.text,
            rank=position + 1,
            score=float(score),
        )
        for position, (score, chunk) in enumerate(ordered[:top_k])
    ]


class MemoryAdapter(ABC):
    """Base class all adapters implement (in-process or wire-protocol)."""

    def __init__(self, descriptor: MemoryAdapterDescriptor):
        self.descriptor = descriptor

    @property
    def adapter_id(self) -> str:
        return self.descriptor.adapter_id

    def is_counted(self, method: str) -> bool:
        return method in self.descriptor.counted_methods

    @abstractmethod
    def index_history(self, history: ScaledHistory, sessions: Mapping[str, Session]) -> MemoryIndex:
        """Build the adapter-internal index for one scaled history.

        Never counted against the retrieval-call budget.
        """

    @abstractmethod
    def retrieve(
        self,
        index: MemoryIndex,
        query_text: str,
        top_k: int | None = None,
        state: RetrievalState | None = None,
    ) -> RetrievalResponse:
        """Return exactly min(top_k, store size) ranked units.

        Raises EmptyIndex when the store holds zero units.
        """

    def reset(self) -> None:
        """Drop adapter-side state (wire adapters forward to the sidecar)."""


def index_history(
    adapter: MemoryAdapter, history: ScaledHistory, sessions: Mapping[str, Session]
) -> MemoryIndex:
    return adapter.index_history(history, sessions)


def retrieve(
    adapter: MemoryAdapter,
    index: MemoryIndex,
    query_text: str,
    top_k: int | None = None,
    state: RetrievalState | None = None,
) -> RetrievalResponse:
    return adapter.retrieve(index, query_text, top_k=top_k, state=state)
