"""Deterministic in-process reference adapters.

These are stand-ins exhibiting the three interface families, not
reimplementations of any external memory system. All three score by
lexical term overlap and are byte-deterministic for a fixed
(history, query, top_k).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from ..corpus import ScaledHistory, Session, estimate_tokens
from .base import (
    Chunk,
    EmptyIndex,
    EvidenceUnit,
    IndexingFailure,
    MemoryAdapter,
    MemoryAdapterDescriptor,
    MemoryIndex,
    RetrievalResponse,
    RetrievalState,
    chunk_session,
    rank_chunks,
    tokenize,
)

SUMMARY_WORDS = 64


@dataclass(frozen=True)
class _SessionSummary:
    session_id: str
    terms: frozenset[str]


def _build_chunks(
    adapter_id: str, history: ScaledHistory, sessions: Mapping[str, Session]
) -> list[Chunk]:
    chunks: list[Chunk] = []
    for sid in history.session_ids:
        session = sessions.get(sid)
        if session is None:
            raise IndexingFailure(adapter_id, f"history references unknown session {sid!r}")
        chunks.extend(chunk_session(session))
    return chunks


class FlatReferenceAdapter(MemoryAdapter):
    """Single-pass lexical store: one term-overlap scan over all chunks."""

    def __init__(self, descriptor: MemoryAdapterDescriptor | None = None):
        super().__init__(descriptor or MemoryAdapterDescriptor("ref-flat", "flat"))

    def index_history(self, history: ScaledHistory, sessions: Mapping[str, Session]) -> MemoryIndex:
        chunks = _build_chunks(self.adapter_id, history, sessions)
        q0 = sum(estimate_tokens(c.text) for c in chunks)
        return MemoryIndex(
            adapter_id=self.adapter_id,
            query_id=history.query_id,
            level_id=history.level_id,
            n_units=len(chunks),
            q0_tokens=q0,
            payload=tuple(chunks),
        )

    def retrieve(
        self,
        index: MemoryIndex,
        query_text: str,
        top_k: int | None = None,
        state: RetrievalState | None = None,
    ) -> RetrievalResponse:
        chunks: tuple[Chunk, ...] = index.payload
        if not chunks:
            raise EmptyIndex(f"[{self.adapter_id}] index holds no units")
        k = top_k if top_k is not None else self.descriptor.top_k
        terms = set(tokenize(query_text))
        scored = [(float(len(terms & c.terms)), c) for c in chunks]
        units = rank_chunks(scored, k)
        if state is not None:
            state.calls += 1
        return RetrievalResponse(tuple(units), self.is_counted("retrieve"), self.adapter_id)


class PlanarReferenceAdapter(MemoryAdapter):
    """Stateful iterative search: each call scores against the union of
    all query terms seen so far in the rollout, so repeated calls narrow
    on the accumulated intent rather than the last query alone.
    """

    def __init__(self, descriptor: MemoryAdapterDescriptor | None = None):
        super().__init__(descriptor or MemoryAdapterDescriptor("ref-planar", "planar"))

    def index_history(self, history: ScaledHistory, sessions: Mapping[str, Session]) -> MemoryIndex:
        chunks = _build_chunks(self.adapter_id, history, sessions)
        q0 = sum(estimate_tokens(c.text) for c in chunks)
        return MemoryIndex(
            adapter_id=self.adapter_id,
            query_id=history.query_id,
            level_id=history.level_id,
            n_units=len(chunks),
            q0_tokens=q0,
            payload=tuple(chunks),
        )

    def retrieve(
        self,
        index: MemoryIndex,
        query_text: str,
        top_k: int | None = None,
        state: RetrievalState | None = None,
    ) -> RetrievalResponse:
        chunks: tuple[Chunk, ...] = index.payload
        if not chunks:
            raise EmptyIndex(f"[{self.adapter_id}] index holds no units")
        k = top_k if top_k is not None else self.descriptor.top_k
        terms = set(tokenize(query_text))
        if state is not None:
            state.accumulated_terms |= terms
            state.calls += 1
            terms = set(state.accumulated_terms)
        scored = [(float(len(terms & c.terms)), c) for c in chunks]
        units = rank_chunks(scored, k)
        return RetrievalResponse(tuple(units), self.is_counted("retrieve"), self.adapter_id)


class HierarchicalReferenceAdapter(MemoryAdapter):
    """Two-stage retrieval: score session summaries first, then chunks
    within the selected sessions. The extra stage is backend traversal
    and invisible to the call budget. When the selected sessions hold
    fewer than top_k chunks the remainder back-fills globally so unit
    parity is preserved.
    """

    def __init__(
        self,
        descriptor: MemoryAdapterDescriptor | None = None,
        sessions_per_query: int = 4,
    ):
        super().__init__(descriptor or MemoryAdapterDescriptor("ref-hier", "hierarchical"))
        if sessions_per_query < 1:
            raise ValueError("sessions_per_query must be >= 1")
        self.sessions_per_query = sessions_per_query

    def index_history(self, history: ScaledHistory, sessions: Mapping[str, Session]) -> MemoryIndex:
        chunks = _build_chunks(self.adapter_id, history, sessions)
        summaries = []
        for sid in history.session_ids:
            words = sessions[sid].text.split()[:SUMMARY_WORDS]
            summaries.append(_SessionSummary(sid, frozenset(tokenize(" ".join(words)))))
        # q0 charges both stages: stage count stays invisible to the
        # budget but not to token accounting.
        q0 = sum(estimate_tokens(c.text) for c in chunks)
        q0 += sum(estimate_tokens(" ".join(sorted(s.terms))) for s in summaries)
        return MemoryIndex(
            adapter_id=self.adapter_id,
            query_id=history.query_id,
            level_id=history.level_id,
            n_units=len(chunks),
            q0_tokens=q0,
            payload=(tuple(chunks), tuple(summaries)),
        )

    def retrieve(
        self,
        index: MemoryIndex,
        query_text: str,
        top_k: int | None = None,
        state: RetrievalState | None = None,
    ) -> RetrievalResponse:
        chunks: tuple[Chunk, ...]
        summaries: tuple[_SessionSummary, ...]
        chunks, summaries = index.payload
        if not chunks:
            raise EmptyIndex(f"[{self.adapter_id}] index holds no units")
        k = top_k if top_k is not None else self.descriptor.top_k
        terms = set(tokenize(query_text))

        by_summary = sorted(
            summaries,
            key=lambda s: (-len(terms & s.terms), s.session_id),
        )
        selected = {s.session_id for s in by_summary[: self.sessions_per_query]}

        inner = [(float(len(terms & c.terms)), c) for c in chunks if c.session_id in selected]
        units = rank_chunks(inner, k)
        if len(units) < min(k, len(chunks)):
            have = {u.unit_id for u in units}
            outer = [
                (float(len(terms & c.terms)), c)
                for c in chunks
                if c.unit_id not in have
            ]
            backfill = rank_chunks(outer, k - len(units))
            units = units + [_rerank(u, len(units) + i + 1) for i, u in enumerate(backfill)]
        if state is not None:
            state.calls += 1
        return RetrievalResponse(tuple(units), self.is_counted("retrieve"), self.adapter_id)


def _rerank(unit: EvidenceUnit, rank: int) -> EvidenceUnit:
    return EvidenceUnit(unit.unit_id, unit.source_session_id, unit.text, rank, unit.score)


REFERENCE_ADAPTERS = {
    "flat": FlatReferenceAdapter,
    "planar": PlanarReferenceAdapter,
    "hierarchical": HierarchicalReferenceAdapter,
}


def make_reference_adapter(family: str, **kwargs) -> MemoryAdapter:
    try:
        factory = REFERENCE_ADAPTERS[family]
    except KeyError:
        raise ValueError(f"unknown reference adapter family {family!r}") from None
    return factory(**kwargs)
