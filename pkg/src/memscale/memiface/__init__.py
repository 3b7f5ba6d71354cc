"""Agent-visible memory interface: adapter contract, reference
implementations, parity enforcement, and the wire protocol.
"""

from __future__ import annotations

from .base import (
    ADAPTER_FAMILIES,
    CHUNK_WORDS,
    DEFAULT_TOP_K,
    AdapterUnavailable,
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
    index_history,
    rank_chunks,
    retrieve,
    tokenize,
)
from .conformance import ConformanceReport, fixture_history, fixture_sessions, run_conformance
from .parity import ParityConfig, ParityLedger, ParityVerdict, ParityViolation, enforce_parity
from .reference import (
    REFERENCE_ADAPTERS,
    FlatReferenceAdapter,
    HierarchicalReferenceAdapter,
    PlanarReferenceAdapter,
    make_reference_adapter,
)
from .wire import (
    SCHEMA_VERSION,
    WireAdapter,
    WireProtocolError,
    check_schema_version,
    units_from_wire,
    units_to_wire,
)

__all__ = [
    "ADAPTER_FAMILIES",
    "CHUNK_WORDS",
    "DEFAULT_TOP_K",
    "SCHEMA_VERSION",
    "AdapterUnavailable",
    "Chunk",
    "ConformanceReport",
    "EmptyIndex",
    "EvidenceUnit",
    "FlatReferenceAdapter",
    "HierarchicalReferenceAdapter",
    "IndexingFailure",
    "MemoryAdapter",
    "MemoryAdapterDescriptor",
    "MemoryIndex",
    "ParityConfig",
    "ParityLedger",
    "ParityVerdict",
    "ParityViolation",
    "PlanarReferenceAdapter",
    "REFERENCE_ADAPTERS",
    "RetrievalResponse",
    "RetrievalState",
    "WireAdapter",
    "WireProtocolError",
    "check_schema_version",
    "chunk_session",
    "enforce_parity",
    "fixture_history",
    "fixture_sessions",
    "index_history",
    "make_reference_adapter",
    "rank_chunks",
    "retrieve",
    "run_conformance",
    "tokenize",
    "units_from_wire",
    "units_to_wire",
]
