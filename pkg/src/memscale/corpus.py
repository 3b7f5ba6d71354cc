"""Benchmark corpora and evidence-preserving scaled histories.

A corpus is a set of multi-turn sessions plus queries, each query
annotated with the session IDs that hold its answer evidence. Scaled
histories grow a query's accessible history by injecting sessions from
the distractor pool while the evidence set stays fixed.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import DataError

TOKENS_PER_WORD = 1.3

ORIGIN_EVIDENCE = "evidence"
ORIGIN_DISTRACTOR = "distractor"

CORPUS_FORMATS = ("longmemeval-json", "locomo-json", "generic-jsonl")

NESTING_MODES = ("nested", "independent")
SHARING_MODES = ("per-query", "shared")


class ParseError(DataError):
    """A corpus record failed to parse or validate."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None, offset: int | None = None):
        loc = ""
        if path is not None:
            loc += f" [{path}"
            if line is not None:
                loc += f":{line}"
            loc += "]"
        if offset is not None:
            loc += f" (offset {offset})"
        super().__init__(message + loc)
        self.path = path
        self.line = line
        self.offset = offset


class DanglingEvidence(DataError):
    """A query references a session ID missing from the corpus."""

    def __init__(self, query_id: str, missing: Sequence[str]):
        super().__init__(f"query {query_id!r} references unknown session(s): {sorted(missing)}")
        self.query_id = query_id
        self.missing = tuple(sorted(missing))


class EmptyPool(DataError):
    """The corpus has no distractor sessions to inject."""


class PoolTooSmall(DataError):
    """The distractor pool cannot cover the largest scale level."""


class LadderError(DataError):
    """Scale levels violate the ladder contract."""


def estimate_tokens(text: str) -> int:
    """Approximate token count: whitespace word count scaled by 1.3.

    Tokenizer-agnostic by design; outputs using it are labeled
    approximate.
    """
    return int(round(len(text.split()) * TOKENS_PER_WORD))


@dataclass(frozen=True)
class Turn:
    role: str
    text: str


@dataclass(frozen=True)
class Session:
    """One conversation session; the unit histories are built from."""

    session_id: str
    turns: tuple[Turn, ...]
    token_count: int
    origin: str

    def __post_init__(self) -> None:
        if not self.turns:
            raise ParseError(f"session {self.session_id!r} has no turns")
        if self.token_count < 0:
            raise ParseError(f"session {self.session_id!r} has negative token_count")
        if self.origin not in (ORIGIN_EVIDENCE, ORIGIN_DISTRACTOR):
            raise ParseError(f"session {self.session_id!r} has invalid origin {self.origin!r}")

    @property
    def text(self) -> str:
        return "\n".join(turn.text for turn in self.turns)


@dataclass(frozen=True)
class Query:
    query_id: str
    question_text: str
    gold_answer: str
    evidence_session_ids: frozenset[str]
    question_family: str | None = None

    def __post_init__(self) -> None:
        if not self.evidence_session_ids:
            raise ParseError(f"query {self.query_id!r} has no evidence sessions")
        if not self.gold_answer:
            raise ParseError(f"query {self.query_id!r} has an empty gold answer")


@dataclass(frozen=True)
class ScaleLevel:
    level_id: str
    n_irr: int

    def __post_init__(self) -> None:
        if self.n_irr < 0:
            raise LadderError(f"level {self.level_id!r} has negative n_irr")


#: Shared discrete ladder used by default: evidence-only baseline, then
#: +100/+200/+300/+400 injected irrelevant sessions.
DEFAULT_LEVELS: tuple[ScaleLevel, ...] = (
    ScaleLevel("s0", 0),
    ScaleLevel("s1", 100),
    ScaleLevel("s2", 200),
    ScaleLevel("s3", 300),
    ScaleLevel("s4", 400),
)


@dataclass(frozen=True)
class ScaledHistory:
    """The accessible history for one query at one scale level."""

    query_id: str
    level_id: str
    session_ids: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class Corpus:
    """A validated corpus: sessions, queries, and the distractor pool.

    ``distractor_pool`` holds the IDs of every session not annotated as
    evidence for any query in scope, in stable sorted order.
    """

    sessions: Mapping[str, Session]
    queries: tuple[Query, ...]
    distractor_pool: tuple[str, ...]
    benchmark_id: str = "default"

    def query_by_id(self, query_id: str) -> Query:
        for query in self.queries:
            if query.query_id == query_id:
                return query
        raise KeyError(query_id)


def validate_levels(levels: Sequence[ScaleLevel], *, require_zero_base: bool = True) -> tuple[ScaleLevel, ...]:
    """Check ladder invariants: strictly increasing n_irr, baseline at 0."""
    if not levels:
        raise LadderError("no scale levels given")
    for prev, cur in zip(levels, levels[1:]):
        if cur.n_irr <= prev.n_irr:
            raise LadderError(
                f"n_irr must increase strictly: {prev.level_id}={prev.n_irr} then {cur.level_id}={cur.n_irr}"
            )
    if require_zero_base and levels[0].n_irr != 0:
        raise LadderError(f"base level {levels[0].level_id!r} must have n_irr=0")
    seen = set()
    for level in levels:
        if level.level_id in seen:
            raise LadderError(f"duplicate level_id {level.level_id!r}")
        seen.add(level.level_id)
    return tuple(levels)


def _stable_hash(value: str) -> int:
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _derive_seed(*parts: object) -> int:
    material = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _order_history(session_ids: Iterable[str]) -> tuple[str, ...]:
    # Interleaves evidence and distractors deterministically across
    # machines; Python's salted hash() must not be used here.
    return tuple(sorted(session_ids, key=lambda sid: (_stable_hash(sid), sid)))


# ---------------------------------------------------------------------------
# Loading


def load_corpus(path: str | Path, format: str, *, benchmark_id: str | None = None) -> Corpus:
    """Load and validate a corpus file.

    Returns a :class:`Corpus` whose distractor pool holds every session
    not annotated as evidence for any query.

    Raises:
        ParseError: malformed file or record (includes line/offset).
        DanglingEvidence: a query references an unknown session.
        EmptyPool: the corpus has no distractor sessions.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError("corpus file does not exist", path=str(path))
    if format == "generic-jsonl":
        raw_sessions, raw_queries = _load_generic_jsonl(path)
        default_bench = "generic"
    elif format == "longmemeval-json":
        raw_sessions, raw_queries = _load_longmemeval(path)
        default_bench = "longmemeval"
    elif format == "locomo-json":
        raw_sessions, raw_queries = _load_locomo(path)
        default_bench = "locomo"
    else:
        raise ParseError(f"unknown corpus format {format!r}", path=str(path))

    evidence_ids: set[str] = set()
    for query in raw_queries:
        missing = set(query.evidence_session_ids) - raw_sessions.keys()
        if missing:
            raise DanglingEvidence(query.query_id, tuple(missing))
        evidence_ids.update(query.evidence_session_ids)

    sessions: dict[str, Session] = {}
    for sid, session in raw_sessions.items():
        origin = ORIGIN_EVIDENCE if sid in evidence_ids else ORIGIN_DISTRACTOR
        sessions[sid] = Session(sid, session.turns, session.token_count, origin)

    pool = tuple(sorted(sessions.keys() - evidence_ids))
    if not pool:
        raise EmptyPool(f"corpus {path} has no distractor sessions")
    return Corpus(
        sessions=sessions,
        queries=tuple(raw_queries),
        distractor_pool=pool,
        benchmark_id=benchmark_id or default_bench,
    )


def _session_from_turns(session_id: str, turns: Sequence[Turn]) -> Session:
    token_count = sum(estimate_tokens(turn.text) for turn in turns)
    return Session(session_id, tuple(turns), token_count, ORIGIN_DISTRACTOR)


def _load_generic_jsonl(path: Path) -> tuple[dict[str, Session], list[Query]]:
    """One JSON object per line: ``{"type": "session", "id", "turns": [{"role", "text"}]}``
    or ``{"type": "query", "id", "question", "answer", "evidence": [ids]}``.
    """
    sessions: dict[str, Session] = {}
    queries: list[Query] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=line_no, offset=exc.pos) from exc
            if not isinstance(record, dict) or "type" not in record:
                raise ParseError("record must be an object with a 'type' field", path=str(path), line=line_no)
            kind = record["type"]
            try:
                if kind == "session":
                    sid = str(record["id"])
                    if sid in sessions:
                        raise ParseError(f"duplicate session id {sid!r}", path=str(path), line=line_no)
                    turns = [Turn(str(t["role"]), str(t["text"])) for t in record["turns"]]
                    sessions[sid] = _session_from_turns(sid, turns)
                elif kind == "query":
                    queries.append(
                        Query(
                            query_id=str(record["id"]),
                            question_text=str(record["question"]),
                            gold_answer=str(record["answer"]),
                            evidence_session_ids=frozenset(str(e) for e in record["evidence"]),
                            question_family=record.get("family"),
                        )
                    )
                else:
                    raise ParseError(f"unknown record type {kind!r}", path=str(path), line=line_no)
            except (KeyError, TypeError) as exc:
                raise ParseError(f"malformed {kind} record: {exc!r}", path=str(path), line=line_no) from exc
    return sessions, queries


def _load_longmemeval(path: Path) -> tuple[dict[str, Session], list[Query]]:
    """LongMemEval-style JSON: a list of question records carrying their
    haystack sessions (``haystack_session_ids`` + ``haystack_sessions``)
    and evidence annotations (``answer_session_ids``).

    Haystacks overlap across questions; sessions are deduplicated by ID.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), offset=exc.pos) from exc
    if not isinstance(data, list):
        raise ParseError("expected a top-level list of question records", path=str(path))

    sessions: dict[str, Session] = {}
    queries: list[Query] = []
    for i, record in enumerate(data):
        try:
            session_ids = [str(s) for s in record["haystack_session_ids"]]
            raw_sessions = record["haystack_sessions"]
            if len(session_ids) != len(raw_sessions):
                raise ParseError(
                    f"record {i}: haystack_session_ids and haystack_sessions length mismatch",
                    path=str(path),
                )
            for sid, raw_turns in zip(session_ids, raw_sessions):
                if sid in sessions:
                    continue
                turns = [Turn(str(t["role"]), str(t.get("content", t.get("text", "")))) for t in raw_turns]
                sessions[sid] = _session_from_turns(sid, turns)
            queries.append(
                Query(
                    query_id=str(record["question_id"]),
                    question_text=str(record["question"]),
                    gold_answer=str(record["answer"]),
                    evidence_session_ids=frozenset(str(s) for s in record["answer_session_ids"]),
                    question_family=record.get("question_type"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed question record {i}: {exc!r}", path=str(path)) from exc
    return sessions, queries


def _load_locomo(path: Path) -> tuple[dict[str, Session], list[Query]]:
    """LoCoMo-style JSON: a list of samples, each with a ``conversation``
    holding ``session_<n>`` turn lists and a ``qa`` list whose evidence
    entries are dialog IDs of the form ``D<n>:<turn>``.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), offset=exc.pos) from exc
    if not isinstance(data, list):
        raise ParseError("expected a top-level list of samples", path=str(path))

    sessions: dict[str, Session] = {}
    queries: list[Query] = []
    for i, sample in enumerate(data):
        try:
            sample_id = str(sample.get("sample_id", f"sample-{i}"))
            conversation = sample["conversation"]
            session_numbers = []
            for key, raw_turns in conversation.items():
                if not key.startswith("session_") or not isinstance(raw_turns, list):
                    continue
                suffix = key[len("session_"):]
                if not suffix.isdigit():
                    continue
                session_numbers.append(int(suffix))
                sid = f"{sample_id}:session_{suffix}"
                turns = [
                    Turn(str(t.get("speaker", "user")), str(t.get("text", "")))
                    for t in raw_turns
                    if t.get("text")
                ]
                if turns:
                    sessions[sid] = _session_from_turns(sid, turns)
            for j, qa in enumerate(sample.get("qa", [])):
                if "answer" not in qa or not qa.get("evidence"):
                    continue
                evidence_sessions = set()
                for dia_id in qa["evidence"]:
                    session_no = _locomo_session_number(str(dia_id))
                    if session_no is not None:
                        evidence_sessions.add(f"{sample_id}:session_{session_no}")
                evidence_sessions &= sessions.keys()
                if not evidence_sessions:
                    continue
                family = qa.get("category")
                queries.append(
                    Query(
                        query_id=f"{sample_id}:qa-{j}",
                        question_text=str(qa["question"]),
                        gold_answer=str(qa["answer"]),
                        evidence_session_ids=frozenset(evidence_sessions),
                        question_family=None if family is None else str(family),
                    )
                )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed sample {i}: {exc!r}", path=str(path)) from exc
    return sessions, queries


def _locomo_session_number(dia_id: str) -> int | None:
    # Dialog IDs look like "D3:14"; the leading number names the session.
    head = dia_id.split(":", 1)[0].lstrip("Dd")
    return int(head) if head.isdigit() else None


# ---------------------------------------------------------------------------
# Ladder construction


def build_ladder(
    query: Query,
    pool: Sequence[str],
    levels: Sequence[ScaleLevel],
    seed: int,
    nesting: str = "nested",
) -> list[ScaledHistory]:
    """Build one evidence-preserving history per scale level.

    Distractors are drawn from ``pool`` without replacement with a PRNG
    keyed by ``(seed, query_id)``, so construction is byte-deterministic
    across runs and machines. Under nested mode the distractor set at
    each level is a prefix of the next level's.

    Raises:
        PoolTooSmall: the pool cannot cover the largest level.
        LadderError: levels are not a valid ascending ladder.
    """
    levels = validate_levels(levels)
    if nesting not in NESTING_MODES:
        raise LadderError(f"unknown nesting mode {nesting!r}")
    max_n = levels[-1].n_irr
    if len(pool) < max_n:
        raise PoolTooSmall(f"pool has {len(pool)} sessions, level {levels[-1].level_id} needs {max_n}")

    pool_list = sorted(pool)
    histories = []
    if nesting == "nested":
        rng = random.Random(_derive_seed(seed, query.query_id))
        permutation = rng.sample(pool_list, max_n)
        per_level = {level.level_id: permutation[: level.n_irr] for level in levels}
    else:
        per_level = {}
        for level in levels:
            rng = random.Random(_derive_seed(seed, query.query_id, level.level_id))
            per_level[level.level_id] = rng.sample(pool_list, level.n_irr)

    for level in levels:
        ids = set(query.evidence_session_ids) | set(per_level[level.level_id])
        histories.append(
            ScaledHistory(
                query_id=query.query_id,
                level_id=level.level_id,
                session_ids=_order_history(ids),
                seed=seed,
            )
        )
    return histories


def build_ladders(
    corpus: Corpus,
    levels: Sequence[ScaleLevel] = DEFAULT_LEVELS,
    seed: int = 0,
    nesting: str = "nested",
    sharing: str = "per-query",
) -> dict[tuple[str, str], ScaledHistory]:
    """Build ladders for every query in a corpus.

    ``sharing="shared"`` injects the same distractor sessions into every
    query's history at a given level; the default samples per query.
    """
    if sharing not in SHARING_MODES:
        raise LadderError(f"unknown sharing mode {sharing!r}")
    levels = validate_levels(levels)
    histories: dict[tuple[str, str], ScaledHistory] = {}
    if sharing == "shared":
        if nesting not in NESTING_MODES:
            raise LadderError(f"unknown nesting mode {nesting!r}")
        max_n = levels[-1].n_irr
        if len(corpus.distractor_pool) < max_n:
            raise PoolTooSmall(
                f"pool has {len(corpus.distractor_pool)} sessions, level {levels[-1].level_id} needs {max_n}"
            )
        pool_list = sorted(corpus.distractor_pool)
        if nesting == "nested":
            rng = random.Random(_derive_seed(seed, "__shared__"))
            permutation = rng.sample(pool_list, max_n)
            shared = {level.level_id: permutation[: level.n_irr] for level in levels}
        else:
            shared = {}
            for level in levels:
                rng = random.Random(_derive_seed(seed, "__shared__", level.level_id))
                shared[level.level_id] = rng.sample(pool_list, level.n_irr)
        for query in corpus.queries:
            for level in levels:
                ids = set(query.evidence_session_ids) | set(shared[level.level_id])
                histories[(query.query_id, level.level_id)] = ScaledHistory(
                    query_id=query.query_id,
                    level_id=level.level_id,
                    session_ids=_order_history(ids),
                    seed=seed,
                )
        return histories

    for query in corpus.queries:
        for history in build_ladder(query, corpus.distractor_pool, levels, seed, nesting):
            histories[(history.query_id, history.level_id)] = history
    return histories


@dataclass(frozen=True)
class LevelStats:
    level_id: str
    n_queries: int
    mean_sessions: float
    mean_tokens: float


def ladder_stats(
    histories: Iterable[ScaledHistory],
    sessions: Mapping[str, Session],
) -> dict[str, LevelStats]:
    """Per-level arithmetic means of sessions/query and tokens/query."""
    by_level: dict[str, list[ScaledHistory]] = {}
    for history in histories:
        by_level.setdefault(history.level_id, []).append(history)
    if not by_level:
        raise ValueError("no histories given")
    stats = {}
    for level_id, level_histories in by_level.items():
        n = len(level_histories)
        total_sessions = sum(len(h.session_ids) for h in level_histories)
        total_tokens = sum(
            sum(sessions[sid].token_count for sid in h.session_ids) for h in level_histories
        )
        stats[level_id] = LevelStats(level_id, n, total_sessions / n, total_tokens / n)
    return stats


# ---------------------------------------------------------------------------
# Serialization

_LADDER_KEYS = ("query_id", "level_id", "seed", "session_ids")


def history_to_record(history: ScaledHistory) -> dict:
    return {
        "query_id": history.query_id,
        "level_id": history.level_id,
        "seed": history.seed,
        "session_ids": list(history.session_ids),
    }


def history_from_record(record: Mapping) -> ScaledHistory:
    try:
        return ScaledHistory(
            query_id=str(record["query_id"]),
            level_id=str(record["level_id"]),
            session_ids=tuple(str(s) for s in record["session_ids"]),
            seed=int(record["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed ladder record: {exc!r}") from exc


def write_ladder_jsonl(histories: Iterable[ScaledHistory], path: str | Path) -> int:
    """Write one record per (query, level) in bit-stable order."""
    ordered = sorted(histories, key=lambda h: (h.query_id, h.level_id))
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for history in ordered:
            handle.write(json.dumps(history_to_record(history), separators=(",", ":"), sort_keys=True))
            handle.write("\n")
    return len(ordered)


def read_ladder_jsonl(path: str | Path) -> Iterator[ScaledHistory]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=line_no, offset=exc.pos) from exc
            yield history_from_record(record)


def write_corpus_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the generic-jsonl interchange format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for sid in sorted(corpus.sessions):
            session = corpus.sessions[sid]
            record = {
                "type": "session",
                "id": session.session_id,
                "turns": [{"role": t.role, "text": t.text} for t in session.turns],
            }
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")
        for query in corpus.queries:
            record = {
                "type": "query",
                "id": query.query_id,
                "question": query.question_text,
                "answer": query.gold_answer,
                "evidence": sorted(query.evidence_session_ids),
            }
            if query.question_family is not None:
                record["family"] = query.question_family
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")
