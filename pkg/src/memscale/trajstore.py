"""Canonical trajectory records and the append-only JSONL store.

A trajectory is budget-agnostic: no budget value is ever stored, so
re-analysis under a different budget touches only derived metrics.
Records carry a schema version; readers reject unknown major versions.

Record schema (one JSON object per line, keys sorted):

    schema_version  "1.0"
    query_id, level_id, agent_id, adapter_id  strings
    seed            integer
    steps           list of step objects (see below)
    final_answer    string
    correctness     null | 0 | 1
    judge_meta      null | object
    r_count         integer, count of counted steps
    q0_tokens       integer, amortized indexing tokens
    q1_tokens       integer, online query-time tokens
    no_answer       boolean, true when the rollout hit the step cap

Step objects:

    index           0-based integer
    kind            "memory_call" | "internal" | "answer"
    counted         boolean (true only on memory_call steps)
    query_text      null | string
    returned_unit_ids  null | list of strings
    tokens_in, tokens_out, wall_ms  nonnegative integers
"""

from __future__ import annotations

import gzip
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

from .errors import DataError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

STEP_KINDS = ("memory_call", "internal", "answer")

KIND_MEMORY_CALL = "memory_call"
KIND_INTERNAL = "internal"
KIND_ANSWER = "answer"


class MalformedSteps(DataError):
    """Step sequence violates the trajectory contract."""


class Unjudged(DataError):
    """Correctness requested before the trajectory was judged."""


class CorruptRecord(DataError):
    """A store line failed schema validation."""


class SchemaVersionMismatch(DataError):
    """A record carries an unknown schema major version."""


@dataclass(frozen=True)
class TrajectoryStep:
    index: int
    kind: str
    counted: bool = False
    query_text: str | None = None
    returned_unit_ids: tuple[str, ...] | None = None
    tokens_in: int = 0
    tokens_out: int = 0
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STEP_KINDS:
            raise MalformedSteps(f"unknown step kind {self.kind!r}")
        if self.counted and self.kind != KIND_MEMORY_CALL:
            raise MalformedSteps(f"counted flag on {self.kind} step {self.index}")
        if self.index < 0:
            raise MalformedSteps(f"negative step index {self.index}")
        if min(self.tokens_in, self.tokens_out, self.wall_ms) < 0:
            raise MalformedSteps(f"negative counters on step {self.index}")


@dataclass(frozen=True)
class Trajectory:
    """One completed rollout. Immutable once finalized; judging returns
    an updated copy rather than mutating.
    """

    query_id: str
    level_id: str
    agent_id: str
    adapter_id: str
    seed: int
    steps: tuple[TrajectoryStep, ...]
    final_answer: str
    r_count: int
    q0_tokens: int = 0
    q1_tokens: int = 0
    correctness: int | None = None
    judge_meta: Mapping | None = None
    no_answer: bool = False
    schema_version: str = SCHEMA_VERSION

    def with_judgment(self, correctness: int, judge_meta: Mapping | None = None) -> Trajectory:
        if correctness not in (0, 1):
            raise ValueError("correctness must be 0 or 1")
        return replace(self, correctness=correctness, judge_meta=judge_meta)

    def with_judge_error(self, judge_meta: Mapping) -> Trajectory:
        return replace(self, correctness=None, judge_meta=judge_meta)

    @property
    def is_judged(self) -> bool:
        return self.correctness is not None

    @property
    def judge_errored(self) -> bool:
        return self.correctness is None and self.judge_meta is not None

    def cell(self) -> tuple[str, str, str]:
        return (self.agent_id, self.adapter_id, self.level_id)


def finalize(
    steps: list[TrajectoryStep] | tuple[TrajectoryStep, ...],
    *,
    query_id: str,
    level_id: str,
    agent_id: str,
    adapter_id: str,
    seed: int,
    final_answer: str,
    q0_tokens: int = 0,
    no_answer: bool = False,
) -> Trajectory:
    """Validate a step sequence and seal it into a Trajectory.

    Derives r_count (counted steps) and q1_tokens (sum of step tokens).

    Raises:
        MalformedSteps: answer step not last or duplicated, indexes not
            contiguous from 0, or counted flag on a non-memory step.
    """
    steps = tuple(steps)
    for position, step in enumerate(steps):
        if step.index != position:
            raise MalformedSteps(f"step index {step.index} at position {position}")
    answer_positions = [i for i, s in enumerate(steps) if s.kind == KIND_ANSWER]
    if len(answer_positions) > 1:
        raise MalformedSteps("multiple answer steps")
    if answer_positions and answer_positions[0] != len(steps) - 1:
        raise MalformedSteps("answer step must be final")
    if not answer_positions and not no_answer:
        raise MalformedSteps("no answer step in a trajectory not flagged no_answer")

    r_count = sum(1 for s in steps if s.counted)
    q1 = sum(s.tokens_in + s.tokens_out for s in steps)
    return Trajectory(
        query_id=query_id,
        level_id=level_id,
        agent_id=agent_id,
        adapter_id=adapter_id,
        seed=seed,
        steps=steps,
        final_answer=final_answer,
        r_count=r_count,
        q0_tokens=q0_tokens,
        q1_tokens=q1,
        no_answer=no_answer,
    )


def pass_indicator(trajectory: Trajectory, budget: int) -> int:
    """1 iff the answer is correct and the call count fits the budget.

    The budget bound is inclusive; budgets apply post-hoc, so this never
    inspects anything but the stored correctness and r_count.

    Raises:
        Unjudged: correctness not yet set.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if trajectory.correctness is None:
        raise Unjudged(f"trajectory for query {trajectory.query_id!r} has no correctness")
    return int(trajectory.correctness == 1 and trajectory.r_count <= budget)


# ---------------------------------------------------------------------------
# Serialization

_JSON_KW = {"sort_keys": True, "separators": (",", ":")}


def step_to_record(step: TrajectoryStep) -> dict:
    return {
        "index": step.index,
        "kind": step.kind,
        "counted": step.counted,
        "query_text": step.query_text,
        "returned_unit_ids": None if step.returned_unit_ids is None else list(step.returned_unit_ids),
        "tokens_in": step.tokens_in,
        "tokens_out": step.tokens_out,
        "wall_ms": step.wall_ms,
    }


def trajectory_to_record(trajectory: Trajectory) -> dict:
    return {
        "schema_version": trajectory.schema_version,
        "query_id": trajectory.query_id,
        "level_id": trajectory.level_id,
        "agent_id": trajectory.agent_id,
        "adapter_id": trajectory.adapter_id,
        "seed": trajectory.seed,
        "steps": [step_to_record(s) for s in trajectory.steps],
        "final_answer": trajectory.final_answer,
        "correctness": trajectory.correctness,
        "judge_meta": None if trajectory.judge_meta is None else dict(trajectory.judge_meta),
        "r_count": trajectory.r_count,
        "q0_tokens": trajectory.q0_tokens,
        "q1_tokens": trajectory.q1_tokens,
        "no_answer": trajectory.no_answer,
    }


def encode_trajectory(trajectory: Trajectory) -> str:
    return json.dumps(trajectory_to_record(trajectory), **_JSON_KW)


def _require(record: Mapping, key: str):
    if key not in record:
        raise CorruptRecord(f"missing field {key!r}")
    return record[key]


def trajectory_from_record(record: Mapping) -> Trajectory:
    """Decode one store record.

    Raises:
        SchemaVersionMismatch: unknown major version (not corruption).
        CorruptRecord: anything else structurally wrong.
    """
    if not isinstance(record, Mapping):
        raise CorruptRecord("record is not an object")
    version = str(_require(record, "schema_version"))
    major = version.split(".", 1)[0]
    if major != SCHEMA_VERSION.split(".", 1)[0]:
        raise SchemaVersionMismatch(f"unknown schema major version {version!r}")
    try:
        steps = tuple(
            TrajectoryStep(
                index=int(s["index"]),
                kind=str(s["kind"]),
                counted=bool(s["counted"]),
                query_text=None if s.get("query_text") is None else str(s["query_text"]),
                returned_unit_ids=(
                    None
                    if s.get("returned_unit_ids") is None
                    else tuple(str(u) for u in s["returned_unit_ids"])
                ),
                tokens_in=int(s.get("tokens_in", 0)),
                tokens_out=int(s.get("tokens_out", 0)),
                wall_ms=int(s.get("wall_ms", 0)),
            )
            for s in _require(record, "steps")
        )
        correctness = record.get("correctness")
        if correctness is not None:
            correctness = int(correctness)
            if correctness not in (0, 1):
                raise CorruptRecord(f"correctness must be 0/1/null, got {correctness}")
        trajectory = Trajectory(
            query_id=str(_require(record, "query_id")),
            level_id=str(_require(record, "level_id")),
            agent_id=str(_require(record, "agent_id")),
            adapter_id=str(_require(record, "adapter_id")),
            seed=int(_require(record, "seed")),
            steps=steps,
            final_answer=str(_require(record, "final_answer")),
            r_count=int(_require(record, "r_count")),
            q0_tokens=int(record.get("q0_tokens", 0)),
            q1_tokens=int(record.get("q1_tokens", 0)),
            correctness=correctness,
            judge_meta=record.get("judge_meta"),
            no_answer=bool(record.get("no_answer", False)),
            schema_version=version,
        )
    except CorruptRecord:
        raise
    except (KeyError, TypeError, ValueError, MalformedSteps) as exc:
        raise CorruptRecord(f"malformed record: {exc}") from exc
    if trajectory.r_count != sum(1 for s in steps if s.counted):
        raise CorruptRecord("r_count does not match counted steps")
    return trajectory


# ---------------------------------------------------------------------------
# Store

@dataclass
class ScanStats:
    """Mutable counters filled in while a scan streams records."""

    scanned: int = 0
    yielded: int = 0
    corrupt: int = 0
    corrupt_lines: list[int] = field(default_factory=list)


def _open_read(path: Path) -> io.TextIOBase:
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    # Transparent gzip: sniff the two magic bytes.
    with path.open("rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return path.open("r", encoding="utf-8")


def _open_append(path: Path) -> io.TextIOBase:
    if path.suffix == ".gz":
        return gzip.open(path, "at", encoding="utf-8")
    return path.open("a", encoding="utf-8")


def store_append(path: str | Path, trajectory: Trajectory) -> None:
    """Append one record. A single write call per line keeps concurrent
    appends atomic on POSIX filesystems.
    """
    line = encode_trajectory(trajectory) + "\n"
    with _open_append(Path(path)) as handle:
        handle.write(line)


def store_append_many(path: str | Path, trajectories: Iterator[Trajectory] | list[Trajectory]) -> int:
    count = 0
    with _open_append(Path(path)) as handle:
        for trajectory in trajectories:
            handle.write(encode_trajectory(trajectory) + "\n")
            count += 1
    return count


def store_scan(
    path: str | Path,
    *,
    query_id: str | None = None,
    level_id: str | None = None,
    agent_id: str | None = None,
    adapter_id: str | None = None,
    stats: ScanStats | None = None,
) -> Iterator[Trajectory]:
    """Stream records matching the filters, skipping corrupt lines.

    Peak memory stays O(1) records: lines are decoded and yielded one at
    a time. Corruption is counted in ``stats`` (when given) and logged;
    unknown schema major versions are not treated as corruption and
    propagate as SchemaVersionMismatch.
    """
    path = Path(path)
    with _open_read(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            if stats is not None:
                stats.scanned += 1
            try:
                record = json.loads(line)
                trajectory = trajectory_from_record(record)
            except SchemaVersionMismatch:
                raise
            except (json.JSONDecodeError, CorruptRecord, DataError) as exc:
                logger.warning("skipping corrupt record at %s:%d: %s", path, line_no, exc)
                if stats is not None:
                    stats.corrupt += 1
                    stats.corrupt_lines.append(line_no)
                continue
            if query_id is not None and trajectory.query_id != query_id:
                continue
            if level_id is not None and trajectory.level_id != level_id:
                continue
            if agent_id is not None and trajectory.agent_id != agent_id:
                continue
            if adapter_id is not None and trajectory.adapter_id != adapter_id:
                continue
            if stats is not None:
                stats.yielded += 1
            yield trajectory


def store_cell_keys(path: str | Path) -> set[tuple[str, str, str, str]]:
    """All (query_id, level_id, agent_id, adapter_id) keys present."""
    keys = set()
    for trajectory in store_scan(path):
        keys.add((trajectory.query_id, trajectory.level_id, trajectory.agent_id, trajectory.adapter_id))
    return keys
