"""Rollout orchestration over (query x scale x agent x adapter) cells.

Budgets never terminate a rollout: an agent may keep issuing memory
calls past every budget, and compliance is decided afterwards from the
stored trajectory. Scripted agents produce known failure regimes for
tests; the chat-model agent speaks an OpenAI-compatible tool loop.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import Corpus, Query, ScaledHistory, Session, estimate_tokens
from .errors import DataError, EndpointError
from .llm import ChatCompletionsClient, CompletionUnavailable
from .memiface import (
    EmptyIndex,
    MemoryAdapter,
    ParityLedger,
    RetrievalState,
)
from .trajstore import (
    KIND_ANSWER,
    KIND_MEMORY_CALL,
    Trajectory,
    TrajectoryStep,
    finalize,
    store_append,
    store_scan,
)

logger = logging.getLogger(__name__)

AGENT_KINDS = ("chat-model", "scripted")
ANSWER_MODES = ("echo-gold", "echo-wrong", "answer-from-units")

DEFAULT_STEP_CAP = 16

WRONG_ANSWER_TEXT = "deliberately incorrect scripted answer"
NO_ANSWER_TEXT = "unknown"

AGENT_SYSTEM_PROMPT = (
    "You answer questions about earlier conversation sessions.\n"
    "Call the search_memory tool to look up relevant history; each call\n"
    "returns ranked text snippets. When you know the answer, reply with\n"
    "the answer text alone and no tool call."
)

SEARCH_TOOL = {
    "type": "function",
    "function": {
        "name": "search_memory",
        "description": "Search the indexed conversation history.",
        "parameters": {
            "type": "object",
            "properties": {"query": {"type": "string"}},
            "required": ["query"],
        },
    },
}


class AgentUnavailable(EndpointError):
    """The agent endpoint failed after retries."""


@dataclass(frozen=True)
class ScriptedPolicy:
    """Deterministic agent behavior with a known (C, R) outcome."""

    calls_before_answer: int
    answer_mode: str
    reformulate: bool = False

    def __post_init__(self) -> None:
        if self.calls_before_answer < 0:
            raise ValueError("calls_before_answer must be nonnegative")
        if self.answer_mode not in ANSWER_MODES:
            raise ValueError(f"unknown answer_mode {self.answer_mode!r}")


@dataclass(frozen=True)
class ScriptMixture:
    """Weighted mixture of scripted policies, assigned to queries by
    their rank in sorted query-ID order so the realized fractions are
    exact whenever weight x population size is integral.
    """

    components: tuple[tuple[float, ScriptedPolicy], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = sum(w for w, _ in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total}")

    def assign(self, query_ids: Sequence[str]) -> dict[str, ScriptedPolicy]:
        ordered = sorted(query_ids)
        n = len(ordered)
        assignment: dict[str, ScriptedPolicy] = {}
        start = 0
        acc = 0.0
        for weight, policy in self.components:
            acc += weight
            end = round(acc * n)
            for qid in ordered[start:end]:
                assignment[qid] = policy
            start = end
        for qid in ordered[start:]:
            assignment[qid] = self.components[-1][1]
        return assignment


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass(frozen=True)
class AgentDescriptor:
    agent_id: str
    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    decode_params: DecodeParams = DecodeParams()
    script: ScriptedPolicy | ScriptMixture | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == "chat-model" and not self.endpoint:
            raise ValueError("chat-model agents require an endpoint")
        if self.kind == "scripted" and self.script is None:
            raise ValueError("scripted agents require a script")


@dataclass(frozen=True)
class RolloutSpec:
    query_id: str
    level_id: str
    agent_id: str
    adapter_id: str
    budgets: tuple[int, ...]
    seed: int
    step_cap: int = DEFAULT_STEP_CAP

    def __post_init__(self) -> None:
        if not self.budgets:
            raise ValueError("budgets must be nonempty")
        if self.step_cap < max(self.budgets) + 1:
            raise ValueError(
                f"step_cap {self.step_cap} cannot accommodate budget {max(self.budgets)}; "
                "rollouts must never be truncated at the budget"
            )


@dataclass(frozen=True)
class AgentAction:
    kind: str  # "retrieve" | "answer"
    query_text: str | None = None
    answer_text: str | None = None


@dataclass
class ScriptedState:
    question: str
    gold_answer: str
    calls_made: int = 0
    last_units: tuple = ()


def scripted_agent_step(policy: ScriptedPolicy, state: ScriptedState) -> AgentAction:
    """Next deterministic action for a scripted agent."""
    if state.calls_made < policy.calls_before_answer:
        query = state.question
        if policy.reformulate and state.calls_made > 0:
            query = f"{state.question} variant {state.calls_made}"
        return AgentAction(kind="retrieve", query_text=query)
    if policy.answer_mode == "echo-gold":
        return AgentAction(kind="answer", answer_text=state.gold_answer)
    if policy.answer_mode == "echo-wrong":
        return AgentAction(kind="answer", answer_text=WRONG_ANSWER_TEXT)
    if state.last_units:
        return AgentAction(kind="answer", answer_text=state.last_units[0].text)
    return AgentAction(kind="answer", answer_text=NO_ANSWER_TEXT)


def _derive_seed(*parts: object) -> int:
    material = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _policy_for(agent: AgentDescriptor, query_id: str, assignment: Mapping[str, ScriptedPolicy] | None) -> ScriptedPolicy:
    if isinstance(agent.script, ScriptedPolicy):
        return agent.script
    if assignment is None:
        raise DataError(f"agent {agent.agent_id!r} has a mixture script but no assignment")
    return assignment[query_id]


def run_rollout(
    spec: RolloutSpec,
    query: Query,
    history: ScaledHistory,
    sessions: Mapping[str, Session],
    adapter: MemoryAdapter,
    agent: AgentDescriptor,
    *,
    policy_assignment: Mapping[str, ScriptedPolicy] | None = None,
    llm_client: ChatCompletionsClient | None = None,
    parity: ParityLedger | None = None,
) -> Trajectory:
    """Execute one rollout and return the finalized trajectory.

    The adapter is indexed here, charging preprocessing to q0; every
    agent-issued retrieval becomes one step whose counted flag comes
    from the adapter response. The rollout ends at the agent's answer
    action, or at step_cap with the no_answer flag set.
    """
    index = adapter.index_history(history, sessions)
    retrieval_state = RetrievalState()
    steps: list[TrajectoryStep] = []
    final_answer = ""
    no_answer = False

    if agent.kind == "scripted":
        policy = _policy_for(agent, query.query_id, policy_assignment)
        state = ScriptedState(question=query.question_text, gold_answer=query.gold_answer)
        for step_index in range(spec.step_cap):
            action = scripted_agent_step(policy, state)
            if action.kind == "retrieve":
                response = adapter.retrieve(index, action.query_text, state=retrieval_state)
                state.calls_made += 1
                state.last_units = response.units
                if parity is not None:
                    parity.record(
                        query.query_id, history.level_id, adapter.adapter_id, response, store_size=index.n_units
                    )
                steps.append(
                    TrajectoryStep(
                        index=step_index,
                        kind=KIND_MEMORY_CALL,
                        counted=response.counted,
                        query_text=action.query_text,
                        returned_unit_ids=response.unit_ids,
                        tokens_in=estimate_tokens(action.query_text),
                        tokens_out=sum(estimate_tokens(u.text) for u in response.units),
                    )
                )
            else:
                final_answer = action.answer_text
                steps.append(
                    TrajectoryStep(
                        index=step_index,
                        kind=KIND_ANSWER,
                        tokens_out=estimate_tokens(final_answer),
                    )
                )
                break
        else:
            no_answer = True
    else:
        final_answer, no_answer = _chat_model_rollout(
            spec, query, adapter, index, retrieval_state, steps, agent, llm_client, parity, history
        )

    return finalize(
        steps,
        query_id=query.query_id,
        level_id=history.level_id,
        agent_id=agent.agent_id,
        adapter_id=adapter.adapter_id,
        seed=spec.seed,
        final_answer=final_answer,
        q0_tokens=index.q0_tokens,
        no_answer=no_answer,
    )


def _format_units(units) -> str:
    lines = [f"[{u.rank}] ({u.source_session_id}) {u.text}" for u in units]
    return "\n".join(lines) if lines else "(no results)"


def _chat_model_rollout(
    spec: RolloutSpec,
    query: Query,
    adapter: MemoryAdapter,
    index,
    retrieval_state: RetrievalState,
    steps: list[TrajectoryStep],
    agent: AgentDescriptor,
    llm_client: ChatCompletionsClient | None,
    parity: ParityLedger | None,
    history: ScaledHistory,
) -> tuple[str, bool]:
    if llm_client is None:
        llm_client = ChatCompletionsClient(
            agent.endpoint,
            agent.model_name or "default",
            temperature=agent.decode_params.temperature,
            max_tokens=agent.decode_params.max_tokens,
        )
    messages: list[dict] = [
        {"role": "system", "content": AGENT_SYSTEM_PROMPT},
        {"role": "user", "content": query.question_text},
    ]
    for step_index in range(spec.step_cap):
        started = time.monotonic()
        try:
            result = llm_client.complete(messages, tools=[SEARCH_TOOL])
        except CompletionUnavailable as exc:
            raise AgentUnavailable(str(exc)) from exc
        wall_ms = int((time.monotonic() - started) * 1000)

        if result.tool_calls:
            # One step per agent action: only the first tool call in a
            # completion is honored.
            call = result.tool_calls[0]
            try:
                arguments = json.loads(call.arguments or "{}")
                search_query = str(arguments.get("query", query.question_text))
            except json.JSONDecodeError:
                search_query = query.question_text
            try:
                response = adapter.retrieve(index, search_query, state=retrieval_state)
                unit_ids = response.unit_ids
                counted = response.counted
                tool_content = _format_units(response.units)
            except EmptyIndex:
                unit_ids = ()
                counted = adapter.is_counted("retrieve")
                tool_content = "(memory store is empty)"
            if parity is not None and unit_ids:
                parity.record(query.query_id, history.level_id, adapter.adapter_id, response, store_size=index.n_units)
            steps.append(
                TrajectoryStep(
                    index=len(steps),
                    kind=KIND_MEMORY_CALL,
                    counted=counted,
                    query_text=search_query,
                    returned_unit_ids=unit_ids,
                    tokens_in=result.usage.prompt_tokens,
                    tokens_out=result.usage.completion_tokens,
                    wall_ms=wall_ms,
                )
            )
            messages.append(
                {
                    "role": "assistant",
                    "content": result.content or None,
                    "tool_calls": [
                        {
                            "id": call.call_id,
                            "type": "function",
                            "function": {"name": call.name, "arguments": call.arguments},
                        }
                    ],
                }
            )
            messages.append({"role": "tool", "tool_call_id": call.call_id, "content": tool_content})
            continue

        answer = (result.content or "").strip()
        steps.append(
            TrajectoryStep(
                index=len(steps),
                kind=KIND_ANSWER,
                tokens_in=result.usage.prompt_tokens,
                tokens_out=result.usage.completion_tokens,
                wall_ms=wall_ms,
            )
        )
        return answer, False
    return "", True


# ---------------------------------------------------------------------------
# Sweeps

@dataclass(frozen=True)
class SweepConfig:
    budgets: tuple[int, ...] = (2, 3, 5)
    seed: int = 0
    parallelism: int = 1
    step_cap: int = DEFAULT_STEP_CAP
    rollouts_per_query: int = 1

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.rollouts_per_query < 1:
            raise ValueError("rollouts_per_query must be >= 1")


@dataclass
class SweepManifest:
    store_path: str
    benchmark_id: str
    budgets: tuple[int, ...]
    seed: int
    cells_total: int = 0
    cells_run: int = 0
    cells_skipped: int = 0
    failures: list[dict] = field(default_factory=list)
    parity: dict = field(default_factory=dict)
    level_ids: tuple[str, ...] = ()
    agent_ids: tuple[str, ...] = ()
    adapter_ids: tuple[str, ...] = ()

    def to_json(self) -> str:
        payload = {
            "store_path": self.store_path,
            "benchmark_id": self.benchmark_id,
            "budgets": list(self.budgets),
            "seed": self.seed,
            "cells_total": self.cells_total,
            "cells_run": self.cells_run,
            "cells_skipped": self.cells_skipped,
            "failures": self.failures,
            "parity": self.parity,
            "level_ids": list(self.level_ids),
            "agent_ids": list(self.agent_ids),
            "adapter_ids": list(self.adapter_ids),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _existing_counts(store_path: Path) -> dict[tuple[str, str, str, str], int]:
    counts: dict[tuple[str, str, str, str], int] = {}
    if not store_path.exists():
        return counts
    for trajectory in store_scan(store_path):
        key = (trajectory.query_id, trajectory.level_id, trajectory.agent_id, trajectory.adapter_id)
        counts[key] = counts.get(key, 0) + 1
    return counts


def run_sweep(
    corpus: Corpus,
    histories: Mapping[tuple[str, str], ScaledHistory],
    agents: Sequence[AgentDescriptor],
    adapters: Sequence[MemoryAdapter],
    store_path: str | Path,
    config: SweepConfig = SweepConfig(),
    *,
    level_ids: Sequence[str] | None = None,
    llm_client_factory: Callable[[AgentDescriptor], ChatCompletionsClient] | None = None,
) -> SweepManifest:
    """Run one trajectory per (query, level, agent, adapter, repeat).

    Work items are generated in sorted order and appended to the store
    in that order, so scripted sweeps are byte-identical across runs.
    A resumed sweep skips cells whose records are already stored;
    individual rollout failures are recorded and the sweep continues.
    """
    store_path = Path(store_path)
    if level_ids is None:
        level_ids = sorted({level for (_, level) in histories})
    query_ids = sorted({qid for (qid, _) in histories})
    queries = {q.query_id: q for q in corpus.queries}

    assignments: dict[str, dict[str, ScriptedPolicy]] = {}
    for agent in agents:
        if isinstance(agent.script, ScriptMixture):
            assignments[agent.agent_id] = agent.script.assign(query_ids)

    adapter_by_id = {a.adapter_id: a for a in adapters}
    existing = _existing_counts(store_path)
    parity = ParityLedger()
    manifest = SweepManifest(
        store_path=str(store_path),
        benchmark_id=corpus.benchmark_id,
        budgets=config.budgets,
        seed=config.seed,
        level_ids=tuple(level_ids),
        agent_ids=tuple(a.agent_id for a in agents),
        adapter_ids=tuple(sorted(adapter_by_id)),
    )

    work: list[tuple] = []
    for query_id in query_ids:
        if query_id not in queries:
            raise DataError(f"history references unknown query {query_id!r}")
        for level_id in level_ids:
            if (query_id, level_id) not in histories:
                raise DataError(f"missing history for ({query_id!r}, {level_id!r})")
            for agent in agents:
                for adapter_id in sorted(adapter_by_id):
                    key = (query_id, level_id, agent.agent_id, adapter_id)
                    manifest.cells_total += 1
                    have = existing.get(key, 0)
                    if have >= config.rollouts_per_query:
                        manifest.cells_skipped += 1
                        continue
                    for repeat in range(have, config.rollouts_per_query):
                        work.append((query_id, level_id, agent, adapter_id, repeat))

    def execute(item) -> tuple[tuple, Trajectory | None, Exception | None]:
        query_id, level_id, agent, adapter_id, repeat = item
        spec = RolloutSpec(
            query_id=query_id,
            level_id=level_id,
            agent_id=agent.agent_id,
            adapter_id=adapter_id,
            budgets=config.budgets,
            seed=_derive_seed(config.seed, query_id, level_id, agent.agent_id, adapter_id, repeat),
            step_cap=config.step_cap,
        )
        try:
            llm_client = llm_client_factory(agent) if llm_client_factory else None
            trajectory = run_rollout(
                spec,
                queries[query_id],
                histories[(query_id, level_id)],
                corpus.sessions,
                adapter_by_id[adapter_id],
                agent,
                policy_assignment=assignments.get(agent.agent_id),
                llm_client=llm_client,
                parity=parity,
            )
            return item, trajectory, None
        except Exception as exc:  # sweep must survive individual failures
            return item, None, exc

    if config.parallelism == 1:
        results = map(execute, work)
    else:
        executor = ThreadPoolExecutor(max_workers=config.parallelism)
        results = executor.map(execute, work)

    try:
        for item, trajectory, error in results:
            if error is not None:
                cell = [item[0], item[1], item[2].agent_id, item[3]]
                logger.warning("rollout %s failed: %s", tuple(cell), error)
                manifest.failures.append(
                    {"cell": cell, "repeat": item[4], "error": f"{type(error).__name__}: {error}"}
                )
                continue
            store_append(store_path, trajectory)
            manifest.cells_run += 1
    finally:
        if config.parallelism > 1:
            executor.shutdown(wait=True)

    manifest.parity = parity.summary()
    return manifest
