"""Scale-conditioned evaluation harness for agent-memory systems.

Measures how reliably an agent-plus-memory stack answers questions as
its accessible history grows with irrelevant sessions while the
evidence stays fixed, under post-hoc retrieval-call budgets.
"""

from __future__ import annotations

from .corpus import (
    DEFAULT_LEVELS,
    Corpus,
    DanglingEvidence,
    EmptyPool,
    ParseError,
    PoolTooSmall,
    Query,
    ScaledHistory,
    ScaleLevel,
    Session,
    Turn,
    build_ladder,
    build_ladders,
    estimate_tokens,
    ladder_stats,
    load_corpus,
)
from .errors import DataError, EndpointError, MemscaleError, UsageError
from .judge import (
    JudgeConfig,
    JudgeVerdict,
    aggregate_judgments,
    build_judge_messages,
    judge_answer,
    judge_store,
)
from .metrics import (
    CellKey,
    DiagnosticsCell,
    OnsetResult,
    bootstrap_ci,
    breakdown_onset,
    budget_sweep,
    call_quantile,
    compute_cell,
    compute_diagnostics,
    failure_decomposition,
    pass_at_b,
    tally,
)
from .report import ReportCard, emit_report_card, emit_series, emit_table, render_card
from .runner import (
    AgentDescriptor,
    RolloutSpec,
    ScriptedPolicy,
    ScriptMixture,
    SweepConfig,
    run_rollout,
    run_sweep,
    scripted_agent_step,
)
from .trajstore import (
    Trajectory,
    TrajectoryStep,
    finalize,
    pass_indicator,
    store_append,
    store_scan,
)

__version__ = "0.1.0"

__all__ = [
    "AgentDescriptor",
    "CellKey",
    "Corpus",
    "DEFAULT_LEVELS",
    "DanglingEvidence",
    "DataError",
    "DiagnosticsCell",
    "EmptyPool",
    "EndpointError",
    "JudgeConfig",
    "JudgeVerdict",
    "MemscaleError",
    "OnsetResult",
    "ParseError",
    "PoolTooSmall",
    "Query",
    "ReportCard",
    "RolloutSpec",
    "ScaleLevel",
    "ScaledHistory",
    "ScriptMixture",
    "ScriptedPolicy",
    "Session",
    "SweepConfig",
    "Trajectory",
    "TrajectoryStep",
    "Turn",
    "UsageError",
    "aggregate_judgments",
    "bootstrap_ci",
    "breakdown_onset",
    "budget_sweep",
    "build_judge_messages",
    "build_ladder",
    "build_ladders",
    "call_quantile",
    "compute_cell",
    "compute_diagnostics",
    "emit_report_card",
    "emit_series",
    "emit_table",
    "estimate_tokens",
    "failure_decomposition",
    "finalize",
    "judge_answer",
    "judge_store",
    "ladder_stats",
    "load_corpus",
    "pass_at_b",
    "pass_indicator",
    "render_card",
    "run_rollout",
    "run_sweep",
    "scripted_agent_step",
    "store_append",
    "store_scan",
    "tally",
]
