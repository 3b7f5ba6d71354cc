"""Trajectory-level diagnostics.

Every metric here is a pure function over immutable trajectory slices.
The three failure-partition rates come from one shared tally, so
pass + wrong + exhausted = 1 holds exactly on counts, not merely within
float error. Call-count quantiles follow the integer infimum definition
(no interpolation), with the probability threshold handled as an exact
fraction to keep decimal inputs like 0.9 honest.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .trajstore import Trajectory, Unjudged, pass_indicator

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.7
DEFAULT_RESAMPLES = 1000
DEFAULT_CI_LEVEL = 0.95


class EmptyCell(DataError):
    """Diagnostics requested over zero usable trajectories."""


class TooFewTasks(DataError):
    """Bootstrap needs at least two tasks."""


class IncompleteCurve(DataError):
    """A pass curve does not cover the full ladder."""


@dataclass(frozen=True)
class CellKey:
    agent_id: str
    adapter_id: str
    level_id: str
    benchmark_id: str = "default"


@dataclass(frozen=True)
class FailureCounts:
    """Shared tally behind the failure partition for one cell and budget.

    ``n_pass + n_wrong + n_exh == n`` by construction; ``excluded``
    counts judge-error records left out of the denominator.
    """

    n: int
    n_pass: int
    n_wrong: int
    n_exh: int
    excluded: int = 0

    def __post_init__(self) -> None:
        if self.n_pass + self.n_wrong + self.n_exh != self.n:
            raise ValueError("partition counts must sum to n")

    @property
    def pass_rate(self) -> Fraction:
        return Fraction(self.n_pass, self.n)

    @property
    def wrong_rate(self) -> Fraction:
        return Fraction(self.n_wrong, self.n)

    @property
    def exhausted_rate(self) -> Fraction:
        return Fraction(self.n_exh, self.n)


@dataclass(frozen=True)
class DiagnosticsCell:
    """All reported diagnostics for one (cell, budget)."""

    cell: CellKey
    budget: int
    n: int
    pass_at_b: float
    p_wrong: float
    p_exh: float
    medr: int
    p90r: int
    ci_low: float
    ci_high: float
    excluded: int = 0

    def __post_init__(self) -> None:
        if self.medr > self.p90r:
            raise ValueError("median call count cannot exceed the 0.9 quantile")


@dataclass(frozen=True)
class OnsetResult:
    """Breakdown onset: added-irrelevant-session count at the first
    ladder level whose pass rate falls below alpha. When no evaluated
    level falls below, ``exceeded_max`` is set and ``onset_sessions``
    holds the largest evaluated count (render as "> that value").
    """

    alpha: float
    onset_sessions: int
    exceeded_max: bool
    first_level: str | None

    def __str__(self) -> str:
        if self.exceeded_max:
            return f">{self.onset_sessions}"
        return str(self.onset_sessions)


def _usable(trajectories: Iterable[Trajectory]) -> tuple[list[Trajectory], int]:
    kept: list[Trajectory] = []
    excluded = 0
    for t in trajectories:
        if t.judge_errored:
            excluded += 1
            continue
        kept.append(t)
    return kept, excluded


def tally(trajectories: Sequence[Trajectory], budget: int) -> FailureCounts:
    """Count the failure partition for one cell at one budget.

    Judge-error records are excluded from the denominator and surfaced
    in ``excluded``; unjudged records raise.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    kept, excluded = _usable(trajectories)
    if not kept:
        raise EmptyCell(f"no usable trajectories (excluded {excluded})")
    n_pass = n_wrong = n_exh = 0
    for t in kept:
        if t.correctness is None:
            raise Unjudged(f"trajectory for query {t.query_id!r} has no correctness")
        if t.r_count > budget:
            n_exh += 1
        elif t.correctness == 1:
            n_pass += 1
        else:
            n_wrong += 1
    return FailureCounts(n=len(kept), n_pass=n_pass, n_wrong=n_wrong, n_exh=n_exh, excluded=excluded)


def per_task_pass(trajectories: Sequence[Trajectory], budget: int) -> dict[str, float]:
    """Per-query mean pass indicator (repeats averaged within a query)."""
    kept, _ = _usable(trajectories)
    if not kept:
        raise EmptyCell("no usable trajectories")
    sums: dict[str, list[int]] = {}
    for t in kept:
        sums.setdefault(t.query_id, []).append(pass_indicator(t, budget))
    return {qid: sum(vals) / len(vals) for qid, vals in sums.items()}


def pass_at_b(trajectories: Sequence[Trajectory], budget: int) -> tuple[float, int]:
    """Mean budgeted-pass rate and the sample size it was computed over.

    With one rollout per query this equals the plain trajectory mean;
    with repeats, queries are averaged first so the task stays the
    sampling unit.
    """
    per_task = per_task_pass(trajectories, budget)
    return sum(per_task.values()) / len(per_task), len(per_task)


def failure_decomposition(trajectories: Sequence[Trajectory], budget: int) -> tuple[float, float]:
    """(p_wrong, p_exh) from the same tally that feeds pass_at_b."""
    counts = tally(trajectories, budget)
    return float(counts.wrong_rate), float(counts.exhausted_rate)


def call_quantile(trajectories_or_counts: Sequence, p: float | str | Fraction) -> int:
    """Smallest integer r whose empirical CDF reaches p. No interpolation.

    ``p`` may be a float literal, string, or Fraction; floats are read
    through their decimal repr so 0.9 means nine tenths exactly.
    Accepts trajectories or raw call counts.
    """
    frac = p if isinstance(p, Fraction) else Fraction(str(p))
    if not 0 < frac <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    counts: list[int] = []
    for item in trajectories_or_counts:
        counts.append(item.r_count if isinstance(item, Trajectory) else int(item))
    if not counts:
        raise EmptyCell("no call counts")
    n = len(counts)
    histogram = Counter(counts)
    cumulative = 0
    for r in sorted(histogram):
        cumulative += histogram[r]
        if Fraction(cumulative, n) >= frac:
            return r
    return max(histogram)  # unreachable: CDF reaches 1 at the max


def median_calls(trajectories: Sequence) -> int:
    return call_quantile(trajectories, Fraction(1, 2))


def p90_calls(trajectories: Sequence) -> int:
    return call_quantile(trajectories, Fraction(9, 10))


def breakdown_onset(
    pass_by_level: Mapping[str, float] | Sequence[tuple[str, float]],
    ladder: Sequence[tuple[str, int]],
    alpha: float = DEFAULT_ALPHA,
) -> OnsetResult:
    """Scan the ladder in order for the first level with pass < alpha.

    ``ladder`` is the ordered (level_id, n_irr) sequence; the curve must
    cover every level. Computed on point estimates.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not ladder:
        raise IncompleteCurve("empty ladder")
    curve = dict(pass_by_level if not isinstance(pass_by_level, Mapping) else pass_by_level.items())
    missing = [level_id for level_id, _ in ladder if level_id not in curve]
    if missing:
        raise IncompleteCurve(f"pass curve missing levels {missing}")
    for level_id, n_irr in ladder:
        if curve[level_id] < alpha:
            return OnsetResult(alpha=alpha, onset_sessions=n_irr, exceeded_max=False, first_level=level_id)
    max_n = ladder[-1][1]
    return OnsetResult(alpha=alpha, onset_sessions=max_n, exceeded_max=True, first_level=None)


def bootstrap_ci(
    per_task_values: Sequence[float],
    resamples: int = DEFAULT_RESAMPLES,
    level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval over task-level values.

    Tasks are resampled with replacement ``resamples`` times; the
    interval takes the ((1-level)/2, 1-(1-level)/2) percentiles of the
    resampled means. Deterministic under a fixed seed.
    """
    values = np.asarray(per_task_values, dtype=float)
    if values.size < 2:
        raise TooFewTasks(f"need >= 2 tasks, got {values.size}")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    digest = hashlib.blake2b(f"bootstrap\x1f{seed}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    indexes = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[indexes].mean(axis=1)
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(means, [tail, 100 - tail])
    return float(low), float(high)


def compute_cell(
    trajectories: Sequence[Trajectory],
    cell: CellKey,
    budget: int,
    *,
    resamples: int = DEFAULT_RESAMPLES,
    ci_level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
    with_ci: bool = True,
) -> DiagnosticsCell:
    """Assemble the full diagnostics row for one (cell, budget)."""
    counts = tally(trajectories, budget)
    per_task = per_task_pass(trajectories, budget)
    values = [per_task[qid] for qid in sorted(per_task)]
    pass_value = sum(values) / len(values)
    kept, _ = _usable(trajectories)
    medr = median_calls(kept)
    p90r = p90_calls(kept)
    if with_ci and len(values) >= 2:
        ci_low, ci_high = bootstrap_ci(values, resamples=resamples, level=ci_level, seed=seed)
    else:
        ci_low = ci_high = pass_value
    return DiagnosticsCell(
        cell=cell,
        budget=budget,
        n=counts.n,
        pass_at_b=pass_value,
        p_wrong=float(counts.wrong_rate),
        p_exh=float(counts.exhausted_rate),
        medr=medr,
        p90r=p90r,
        ci_low=ci_low,
        ci_high=ci_high,
        excluded=counts.excluded,
    )


def budget_sweep(
    trajectories: Sequence[Trajectory],
    cell: CellKey,
    budgets: Sequence[int],
    **kwargs,
) -> list[DiagnosticsCell]:
    """Diagnostics per budget over one fixed trajectory set.

    Pure re-analysis: nothing is re-run, so varying the budget list can
    only change these derived rows.
    """
    if not budgets:
        raise EmptyCell("budgets must be nonempty")
    return [compute_cell(trajectories, cell, budget, **kwargs) for budget in budgets]


def group_cells(
    trajectories: Iterable[Trajectory], benchmark_id: str = "default"
) -> dict[CellKey, list[Trajectory]]:
    groups: dict[CellKey, list[Trajectory]] = {}
    for t in trajectories:
        key = CellKey(t.agent_id, t.adapter_id, t.level_id, benchmark_id)
        groups.setdefault(key, []).append(t)
    return groups


def compute_diagnostics(
    trajectories: Iterable[Trajectory],
    budgets: Sequence[int],
    *,
    benchmark_id: str = "default",
    resamples: int = DEFAULT_RESAMPLES,
    ci_level: float = DEFAULT_CI_LEVEL,
    seed: int = 0,
) -> list[DiagnosticsCell]:
    """Diagnostics for every (cell, budget) present in a trajectory set,
    in sorted cell order.
    """
    groups = group_cells(trajectories, benchmark_id)
    rows: list[DiagnosticsCell] = []
    for key in sorted(groups, key=lambda k: (k.agent_id, k.adapter_id, k.level_id)):
        for budget in budgets:
            rows.append(
                compute_cell(
                    groups[key], key, budget, resamples=resamples, ci_level=ci_level, seed=seed
                )
            )
    return rows


def diagnostics_to_records(rows: Sequence[DiagnosticsCell], *, alpha: float, resamples: int, seed: int) -> list[dict]:
    """JSON-ready rows with run metadata attached to each record."""
    records = []
    for row in rows:
        records.append(
            {
                "agent_id": row.cell.agent_id,
                "adapter_id": row.cell.adapter_id,
                "level_id": row.cell.level_id,
                "benchmark_id": row.cell.benchmark_id,
                "budget": row.budget,
                "n": row.n,
                "pass_at_b": row.pass_at_b,
                "p_wrong": row.p_wrong,
                "p_exh": row.p_exh,
                "medr": row.medr,
                "p90r": row.p90r,
                "ci_low": row.ci_low,
                "ci_high": row.ci_high,
                "excluded": row.excluded,
                "alpha": alpha,
                "resamples": resamples,
                "seed": seed,
            }
        )
    return records


def diagnostics_from_records(records: Iterable[Mapping]) -> list[DiagnosticsCell]:
    rows = []
    for r in records:
        rows.append(
            DiagnosticsCell(
                cell=CellKey(
                    agent_id=str(r["agent_id"]),
                    adapter_id=str(r["adapter_id"]),
                    level_id=str(r["level_id"]),
                    benchmark_id=str(r.get("benchmark_id", "default")),
                ),
                budget=int(r["budget"]),
                n=int(r["n"]),
                pass_at_b=float(r["pass_at_b"]),
                p_wrong=float(r["p_wrong"]),
                p_exh=float(r["p_exh"]),
                medr=int(r["medr"]),
                p90r=int(r["p90r"]),
                ci_low=float(r["ci_low"]),
                ci_high=float(r["ci_high"]),
                excluded=int(r.get("excluded", 0)),
            )
        )
    return rows
