"""Rendering: reporting cards, result tables, and plot-ready series.

All rendering is read-only over diagnostics rows. Percentages show one
decimal place; the CSV forms always carry full-precision values plus
the cell key, so no rendered number is orphaned from its provenance.
Chart drawing is out of scope: consumers plot from the emitted series.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DataError
from .metrics import DEFAULT_ALPHA, DiagnosticsCell, OnsetResult, breakdown_onset

logger = logging.getLogger(__name__)

TABLE_LAYOUTS = ("reliability-endpoints", "failure-decomposition", "multi-budget")

EVIDENCE_CONDITION = "evidence-preserving: annotated evidence sessions fixed"

REGIME_EXHAUSTED = "budget-induced"
REGIME_WRONG = "wrong-within-budget"
REGIME_TIED = "tied"

_SUBSCRIPTS = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")


class MissingLevels(DataError):
    """Cells do not cover the ladder the layout needs."""


@dataclass(frozen=True)
class ReportCard:
    agent_and_interface: str
    scale_range: str
    evidence_condition: str
    retrieval_budget: str
    reliability: Mapping[str, float]
    interaction_burden: Mapping[str, int]
    failure_regime: Mapping[str, str]
    breakdown_onset: OnsetResult


def _pct(value: float) -> str:
    return f"{100 * value:.1f}"


def _budget_label(index: int) -> str:
    return "B" + str(index).translate(_SUBSCRIPTS)


def budget_phrase(budgets: Sequence[int]) -> str:
    primary = budgets[0]
    phrase = f"{_budget_label(0)}={primary} agent-issued memory calls"
    rest = list(budgets[1:])
    if rest:
        phrase += "; sensitivity at B∈{" + ",".join(str(b) for b in rest) + "}"
    return phrase


def _dominant_regime(row: DiagnosticsCell) -> str:
    if row.p_exh > row.p_wrong:
        return REGIME_EXHAUSTED
    if row.p_wrong > row.p_exh:
        return REGIME_WRONG
    return REGIME_TIED


def _by_level(cells: Sequence[DiagnosticsCell], budget: int, ladder: Sequence[tuple[str, int]]) -> dict[str, DiagnosticsCell]:
    rows = {c.cell.level_id: c for c in cells if c.budget == budget}
    missing = [level for level, _ in ladder if level not in rows]
    if missing:
        raise MissingLevels(f"no diagnostics at budget {budget} for levels {missing}")
    return rows


def emit_report_card(
    cells: Sequence[DiagnosticsCell],
    ladder: Sequence[tuple[str, int]],
    alpha: float = DEFAULT_ALPHA,
    budgets: Sequence[int] = (2, 3, 5),
) -> ReportCard:
    """Build the eight-field card for one (agent, adapter) cell group.

    ``cells`` must hold a row for every ladder level at the primary
    budget; the ladder gives level order and added-session counts.
    """
    if len(ladder) < 2:
        raise MissingLevels("a reporting card needs at least two ladder levels")
    keys = {(c.cell.agent_id, c.cell.adapter_id) for c in cells}
    if len(keys) != 1:
        raise DataError(f"cells span multiple (agent, adapter) groups: {sorted(keys)}")
    agent_id, adapter_id = next(iter(keys))

    primary = budgets[0]
    rows = _by_level(cells, primary, ladder)
    reliability = {level: rows[level].pass_at_b for level, _ in ladder}
    burden = {level: rows[level].p90r for level, _ in ladder}
    regime = {level: _dominant_regime(rows[level]) for level, _ in ladder}
    onset = breakdown_onset(reliability, ladder, alpha)

    counts = [n for _, n in ladder]
    return ReportCard(
        agent_and_interface=f"{agent_id} with {adapter_id}",
        scale_range=f"{min(counts)}–{max(counts)} added irrelevant sessions",
        evidence_condition=EVIDENCE_CONDITION,
        retrieval_budget=budget_phrase(budgets),
        reliability=reliability,
        interaction_burden=burden,
        failure_regime=regime,
        breakdown_onset=onset,
    )


def render_card(card: ReportCard, fmt: str = "text") -> str:
    levels = list(card.reliability)
    if fmt == "json":
        payload = {
            "agent_and_interface": card.agent_and_interface,
            "scale_range": card.scale_range,
            "evidence_condition": card.evidence_condition,
            "retrieval_budget": card.retrieval_budget,
            "reliability": {level: card.reliability[level] for level in levels},
            "interaction_burden": {level: card.interaction_burden[level] for level in levels},
            "failure_regime": {level: card.failure_regime[level] for level in levels},
            "breakdown_onset": str(card.breakdown_onset),
            "alpha": card.breakdown_onset.alpha,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    reliability = ", ".join(f"{level}: {_pct(card.reliability[level])}" for level in levels)
    burden = ", ".join(f"{level}: {card.interaction_burden[level]}" for level in levels)
    regime = ", ".join(f"{level}: {card.failure_regime[level]}" for level in levels)
    onset = f"{card.breakdown_onset} added irrelevant sessions (alpha={card.breakdown_onset.alpha})"
    rows = [
        ("Agent and interface", card.agent_and_interface),
        ("Scale range", card.scale_range),
        ("Evidence condition", card.evidence_condition),
        ("Retrieval budget", card.retrieval_budget),
        ("Reliability", reliability),
        ("Interaction burden", burden),
        ("Failure regime", regime),
        ("Breakdown onset", onset),
    ]
    if fmt == "markdown":
        lines = ["| Field | Value |", "| --- | --- |"]
        lines += [f"| {name} | {value} |" for name, value in rows]
        return "\n".join(lines)
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


def _groups(cells: Sequence[DiagnosticsCell]) -> dict[tuple[str, str, str], list[DiagnosticsCell]]:
    grouped: dict[tuple[str, str, str], list[DiagnosticsCell]] = {}
    for cell in cells:
        key = (cell.cell.agent_id, cell.cell.adapter_id, cell.cell.benchmark_id)
        grouped.setdefault(key, []).append(cell)
    return dict(sorted(grouped.items()))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _markdown_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "| " + " | ".join("---" for _ in header) + " |"]
    lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    return "\n".join(lines)


def emit_table(
    cells: Sequence[DiagnosticsCell],
    layout: str,
    ladder: Sequence[tuple[str, int]],
    *,
    alpha: float = DEFAULT_ALPHA,
    budgets: Sequence[int] = (2, 3, 5),
) -> tuple[str, str]:
    """Render one named table layout as (csv_text, markdown_text).

    Endpoint layouts use the first and last ladder levels; the
    multi-budget layout needs rows at every budget in ``budgets``.
    """
    if layout not in TABLE_LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    if not cells:
        raise MissingLevels("no diagnostics rows given")
    if not ladder:
        raise MissingLevels("empty ladder")
    first_level, _ = ladder[0]
    last_level, _ = ladder[-1]
    primary = budgets[0]
    groups = _groups(cells)

    csv_rows: list[list] = []
    md_rows: list[list[str]] = []

    if layout == "reliability-endpoints":
        for (agent, adapter, benchmark), rows in groups.items():
            by_level = _by_level(rows, primary, ladder)
            low = by_level[first_level]
            high = by_level[last_level]
            onset = breakdown_onset({lv: by_level[lv].pass_at_b for lv, _ in ladder}, ladder, alpha)
            drop_pp = 100 * (low.pass_at_b - high.pass_at_b)
            csv_rows.append(
                [agent, adapter, benchmark, primary,
                 low.pass_at_b, low.ci_low, low.ci_high,
                 high.pass_at_b, high.ci_low, high.ci_high,
                 high.p90r, str(onset), drop_pp]
            )
            md_rows.append(
                [agent, adapter,
                 f"{_pct(low.pass_at_b)} ± {_pct((low.ci_high - low.ci_low) / 2)}",
                 f"{_pct(high.pass_at_b)} ± {_pct((high.ci_high - high.ci_low) / 2)}",
                 str(high.p90r), str(onset)]
            )
        header_csv = ["agent_id", "adapter_id", "benchmark_id", "budget",
                      f"pass_{first_level}", f"ci_low_{first_level}", f"ci_high_{first_level}",
                      f"pass_{last_level}", f"ci_low_{last_level}", f"ci_high_{last_level}",
                      f"p90r_{last_level}", "onset", "drop_pp"]
        header_md = ["Agent", "Interface", f"Pass@{_budget_label(0)} {first_level}",
                     f"Pass@{_budget_label(0)} {last_level}", f"P90R@{last_level}", "Onset"]

    elif layout == "failure-decomposition":
        for (agent, adapter, benchmark), rows in groups.items():
            by_level = _by_level(rows, primary, ladder)
            low = by_level[first_level]
            high = by_level[last_level]
            csv_rows.append(
                [agent, adapter, benchmark, primary,
                 low.p_exh, low.p_wrong, high.p_exh, high.p_wrong]
            )
            md_rows.append(
                [agent, adapter,
                 f"{_pct(low.p_exh)} / {_pct(low.p_wrong)}",
                 f"{_pct(high.p_exh)} / {_pct(high.p_wrong)}"]
            )
        header_csv = ["agent_id", "adapter_id", "benchmark_id", "budget",
                      f"p_exh_{first_level}", f"p_wrong_{first_level}",
                      f"p_exh_{last_level}", f"p_wrong_{last_level}"]
        header_md = ["Agent", "Interface",
                     f"{first_level} p_exh / p_wrong", f"{last_level} p_exh / p_wrong"]

    else:  # multi-budget
        for (agent, adapter, benchmark), rows in groups.items():
            per_budget = {}
            for budget in budgets:
                per_budget[budget] = _by_level(rows, budget, ladder)
            low_triplet = [per_budget[b][first_level].pass_at_b for b in budgets]
            high_triplet = [per_budget[b][last_level].pass_at_b for b in budgets]
            onset = breakdown_onset(
                {lv: per_budget[primary][lv].pass_at_b for lv, _ in ladder}, ladder, alpha
            )
            csv_rows.append(
                [agent, adapter, benchmark, *low_triplet, *high_triplet, str(onset)]
            )
            md_rows.append(
                [agent, adapter,
                 " / ".join(_pct(v) for v in low_triplet),
                 " / ".join(_pct(v) for v in high_triplet),
                 str(onset)]
            )
        budget_names = "/".join(_budget_label(i) for i in range(len(budgets)))
        header_csv = (["agent_id", "adapter_id", "benchmark_id"]
                      + [f"pass_{first_level}_b{b}" for b in budgets]
                      + [f"pass_{last_level}_b{b}" for b in budgets]
                      + ["onset"])
        header_md = ["Agent", "Interface", f"{first_level} {budget_names}",
                     f"{last_level} {budget_names}", "Onset"]

    return _csv_text(header_csv, csv_rows), _markdown_table(header_md, md_rows)


def emit_series(
    cells: Sequence[DiagnosticsCell],
    *,
    alpha: float = DEFAULT_ALPHA,
) -> str:
    """Long-format CSV: one row per (cell, level, budget, metric), plus
    an alpha reference row so plotters can draw the threshold line.
    """
    if not cells:
        raise MissingLevels("no diagnostics rows given")
    header = ["agent_id", "adapter_id", "benchmark_id", "level_id", "budget",
              "metric", "value", "ci_low", "ci_high"]
    rows: list[list] = []
    for cell in cells:
        key = [cell.cell.agent_id, cell.cell.adapter_id, cell.cell.benchmark_id,
               cell.cell.level_id, cell.budget]
        rows.append(key + ["pass_at_b", cell.pass_at_b, cell.ci_low, cell.ci_high])
        rows.append(key + ["p_wrong", cell.p_wrong, "", ""])
        rows.append(key + ["p_exh", cell.p_exh, "", ""])
        rows.append(key + ["medr", cell.medr, "", ""])
        rows.append(key + ["p90r", cell.p90r, "", ""])
    rows.append(["", "", "", "", "", "alpha", alpha, "", ""])
    return _csv_text(header, rows)
