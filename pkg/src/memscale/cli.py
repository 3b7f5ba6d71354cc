"""Command-line surface.

Subcommands mirror the pipeline: ingest -> ladder -> run -> judge ->
analyze -> report. Exit codes: 0 success, 1 usage error, 2 data error,
3 upstream-endpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import (
    DEFAULT_LEVELS,
    ScaleLevel,
    build_ladders,
    history_from_record,
    ladder_stats,
    load_corpus,
    read_ladder_jsonl,
    write_corpus_jsonl,
    write_ladder_jsonl,
)
from .errors import DataError, EndpointError, MemscaleError, UsageError
from .judge import JudgeConfig, judge_store
from .memiface import MemoryAdapterDescriptor, WireAdapter, make_reference_adapter
from .metrics import (
    compute_diagnostics,
    diagnostics_from_records,
    diagnostics_to_records,
)
from .report import TABLE_LAYOUTS, emit_report_card, emit_series, emit_table, render_card
from .runner import (
    AgentDescriptor,
    ScriptedPolicy,
    SweepConfig,
    run_sweep,
)
from .trajstore import ScanStats, store_scan

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budgets", default="2,3,5", help="comma-separated, primary first")
    parser.add_argument("--alpha", type=float, default=0.7)
    parser.add_argument("--resamples", type=int, default=1000)
    parser.add_argument("--parallelism", type=int, default=1)


def _parse_budgets(text: str) -> tuple[int, ...]:
    try:
        budgets = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"bad --budgets value {text!r}") from exc
    if not budgets or any(b < 0 for b in budgets):
        raise UsageError(f"bad --budgets value {text!r}")
    return budgets


def _parse_levels(text: str | None) -> tuple[ScaleLevel, ...]:
    """Accepts "0,100,200" (auto-named s0..sN) or "s0=0,s1=100"."""
    if not text:
        return DEFAULT_LEVELS
    levels = []
    for i, part in enumerate(p.strip() for p in text.split(",") if p.strip()):
        if "=" in part:
            name, _, value = part.partition("=")
            levels.append(ScaleLevel(name.strip(), int(value)))
        else:
            levels.append(ScaleLevel(f"s{i}", int(part)))
    return tuple(levels)


def _parse_adapter(spec: str):
    if spec.startswith("wire:"):
        remainder = spec[len("wire:"):]
        return WireAdapter(remainder)
    if spec in ("flat", "planar", "hierarchical"):
        return make_reference_adapter(spec)
    raise UsageError(f"unknown adapter spec {spec!r} (expect flat|planar|hierarchical|wire:URL)")


def _parse_agent(spec: str) -> AgentDescriptor:
    parts = spec.split(":")
    if parts[0] == "scripted":
        if len(parts) < 3:
            raise UsageError("scripted agent spec: scripted:CALLS:MODE[:reformulate]")
        try:
            calls = int(parts[1])
        except ValueError as exc:
            raise UsageError(f"bad call count in {spec!r}") from exc
        reformulate = len(parts) > 3 and parts[3] == "reformulate"
        return AgentDescriptor(
            agent_id=f"scripted-{calls}-{parts[2]}",
            kind="scripted",
            script=ScriptedPolicy(calls, parts[2], reformulate),
        )
    if parts[0] == "chat":
        if len(parts) < 3:
            raise UsageError("chat agent spec: chat:ENDPOINT:MODEL")
        endpoint = ":".join(parts[1:-1])
        model = parts[-1]
        return AgentDescriptor(
            agent_id=f"chat-{model}", kind="chat-model", endpoint=endpoint, model_name=model
        )
    raise UsageError(f"unknown agent spec {spec!r} (expect scripted:... or chat:...)")


def _cmd_ingest(args) -> int:
    loaded = load_corpus(args.input, args.format, benchmark_id=args.benchmark_id)
    write_corpus_jsonl(loaded, args.output)
    print(
        f"ingested {len(loaded.sessions)} sessions, {len(loaded.queries)} queries, "
        f"{len(loaded.distractor_pool)} distractor-pool sessions -> {args.output}"
    )
    return 0


def _cmd_ladder(args) -> int:
    loaded = load_corpus(args.corpus, "generic-jsonl")
    levels = _parse_levels(args.levels)
    histories = build_ladders(
        loaded, levels=levels, seed=args.seed, nesting=args.nesting, sharing=args.sharing
    )
    count = write_ladder_jsonl(histories.values(), args.output)
    stats = ladder_stats(histories.values(), loaded.sessions)
    print(f"wrote {count} scaled histories -> {args.output}")
    for level in levels:
        s = stats[level.level_id]
        print(
            f"  {level.level_id} (+{level.n_irr} irrelevant): "
            f"{s.mean_sessions:.3f} sessions/query, {s.mean_tokens:.0f} tokens/query (approx)"
        )
    return 0


def _cmd_run(args) -> int:
    loaded = load_corpus(args.corpus, "generic-jsonl")
    histories = {}
    for history in read_ladder_jsonl(args.ladder):
        histories[(history.query_id, history.level_id)] = history
    adapters = [_parse_adapter(spec) for spec in args.adapters.split(",") if spec.strip()]
    agents = [_parse_agent(spec) for spec in args.agents.split(";") if spec.strip()]
    config = SweepConfig(
        budgets=_parse_budgets(args.budgets),
        seed=args.seed,
        parallelism=args.parallelism,
        step_cap=args.step_cap,
        rollouts_per_query=args.rollouts_per_query,
    )
    manifest = run_sweep(loaded, histories, agents, adapters, args.store, config)
    manifest_path = args.manifest or f"{args.store}.manifest.json"
    manifest.write(manifest_path)
    print(
        f"sweep: {manifest.cells_run} run, {manifest.cells_skipped} skipped, "
        f"{len(manifest.failures)} failed; parity {manifest.parity}; manifest -> {manifest_path}"
    )
    return 0 if not manifest.failures else 2


def _cmd_judge(args) -> int:
    loaded = load_corpus(args.corpus, "generic-jsonl")
    queries = {q.query_id: (q.question_text, q.gold_answer) for q in loaded.queries}
    config = JudgeConfig(
        mode=args.mode,
        endpoint=args.endpoint,
        model_name=args.model,
        max_retries=args.max_retries,
        repeats=args.repeats,
        cache_path=args.cache,
    )
    stats = judge_store(args.store, args.output, queries, config, rejudge=args.rejudge)
    print(
        f"judged {stats.judged} trajectories ({stats.skipped} already judged, "
        f"{stats.errors} judge errors) -> {args.output}"
    )
    return 0 if stats.errors == 0 else 2


def _cmd_analyze(args) -> int:
    scan = ScanStats()
    trajectories = list(store_scan(args.store, stats=scan))
    rows = compute_diagnostics(
        trajectories,
        budgets=_parse_budgets(args.budgets),
        benchmark_id=args.benchmark_id,
        resamples=args.resamples,
        seed=args.seed,
    )
    records = diagnostics_to_records(rows, alpha=args.alpha, resamples=args.resamples, seed=args.seed)
    with open(args.output, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"analyzed {len(trajectories)} trajectories into {len(records)} diagnostic rows -> {args.output}")
    if scan.corrupt:
        print(f"warning: skipped {scan.corrupt} corrupt store lines", file=sys.stderr)
        return 2
    return 0


def _load_diagnostics(path: str):
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(json.loads(line))
    return diagnostics_from_records(records)


def _cmd_report(args) -> int:
    rows = _load_diagnostics(args.diagnostics)
    levels = _parse_levels(args.levels)
    ladder = [(level.level_id, level.n_irr) for level in levels]
    budgets = _parse_budgets(args.budgets)

    if args.layout == "card":
        groups: dict[tuple[str, str], list] = {}
        for row in rows:
            groups.setdefault((row.cell.agent_id, row.cell.adapter_id), []).append(row)
        outputs = []
        for (agent_id, adapter_id), group in sorted(groups.items()):
            card = emit_report_card(group, ladder, alpha=args.alpha, budgets=budgets)
            outputs.append(render_card(card, fmt=args.format))
        text = "\n\n".join(outputs)
        _write_or_print(text, args.output)
        return 0

    if args.layout == "series":
        text = emit_series(rows, alpha=args.alpha)
        _write_or_print(text, args.output)
        return 0

    csv_text, md_text = emit_table(rows, args.layout, ladder, alpha=args.alpha, budgets=budgets)
    if args.output:
        base = Path(args.output)
        csv_path = base.with_suffix(".csv")
        md_path = base.with_suffix(".md")
        csv_path.write_text(csv_text, encoding="utf-8")
        md_path.write_text(md_text + "\n", encoding="utf-8")
        print(f"wrote {csv_path} and {md_path}")
    else:
        print(md_text)
    return 0


def _write_or_print(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {output}")
    else:
        print(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="memscale", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file into the interchange format")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=list(corpus_mod.CORPUS_FORMATS))
    p.add_argument("--output", required=True)
    p.add_argument("--benchmark-id", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("ladder", help="build evidence-preserving scaled histories")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--levels", default=None, help='e.g. "0,100,200,300,400"')
    p.add_argument("--nesting", default="nested", choices=list(corpus_mod.NESTING_MODES))
    p.add_argument("--sharing", default="per-query", choices=list(corpus_mod.SHARING_MODES))
    _add_common(p)
    p.set_defaults(func=_cmd_ladder)

    p = sub.add_parser("run", help="run a rollout sweep into a trajectory store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ladder", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--adapters", default="flat", help="comma-separated adapter specs")
    p.add_argument("--agents", default="scripted:1:echo-gold", help="semicolon-separated agent specs")
    p.add_argument("--step-cap", type=int, default=16)
    p.add_argument("--rollouts-per-query", type=int, default=1)
    p.add_argument("--manifest", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("judge", help="score final answers in a store")
    p.add_argument("--store", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", default="exact-match", choices=["llm", "exact-match", "normalized-match"])
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default="gpt-4o-mini")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--cache", default=None)
    p.add_argument("--rejudge", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_judge)

    p = sub.add_parser("analyze", help="compute diagnostics from a judged store")
    p.add_argument("--store", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--benchmark-id", default="default")
    _add_common(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="render cards, tables, or plot series")
    p.add_argument("--diagnostics", required=True)
    p.add_argument("--layout", required=True, choices=["card", "series", *TABLE_LAYOUTS])
    p.add_argument("--levels", default=None)
    p.add_argument("--format", default="text", choices=["text", "markdown", "json"])
    p.add_argument("--output", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"memscale: usage error: {exc}", file=sys.stderr)
        return 1
    except EndpointError as exc:
        print(f"memscale: endpoint error: {exc}", file=sys.stderr)
        return 3
    except (DataError, MemscaleError) as exc:
        print(f"memscale: data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"memscale: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
