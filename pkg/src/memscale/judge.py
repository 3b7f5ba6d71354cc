"""Final-answer scoring.

Three modes: an LLM judge speaking the fixed grading prompts, plus two
deterministic offline judges (exact-match, normalized-match) for tests
and scripted sweeps. The judge is endpoint-level on purpose: it sees
the question, the gold answer, and the generated answer, and nothing
else, so correctness stays independent of budget diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, EndpointError
from .llm import ChatCompletionsClient, CompletionUnavailable

logger = logging.getLogger(__name__)

JUDGE_MODES = ("llm", "exact-match", "normalized-match")

LABEL_CORRECT = "CORRECT"
LABEL_WRONG = "WRONG"
LABEL_ERROR = "JUDGE_ERROR"

JUDGE_SYSTEM_PROMPT = (
    "You are a careful grader. Decide whether a generated answer matches\n"
    "the reference answer for a memory benchmark question."
)

JUDGE_USER_TEMPLATE = """Grade the generated answer against the gold answer for the question.

Question:
{question}

Gold answer:
{gold_answer}

Generated answer:
{generated_answer}

Return only one JSON object:
{"label": "CORRECT"} or {"label": "WRONG"}

Mark CORRECT when the generated answer expresses the same answer as
the gold answer, even if it is longer, shorter, or phrased differently.
For date or time questions, mark CORRECT when the generated answer
refers to the same date or time period as the gold answer, even if the
format differs. Otherwise mark WRONG."""


class JudgeUnavailable(EndpointError):
    """The judge endpoint failed after max_retries."""


class MalformedLabel(DataError):
    """The judge returned no parseable label."""


class ContainsError(DataError):
    """Aggregation over verdicts that include JUDGE_ERROR."""


@dataclass(frozen=True)
class JudgeConfig:
    mode: str = "llm"
    endpoint: str | None = None
    model_name: str = "gpt-4o-mini"
    temperature: float = 0.0
    max_retries: int = 3
    repeats: int = 1
    cache_path: str | None = None
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self) -> None:
        if self.mode not in JUDGE_MODES:
            raise ValueError(f"unknown judge mode {self.mode!r}")
        if self.mode == "llm" and not self.endpoint:
            raise ValueError("llm mode requires an endpoint")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass(frozen=True)
class JudgeVerdict:
    label: str
    c_value: int | None
    raw_responses: tuple[str, ...]
    aggregate: float

    def __post_init__(self) -> None:
        if self.label == LABEL_CORRECT and self.c_value != 1:
            raise ValueError("CORRECT verdict must carry c_value 1")
        if self.label == LABEL_WRONG and self.c_value != 0:
            raise ValueError("WRONG verdict must carry c_value 0")
        if self.label == LABEL_ERROR and self.c_value is not None:
            raise ValueError("JUDGE_ERROR verdict carries no c_value")


def build_judge_messages(question: str, gold_answer: str, generated_answer: str) -> list[dict]:
    """The exact request messages, with only the three fields interpolated.

    The template holds literal JSON braces, so interpolation is by
    placeholder replacement, not str.format.
    """
    user = (
        JUDGE_USER_TEMPLATE.replace("{question}", question)
        .replace("{gold_answer}", gold_answer)
        .replace("{generated_answer}", generated_answer)
    )
    return [
        {"role": "system", "content": JUDGE_SYSTEM_PROMPT},
        {"role": "user", "content": user},
    ]


_JSON_OBJECT_RE = re.compile(r"\{[^{}]*\}")


def parse_judge_label(completion_text: str) -> str:
    """Extract the first JSON object carrying a known label.

    Raises:
        MalformedLabel: no such object anywhere in the text.
    """
    for match in _JSON_OBJECT_RE.finditer(completion_text):
        try:
            obj = json.loads(match.group(0))
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and obj.get("label") in (LABEL_CORRECT, LABEL_WRONG):
            return obj["label"]
    raise MalformedLabel(f"no valid label in completion: {completion_text[:200]!r}")


def _normalize_ws(text: str) -> str:
    return " ".join(text.split()).casefold()


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _normalize_full(text: str) -> str:
    return " ".join(text.translate(_PUNCT_TABLE).split()).casefold()


def _offline_verdict(gold: str, generated: str, normalize) -> JudgeVerdict:
    correct = normalize(gold) == normalize(generated)
    label = LABEL_CORRECT if correct else LABEL_WRONG
    c = int(correct)
    return JudgeVerdict(label=label, c_value=c, raw_responses=(), aggregate=float(c))


def cache_key(question: str, gold_answer: str, generated_answer: str, model_name: str) -> str:
    material = "\x1f".join((question, gold_answer, generated_answer, model_name))
    return hashlib.blake2b(material.encode("utf-8"), digest_size=16).hexdigest()


class JudgmentCache:
    """On-disk JSONL cache keyed by (question, gold, generated, model)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                        self._entries[entry["cache_key"]] = entry
                    except (json.JSONDecodeError, KeyError):
                        logger.warning("skipping corrupt judge-cache line in %s", self.path)

    def get(self, key: str) -> dict | None:
        return self._entries.get(key)

    def put(self, key: str, label: str, raw_responses: list[str]) -> None:
        entry = {"cache_key": key, "label": label, "raw_responses": raw_responses}
        self._entries[key] = entry
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")


def _llm_single_judgment(client: ChatCompletionsClient, messages: list[dict], max_retries: int) -> tuple[str, list[str]]:
    """One judged label, retrying malformed completions up to max_retries.

    Endpoint-level failures raise JudgeUnavailable; persistent malformed
    output degrades to JUDGE_ERROR.
    """
    raw: list[str] = []
    for _ in range(max_retries):
        try:
            result = client.complete(messages)
        except CompletionUnavailable as exc:
            raise JudgeUnavailable(str(exc)) from exc
        raw.append(result.content)
        try:
            return parse_judge_label(result.content), raw
        except MalformedLabel:
            continue
    return LABEL_ERROR, raw


def judge_answer(
    question: str,
    gold_answer: str,
    generated_answer: str,
    config: JudgeConfig,
    *,
    client: ChatCompletionsClient | None = None,
    cache: JudgmentCache | None = None,
) -> JudgeVerdict:
    """Score one generated answer.

    An empty generated answer short-circuits to WRONG without touching
    the endpoint. In llm mode the request carries exactly the fixed
    system prompt and the user template with the three fields
    interpolated; nothing from the trajectory is visible to the judge.
    """
    if not question or not gold_answer:
        raise DataError("question and gold_answer must be nonempty")
    if not generated_answer.strip():
        return JudgeVerdict(LABEL_WRONG, 0, (), 0.0)

    if config.mode == "exact-match":
        return _offline_verdict(gold_answer, generated_answer, _normalize_ws)
    if config.mode == "normalized-match":
        return _offline_verdict(gold_answer, generated_answer, _normalize_full)

    if cache is None and config.cache_path:
        cache = JudgmentCache(config.cache_path)
    key = cache_key(question, gold_answer, generated_answer, config.model_name)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None and hit["label"] != LABEL_ERROR:
            label = hit["label"]
            c = 1 if label == LABEL_CORRECT else 0
            return JudgeVerdict(label, c, tuple(hit.get("raw_responses", ())), float(c))

    if client is None:
        client = ChatCompletionsClient(
            config.endpoint,
            config.model_name,
            temperature=config.temperature,
            max_retries=config.max_retries,
            api_key_env=config.api_key_env,
        )

    messages = build_judge_messages(question, gold_answer, generated_answer)
    labels: list[str] = []
    raw_all: list[str] = []
    for _ in range(config.repeats):
        label, raw = _llm_single_judgment(client, messages, config.max_retries)
        labels.append(label)
        raw_all.extend(raw)
        if label == LABEL_ERROR:
            break

    if LABEL_ERROR in labels:
        verdict = JudgeVerdict(LABEL_ERROR, None, tuple(raw_all), 0.0)
    else:
        # The stored trajectory-level verdict is the first repeat; the
        # aggregate mean is reported at the metric level.
        first = labels[0]
        c = 1 if first == LABEL_CORRECT else 0
        aggregate = sum(1 for l in labels if l == LABEL_CORRECT) / len(labels)
        verdict = JudgeVerdict(first, c, tuple(raw_all), aggregate)

    if cache is not None and verdict.label != LABEL_ERROR:
        cache.put(key, verdict.label, list(verdict.raw_responses))
    return verdict


def aggregate_judgments(verdicts: list[JudgeVerdict]) -> float:
    """Mean c_value across repeat verdicts for one answer."""
    if not verdicts:
        raise DataError("no verdicts to aggregate")
    if any(v.label == LABEL_ERROR for v in verdicts):
        raise ContainsError("cannot aggregate over JUDGE_ERROR verdicts")
    return sum(v.c_value for v in verdicts) / len(verdicts)


@dataclass
class JudgeRunStats:
    judged: int = 0
    cached: int = 0
    errors: int = 0
    skipped: int = 0


def judge_store(
    store_path: str | Path,
    out_path: str | Path,
    queries: dict[str, tuple[str, str]],
    config: JudgeConfig,
    *,
    client: ChatCompletionsClient | None = None,
    rejudge: bool = False,
) -> JudgeRunStats:
    """Judge every trajectory in a store and write the judged copy.

    ``queries`` maps query_id to (question, gold_answer). Already-judged
    records pass through untouched unless ``rejudge``. Judging never
    alters any step or r_count; only correctness and judge_meta change.
    """
    from .trajstore import store_append, store_scan

    stats = JudgeRunStats()
    cache = JudgmentCache(config.cache_path) if config.cache_path else None
    out_path = Path(out_path)
    if out_path.exists():
        out_path.unlink()

    for trajectory in store_scan(store_path):
        if trajectory.is_judged and not rejudge:
            stats.skipped += 1
            store_append(out_path, trajectory)
            continue
        if trajectory.query_id not in queries:
            raise DataError(f"no question/gold for query {trajectory.query_id!r}")
        question, gold = queries[trajectory.query_id]
        verdict = judge_answer(
            question, gold, trajectory.final_answer, config, client=client, cache=cache
        )
        meta = {
            "mode": config.mode,
            "model_name": config.model_name if config.mode == "llm" else None,
            "label": verdict.label,
            "aggregate": verdict.aggregate,
            "repeats": config.repeats,
        }
        if verdict.label == LABEL_ERROR:
            stats.errors += 1
            store_append(out_path, trajectory.with_judge_error(meta))
        else:
            stats.judged += 1
            store_append(out_path, trajectory.with_judgment(verdict.c_value, meta))
    return stats
