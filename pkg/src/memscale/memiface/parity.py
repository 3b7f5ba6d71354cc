"""Returned-unit parity checks across compared systems.

Systems may differ in chunking and backend shape, but every counted
retrieval step must hand the agent the same number of model-visible
units, and compared systems must run under the same budget set and
scale ladder. How many calls each system chose to issue is its own
behavior, not a parity matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .base import RetrievalResponse


@dataclass(frozen=True)
class ParityConfig:
    """The shared comparison configuration all systems must run under."""

    top_k: int = 12
    budgets: tuple[int, ...] = (2, 3, 5)
    level_ids: tuple[str, ...] = ("s0", "s1", "s2", "s3", "s4")


@dataclass(frozen=True)
class ParityViolation:
    kind: str
    adapter_ids: tuple[str, ...]
    detail: str

    def describe(self) -> str:
        return f"{self.kind} [{', '.join(self.adapter_ids)}]: {self.detail}"


@dataclass(frozen=True)
class ParityVerdict:
    ok: bool
    violations: tuple[ParityViolation, ...] = ()

    def describe(self) -> str:
        if self.ok:
            return "parity ok"
        return "; ".join(v.describe() for v in self.violations)


def enforce_parity(
    responses_by_system: Mapping[str, Sequence[RetrievalResponse]],
    *,
    configs: Mapping[str, ParityConfig] | None = None,
    store_sizes: Mapping[str, int] | None = None,
) -> ParityVerdict:
    """Compare counted retrieval steps across systems for one (query, scale).

    Verdict is ok iff every counted step (by step position, over the
    depth all systems reached) returned the same number of units across
    systems, and any provided per-system configs are identical. Unit
    counts explained by store-size truncation are tolerated when
    ``store_sizes`` is given. Never raises: violations are listed in the
    verdict, naming the offending adapter IDs.
    """
    violations: list[ParityViolation] = []
    systems = sorted(responses_by_system)

    if configs is not None and len({configs[s] for s in configs}) > 1:
        detail = "; ".join(f"{s}: {configs[s]}" for s in sorted(configs))
        violations.append(ParityViolation("config-mismatch", tuple(sorted(configs)), detail))

    if len(systems) >= 2:
        counted = {
            system: [r for r in responses_by_system[system] if r.counted] for system in systems
        }
        shared_depth = min(len(calls) for calls in counted.values())
        for step in range(shared_depth):
            sizes = [len(counted[s][step].units) for s in systems]
            if len(set(sizes)) == 1:
                continue
            if store_sizes is not None:
                # A store smaller than top_k truncates honestly; only a
                # system returning fewer units than its store could
                # supply breaks parity.
                expected = [min(max(sizes), store_sizes.get(s, max(sizes))) for s in systems]
                if sizes == expected:
                    continue
            violations.append(
                ParityViolation(
                    "unit-count",
                    tuple(counted[s][step].adapter_id for s in systems),
                    f"step {step}: counts {sizes}",
                )
            )

    return ParityVerdict(ok=not violations, violations=tuple(violations))


@dataclass
class ParityLedger:
    """Accumulates per-(query, level) responses during a sweep and
    produces one verdict per comparison group. Within one sweep the
    budget set and ladder are shared by construction, so only unit
    counts are compared.
    """

    responses: dict[tuple[str, str], dict[str, list[RetrievalResponse]]] = field(default_factory=dict)
    store_sizes: dict[tuple[str, str], dict[str, int]] = field(default_factory=dict)

    def record(
        self,
        query_id: str,
        level_id: str,
        system: str,
        response: RetrievalResponse,
        store_size: int | None = None,
    ) -> None:
        group = self.responses.setdefault((query_id, level_id), {})
        group.setdefault(system, []).append(response)
        if store_size is not None:
            self.store_sizes.setdefault((query_id, level_id), {})[system] = store_size

    def verdicts(self) -> dict[tuple[str, str], ParityVerdict]:
        return {
            key: enforce_parity(group, store_sizes=self.store_sizes.get(key))
            for key, group in sorted(self.responses.items())
        }

    def summary(self) -> dict[str, int]:
        verdicts = self.verdicts()
        failures = sum(1 for v in verdicts.values() if not v.ok)
        return {"groups": len(verdicts), "violations": failures}
