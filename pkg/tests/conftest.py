from __future__ import annotations

import pytest

from memscale.trajstore import (
    KIND_ANSWER,
    KIND_MEMORY_CALL,
    Trajectory,
    TrajectoryStep,
    finalize,
)

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): label a test as one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        _ACCEPTANCE_RESULTS.append((marker.args[0], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}")


# Step tuples are immutable, so populations of synthetic trajectories can
# share them; this keeps large generated populations cheap.
_STEP_CACHE: dict[tuple[int, bool], tuple[TrajectoryStep, ...]] = {}


def steps_for(r_count: int, answered: bool = True) -> tuple[TrajectoryStep, ...]:
    key = (r_count, answered)
    if key not in _STEP_CACHE:
        steps = [
            TrajectoryStep(index=i, kind=KIND_MEMORY_CALL, counted=True, query_text="q")
            for i in range(r_count)
        ]
        if answered:
            steps.append(TrajectoryStep(index=r_count, kind=KIND_ANSWER))
        _STEP_CACHE[key] = tuple(steps)
    return _STEP_CACHE[key]


def make_trajectory(
    correctness: int | None,
    r_count: int,
    *,
    query_id: str = "q-0",
    level_id: str = "s0",
    agent_id: str = "agent",
    adapter_id: str = "adapter",
    judged: bool = True,
) -> Trajectory:
    """A minimal valid trajectory with the given (C, R)."""
    trajectory = finalize(
        steps_for(r_count),
        query_id=query_id,
        level_id=level_id,
        agent_id=agent_id,
        adapter_id=adapter_id,
        seed=0,
        final_answer="answer",
    )
    if judged and correctness is not None:
        trajectory = trajectory.with_judgment(correctness, {"mode": "test"})
    return trajectory


@pytest.fixture
def trajectory_factory():
    return make_trajectory
