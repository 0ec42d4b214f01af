"""Exact-match scoring and Pass@1 / Pass@k.

A task scores only if every one of its test outputs is matched exactly
(shape and all cells). Reported fractions are exact integer counts;
rendering rounds to two decimals as a percentage.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .arc_data import Grid, Task


class ArityMismatch(Exception):
    """Prediction count differs from the task's test count."""


class EmptyDataset(Exception):
    """A pass rate over zero tasks is undefined."""


class RaggedSamples(Exception):
    """Sample sets disagree on K across tasks."""


@dataclass(frozen=True)
class PassReport:
    metric_name: str
    numerator: int
    denominator: int
    mode: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.denominator <= 0:
            raise EmptyDataset("pass rate over zero tasks")
        if not 0 <= self.numerator <= self.denominator:
            raise ValueError("numerator outside 0..denominator")

    @property
    def value(self) -> float:
        return self.numerator / self.denominator

    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    def percent(self) -> str:
        return f"{100.0 * self.numerator / self.denominator:.2f}%"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "value": self.value,
            "percent": self.percent(),
            "mode": self.mode,
            "seed": self.seed,
        }


def exact_match_task(preds: Sequence[Grid], task: Task) -> bool:
    """True iff every test output is predicted exactly."""
    if len(preds) != len(task.tests):
        raise ArityMismatch(
            f"{task.puzzle_key}: {len(preds)} predictions for {len(task.tests)} tests"
        )
    return all(pred == pair.output for pred, pair in zip(preds, task.tests))


def pass_at_1(results: Sequence[bool], mode: str = "", seed: int = 0) -> PassReport:
    results = list(results)
    if not results:
        raise EmptyDataset("no task results")
    return PassReport(
        metric_name="pass_at_1",
        numerator=sum(bool(r) for r in results),
        denominator=len(results),
        mode=mode,
        seed=seed,
    )


def pass_at_k(sample_sets, dataset, mode: str = "", seed: int = 0) -> PassReport:
    """Fraction of tasks where at least one raw sample matches all tests.

    ``sample_sets`` holds, per task, K samples; each sample is the
    per-test-input prediction sequence. No aggregation is applied. A task
    passes when a single sample index matches every test simultaneously.
    """
    tasks = list(dataset.tasks) if hasattr(dataset, "tasks") else list(dataset)
    sample_sets = list(sample_sets)
    if not tasks:
        raise EmptyDataset("no tasks")
    if len(sample_sets) != len(tasks):
        raise RaggedSamples(
            f"{len(sample_sets)} sample sets for {len(tasks)} tasks"
        )
    ks = {len(s) for s in sample_sets}
    if len(ks) != 1:
        raise RaggedSamples(f"K differs across tasks: {sorted(ks)}")
    k = ks.pop()
    hits = 0
    for task, samples in zip(tasks, sample_sets):
        if any(exact_match_task(sample, task) for sample in samples):
            hits += 1
    return PassReport(
        metric_name=f"pass_at_{k}",
        numerator=hits,
        denominator=len(tasks),
        mode=mode,
        seed=seed,
    )
