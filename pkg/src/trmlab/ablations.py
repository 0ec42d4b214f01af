"""Checkpoint-behavior experiments: puzzle-identity perturbation and
recursion-trajectory evaluation.

Both experiments keep the full augmentation + voting pipeline fixed and
vary exactly one factor (the identity token, or the recursion depth read
from a shared trace).
"""

from __future__ import annotations

from dataclasses import dataclass

from .arc_data import Dataset, PuzzleIdVocabulary
from .ensemble import DatasetEvaluation, EvaluationMode, evaluate_dataset, evaluate_task_depths
from .metrics import PassReport, pass_at_1
from .seeding import rng_from

CONDITION_KINDS = ("correct", "blank", "random_mismatch")


@dataclass(frozen=True)
class IdCondition:
    """Which identity token each task is evaluated with."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown id condition {self.kind!r}")

    @classmethod
    def correct(cls) -> "IdCondition":
        return cls("correct")

    @classmethod
    def blank(cls) -> "IdCondition":
        return cls("blank")

    @classmethod
    def random_mismatch(cls, seed: int) -> "IdCondition":
        return cls("random_mismatch", seed=seed)


def resolve_id_tokens(
    condition: IdCondition, dataset: Dataset, vocab: PuzzleIdVocabulary
) -> dict | None:
    """puzzle_key -> id_token map under the condition.

    ``correct`` returns None (the evaluator's pass-through default).
    ``blank`` maps every task to token 0. ``random_mismatch`` draws a seeded
    cyclic derangement of the dataset's own tokens, so no task ever receives
    its true token and the property is checkable exhaustively.
    """
    if condition.kind == "correct":
        return None
    keys = [t.puzzle_key for t in dataset.tasks]
    if condition.kind == "blank":
        return {k: vocab.blank_token for k in keys}
    if len(keys) < 2:
        raise ValueError("random_mismatch needs at least 2 tasks to derange")
    tokens = [vocab.id_token(k) for k in keys]
    rng = rng_from(condition.seed)
    # Sattolo's algorithm: a uniform cyclic permutation, hence fixed-point free
    idx = list(range(len(tokens)))
    for i in range(len(idx) - 1, 0, -1):
        j = int(rng.integers(0, i))
        idx[i], idx[j] = idx[j], idx[i]
    return {k: tokens[idx[i]] for i, k in enumerate(keys)}


def run_id_ablation(
    p,
    dataset: Dataset,
    vocab: PuzzleIdVocabulary,
    mode: EvaluationMode,
    condition: IdCondition,
    workers: int = 1,
) -> DatasetEvaluation:
    """Evaluate the dataset with the condition's id tokens; everything else
    (augmentation stream, voting, depth) matches the baseline pipeline, so
    the correct condition reproduces it bit-for-bit."""
    id_tokens = resolve_id_tokens(condition, dataset, vocab)
    return evaluate_dataset(p, dataset, vocab, mode, id_tokens=id_tokens, workers=workers)


@dataclass(frozen=True)
class TrajectoryRow:
    depth: int
    extrapolated: bool
    report: PassReport
    relative_to_final: float


@dataclass(frozen=True)
class TrajectoryReport:
    rows: tuple
    training_depth: int

    def row_at(self, depth: int) -> TrajectoryRow:
        for row in self.rows:
            if row.depth == depth:
                return row
        raise KeyError(f"no trajectory row for depth {depth}")


def run_trajectory(
    p,
    dataset: Dataset,
    vocab: PuzzleIdVocabulary,
    mode: EvaluationMode,
    depths=(1, 2, 3, 4, 6),
    workers: int = 1,
) -> TrajectoryReport:
    """Pass@1 at each requested depth, decoded from shared trace prefixes.

    One forward pass per variant at max(depths); depths beyond the training
    depth are genuine extra trunk applications. Relative-to-final is
    100 * Pass@1(depth) / Pass@1(training depth); the training depth
    (mode.steps) must be among the requested depths.
    """
    depths = sorted(set(int(d) for d in depths))
    if mode.steps not in depths:
        raise ValueError(
            f"training depth {mode.steps} must be among the requested depths {depths}"
        )

    def one(task):
        return evaluate_task_depths(p, task, vocab, mode, depths)

    if workers <= 1:
        per_task = [one(t) for t in dataset.tasks]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_task = list(pool.map(one, dataset.tasks))

    reports = {}
    for d in depths:
        flags = [per_task[i][d][1] for i in range(len(per_task))]
        reports[d] = pass_at_1(flags, mode=f"{mode.descriptor()}@depth={d}", seed=mode.seed)
    base = reports[mode.steps]
    rows = []
    for d in depths:
        rel = (
            100.0 * reports[d].value / base.value if base.numerator > 0 else float("nan")
        )
        rows.append(
            TrajectoryRow(
                depth=d,
                extrapolated=d > mode.steps,
                report=reports[d],
                relative_to_final=rel,
            )
        )
    return TrajectoryReport(rows=tuple(rows), training_depth=mode.steps)
