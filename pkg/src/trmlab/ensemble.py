"""Test-time augmentation fan-out, inverse mapping, and majority voting.

For each test input the engine builds K augmented variants (variant 1 is
always the identity, so the single-pass prediction is among the
candidates), runs the model on every variant, decodes each argmax canvas,
maps the decoded grid back through the stored inverse augmentation, and
aggregates by exact-grid majority vote. Ties break on the lexicographically
smaller (height, width, cells) serialization.

Fan-out is embarrassingly parallel over tasks with read-only parameters;
results are merged by task index, so worker count never changes output.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import augmentation as aug_mod
from . import model as model_mod
from .arc_data import Dataset, Grid, PuzzleIdVocabulary, Task
from .augmentation import Augmentation, OutOfCanvas
from .metrics import PassReport, exact_match_task, pass_at_1
from .seeding import derive_seed

_CHUNK = 64  # variant batch size; fixed so results never depend on worker count


class EmptyCandidateSet(Exception):
    """majority_vote needs at least one candidate."""


@dataclass(frozen=True)
class EvaluationMode:
    """How a checkpoint is evaluated.

    ``paper_mode`` is the full K-sample augmentation + voting pipeline;
    ``single_canonical`` is one identity-augmentation pass with no voting.
    """

    kind: str
    k: int
    vote: bool
    seed: int
    steps: int

    def __post_init__(self):
        if self.kind not in ("paper_mode", "single_canonical"):
            raise ValueError(f"unknown evaluation mode {self.kind!r}")
        if self.kind == "paper_mode" and self.k < 1:
            raise ValueError("paper_mode requires K >= 1")
        if self.kind == "single_canonical" and (self.k != 1 or self.vote):
            raise ValueError("single_canonical uses exactly one identity variant")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @classmethod
    def paper(cls, k: int = 1000, seed: int = 0, steps: int = 4) -> "EvaluationMode":
        return cls(kind="paper_mode", k=k, vote=True, seed=seed, steps=steps)

    @classmethod
    def single(cls, seed: int = 0, steps: int = 4) -> "EvaluationMode":
        return cls(kind="single_canonical", k=1, vote=False, seed=seed, steps=steps)

    def descriptor(self) -> str:
        return f"{self.kind}(K={self.k},vote={self.vote},steps={self.steps})"


@dataclass(frozen=True)
class CandidatePrediction:
    grid: Grid
    source_aug: Augmentation


@dataclass(frozen=True)
class VoteTally:
    counts: dict
    winner: Grid
    margin: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def majority_vote(candidates) -> VoteTally:
    """Most frequent canonical-frame grid; deterministic under permutation.

    ``margin`` is the winner's lead over the runner-up (the full count when
    unanimous).
    """
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidateSet("no candidates to vote over")
    counts: dict = {}
    grids: dict = {}
    for cand in candidates:
        grid = cand.grid if isinstance(cand, CandidatePrediction) else cand
        key = grid.key()
        counts[key] = counts.get(key, 0) + 1
        grids[key] = grid
    # max count, then lexicographically smallest serialized grid
    winner_key = min(counts, key=lambda k: (-counts[k], k))
    ordered = sorted(counts.values(), reverse=True)
    runner_up = ordered[1] if len(ordered) > 1 else 0
    return VoteTally(
        counts=counts, winner=grids[winner_key], margin=counts[winner_key] - runner_up
    )


class ModelPredictor:
    """Adapter running batched model inference to per-step argmax canvases."""

    def __init__(self, params: model_mod.Parameters):
        self.params = params

    @property
    def steps_default(self) -> int:
        return self.params.cfg.n_cycles

    def predict(self, canvases: np.ndarray, id_tokens: np.ndarray, steps: int) -> np.ndarray:
        """canvases [B, 30, 30] uint8 -> argmax canvases [steps, B, 30, 30]."""
        return model_mod.forward_argmax_steps(self.params, canvases, id_tokens, steps)


def as_predictor(p) -> ModelPredictor:
    if isinstance(p, model_mod.Parameters):
        return ModelPredictor(p)
    if hasattr(p, "predict"):
        return p
    raise TypeError("expected Parameters or an object with .predict")


def variant_augmentations(mode_seed: int, puzzle_key: str, test_index: int, k: int, bounds):
    """The K augmentations for one test input; variant 1 is the identity.

    Out-of-canvas draws are resampled from a derived retry seed (the
    per-pair bounds make this a guard rather than a working path).
    """
    augs = [Augmentation.identity()]
    for j in range(1, k):
        seed = derive_seed(mode_seed, puzzle_key, test_index, j)
        augs.append(aug_mod.sample(seed, bounds))
    return augs


def _predict_variant_grids(predictor, canvases, id_token: int, steps: int) -> list:
    """Run variants through the model in fixed-size chunks; returns the
    final-step decoded grid per variant."""
    grids = []
    for start in range(0, len(canvases), _CHUNK):
        chunk = np.stack(canvases[start : start + _CHUNK])
        tokens = np.full(chunk.shape[0], id_token, dtype=np.int64)
        out = predictor.predict(chunk, tokens, steps)[-1]
        for b in range(out.shape[0]):
            grids.append(model_mod.decode_argmax_canvas(out[b]))
    return grids


@dataclass(frozen=True)
class TaskEvaluation:
    puzzle_key: str
    winners: tuple
    tallies: tuple
    correct: bool

    def record(self, mode: EvaluationMode) -> dict:
        return {
            "puzzle_key": self.puzzle_key,
            "mode": mode.kind,
            "K": mode.k,
            "seed": mode.seed,
            "steps": mode.steps,
            "winners": [g.to_lists() for g in self.winners],
            "margins": [t.margin if t is not None else 1 for t in self.tallies],
            "correct": self.correct,
        }


@dataclass(frozen=True)
class DatasetEvaluation:
    mode: EvaluationMode
    results: tuple
    report: PassReport

    def records_jsonl(self) -> str:
        lines = [
            json.dumps(r.record(self.mode), sort_keys=True) for r in self.results
        ]
        return "\n".join(lines) + "\n" if lines else ""


def evaluate_task(
    p, task: Task, vocab: PuzzleIdVocabulary, mode: EvaluationMode, id_token: int | None = None
) -> TaskEvaluation:
    """Evaluate one task under the mode's fan-out and voting settings.

    ``id_token`` overrides the vocabulary lookup (identity-ablation hook);
    by default the task's own token is used.
    """
    predictor = as_predictor(p)
    if id_token is None:
        id_token = vocab.id_token(task.puzzle_key)
    winners = []
    tallies = []
    for test_index, pair in enumerate(task.tests):
        bounds = (pair.input.height, pair.input.width)
        augs = variant_augmentations(mode.seed, task.puzzle_key, test_index, mode.k, bounds)
        canvases = []
        for j, aug in enumerate(augs):
            for attempt in range(100):
                try:
                    canvases.append(aug_mod.apply(aug, pair.input))
                    augs[j] = aug
                    break
                except OutOfCanvas:
                    aug = aug_mod.sample(
                        derive_seed(mode.seed, task.puzzle_key, test_index, j, "retry", attempt),
                        bounds,
                    )
            else:
                raise OutOfCanvas(f"{task.puzzle_key}: no feasible variant after retries")
        decoded = _predict_variant_grids(predictor, canvases, id_token, mode.steps)
        candidates = [
            CandidatePrediction(aug_mod.restore_prediction(aug, grid), aug)
            for aug, grid in zip(augs, decoded)
        ]
        if mode.vote:
            tally = majority_vote(candidates)
            winners.append(tally.winner)
            tallies.append(tally)
        else:
            winners.append(candidates[0].grid)
            tallies.append(None)
    correct = exact_match_task(winners, task)
    return TaskEvaluation(
        puzzle_key=task.puzzle_key,
        winners=tuple(winners),
        tallies=tuple(tallies),
        correct=correct,
    )


def evaluate_dataset(
    p,
    dataset: Dataset,
    vocab: PuzzleIdVocabulary,
    mode: EvaluationMode,
    id_tokens: dict | None = None,
    workers: int = 1,
) -> DatasetEvaluation:
    """Evaluate every task; id_tokens optionally maps puzzle_key -> token."""
    predictor = as_predictor(p)

    def one(task: Task) -> TaskEvaluation:
        tok = id_tokens[task.puzzle_key] if id_tokens is not None else None
        return evaluate_task(predictor, task, vocab, mode, id_token=tok)

    if workers <= 1:
        results = [one(t) for t in dataset.tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, dataset.tasks))
    report = pass_at_1(
        [r.correct for r in results], mode=mode.descriptor(), seed=mode.seed
    )
    return DatasetEvaluation(mode=mode, results=tuple(results), report=report)


def evaluate_task_depths(
    p,
    task: Task,
    vocab: PuzzleIdVocabulary,
    mode: EvaluationMode,
    depths,
    id_token: int | None = None,
) -> dict:
    """Winners per recursion depth from one forward pass per variant.

    Runs each variant once at max(depths) and reads every requested depth
    from the same trace, so the augmentation stream is shared across depths
    and depth is the only varying factor. Returns {depth: (winner grids,
    correct flag)}.
    """
    predictor = as_predictor(p)
    if id_token is None:
        id_token = vocab.id_token(task.puzzle_key)
    depths = sorted(set(int(d) for d in depths))
    if depths[0] < 1:
        raise ValueError("depths must be >= 1")
    max_depth = depths[-1]
    per_depth_winners: dict = {d: [] for d in depths}
    for test_index, pair in enumerate(task.tests):
        bounds = (pair.input.height, pair.input.width)
        augs = variant_augmentations(mode.seed, task.puzzle_key, test_index, mode.k, bounds)
        canvases = [aug_mod.apply(a, pair.input) for a in augs]
        # per-variant, per-depth decoded predictions
        depth_grids: dict = {d: [] for d in depths}
        for start in range(0, len(canvases), _CHUNK):
            chunk = np.stack(canvases[start : start + _CHUNK])
            tokens = np.full(chunk.shape[0], id_token, dtype=np.int64)
            out = predictor.predict(chunk, tokens, max_depth)
            for d in depths:
                step = out[d - 1]
                for b in range(step.shape[0]):
                    depth_grids[d].append(model_mod.decode_argmax_canvas(step[b]))
        for d in depths:
            candidates = [
                CandidatePrediction(aug_mod.restore_prediction(a, g), a)
                for a, g in zip(augs, depth_grids[d])
            ]
            if mode.vote:
                per_depth_winners[d].append(majority_vote(candidates).winner)
            else:
                per_depth_winners[d].append(candidates[0].grid)
    return {
        d: (tuple(winners), exact_match_task(winners, task))
        for d, winners in per_depth_winners.items()
    }


def sample_predictions(
    p,
    task: Task,
    vocab: PuzzleIdVocabulary,
    seed: int,
    k: int,
    steps: int,
    id_token: int | None = None,
) -> list:
    """K raw per-test prediction sequences for Pass@k (no aggregation).

    Sample 1 is the identity augmentation; sample j applies one drawn
    augmentation to every test input of the task, so a sample index is a
    complete candidate solution for the task.
    """
    predictor = as_predictor(p)
    if id_token is None:
        id_token = vocab.id_token(task.puzzle_key)
    bounds = (
        max(pair.input.height for pair in task.tests),
        max(pair.input.width for pair in task.tests),
    )
    augs = [Augmentation.identity()]
    for j in range(1, k):
        augs.append(aug_mod.sample(derive_seed(seed, task.puzzle_key, "sample", j), bounds))
    samples = [[] for _ in range(k)]
    for pair in task.tests:
        canvases = [aug_mod.apply(a, pair.input) for a in augs]
        decoded = _predict_variant_grids(predictor, canvases, id_token, steps)
        for j, (a, g) in enumerate(zip(augs, decoded)):
            samples[j].append(aug_mod.restore_prediction(a, g))
    return samples
