"""ARC-format task ingestion, canonical datasets, and the puzzle-identity vocabulary.

Task documents are UTF-8 JSON with top-level ``train`` / ``test`` arrays whose
elements carry ``input`` / ``output`` matrices of color indices 0-9. A dataset
directory holds one ``<puzzle_key>.json`` per task; the file stem is the
puzzle key.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAX_SIDE = 30
NUM_COLORS = 10


class ArcDataError(Exception):
    """Base class for task ingestion failures."""


class MalformedDocument(ArcDataError):
    """Document structure is not a valid task (missing keys, wrong types)."""


class IllegalCell(ArcDataError):
    """A grid cell holds a value outside 0-9."""


class IllegalShape(ArcDataError):
    """A grid dimension is 0, exceeds 30, or rows are ragged."""


class DuplicateKey(ArcDataError):
    """The same puzzle key appears twice with conflicting content."""


@dataclass(frozen=True)
class Grid:
    """Rectangular matrix of color indices, stored row-major as uint8.

    Invariants: 1 <= height, width <= 30 and every cell in 0..9. Instances
    are immutable; the backing array is marked read-only.
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = self.cells
        if not isinstance(cells, np.ndarray) or cells.ndim != 2:
            raise IllegalShape(f"grid must be a 2-D array, got {type(cells).__name__}")
        h, w = cells.shape
        if not (1 <= h <= MAX_SIDE and 1 <= w <= MAX_SIDE):
            raise IllegalShape(f"grid shape {h}x{w} outside 1..{MAX_SIDE}")
        if cells.dtype != np.uint8:
            raise IllegalCell(f"grid cells must be uint8, got {cells.dtype}")
        if cells.size and int(cells.max()) >= NUM_COLORS:
            raise IllegalCell(f"cell value {int(cells.max())} outside 0..{NUM_COLORS - 1}")
        cells.setflags(write=False)

    @classmethod
    def from_lists(cls, rows) -> "Grid":
        """Validate a list-of-lists matrix and build a Grid.

        Raises MalformedDocument for non-matrix structure, IllegalShape for
        bad dimensions or ragged rows, IllegalCell for out-of-range values.
        """
        if not isinstance(rows, (list, tuple)) or not rows:
            raise IllegalShape("grid must be a non-empty list of rows")
        widths = set()
        for row in rows:
            if not isinstance(row, (list, tuple)):
                raise MalformedDocument("grid row is not a list")
            widths.add(len(row))
            for v in row:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise MalformedDocument(f"grid cell {v!r} is not an integer")
                if not 0 <= v < NUM_COLORS:
                    raise IllegalCell(f"cell value {v} outside 0..{NUM_COLORS - 1}")
        if len(widths) != 1:
            raise IllegalShape("ragged rows: row widths differ")
        if 0 in widths:
            raise IllegalShape("grid has zero-width rows")
        arr = np.array(rows, dtype=np.uint8)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def to_lists(self) -> list:
        return self.cells.tolist()

    def key(self) -> bytes:
        """Serialization used for exact-match comparison and vote counting."""
        return bytes((self.height, self.width)) + self.cells.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(
            np.array_equal(self.cells, other.cells)
        )

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"Grid({self.height}x{self.width})"


@dataclass(frozen=True)
class ExamplePair:
    input: Grid
    output: Grid


@dataclass(frozen=True)
class Task:
    """One puzzle: demonstration pairs plus held-out test pairs.

    ``demo_augmentations`` is a parallel tuple over ``demonstrations``
    recording how each pair was derived (None = canonical). It is populated
    by dataset expansion and stays None for freshly parsed tasks.
    """

    puzzle_key: str
    demonstrations: tuple
    tests: tuple
    demo_augmentations: tuple | None = field(default=None, compare=True)

    def __post_init__(self):
        if not self.demonstrations:
            raise MalformedDocument(f"task {self.puzzle_key!r} has no demonstrations")
        if not self.tests:
            raise MalformedDocument(f"task {self.puzzle_key!r} has no tests")
        if self.demo_augmentations is not None and len(self.demo_augmentations) != len(
            self.demonstrations
        ):
            raise MalformedDocument(
                f"task {self.puzzle_key!r}: augmentation descriptors do not align with pairs"
            )


@dataclass(frozen=True)
class Dataset:
    """Ordered task collection; ordering is stable (sorted by puzzle_key)."""

    tasks: tuple
    split_label: str

    def __post_init__(self):
        if self.split_label not in ("train", "eval"):
            raise MalformedDocument(f"split_label must be train or eval, got {self.split_label!r}")
        keys = [t.puzzle_key for t in self.tasks]
        if keys != sorted(keys):
            raise MalformedDocument("dataset tasks are not sorted by puzzle_key")
        if len(set(keys)) != len(keys):
            raise DuplicateKey("dataset contains repeated puzzle keys")

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


@dataclass(frozen=True)
class PuzzleIdVocabulary:
    """Bijective puzzle_key -> id_token map. Token 0 is the blank identifier
    and is never assigned to a real puzzle; the embedding row for it exists
    from initialization so identity ablations can address it.
    """

    entries: dict
    blank_token: int = 0

    @property
    def size(self) -> int:
        return len(self.entries) + 1

    def id_token(self, puzzle_key: str) -> int:
        return self.entries[puzzle_key]


def _parse_pair(obj, where: str) -> ExamplePair:
    if not isinstance(obj, dict) or "input" not in obj or "output" not in obj:
        raise MalformedDocument(f"{where}: pair must be an object with input/output")
    return ExamplePair(Grid.from_lists(obj["input"]), Grid.from_lists(obj["output"]))


def parse_task(text: str, puzzle_key: str) -> Task:
    """Parse one ARC task document. The caller supplies the puzzle key
    (by convention, the file stem).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("task document must be a JSON object")
    for section in ("train", "test"):
        if section not in doc or not isinstance(doc[section], list) or not doc[section]:
            raise MalformedDocument(f"missing or empty {section!r} array")
    demos = tuple(_parse_pair(p, f"train[{i}]") for i, p in enumerate(doc["train"]))
    tests = tuple(_parse_pair(p, f"test[{i}]") for i, p in enumerate(doc["test"]))
    return Task(puzzle_key=puzzle_key, demonstrations=demos, tests=tests)


def serialize_task(task: Task) -> str:
    """Inverse of parse_task for canonical tasks (round-trips structurally)."""
    doc = {
        "train": [
            {"input": p.input.to_lists(), "output": p.output.to_lists()}
            for p in task.demonstrations
        ],
        "test": [
            {"input": p.input.to_lists(), "output": p.output.to_lists()} for p in task.tests
        ],
    }
    return json.dumps(doc, sort_keys=True)


def load_dataset(directory, split_label: str) -> Dataset:
    """Load every ``*.json`` task document under ``directory``.

    Parse failures are re-raised with the offending filename attached. An
    empty directory yields an empty dataset and a logged warning.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MalformedDocument(f"dataset directory does not exist: {directory}")
    tasks = []
    for path in sorted(directory.glob("*.json")):
        try:
            tasks.append(parse_task(path.read_text(encoding="utf-8"), path.stem))
        except ArcDataError as exc:
            raise type(exc)(f"{path.name}: {exc}") from exc
    if not tasks:
        logger.warning("dataset directory %s contains no task documents", directory)
    tasks.sort(key=lambda t: t.puzzle_key)
    logger.info("loaded %d tasks from %s (%s split)", len(tasks), directory, split_label)
    return Dataset(tasks=tuple(tasks), split_label=split_label)


def canonical_fingerprint(task: Task) -> str:
    """Serialization of the task's canonical pairs (augmented copies, which
    carry descriptors, are excluded) - the identity used to detect key
    collisions across datasets."""
    if task.demo_augmentations is None:
        demos = task.demonstrations
    else:
        demos = tuple(
            pair
            for pair, aug in zip(task.demonstrations, task.demo_augmentations)
            if aug is None
        ) or task.demonstrations
    return serialize_task(Task(task.puzzle_key, demos, task.tests))


def build_vocabulary(datasets: Sequence[Dataset] | Iterable[Dataset]) -> PuzzleIdVocabulary:
    """Assign id tokens 1..n over the union of puzzle keys in sorted order.

    The same key may appear in several datasets (e.g. canonical and
    expanded views of one split) only when the canonical content agrees;
    a key naming two different puzzles raises DuplicateKey.
    """
    datasets = list(datasets)
    if not datasets:
        raise MalformedDocument("build_vocabulary requires at least one dataset")
    seen: dict[str, str] = {}
    for ds in datasets:
        for task in ds.tasks:
            fingerprint = canonical_fingerprint(task)
            if task.puzzle_key in seen and seen[task.puzzle_key] != fingerprint:
                raise DuplicateKey(
                    f"puzzle key {task.puzzle_key!r} appears with conflicting content"
                )
            seen[task.puzzle_key] = fingerprint
    entries = {key: i + 1 for i, key in enumerate(sorted(seen))}
    return PuzzleIdVocabulary(entries=entries)
