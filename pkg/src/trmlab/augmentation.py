"""Invertible grid augmentations: color permutations, dihedral transforms,
and canvas translations.

An :class:`Augmentation` acts on a grid in a fixed order: recolor, then
dihedral-transform the content, then place it on the 30x30 canvas at offset
``(dy, dx)`` with VOID everywhere else. Applied to a canvas, the content
keeps its current anchor through the dihedral step and the offset shifts it,
which makes ``apply(invert(a), apply(a, g))`` restore ``g`` at the origin
exactly.

Predictions decoded from a canvas bake the translation in as a top-left
margin of zeros; :func:`restore_prediction` therefore crops that margin
before undoing the dihedral and color components. Dataset records store
content grids without placement, so :func:`restore_grid` skips the crop.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .arc_data import Dataset, ExamplePair, Grid, Task
from .kernels import DIHEDRAL_INVERSE, DIHEDRAL_SWAPS, SIDE, VOID
from .seeding import derive_seed, rng_from


class OutOfCanvas(Exception):
    """A translation pushed grid content outside the 30x30 canvas."""


@dataclass(frozen=True)
class ColorPermutation:
    """Bijection over the 10 color symbols. VOID is never remapped."""

    mapping: tuple

    def __post_init__(self):
        if sorted(self.mapping) != list(range(10)):
            raise ValueError(f"not a permutation of 0..9: {self.mapping}")

    @classmethod
    def identity(cls) -> "ColorPermutation":
        return cls(tuple(range(10)))

    def table(self) -> np.ndarray:
        """Lookup table over 11 symbols (VOID maps to itself)."""
        return np.array(list(self.mapping) + [VOID], dtype=np.uint8)

    def inverse(self) -> "ColorPermutation":
        inv = [0] * 10
        for src, dst in enumerate(self.mapping):
            inv[dst] = src
        return ColorPermutation(tuple(inv))


@dataclass(frozen=True)
class DihedralElement:
    """One of the 8 symmetries of the square, by fixed code."""

    code: int

    def __post_init__(self):
        if not 0 <= self.code <= 7:
            raise ValueError(f"dihedral code {self.code} outside 0..7")

    @property
    def name(self) -> str:
        return kernels.DIHEDRAL_NAMES[self.code]

    @property
    def swaps_axes(self) -> bool:
        return DIHEDRAL_SWAPS[self.code]

    def inverse(self) -> "DihedralElement":
        return DihedralElement(DIHEDRAL_INVERSE[self.code])


@dataclass(frozen=True)
class Translation:
    """Canvas offset in cells. Negative components arise only in inverses."""

    dy: int = 0
    dx: int = 0

    def inverse(self) -> "Translation":
        return Translation(-self.dy, -self.dx)


@dataclass(frozen=True)
class Augmentation:
    color: ColorPermutation
    dihedral: DihedralElement
    shift: Translation
    seed_tag: int = 0

    @classmethod
    def identity(cls, seed_tag: int = 0) -> "Augmentation":
        return cls(ColorPermutation.identity(), DihedralElement(0), Translation(), seed_tag)

    @property
    def is_identity(self) -> bool:
        return (
            self.color.mapping == tuple(range(10))
            and self.dihedral.code == 0
            and self.shift == Translation(0, 0)
        )

    def to_descriptor(self) -> dict:
        return {
            "colors": list(self.color.mapping),
            "dihedral": self.dihedral.code,
            "dy": self.shift.dy,
            "dx": self.shift.dx,
            "seed_tag": self.seed_tag,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "Augmentation":
        return cls(
            ColorPermutation(tuple(d["colors"])),
            DihedralElement(int(d["dihedral"])),
            Translation(int(d["dy"]), int(d["dx"])),
            int(d["seed_tag"]),
        )


def _content_and_anchor(x) -> tuple:
    """Extract (content array, anchor) from a Grid or a canvas array."""
    if isinstance(x, Grid):
        return x.cells, (0, 0)
    if isinstance(x, np.ndarray) and x.shape == (SIDE, SIDE):
        top, left, h, w = kernels.content_bbox(x)
        if h == 0:
            return None, (0, 0)
        return np.ascontiguousarray(x[top : top + h, left : left + w]), (top, left)
    raise TypeError(f"expected Grid or 30x30 canvas, got {type(x).__name__}")


def apply(aug: Augmentation, x) -> np.ndarray:
    """Augment a Grid (anchored at the origin) or a canvas, returning a canvas.

    Raises OutOfCanvas if the shifted content would not fit. An all-VOID
    canvas passes through unchanged.
    """
    content, (top, left) = _content_and_anchor(x)
    if content is None:
        return np.full((SIDE, SIDE), VOID, dtype=np.uint8)
    content = kernels.remap_colors(content, aug.color.table())
    content = kernels.dihedral(content, aug.dihedral.code)
    top += aug.shift.dy
    left += aug.shift.dx
    h, w = content.shape
    if top < 0 or left < 0 or top + h > SIDE or left + w > SIDE:
        raise OutOfCanvas(
            f"content {h}x{w} at ({top},{left}) exceeds the {SIDE}x{SIDE} canvas"
        )
    return kernels.place_grid(content, top, left)


def invert(aug: Augmentation) -> Augmentation:
    """Inverse augmentation: apply(invert(a), apply(a, g)) == place(g, 0, 0)."""
    return Augmentation(
        color=aug.color.inverse(),
        dihedral=aug.dihedral.inverse(),
        shift=aug.shift.inverse(),
        seed_tag=aug.seed_tag,
    )


def canvas_content(canvas: np.ndarray) -> Grid:
    """Tight non-VOID content of a canvas as a Grid (all-VOID -> 1x1 zero)."""
    top, left, h, w = kernels.content_bbox(canvas)
    if h == 0:
        return Grid(np.zeros((1, 1), dtype=np.uint8))
    sub = np.ascontiguousarray(canvas[top : top + h, left : left + w]).copy()
    sub[sub == VOID] = 0
    return Grid(sub)


def restore_grid(aug: Augmentation, g: Grid) -> Grid:
    """Undo color and dihedral components on a content grid (no placement)."""
    cells = kernels.dihedral(g.cells, DIHEDRAL_INVERSE[aug.dihedral.code])
    cells = kernels.remap_colors(cells, aug.color.inverse().table())
    return Grid(np.ascontiguousarray(cells))


def restore_prediction(aug: Augmentation, g: Grid) -> Grid:
    """Map a decoded prediction back to the canonical frame.

    Decoded grids keep the canvas origin, so the translation appears as a
    top-left margin: crop it (clipping content that strayed into it), then
    undo dihedral and colors. A fully clipped prediction degenerates to the
    1x1 zero grid.
    """
    cells = g.cells[aug.shift.dy :, aug.shift.dx :]
    if cells.size == 0:
        return Grid(np.zeros((1, 1), dtype=np.uint8))
    cells = kernels.dihedral(np.ascontiguousarray(cells), DIHEDRAL_INVERSE[aug.dihedral.code])
    cells = kernels.remap_colors(cells, aug.color.inverse().table())
    return Grid(np.ascontiguousarray(cells))


def sample(rng_seed: int, bounds: tuple) -> Augmentation:
    """Draw one augmentation, deterministic in the seed.

    ``bounds`` is the (height, width) extent the augmentation must keep on
    canvas; the translation is uniform over all feasible offsets for the
    drawn dihedral element. Draw order is fixed: colors, dihedral, dy, dx.
    """
    h, w = bounds
    if not (1 <= h <= SIDE and 1 <= w <= SIDE):
        raise ValueError(f"bounds {bounds} outside 1..{SIDE}")
    rng = rng_from(rng_seed)
    perm = tuple(int(v) for v in rng.permutation(10))
    code = int(rng.integers(0, 8))
    th, tw = (w, h) if DIHEDRAL_SWAPS[code] else (h, w)
    dy = int(rng.integers(0, SIDE - th + 1))
    dx = int(rng.integers(0, SIDE - tw + 1))
    return Augmentation(
        ColorPermutation(perm), DihedralElement(code), Translation(dy, dx), seed_tag=rng_seed
    )


def pair_bounds(pair: ExamplePair) -> tuple:
    return (
        max(pair.input.height, pair.output.height),
        max(pair.input.width, pair.output.width),
    )


def augment_pair(aug: Augmentation, pair: ExamplePair) -> ExamplePair:
    """Color+dihedral transform of both grids; placement stays in the descriptor."""

    def _tf(g: Grid) -> Grid:
        cells = kernels.remap_colors(g.cells, aug.color.table())
        return Grid(np.ascontiguousarray(kernels.dihedral(cells, aug.dihedral.code)))

    return ExamplePair(_tf(pair.input), _tf(pair.output))


def expand_dataset(dataset: Dataset, n_per_pair: int, seed: int) -> Dataset:
    """Expand every demonstration pair with ``n_per_pair`` augmented copies.

    The canonical pairs are always retained (first, in order), so the 0-copy
    regime is the identity and returns the dataset unchanged. Infeasible
    shifts are resampled with a derived retry seed; with per-pair bounds this
    is a safety guard that should never fire.
    """
    if n_per_pair < 0:
        raise ValueError("n_per_pair must be >= 0")
    if n_per_pair == 0:
        return dataset
    tasks = []
    for task in dataset.tasks:
        demos = list(task.demonstrations)
        descriptors: list = [None] * len(demos)
        for pair_idx, pair in enumerate(task.demonstrations):
            bounds = pair_bounds(pair)
            for copy_idx in range(n_per_pair):
                aug_seed = derive_seed(seed, task.puzzle_key, pair_idx, copy_idx)
                for attempt in range(100):
                    aug = sample(aug_seed, bounds)
                    if _placement_feasible(aug, pair):
                        break
                    aug_seed = derive_seed(aug_seed, "retry", attempt)
                else:
                    aug = replace(aug, shift=Translation(0, 0))
                demos.append(augment_pair(aug, pair))
                descriptors.append(aug)
        tasks.append(
            Task(
                puzzle_key=task.puzzle_key,
                demonstrations=tuple(demos),
                tests=task.tests,
                demo_augmentations=tuple(descriptors),
            )
        )
    return Dataset(tasks=tuple(tasks), split_label=dataset.split_label)


def _placement_feasible(aug: Augmentation, pair: ExamplePair) -> bool:
    for g in (pair.input, pair.output):
        h, w = g.height, g.width
        if aug.dihedral.swaps_axes:
            h, w = w, h
        if aug.shift.dy + h > SIDE or aug.shift.dx + w > SIDE:
            return False
    return True


# ---------------------------------------------------------------------------
# augmented dataset directories (arc-aug-0, arc-aug-1000, ...)
# ---------------------------------------------------------------------------


def write_dataset_dir(dataset: Dataset, directory, meta: dict) -> None:
    """One ``<puzzle_key>.json`` per task plus a ``manifest.json``.

    Train entries carry their augmentation descriptor (color mapping,
    dihedral code, dy, dx, seed_tag) for auditability; canonical entries
    store null.
    """
    import json
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_records = 0
    for task in dataset.tasks:
        descriptors = task.demo_augmentations or (None,) * len(task.demonstrations)
        doc = {
            "train": [
                {
                    "input": pair.input.to_lists(),
                    "output": pair.output.to_lists(),
                    "augmentation": aug.to_descriptor() if aug is not None else None,
                }
                for pair, aug in zip(task.demonstrations, descriptors)
            ],
            "test": [
                {"input": p.input.to_lists(), "output": p.output.to_lists()}
                for p in task.tests
            ],
        }
        n_records += len(task.demonstrations)
        (directory / f"{task.puzzle_key}.json").write_text(
            json.dumps(doc, sort_keys=True)
        )
    manifest = dict(meta)
    manifest.update(
        {"split_label": dataset.split_label, "tasks": len(dataset.tasks), "records": n_records}
    )
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def read_dataset_dir(directory) -> tuple:
    """Load an augmented dataset directory; returns (Dataset, manifest)."""
    import json
    from pathlib import Path

    from .arc_data import Grid as _Grid

    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{directory}: no manifest.json (not a dataset directory)")
    manifest = json.loads(manifest_path.read_text())
    tasks = []
    for path in sorted(directory.glob("*.json")):
        if path.name == "manifest.json":
            continue
        doc = json.loads(path.read_text())
        demos = []
        descriptors = []
        for entry in doc["train"]:
            demos.append(
                ExamplePair(_Grid.from_lists(entry["input"]), _Grid.from_lists(entry["output"]))
            )
            aug = entry.get("augmentation")
            descriptors.append(Augmentation.from_descriptor(aug) if aug else None)
        tests = tuple(
            ExamplePair(_Grid.from_lists(e["input"]), _Grid.from_lists(e["output"]))
            for e in doc["test"]
        )
        tasks.append(
            Task(
                puzzle_key=path.stem,
                demonstrations=tuple(demos),
                tests=tests,
                demo_augmentations=tuple(descriptors),
            )
        )
    tasks.sort(key=lambda t: t.puzzle_key)
    return Dataset(tasks=tuple(tasks), split_label=manifest["split_label"]), manifest
