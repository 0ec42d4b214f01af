import numpy as np
import pytest

from trmlab import augmentation as aug_mod
from trmlab import kernels
from trmlab.arc_data import Dataset, ExamplePair, Grid, Task
from trmlab.augmentation import (
    Augmentation,
    ColorPermutation,
    DihedralElement,
    OutOfCanvas,
    Translation,
    apply,
    canvas_content,
    expand_dataset,
    invert,
    read_dataset_dir,
    restore_grid,
    restore_prediction,
    sample,
    write_dataset_dir,
)
from conftest import make_tasks, random_grid


# --- brute-force coordinate-map oracle, independent of the kernels ---------

def oracle_dihedral(arr, code):
    h, w = arr.shape
    dest = {
        0: lambda i, j: (i, j),
        1: lambda i, j: (j, h - 1 - i),
        2: lambda i, j: (h - 1 - i, w - 1 - j),
        3: lambda i, j: (w - 1 - j, i),
        4: lambda i, j: (i, w - 1 - j),
        5: lambda i, j: (h - 1 - i, j),
        6: lambda i, j: (j, i),
        7: lambda i, j: (w - 1 - j, h - 1 - i),
    }[code]
    shape = (w, h) if code in (1, 3, 6, 7) else (h, w)
    out = np.zeros(shape, dtype=arr.dtype)
    for i in range(h):
        for j in range(w):
            out[dest(i, j)] = arr[i, j]
    return out


def probe(h, w):
    return np.arange(h * w, dtype=np.uint8).reshape(h, w)


def test_dihedral_matches_coordinate_oracle():
    for shape in ((1, 1), (2, 1), (4, 7), (5, 5), (30, 30)):
        arr = probe(*shape)
        for code in range(8):
            assert np.array_equal(kernels.dihedral(arr, code), oracle_dihedral(arr, code)), code


def test_rot90_two_cell_grid_literal():
    # [[a], [b]] rotated a quarter turn clockwise reads [[b, a]]
    g = Grid(np.array([[3], [7]], dtype=np.uint8))
    aug = Augmentation(ColorPermutation.identity(), DihedralElement(1), Translation())
    assert canvas_content(apply(aug, g)) == Grid(np.array([[7, 3]], dtype=np.uint8))


def test_group_closure_all_64_compositions():
    # composing any two elements lands back in the set of 8
    probes = [probe(4, 7), probe(5, 5)]
    table = {}
    for c1 in range(8):
        for c2 in range(8):
            matches = [
                c3
                for c3 in range(8)
                if all(
                    np.array_equal(
                        oracle_dihedral(oracle_dihedral(p, c1), c2), oracle_dihedral(p, c3)
                    )
                    for p in probes
                )
            ]
            assert len(matches) == 1, f"composition {c1},{c2} not unique: {matches}"
            table[(c1, c2)] = matches[0]
            # the kernel implementation composes identically
            for p in probes:
                assert np.array_equal(
                    kernels.dihedral(kernels.dihedral(p, c1), c2),
                    kernels.dihedral(p, matches[0]),
                )
    # group structure: identity, inverses as declared
    for c in range(8):
        assert table[(0, c)] == c and table[(c, 0)] == c
        assert table[(c, kernels.DIHEDRAL_INVERSE[c])] == 0


def test_identity_augmentation_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = random_grid(rng)
        canvas = apply(Augmentation.identity(), g)
        assert np.array_equal(canvas, kernels.place_grid(g.cells, 0, 0))


def test_color_swap_literal():
    g = Grid(np.array([[0, 1]], dtype=np.uint8))
    mapping = (1, 0) + tuple(range(2, 10))
    aug = Augmentation(ColorPermutation(mapping), DihedralElement(0), Translation())
    assert canvas_content(apply(aug, g)) == Grid(np.array([[1, 0]], dtype=np.uint8))


def test_round_trip_exact():
    rng = np.random.default_rng(1)
    for i in range(500):
        g = random_grid(rng, max_side=12)
        aug = sample(int(rng.integers(0, 2**60)), (g.height, g.width))
        restored = apply(invert(aug), apply(aug, g))
        assert np.array_equal(restored, kernels.place_grid(g.cells, 0, 0)), i


def test_double_inversion_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        aug = sample(int(rng.integers(0, 2**60)), (6, 9))
        assert invert(invert(aug)) == aug


def test_out_of_canvas_raises():
    g = Grid(np.zeros((10, 10), dtype=np.uint8))
    aug = Augmentation(ColorPermutation.identity(), DihedralElement(0), Translation(25, 0))
    with pytest.raises(OutOfCanvas):
        apply(aug, g)


def test_sample_determinism_and_full_canvas_bounds():
    assert sample(123, (5, 7)) == sample(123, (5, 7))
    forced = sample(99, (30, 30))
    assert forced.shift == Translation(0, 0)


def test_sample_dihedral_counts_within_3_sigma():
    counts = np.zeros(8, dtype=int)
    for seed in range(10_000):
        counts[sample(seed, (1, 1)).dihedral.code] += 1
    expected = 10_000 / 8
    sigma = np.sqrt(10_000 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - expected) <= 3 * sigma), counts


def test_color_commutes_with_dihedral():
    rng = np.random.default_rng(3)
    for _ in range(30):
        g = random_grid(rng)
        perm = np.append(rng.permutation(10), 10).astype(np.uint8)
        code = int(rng.integers(0, 8))
        a = kernels.dihedral(kernels.remap_colors(g.cells, perm), code)
        b = kernels.remap_colors(kernels.dihedral(g.cells, code), perm)
        assert np.array_equal(a, b)


def test_apply_output_always_on_canvas():
    rng = np.random.default_rng(4)
    for _ in range(100):
        g = random_grid(rng, max_side=30)
        canvas = apply(sample(int(rng.integers(0, 2**60)), (g.height, g.width)), g)
        assert canvas.shape == (30, 30)


def test_restore_prediction_crops_margin():
    g = Grid(np.array([[4, 5], [6, 7]], dtype=np.uint8))
    aug = Augmentation(ColorPermutation.identity(), DihedralElement(0), Translation(2, 3), 0)
    canvas = apply(aug, g)
    decoded = Grid(kernels.decode_cells(canvas))  # 4x5 with a zero margin
    assert decoded.height == 4 and decoded.width == 5
    assert restore_prediction(aug, decoded) == g


def test_restore_prediction_full_clip_degenerates():
    aug = Augmentation(ColorPermutation.identity(), DihedralElement(0), Translation(5, 5), 0)
    pred = Grid(np.ones((2, 2), dtype=np.uint8))
    assert restore_prediction(aug, pred) == Grid(np.zeros((1, 1), dtype=np.uint8))


# --- dataset expansion ------------------------------------------------------

def test_expand_zero_is_identity():
    ds = make_tasks(3, seed=5)
    assert expand_dataset(ds, 0, seed=1) is ds


def test_expand_counts_and_provenance():
    ds = make_tasks(1, demos=1, seed=6)
    out = expand_dataset(ds, 1000, seed=2)
    task = out.tasks[0]
    assert len(task.demonstrations) == 1001  # canonical retained + 1000 copies
    assert task.demo_augmentations[0] is None
    assert all(a is not None for a in task.demo_augmentations[1:])
    assert task.puzzle_key == ds.tasks[0].puzzle_key


def test_expand_deterministic():
    ds = make_tasks(2, seed=7)
    a = expand_dataset(ds, 2, seed=3)
    b = expand_dataset(ds, 2, seed=3)
    assert a == b


def test_expand_semantics_preserved():
    # the stored inverse recovers the canonical pair from every augmented pair
    ds = make_tasks(2, demos=2, seed=8)
    out = expand_dataset(ds, 5, seed=4)
    for task, orig in zip(out.tasks, ds.tasks):
        n_canonical = len(orig.demonstrations)
        for idx, (pair, aug) in enumerate(
            zip(task.demonstrations, task.demo_augmentations)
        ):
            if aug is None:
                assert pair == orig.demonstrations[idx]
                continue
            source = orig.demonstrations[(idx - n_canonical) // 5]
            assert restore_grid(aug, pair.input) == source.input
            assert restore_grid(aug, pair.output) == source.output


def test_dataset_dir_round_trip(tmp_path):
    ds = expand_dataset(make_tasks(2, seed=9), 3, seed=5)
    write_dataset_dir(ds, tmp_path / "arc-aug-3", {"n_per_pair": 3, "seed": 5})
    loaded, manifest = read_dataset_dir(tmp_path / "arc-aug-3")
    assert loaded == ds
    assert manifest["n_per_pair"] == 3
    assert manifest["records"] == sum(len(t.demonstrations) for t in ds.tasks)
