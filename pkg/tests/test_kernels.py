"""Backend equivalence: every numba kernel must agree with its numpy twin.

Integer kernels must agree exactly; the fused float kernel to summation
rounding.
"""

import numpy as np
import pytest

from trmlab import backend, kernels


needs_numba = pytest.mark.skipif(
    not backend.USE_NUMBA, reason="numba backend not active"
)


def _rand_canvas(rng):
    canvas = np.full((30, 30), kernels.VOID, dtype=np.uint8)
    h = int(rng.integers(1, 12))
    w = int(rng.integers(1, 12))
    top = int(rng.integers(0, 30 - h + 1))
    left = int(rng.integers(0, 30 - w + 1))
    canvas[top : top + h, left : left + w] = rng.integers(0, 10, (h, w))
    return canvas


@needs_numba
def test_place_and_remap_match_numpy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cells = rng.integers(0, 10, (int(rng.integers(1, 31)), int(rng.integers(1, 31)))).astype(
            np.uint8
        )
        top = int(rng.integers(0, 31 - cells.shape[0]))
        left = int(rng.integers(0, 31 - cells.shape[1]))
        a = kernels.NUMPY_IMPL["place_grid"](cells, top, left)
        b = kernels.NUMBA_IMPL["place_grid"](cells, top, left)
        assert np.array_equal(a, b)
        perm = np.append(rng.permutation(10), 10).astype(np.uint8)
        assert np.array_equal(
            kernels.NUMPY_IMPL["remap_colors"](a, perm),
            kernels.NUMBA_IMPL["remap_colors"](a, perm),
        )


@needs_numba
def test_dihedral_matches_numpy_all_codes():
    rng = np.random.default_rng(1)
    for _ in range(30):
        arr = rng.integers(0, 11, (int(rng.integers(1, 31)), int(rng.integers(1, 31)))).astype(
            np.uint8
        )
        for code in range(8):
            a = kernels.NUMPY_IMPL["dihedral"](arr, code)
            b = kernels.NUMBA_IMPL["dihedral"](arr, code)
            assert np.array_equal(a, b), f"code {code}"


@needs_numba
def test_bbox_and_decode_match_numpy():
    rng = np.random.default_rng(2)
    for _ in range(50):
        canvas = _rand_canvas(rng)
        # punch VOID holes inside the content to exercise interior handling
        canvas[rng.integers(0, 30, 10), rng.integers(0, 30, 10)] = kernels.VOID
        assert kernels.NUMPY_IMPL["content_bbox"](canvas) == tuple(
            kernels.NUMBA_IMPL["content_bbox"](canvas)
        )
        assert np.array_equal(
            kernels.NUMPY_IMPL["decode_cells"](canvas),
            kernels.NUMBA_IMPL["decode_cells"](canvas),
        )
    empty = np.full((30, 30), kernels.VOID, dtype=np.uint8)
    assert kernels.NUMPY_IMPL["content_bbox"](empty) == tuple(
        kernels.NUMBA_IMPL["content_bbox"](empty)
    )
    assert np.array_equal(
        kernels.NUMPY_IMPL["decode_cells"](empty), kernels.NUMBA_IMPL["decode_cells"](empty)
    )


@needs_numba
def test_argmax_matches_numpy_including_ties():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 900, 11))
    # force ties: numpy argmax keeps the first maximum
    logits[0, :5, :] = 0.0
    logits[1, 7, 3] = logits[1, 7, 9] = logits[1, 7].max() + 1.0
    assert np.array_equal(
        kernels.NUMPY_IMPL["argmax_classes"](logits),
        kernels.NUMBA_IMPL["argmax_classes"](logits),
    )


@needs_numba
def test_softmax_ce_grad_matches_numpy():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 900, 11)) * 5.0
    targets = rng.integers(0, 11, (3, 900)).astype(np.uint8)
    l_np, g_np = kernels.NUMPY_IMPL["softmax_ce_grad"](logits, targets)
    l_nb, g_nb = kernels.NUMBA_IMPL["softmax_ce_grad"](logits, targets)
    assert abs(l_np - l_nb) <= 1e-9 * max(1.0, abs(l_np))
    np.testing.assert_allclose(g_np, g_nb, rtol=1e-12, atol=1e-15)


def test_softmax_ce_grad_sums_to_zero_rows():
    # softmax gradient rows sum to zero regardless of backend
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(2, 900, 11))
    targets = rng.integers(0, 11, (2, 900)).astype(np.uint8)
    _, grad = kernels.softmax_ce_grad(logits, targets)
    np.testing.assert_allclose(grad.sum(axis=-1), 0.0, atol=1e-12)


def test_active_backend_reported():
    assert backend.active_backend() in ("numba", "numpy")
