"""Hot grid kernels: numba @njit implementations with pure-numpy twins.

Everything here operates on the fixed 30x30 canvas. Cells hold color
indices 0-9; VOID (10) marks empty canvas positions. The numba and numpy
variants of each kernel are semantically identical; integer kernels agree
bit-for-bit, float kernels to summation rounding. The active set is bound
at import time from :mod:`trmlab.backend`.

Dihedral codes (fixed order): 0 identity, 1 rot90 clockwise, 2 rot180,
3 rot270 clockwise, 4 flip-h (mirror columns), 5 flip-v (mirror rows),
6 transpose, 7 anti-transpose.
"""

from __future__ import annotations

import numpy as np

from . import backend

VOID = 10
SIDE = 30
CELLS = SIDE * SIDE
NUM_CLASSES = 11

DIHEDRAL_NAMES = (
    "identity",
    "rot90",
    "rot180",
    "rot270",
    "flip-h",
    "flip-v",
    "transpose",
    "anti-transpose",
)
# code -> inverse code; rotations pair up, reflections are involutions
DIHEDRAL_INVERSE = (0, 3, 2, 1, 4, 5, 6, 7)
# codes that swap height and width
DIHEDRAL_SWAPS = (False, True, False, True, False, False, True, True)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_place_grid(cells: np.ndarray, top: int, left: int) -> np.ndarray:
    h, w = cells.shape
    canvas = np.full((SIDE, SIDE), VOID, dtype=np.uint8)
    canvas[top : top + h, left : left + w] = cells
    return canvas


def _np_remap_colors(arr: np.ndarray, perm11: np.ndarray) -> np.ndarray:
    return perm11[arr]


def _np_dihedral(arr: np.ndarray, code: int) -> np.ndarray:
    if code == 0:
        out = arr
    elif code == 1:
        out = np.rot90(arr, -1)
    elif code == 2:
        out = np.rot90(arr, 2)
    elif code == 3:
        out = np.rot90(arr, 1)
    elif code == 4:
        out = np.fliplr(arr)
    elif code == 5:
        out = np.flipud(arr)
    elif code == 6:
        out = arr.T
    elif code == 7:
        out = arr[::-1, ::-1].T
    else:
        raise ValueError(f"dihedral code {code} outside 0..7")
    return np.ascontiguousarray(out)


def _np_content_bbox(canvas: np.ndarray) -> tuple:
    mask = canvas != VOID
    if not mask.any():
        return (-1, -1, 0, 0)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (
        int(rows[0]),
        int(cols[0]),
        int(rows[-1] - rows[0] + 1),
        int(cols[-1] - cols[0] + 1),
    )


def _np_decode_cells(canvas: np.ndarray) -> np.ndarray:
    # Decode rule: keep rows/cols 0..last non-VOID; VOID inside the box -> 0.
    mask = canvas != VOID
    if not mask.any():
        return np.zeros((1, 1), dtype=np.uint8)
    h = int(np.flatnonzero(mask.any(axis=1))[-1] + 1)
    w = int(np.flatnonzero(mask.any(axis=0))[-1] + 1)
    out = canvas[:h, :w].copy()
    out[out == VOID] = 0
    return out


def _np_argmax_classes(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=-1).astype(np.uint8)


def _np_softmax_ce_grad(logits: np.ndarray, targets: np.ndarray) -> tuple:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=-1, keepdims=True)
    tgt = targets.astype(np.int64)[..., None]
    picked = np.take_along_axis(logits, tgt, axis=-1)[..., 0]
    loss_sum = float((np.log(s[..., 0]) + m[..., 0] - picked).sum())
    dlogits = e / s
    np.put_along_axis(dlogits, tgt, np.take_along_axis(dlogits, tgt, axis=-1) - 1.0, axis=-1)
    return loss_sum, dlogits


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if backend.USE_NUMBA:
    from numba import njit

    @njit(cache=True, nogil=True)
    def _nb_place_grid(cells, top, left):
        h, w = cells.shape
        canvas = np.full((SIDE, SIDE), VOID, dtype=np.uint8)
        for i in range(h):
            for j in range(w):
                canvas[top + i, left + j] = cells[i, j]
        return canvas

    @njit(cache=True, nogil=True)
    def _nb_remap_colors(arr, perm11):
        out = np.empty_like(arr)
        flat_in = arr.ravel()
        flat_out = out.ravel()
        for i in range(flat_in.size):
            flat_out[i] = perm11[flat_in[i]]
        return out

    @njit(cache=True, nogil=True)
    def _nb_dihedral(arr, code):
        h, w = arr.shape
        if code == 0:
            return arr.copy()
        if code == 1:  # rot90 clockwise: out[i, j] = arr[h-1-j, i]
            out = np.empty((w, h), dtype=arr.dtype)
            for i in range(w):
                for j in range(h):
                    out[i, j] = arr[h - 1 - j, i]
            return out
        if code == 2:
            out = np.empty((h, w), dtype=arr.dtype)
            for i in range(h):
                for j in range(w):
                    out[i, j] = arr[h - 1 - i, w - 1 - j]
            return out
        if code == 3:  # rot270 clockwise: out[i, j] = arr[j, w-1-i]
            out = np.empty((w, h), dtype=arr.dtype)
            for i in range(w):
                for j in range(h):
                    out[i, j] = arr[j, w - 1 - i]
            return out
        if code == 4:
            out = np.empty((h, w), dtype=arr.dtype)
            for i in range(h):
                for j in range(w):
                    out[i, j] = arr[i, w - 1 - j]
            return out
        if code == 5:
            out = np.empty((h, w), dtype=arr.dtype)
            for i in range(h):
                for j in range(w):
                    out[i, j] = arr[h - 1 - i, j]
            return out
        if code == 6:
            out = np.empty((w, h), dtype=arr.dtype)
            for i in range(w):
                for j in range(h):
                    out[i, j] = arr[j, i]
            return out
        if code == 7:  # anti-transpose: out[i, j] = arr[h-1-j, w-1-i]
            out = np.empty((w, h), dtype=arr.dtype)
            for i in range(w):
                for j in range(h):
                    out[i, j] = arr[h - 1 - j, w - 1 - i]
            return out
        raise ValueError("dihedral code outside 0..7")

    @njit(cache=True, nogil=True)
    def _nb_content_bbox(canvas):
        top, left = SIDE, SIDE
        bottom, right = -1, -1
        for i in range(SIDE):
            for j in range(SIDE):
                if canvas[i, j] != VOID:
                    if i < top:
                        top = i
                    if i > bottom:
                        bottom = i
                    if j < left:
                        left = j
                    if j > right:
                        right = j
        if bottom < 0:
            return (-1, -1, 0, 0)
        return (top, left, bottom - top + 1, right - left + 1)

    @njit(cache=True, nogil=True)
    def _nb_decode_cells(canvas):
        h, w = 0, 0
        for i in range(SIDE):
            for j in range(SIDE):
                if canvas[i, j] != VOID:
                    if i + 1 > h:
                        h = i + 1
                    if j + 1 > w:
                        w = j + 1
        if h == 0:
            return np.zeros((1, 1), dtype=np.uint8)
        out = np.empty((h, w), dtype=np.uint8)
        for i in range(h):
            for j in range(w):
                v = canvas[i, j]
                out[i, j] = 0 if v == VOID else v
        return out

    @njit(cache=True, nogil=True)
    def _nb_argmax_classes(logits):
        b, p, c = logits.shape
        out = np.empty((b, p), dtype=np.uint8)
        for i in range(b):
            for j in range(p):
                best = 0
                best_v = logits[i, j, 0]
                for k in range(1, c):
                    if logits[i, j, k] > best_v:
                        best_v = logits[i, j, k]
                        best = k
                out[i, j] = best
        return out

    @njit(cache=True, nogil=True)
    def _nb_softmax_ce_grad(logits, targets):
        b, p, c = logits.shape
        dlogits = np.empty_like(logits)
        loss_sum = 0.0
        for i in range(b):
            for j in range(p):
                m = logits[i, j, 0]
                for k in range(1, c):
                    if logits[i, j, k] > m:
                        m = logits[i, j, k]
                s = 0.0
                for k in range(c):
                    e = np.exp(logits[i, j, k] - m)
                    dlogits[i, j, k] = e
                    s += e
                t = targets[i, j]
                loss_sum += np.log(s) + m - logits[i, j, t]
                inv = 1.0 / s
                for k in range(c):
                    dlogits[i, j, k] *= inv
                dlogits[i, j, t] -= 1.0
        return loss_sum, dlogits


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMPY_IMPL = {
    "place_grid": _np_place_grid,
    "remap_colors": _np_remap_colors,
    "dihedral": _np_dihedral,
    "content_bbox": _np_content_bbox,
    "decode_cells": _np_decode_cells,
    "argmax_classes": _np_argmax_classes,
    "softmax_ce_grad": _np_softmax_ce_grad,
}

if backend.USE_NUMBA:
    NUMBA_IMPL = {
        "place_grid": _nb_place_grid,
        "remap_colors": _nb_remap_colors,
        "dihedral": _nb_dihedral,
        "content_bbox": _nb_content_bbox,
        "decode_cells": _nb_decode_cells,
        "argmax_classes": _nb_argmax_classes,
        "softmax_ce_grad": _nb_softmax_ce_grad,
    }
    _ACTIVE = NUMBA_IMPL
else:
    NUMBA_IMPL = None
    _ACTIVE = NUMPY_IMPL

place_grid = _ACTIVE["place_grid"]
remap_colors = _ACTIVE["remap_colors"]
dihedral = _ACTIVE["dihedral"]
content_bbox = _ACTIVE["content_bbox"]
decode_cells = _ACTIVE["decode_cells"]
argmax_classes = _ACTIVE["argmax_classes"]
softmax_ce_grad = _ACTIVE["softmax_ce_grad"]


def warm_kernels() -> None:
    """Trigger JIT compilation of every active kernel on tiny inputs."""
    g = np.array([[1, 2], [3, 4]], dtype=np.uint8)
    perm = np.arange(NUM_CLASSES, dtype=np.uint8)
    canvas = place_grid(g, 0, 0)
    remap_colors(canvas, perm)
    for code in range(8):
        dihedral(g, code)
    content_bbox(canvas)
    decode_cells(canvas)
    logits = np.zeros((1, CELLS, NUM_CLASSES), dtype=np.float64)
    targets = np.zeros((1, CELLS), dtype=np.uint8)
    argmax_classes(logits)
    softmax_ce_grad(logits, targets)
