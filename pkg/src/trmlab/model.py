"""Tiny recursive grid model: parameters, recursive forward pass with
per-step decodable state, deep-supervision loss, and hand-derived gradients.

The model embeds a 30x30 canvas (cell colors + VOID), a learned position
table, and a puzzle-identity embedding, then runs a shared trunk for a
number of latent cycles. Each cycle updates the reasoning state ``z`` from
the input injection and then the answer state ``y`` from ``z``; logits are
decoded from ``y`` after every cycle, so any trace prefix is a valid
shallower run.

The trunk is a mixer-style stack: per layer, a row/column position mixing
and a two-layer channel MLP, each wrapped in a residual connection with a
post-residual RMS norm (post-norm keeps latent magnitudes bounded no
matter how many cycles run). Deep supervision averages the per-cell
cross-entropy over all cycles; gradients do not flow across cycle
boundaries (latent states are detached between supervised steps), which
keeps memory flat in the number of cycles.

Parameters are stored float32 (so weight files round-trip bit-exactly);
all math runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .arc_data import Grid
from .kernels import CELLS, NUM_CLASSES, SIDE, VOID

RMS_EPS = 1e-6


class UnknownIdToken(Exception):
    """The identity token is outside the embedding table."""


class NonFiniteGradient(Exception):
    """A gradient tensor contains NaN or infinity."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    trunk_layers: int
    id_vocab_size: int
    n_cycles: int = 4
    mlp_ratio: int = 2
    seed: int = 0
    # fixed by the task family; kept explicit so weight headers are complete
    canvas_side: int = SIDE
    cell_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.d_model < 8:
            raise ValueError("d_model must be >= 8")
        if self.trunk_layers < 1:
            raise ValueError("trunk_layers must be >= 1")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")
        if self.id_vocab_size < 1:
            raise ValueError("id_vocab_size must be >= 1")
        if self.canvas_side != SIDE or self.cell_classes != NUM_CLASSES:
            raise ValueError("canvas geometry is fixed at 30x30 with 11 cell classes")

    @property
    def d_hidden(self) -> int:
        return self.mlp_ratio * self.d_model

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "trunk_layers": self.trunk_layers,
            "id_vocab_size": self.id_vocab_size,
            "n_cycles": self.n_cycles,
            "mlp_ratio": self.mlp_ratio,
            "seed": self.seed,
            "canvas_side": self.canvas_side,
            "cell_classes": self.cell_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered name -> shape map for every parameter tensor."""
    d, h = cfg.d_model, cfg.d_hidden
    shapes = {
        "cell_embedding": (NUM_CLASSES, d),
        "position_embedding": (CELLS, d),
        "id_embedding": (cfg.id_vocab_size, d),
    }
    for l in range(cfg.trunk_layers):
        shapes[f"layers.{l}.norm_mix.gain"] = (d,)
        shapes[f"layers.{l}.row_mix.weight"] = (SIDE, SIDE)
        shapes[f"layers.{l}.col_mix.weight"] = (SIDE, SIDE)
        shapes[f"layers.{l}.norm_mlp.gain"] = (d,)
        shapes[f"layers.{l}.mlp.w_in"] = (d, h)
        shapes[f"layers.{l}.mlp.w_out"] = (h, d)
    shapes["decode_head.weight"] = (d, NUM_CLASSES)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def config_for_param_budget(
    target: int,
    trunk_layers: int = 2,
    id_vocab_size: int = 1201,
    n_cycles: int = 4,
    seed: int = 0,
) -> ModelConfig:
    """Pick d_model (multiple of 8) so the parameter count lands nearest
    the target budget."""
    best = None
    for d in range(8, 4097, 8):
        cfg = ModelConfig(
            d_model=d,
            trunk_layers=trunk_layers,
            id_vocab_size=id_vocab_size,
            n_cycles=n_cycles,
            seed=seed,
        )
        gap = abs(param_count(cfg) - target)
        if best is None or gap < best[0]:
            best = (gap, cfg)
    return best[1]


class Parameters:
    """Named float32 tensors plus the config they were built for."""

    def __init__(self, cfg: ModelConfig, tensors: dict):
        expected = param_shapes(cfg)
        if set(tensors) != set(expected):
            missing = set(expected) ^ set(tensors)
            raise ValueError(f"parameter names do not match config: {sorted(missing)}")
        for name, arr in tensors.items():
            if arr.shape != expected[name]:
                raise ValueError(
                    f"{name}: shape {arr.shape} != expected {expected[name]}"
                )
            if arr.dtype != np.float32:
                raise ValueError(f"{name}: dtype must be float32, got {arr.dtype}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name}: non-finite values")
        self.cfg = cfg
        self.tensors = tensors

    def copy(self) -> "Parameters":
        return Parameters(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def as_float64(self) -> dict:
        return {k: v.astype(np.float64) for k, v in self.tensors.items()}


def init_params(cfg: ModelConfig) -> Parameters:
    """Seed-deterministic initialization: zero-mean normals scaled by the
    tensor's fan-in, unit normalization gains."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    d, h = cfg.d_model, cfg.d_hidden
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            arr = np.ones(shape, dtype=np.float64)
        elif "row_mix" in name or "col_mix" in name:
            arr = rng.normal(0.0, 1.0 / math.sqrt(SIDE), shape)
        elif name.endswith("mlp.w_out"):
            arr = rng.normal(0.0, 1.0 / math.sqrt(h), shape)
        else:
            arr = rng.normal(0.0, 1.0 / math.sqrt(d), shape)
        tensors[name] = arr.astype(np.float32)
    return Parameters(cfg, tensors)


# ---------------------------------------------------------------------------
# canvas helpers
# ---------------------------------------------------------------------------


def grid_to_canvas(g: Grid, top: int = 0, left: int = 0) -> np.ndarray:
    return kernels.place_grid(g.cells, top, left)


def as_canvas(x) -> np.ndarray:
    if isinstance(x, Grid):
        return grid_to_canvas(x)
    if isinstance(x, np.ndarray) and x.shape == (SIDE, SIDE) and x.dtype == np.uint8:
        return x
    raise TypeError("expected a Grid or a 30x30 uint8 canvas")


def decode_argmax_canvas(canvas: np.ndarray) -> Grid:
    """Decode an argmax-class canvas to a Grid: keep the top-left box up to
    the last non-VOID row/column, mapping interior VOID cells to color 0.
    An all-VOID canvas decodes to the 1x1 zero grid."""
    return Grid(kernels.decode_cells(canvas))


def decode_canvas(logits: np.ndarray) -> Grid:
    """Per-cell argmax over the 11 classes, then bounding-box decode."""
    if logits.shape != (CELLS, NUM_CLASSES):
        raise ValueError(f"logits must be {CELLS}x{NUM_CLASSES}, got {logits.shape}")
    classes = kernels.argmax_classes(logits[None].astype(np.float64))[0]
    return decode_argmax_canvas(classes.reshape(SIDE, SIDE))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _rms_stats(x: np.ndarray) -> np.ndarray:
    return 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)


def _rms_backward(x, r, gain, dy):
    s = (dy * gain * x).sum(axis=-1, keepdims=True)
    d = x.shape[-1]
    return dy * gain * r - x * (r**3) * s / d


def _trunk_forward(t64: dict, cfg: ModelConfig, h: np.ndarray, tape: list | None):
    # Per layer (post-norm): h <- norm(h + mix(h)) * g1; h <- norm(h + mlp(h)) * g2
    b = h.shape[0]
    d = cfg.d_model
    for l in range(cfg.trunk_layers):
        g1 = t64[f"layers.{l}.norm_mix.gain"]
        w_row = t64[f"layers.{l}.row_mix.weight"]
        w_col = t64[f"layers.{l}.col_mix.weight"]
        g2 = t64[f"layers.{l}.norm_mlp.gain"]
        w_in = t64[f"layers.{l}.mlp.w_in"]
        w_out = t64[f"layers.{l}.mlp.w_out"]

        h4 = h.reshape(b, SIDE, SIDE, d)
        m1 = (w_row @ h4.reshape(b, SIDE, SIDE * d)).reshape(b, SIDE, SIDE, d)
        m2 = (w_col @ m1.reshape(b * SIDE, SIDE, d)).reshape(b, SIDE, SIDE, d)
        p1 = h + m2.reshape(b, CELLS, d)
        r1 = _rms_stats(p1)
        a = p1 * r1 * g1

        u = (a.reshape(-1, d) @ w_in).reshape(b, CELLS, cfg.d_hidden)
        v = np.tanh(u)
        p2 = a + (v.reshape(-1, cfg.d_hidden) @ w_out).reshape(b, CELLS, d)
        r2 = _rms_stats(p2)
        h_out = p2 * r2 * g2

        if tape is not None:
            tape.append(
                {"h_in": h, "m1": m1, "p1": p1, "r1": r1, "a": a, "v": v,
                 "p2": p2, "r2": r2}
            )
        h = h_out
    return h


def _trunk_backward(t64: dict, cfg: ModelConfig, tape: list, dh: np.ndarray, grads: dict):
    b = dh.shape[0]
    d = cfg.d_model
    for l in reversed(range(cfg.trunk_layers)):
        rec = tape[l]
        g1 = t64[f"layers.{l}.norm_mix.gain"]
        w_row = t64[f"layers.{l}.row_mix.weight"]
        w_col = t64[f"layers.{l}.col_mix.weight"]
        g2 = t64[f"layers.{l}.norm_mlp.gain"]
        w_in = t64[f"layers.{l}.mlp.w_in"]
        w_out = t64[f"layers.{l}.mlp.w_out"]

        # h_out = p2 * r2 * g2
        grads[f"layers.{l}.norm_mlp.gain"] += (dh * rec["p2"] * rec["r2"]).sum(axis=(0, 1))
        dp2 = _rms_backward(rec["p2"], rec["r2"], g2, dh)

        # p2 = a + tanh(a @ w_in) @ w_out
        grads[f"layers.{l}.mlp.w_out"] += (
            rec["v"].reshape(-1, cfg.d_hidden).T @ dp2.reshape(-1, d)
        )
        dv = (dp2.reshape(-1, d) @ w_out.T).reshape(b, CELLS, cfg.d_hidden)
        du = dv * (1.0 - rec["v"] * rec["v"])
        grads[f"layers.{l}.mlp.w_in"] += rec["a"].reshape(-1, d).T @ du.reshape(-1, cfg.d_hidden)
        da = dp2 + (du.reshape(-1, cfg.d_hidden) @ w_in.T).reshape(b, CELLS, d)

        # a = p1 * r1 * g1
        grads[f"layers.{l}.norm_mix.gain"] += (da * rec["p1"] * rec["r1"]).sum(axis=(0, 1))
        dp1 = _rms_backward(rec["p1"], rec["r1"], g1, da)

        # p1 = h_in + col_mix(row_mix(h_in))
        dm2 = dp1.reshape(b, SIDE, SIDE, d)
        grads[f"layers.{l}.col_mix.weight"] += np.tensordot(
            dm2, rec["m1"], axes=([0, 1, 3], [0, 1, 3])
        )
        dm1 = (w_col.T @ dm2.reshape(b * SIDE, SIDE, d)).reshape(b, SIDE, SIDE, d)
        h4 = rec["h_in"].reshape(b, SIDE, SIDE, d)
        grads[f"layers.{l}.row_mix.weight"] += np.tensordot(
            dm1, h4, axes=([0, 2, 3], [0, 2, 3])
        )
        dh = dp1 + (w_row.T @ dm1.reshape(b, SIDE, SIDE * d)).reshape(b, CELLS, d)
    return dh


def _embed(t64: dict, cfg: ModelConfig, canvases: np.ndarray, id_tokens: np.ndarray):
    # canvases [B, 900] uint8 (VOID included), id_tokens [B]
    x = t64["cell_embedding"][canvases.astype(np.int64)]
    x = x + t64["position_embedding"][None, :, :]
    x = x + t64["id_embedding"][id_tokens][:, None, :]
    return x


def _check_tokens(cfg: ModelConfig, id_tokens: np.ndarray):
    bad = (id_tokens < 0) | (id_tokens >= cfg.id_vocab_size)
    if bad.any():
        tok = int(np.asarray(id_tokens)[bad][0])
        raise UnknownIdToken(
            f"id token {tok} outside vocabulary of size {cfg.id_vocab_size}"
        )


@dataclass(frozen=True)
class StepState:
    """Decodable model state after one recursion step."""

    y: np.ndarray
    z: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class StepTrace:
    """Per-step states for one input; entry t depends only on entries < t."""

    steps: tuple

    def __len__(self) -> int:
        return len(self.steps)

    def logits_at(self, depth: int) -> np.ndarray:
        return self.steps[depth - 1].logits


def forward_recursive(params: Parameters, input_canvas, id_token: int, steps: int) -> StepTrace:
    """Run the recursion for one input, keeping every step's state.

    ``steps`` may exceed the training depth; extra steps are genuine extra
    trunk applications on the same shared weights.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = params.cfg
    tokens = np.array([id_token], dtype=np.int64)
    _check_tokens(cfg, tokens)
    canvas = as_canvas(input_canvas).reshape(1, CELLS)
    t64 = params.as_float64()
    x = _embed(t64, cfg, canvas, tokens)
    w_dec = t64["decode_head.weight"]

    y = np.zeros_like(x)
    z = np.zeros_like(x)
    out = []
    for _ in range(steps):
        z = _trunk_forward(t64, cfg, x + y + z, tape=None)
        y = _trunk_forward(t64, cfg, y + z, tape=None)
        logits = (y.reshape(-1, cfg.d_model) @ w_dec).reshape(1, CELLS, NUM_CLASSES)
        out.append(StepState(y=y[0].copy(), z=z[0].copy(), logits=logits[0].copy()))
    return StepTrace(steps=tuple(out))


def forward_argmax_steps(
    params: Parameters, canvases: np.ndarray, id_tokens: np.ndarray, steps: int
) -> np.ndarray:
    """Batched inference path: per-step argmax canvases [steps, B, 30, 30].

    Latent states are discarded; use forward_recursive when the trace
    itself is needed.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = params.cfg
    id_tokens = np.asarray(id_tokens, dtype=np.int64)
    _check_tokens(cfg, id_tokens)
    b = canvases.shape[0]
    flat = canvases.reshape(b, CELLS)
    t64 = params.as_float64()
    x = _embed(t64, cfg, flat, id_tokens)
    w_dec = t64["decode_head.weight"]

    y = np.zeros_like(x)
    z = np.zeros_like(x)
    out = np.empty((steps, b, SIDE, SIDE), dtype=np.uint8)
    for t in range(steps):
        z = _trunk_forward(t64, cfg, x + y + z, tape=None)
        y = _trunk_forward(t64, cfg, y + z, tape=None)
        logits = (y.reshape(-1, cfg.d_model) @ w_dec).reshape(b, CELLS, NUM_CLASSES)
        out[t] = kernels.argmax_classes(np.ascontiguousarray(logits)).reshape(b, SIDE, SIDE)
    return out


def target_canvas(target: Grid, top: int = 0, left: int = 0) -> np.ndarray:
    """Class canvas for the loss: the target placed on the canvas, VOID
    elsewhere."""
    return kernels.place_grid(target.cells, top, left)


def deep_supervision_loss(trace: StepTrace, target) -> float:
    """Mean over steps of mean-per-cell cross-entropy against the target
    canvas (a Grid is placed top-left)."""
    if len(trace) == 0:
        raise ValueError("trace is empty")
    tgt = as_canvas(target) if isinstance(target, (Grid, np.ndarray)) else None
    if tgt is None:
        raise TypeError("target must be a Grid or canvas")
    tgt_flat = tgt.reshape(1, CELLS)
    total = 0.0
    for state in trace.steps:
        loss_sum, _ = kernels.softmax_ce_grad(
            np.ascontiguousarray(state.logits[None]), tgt_flat
        )
        total += loss_sum
    return total / (len(trace) * CELLS)


def backward(params: Parameters, batch: list, steps: int):
    """Gradients of the deep-supervision loss for a batch.

    ``batch`` is a sequence of (input canvas, id_token, target canvas)
    triples. Returns (mean loss, grads, aux); grads is a name -> float64
    array map with the Parameters layout, aux carries per-step losses and
    the final-step argmax canvases. Latent state is detached between
    supervised steps. Raises NonFiniteGradient naming the first offending
    tensor.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = params.cfg
    b = len(batch)
    if b == 0:
        raise ValueError("empty batch")
    canvases = np.stack([as_canvas(rec[0]).reshape(CELLS) for rec in batch])
    id_tokens = np.array([rec[1] for rec in batch], dtype=np.int64)
    targets = np.stack([as_canvas(rec[2]).reshape(CELLS) for rec in batch])
    _check_tokens(cfg, id_tokens)

    t64 = params.as_float64()
    w_dec = t64["decode_head.weight"]
    x = _embed(t64, cfg, canvases, id_tokens)

    # forward, taping each supervised step separately
    y = np.zeros_like(x)
    z = np.zeros_like(x)
    records = []
    for _ in range(steps):
        tape1: list = []
        z_new = _trunk_forward(t64, cfg, x + y + z, tape=tape1)
        tape2: list = []
        y_new = _trunk_forward(t64, cfg, y + z_new, tape=tape2)
        logits = (y_new.reshape(-1, cfg.d_model) @ w_dec).reshape(b, CELLS, NUM_CLASSES)
        records.append((tape1, tape2, y_new, logits))
        y, z = y_new, z_new

    grads = {name: np.zeros(shape, dtype=np.float64) for name, shape in param_shapes(cfg).items()}
    denom = float(steps * b * CELLS)
    step_losses = []
    dx_total = np.zeros_like(x)
    for tape1, tape2, y_new, logits in records:
        loss_sum, dlogits = kernels.softmax_ce_grad(np.ascontiguousarray(logits), targets)
        step_losses.append(loss_sum / (b * CELLS))
        dlogits = dlogits / denom
        grads["decode_head.weight"] += (
            y_new.reshape(-1, cfg.d_model).T @ dlogits.reshape(-1, NUM_CLASSES)
        )
        dy = (dlogits.reshape(-1, NUM_CLASSES) @ w_dec.T).reshape(b, CELLS, cfg.d_model)
        ds2 = _trunk_backward(t64, cfg, tape2, dy, grads)
        ds1 = _trunk_backward(t64, cfg, tape1, ds2, grads)
        dx_total += ds1

    grads["position_embedding"] += dx_total.sum(axis=0)
    np.add.at(
        grads["cell_embedding"],
        canvases.reshape(-1).astype(np.int64),
        dx_total.reshape(-1, cfg.d_model),
    )
    np.add.at(grads["id_embedding"], id_tokens, dx_total.sum(axis=1))

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(name)
    loss = float(sum(step_losses) / steps)
    final_argmax = kernels.argmax_classes(
        np.ascontiguousarray(records[-1][3])
    ).reshape(b, SIDE, SIDE)
    aux = {"step_losses": step_losses, "final_argmax": final_argmax}
    return loss, grads, aux


def step_carries(cfg: ModelConfig, tensors64: dict, batch: list, steps: int) -> list:
    """Carried (y, z) states entering each supervised step, computed at the
    given tensors. These are the detachment points of :func:`backward`."""
    b = len(batch)
    canvases = np.stack([as_canvas(rec[0]).reshape(CELLS) for rec in batch])
    id_tokens = np.array([rec[1] for rec in batch], dtype=np.int64)
    x = _embed(tensors64, cfg, canvases, id_tokens)
    y = np.zeros_like(x)
    z = np.zeros_like(x)
    carries = []
    for _ in range(steps):
        carries.append((y, z))
        z = _trunk_forward(tensors64, cfg, x + y + z, tape=None)
        y = _trunk_forward(tensors64, cfg, y + z, tape=None)
    return carries


def loss_float64(
    cfg: ModelConfig, tensors64: dict, batch: list, steps: int, carries: list | None = None
) -> float:
    """Deep-supervision loss evaluated directly on float64 tensors.

    This is the evaluation point for finite-difference gradient checks:
    perturbations stay in float64 instead of being quantized through the
    float32 parameter storage. When ``carries`` (from :func:`step_carries`
    at the unperturbed point) is given, each step starts from those frozen
    latent states, matching the detach-between-steps semantics that
    :func:`backward` differentiates; without it the fully unrolled loss is
    returned (identical value at the unperturbed point).
    """
    b = len(batch)
    canvases = np.stack([as_canvas(rec[0]).reshape(CELLS) for rec in batch])
    id_tokens = np.array([rec[1] for rec in batch], dtype=np.int64)
    targets = np.stack([as_canvas(rec[2]).reshape(CELLS) for rec in batch])
    x = _embed(tensors64, cfg, canvases, id_tokens)
    w_dec = tensors64["decode_head.weight"]
    y = np.zeros_like(x)
    z = np.zeros_like(x)
    total = 0.0
    for t in range(steps):
        if carries is not None:
            y, z = carries[t]
        z_new = _trunk_forward(tensors64, cfg, x + y + z, tape=None)
        y_new = _trunk_forward(tensors64, cfg, y + z_new, tape=None)
        logits = (y_new.reshape(-1, cfg.d_model) @ w_dec).reshape(b, CELLS, NUM_CLASSES)
        loss_sum, _ = kernels.softmax_ce_grad(np.ascontiguousarray(logits), targets)
        total += loss_sum
        y, z = y_new, z_new
    return total / (steps * b * CELLS)


def batch_argmax_last(params: Parameters, batch: list, steps: int) -> np.ndarray:
    """Final-step argmax canvases for a batch of (canvas, id_token, _) records."""
    canvases = np.stack([as_canvas(rec[0]) for rec in batch])
    id_tokens = np.array([rec[1] for rec in batch], dtype=np.int64)
    return forward_argmax_steps(params, canvases, id_tokens, steps)[-1]


def forward_workspace_bytes(
    cfg: ModelConfig, batch: int, steps: int, with_trace: bool = False
) -> int:
    """Accounting of the transient float64 buffers one forward pass holds
    (excluding weights): embeddings, latent states, per-layer temporaries,
    logits, and, when taping for training, the per-step tapes."""
    d, h = cfg.d_model, cfg.d_hidden
    f8 = 8
    base = batch * CELLS * d * f8  # x embedding
    base += 2 * batch * CELLS * d * f8  # y, z
    layer_tmp = batch * CELLS * (4 * d + 2 * h + 2) * f8  # a4/m1/m2/bn + u/v + r1/r2
    base += layer_tmp  # one layer's temporaries live at a time without taping
    base += batch * CELLS * NUM_CLASSES * f8  # logits
    if with_trace:
        base += steps * 2 * cfg.trunk_layers * layer_tmp  # two taped trunk runs per step
        base += steps * batch * CELLS * (2 * d + NUM_CLASSES) * f8
    return base
