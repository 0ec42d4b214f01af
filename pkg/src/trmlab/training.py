"""From-scratch training under the canonical and heavy-augmentation regimes,
plus the early-checkpoint evaluation protocol.

The optimizer is Adam (0.9/0.999, eps 1e-8) with a constant learning rate
and global gradient-norm clipping at 1.0. Plain SGD with momentum stalls
on this objective: the VOID class dominates the per-cell loss, and once
the canvas background is classified the remaining gradient is orders of
magnitude too small for a constant step size. Parameters and both moment
buffers are stored float32 and updated through float64 math, so a
checkpoint is a lossless snapshot and resuming reproduces the continued
run bit-for-bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_mod
from . import serialization
from .arc_data import Dataset, Grid, PuzzleIdVocabulary
from .ensemble import as_predictor, sample_predictions
from .kernels import CELLS
from .metrics import PassReport, exact_match_task, pass_at_1, pass_at_k
from .model import ModelConfig, Parameters
from .seeding import rng_from

REGIMES = ("aug0", "aug1000")


class NonFiniteLoss(Exception):
    """Training loss became NaN or infinite; carries the step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "aug0"
    total_steps: int = 2500
    nominal_schedule: int = 778_000
    batch_size: int = 16
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    eval_k: int = 1000
    log_every: int = 50
    blank_token_prob: float = 0.0  # >0 mixes the blank id into batches

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.blank_token_prob <= 1.0:
            raise ValueError("blank_token_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "total_steps": self.total_steps,
            "nominal_schedule": self.nominal_schedule,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
            "eval_k": self.eval_k,
            "log_every": self.log_every,
            "blank_token_prob": self.blank_token_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class LogRow:
    step: int
    loss: float
    accuracy: float
    elapsed_s: float


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def append(self, row: LogRow):
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("log steps must be strictly increasing")
        self.rows.append(row)

    def csv_text(self) -> str:
        lines = ["step,loss,accuracy,elapsed_s"]
        for r in self.rows:
            lines.append(f"{r.step},{r.loss:.6f},{r.accuracy:.6f},{r.elapsed_s:.3f}")
        return "\n".join(lines) + "\n"

    def deterministic_rows(self) -> list:
        """The timing-free view used for bit-identical comparisons."""
        return [(r.step, r.loss, r.accuracy) for r in self.rows]


@dataclass
class CheckpointRecord:
    params: Parameters
    train_cfg: TrainConfig
    step: int
    rng_state: dict
    adam_m: dict
    adam_v: dict


@dataclass(frozen=True)
class TrainRecord:
    input: Grid
    output: Grid
    top: int
    left: int
    id_token: int


def training_records(dataset: Dataset, vocab: PuzzleIdVocabulary) -> list:
    """Flatten demonstration pairs into placed training records.

    Augmented pairs carry their descriptor's canvas offset; canonical pairs
    sit at the origin. Record order follows task order then pair order, so
    batch sampling is reproducible.
    """
    records = []
    for task in dataset.tasks:
        token = vocab.id_token(task.puzzle_key)
        descriptors = task.demo_augmentations or (None,) * len(task.demonstrations)
        for pair, aug in zip(task.demonstrations, descriptors):
            top, left = (aug.shift.dy, aug.shift.dx) if aug is not None else (0, 0)
            records.append(TrainRecord(pair.input, pair.output, top, left, token))
    return records


def _batch_from(records, idx, tokens) -> list:
    batch = []
    for i, tok in zip(idx, tokens):
        rec = records[i]
        batch.append(
            (
                model_mod.grid_to_canvas(rec.input, rec.top, rec.left),
                tok,
                model_mod.target_canvas(rec.output, rec.top, rec.left),
            )
        )
    return batch


def _batch_accuracy(argmax_canvases: np.ndarray, records, idx) -> float:
    hits = 0
    for row, i in enumerate(idx):
        rec = records[i]
        decoded = model_mod.decode_argmax_canvas(argmax_canvases[row])
        expected = model_mod.decode_argmax_canvas(
            model_mod.target_canvas(rec.output, rec.top, rec.left)
        )
        hits += decoded == expected
    return hits / len(idx)


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset: Dataset,
    vocab: PuzzleIdVocabulary,
    resume_from: CheckpointRecord | None = None,
):
    """Run seeded minibatch Adam on the deep-supervision loss at depth T.

    Returns (CheckpointRecord, TrainingLog). With ``resume_from`` the run
    continues from the checkpoint's parameters, moment buffers, and RNG
    state up to ``cfg.total_steps``, reproducing an uninterrupted run
    exactly.
    """
    records = training_records(dataset, vocab)
    if not records:
        raise ValueError("no training records")
    steps_t = model_cfg.n_cycles

    if resume_from is not None:
        params = resume_from.params.copy()
        adam_m = {k: v.copy() for k, v in resume_from.adam_m.items()}
        adam_v = {k: v.copy() for k, v in resume_from.adam_v.items()}
        rng = rng_from(cfg.seed)
        rng.bit_generator.state = resume_from.rng_state
        start_step = resume_from.step
    else:
        params = model_mod.init_params(model_cfg)
        adam_m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        adam_v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        rng = rng_from(cfg.seed)
        start_step = 0

    log = TrainingLog()
    t0 = time.perf_counter()
    for step in range(start_step + 1, cfg.total_steps + 1):
        idx = rng.integers(0, len(records), size=cfg.batch_size)
        tokens = [records[i].id_token for i in idx]
        if cfg.blank_token_prob > 0.0:
            coins = rng.random(cfg.batch_size)
            tokens = [0 if c < cfg.blank_token_prob else t for c, t in zip(coins, tokens)]
        batch = _batch_from(records, idx, tokens)
        try:
            loss, grads, aux = model_mod.backward(params, batch, steps_t)
        except model_mod.NonFiniteGradient as exc:
            raise NonFiniteLoss(step) from exc
        if not np.isfinite(loss):
            raise NonFiniteLoss(step)

        norm_sq = 0.0
        for g in grads.values():
            norm_sq += float((g * g).sum())
        scale = min(1.0, cfg.clip_norm / max(np.sqrt(norm_sq), 1e-12))
        bc1 = 1.0 - cfg.beta1**step
        bc2 = 1.0 - cfg.beta2**step
        for name, tensor in params.tensors.items():
            g = grads[name] * scale
            m64 = cfg.beta1 * adam_m[name].astype(np.float64) + (1.0 - cfg.beta1) * g
            v64 = cfg.beta2 * adam_v[name].astype(np.float64) + (1.0 - cfg.beta2) * g * g
            adam_m[name] = m64.astype(np.float32)
            adam_v[name] = v64.astype(np.float32)
            update = (m64 / bc1) / (np.sqrt(v64 / bc2) + cfg.adam_eps)
            tensor64 = tensor.astype(np.float64) - cfg.learning_rate * update
            params.tensors[name] = tensor64.astype(np.float32)

        if step % cfg.log_every == 0 or step == cfg.total_steps:
            acc = _batch_accuracy(aux["final_argmax"], records, idx)
            log.append(LogRow(step, loss, acc, time.perf_counter() - t0))

    ckpt = CheckpointRecord(
        params=params,
        train_cfg=cfg,
        step=cfg.total_steps,
        rng_state=rng.bit_generator.state,
        adam_m=adam_m,
        adam_v=adam_v,
    )
    return ckpt, log


def train_exact_match(
    params: Parameters, dataset: Dataset, vocab: PuzzleIdVocabulary, steps: int | None = None
) -> float:
    """Fraction of training records whose depth-T decoded grid matches the
    target exactly."""
    records = training_records(dataset, vocab)
    steps = steps or params.cfg.n_cycles
    hits = 0
    chunk = 64
    for start in range(0, len(records), chunk):
        part = records[start : start + chunk]
        canvases = np.stack(
            [model_mod.grid_to_canvas(r.input, r.top, r.left) for r in part]
        )
        tokens = np.array([r.id_token for r in part], dtype=np.int64)
        out = model_mod.forward_argmax_steps(params, canvases, tokens, steps)[-1]
        for row, rec in enumerate(part):
            decoded = model_mod.decode_argmax_canvas(out[row])
            expected = model_mod.decode_argmax_canvas(
                model_mod.target_canvas(rec.output, rec.top, rec.left)
            )
            hits += decoded == expected
    return hits / len(records)


def evaluate_early(
    ckpt,
    eval_dataset: Dataset,
    vocab: PuzzleIdVocabulary,
    eval_k: int | None = None,
    steps: int | None = None,
    seed: int = 0,
):
    """Early-checkpoint protocol: Pass@1 from the identity pass and Pass@K
    over K raw augmented samples (identity included as sample 1, no voting).

    Returns (PassReport pass@1, PassReport pass@K). Identity inclusion makes
    Pass@K >= Pass@1 by construction.
    """
    params = ckpt.params if isinstance(ckpt, CheckpointRecord) else ckpt
    predictor = as_predictor(params)
    k = eval_k if eval_k is not None else (
        ckpt.train_cfg.eval_k if isinstance(ckpt, CheckpointRecord) else 1000
    )
    if k < 1:
        raise ValueError("eval_k must be >= 1")
    run_steps = steps or params.cfg.n_cycles

    single_flags = []
    sample_sets = []
    for task in eval_dataset.tasks:
        samples = sample_predictions(
            predictor, task, vocab, seed=seed, k=k, steps=run_steps
        )
        single_flags.append(exact_match_task(samples[0], task))
        sample_sets.append(samples)
    p1 = pass_at_1(single_flags, mode=f"single_identity(steps={run_steps})", seed=seed)
    pk = pass_at_k(
        sample_sets, eval_dataset, mode=f"raw_samples(K={k},steps={run_steps})", seed=seed
    )
    return p1, pk


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


def save_checkpoint(path, ckpt: CheckpointRecord) -> None:
    """Weight container with parameter + optimizer moment tensors, plus a
    JSON sidecar carrying the train config, step index, and RNG state."""
    path = Path(path)
    tensors = dict(ckpt.params.tensors)
    tensors.update({f"adam_m.{k}": v for k, v in ckpt.adam_m.items()})
    tensors.update({f"adam_v.{k}": v for k, v in ckpt.adam_v.items()})
    serialization.save_tensors(
        path, tensors, {"format": 1, "model": ckpt.params.cfg.to_dict()}
    )
    sidecar = {
        "train_cfg": ckpt.train_cfg.to_dict(),
        "step": ckpt.step,
        "rng_state": _encode_rng(ckpt.rng_state),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def load_checkpoint(path) -> CheckpointRecord:
    path = Path(path)
    tensors, fields = serialization.load_tensors(path)
    cfg = ModelConfig.from_dict(fields["model"])
    adam_m = {}
    adam_v = {}
    params_tensors = {}
    for name, arr in tensors.items():
        if name.startswith("adam_m."):
            adam_m[name[len("adam_m."):]] = arr
        elif name.startswith("adam_v."):
            adam_v[name[len("adam_v."):]] = arr
        else:
            params_tensors[name] = arr
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return CheckpointRecord(
        params=Parameters(cfg, params_tensors),
        train_cfg=TrainConfig.from_dict(sidecar["train_cfg"]),
        step=int(sidecar["step"]),
        rng_state=_decode_rng(sidecar["rng_state"]),
        adam_m=adam_m,
        adam_v=adam_v,
    )


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds ints larger than 2**64; JSON handles them natively
    return {
        "bit_generator": state["bit_generator"],
        "state": {"state": state["state"]["state"], "inc": state["state"]["inc"]},
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _decode_rng(enc: dict) -> dict:
    return {
        "bit_generator": enc["bit_generator"],
        "state": {"state": int(enc["state"]["state"]), "inc": int(enc["state"]["inc"])},
        "has_uint32": int(enc["has_uint32"]),
        "uinteger": int(enc["uinteger"]),
    }
