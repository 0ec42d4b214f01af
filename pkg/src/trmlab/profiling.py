"""Inference throughput, latency, and workspace footprint under the
evaluation pipeline.

One sample is one augmented-variant forward pass at the configured depth
(the ensemble pipeline's unit of work). Forward-only and pipeline-inclusive
figures are both reported: pipeline timing adds augmentation, decoding, and
inverse mapping around the model call. Peak workspace is the model's own
accounting of transient buffers (activations + candidate buffers, weights
excluded); device introspection is deliberately avoided so the number is
portable and self-consistent.
"""

from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from . import augmentation as aug_mod
from . import backend
from . import model as model_mod
from .arc_data import Dataset
from .augmentation import Augmentation
from .kernels import CELLS
from .model import Parameters
from .seeding import derive_seed

MIN_SAMPLES = 100


@dataclass(frozen=True)
class EfficiencyReport:
    throughput: float  # forward-only samples/second
    latency_ms: float  # forward-only ms/sample
    pipeline_throughput: float
    pipeline_latency_ms: float
    peak_workspace_bytes: int
    hardware: str
    batch_size: int
    n_samples: int
    steps: int
    warmup_batches: int

    def to_dict(self) -> dict:
        return {
            "throughput_samples_per_s": self.throughput,
            "latency_ms_per_sample": self.latency_ms,
            "pipeline_throughput_samples_per_s": self.pipeline_throughput,
            "pipeline_latency_ms_per_sample": self.pipeline_latency_ms,
            "peak_workspace_bytes": self.peak_workspace_bytes,
            "peak_workspace_gb": self.peak_workspace_bytes / 1024**3,
            "hardware": self.hardware,
            "batch_size": self.batch_size,
            "n_samples": self.n_samples,
            "steps": self.steps,
            "warmup_batches": self.warmup_batches,
        }


def _hardware_descriptor(workers: int = 1) -> str:
    return (
        f"{platform.machine()} {os.cpu_count()}-core "
        f"python{platform.python_version()} backend={backend.BACKEND} workers={workers}"
    )


def _sample_stream(dataset: Dataset, n: int, seed: int):
    """(augmentation, input grid) pairs cycling over the dataset's test
    inputs; the first variant of each input is the identity."""
    inputs = [pair.input for task in dataset.tasks for pair in task.tests]
    if not inputs:
        raise ValueError("dataset has no test inputs to profile on")
    out = []
    i = 0
    while len(out) < n:
        grid = inputs[i % len(inputs)]
        round_idx = i // len(inputs)
        if round_idx == 0:
            aug = Augmentation.identity()
        else:
            aug = aug_mod.sample(
                derive_seed(seed, "profile", i), (grid.height, grid.width)
            )
        out.append((aug, grid))
        i += 1
    return out


def profile_inference(
    params: Parameters,
    dataset: Dataset,
    steps: int,
    batch: int,
    n_samples: int,
    warmup: int = 1,
    seed: int = 0,
) -> EfficiencyReport:
    """Time batched forward passes over augmented variants.

    ``warmup`` batches run untimed first (JIT compilation, cache warming).
    Latency and throughput come from the same elapsed measurement, so their
    reciprocity is exact by construction.
    """
    if warmup < 1:
        raise ValueError("warmup must be >= 1 batch")
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}, got {n_samples}")
    if batch < 1:
        raise ValueError("batch must be >= 1")

    stream = _sample_stream(dataset, warmup * batch + n_samples, seed)
    warm, timed = stream[: warmup * batch], stream[warmup * batch :]

    def run(entries, measure: bool):
        fwd = 0.0
        pipe = 0.0
        for start in range(0, len(entries), batch):
            part = entries[start : start + batch]
            ta = time.perf_counter()
            canvases = np.stack([aug_mod.apply(a, g) for a, g in part])
            tokens = np.zeros(len(part), dtype=np.int64)
            tb = time.perf_counter()
            out = model_mod.forward_argmax_steps(params, canvases, tokens, steps)[-1]
            tc = time.perf_counter()
            for row, (a, _) in enumerate(part):
                aug_mod.restore_prediction(a, model_mod.decode_argmax_canvas(out[row]))
            td = time.perf_counter()
            if measure:
                fwd += tc - tb
                pipe += td - ta
        return fwd, pipe

    run(warm, measure=False)
    fwd_elapsed, pipe_elapsed = run(timed, measure=True)
    n = len(timed)

    workspace = model_mod.forward_workspace_bytes(params.cfg, batch, steps)
    workspace += batch * CELLS * (1 + steps)  # uint8 input canvases + per-step argmax

    return EfficiencyReport(
        throughput=n / fwd_elapsed,
        latency_ms=1000.0 * fwd_elapsed / n,
        pipeline_throughput=n / pipe_elapsed,
        pipeline_latency_ms=1000.0 * pipe_elapsed / n,
        peak_workspace_bytes=workspace,
        hardware=_hardware_descriptor(),
        batch_size=batch,
        n_samples=n,
        steps=steps,
        warmup_batches=warmup,
    )
