"""Gradient correctness against central finite differences.

The FD oracle evaluates the float64 loss with the carried latent states
frozen at their unperturbed values, because backward differentiates the
detach-between-steps objective. The full per-tensor sweep at the toy
acceptance config lives in test_acceptance; these tests cover the analytic
cross-checks and the reduction/indexing structure.
"""

import numpy as np
import pytest

from trmlab import model
from trmlab.arc_data import Grid
from trmlab.kernels import CELLS, NUM_CLASSES
from trmlab.model import ModelConfig, NonFiniteGradient, backward, init_params


def toy_batch(seed=0, tokens=(2, 0)):
    rng = np.random.default_rng(seed)
    batch = []
    for tok in tokens:
        g_in = Grid(rng.integers(0, 10, (4, 5)).astype(np.uint8))
        g_out = Grid(rng.integers(0, 10, (3, 4)).astype(np.uint8))
        batch.append((model.grid_to_canvas(g_in), tok, model.target_canvas(g_out)))
    return batch


def fd_check(params, batch, steps, samples_per_tensor, h=1e-4, seed=0):
    """Max relative error of backward vs central differences, per tensor."""
    _, grads, _ = backward(params, batch, steps)
    t64 = params.as_float64()
    carries = model.step_carries(params.cfg, t64, batch, steps)
    worst = {}
    for name, grad in grads.items():
        flat = t64[name].reshape(-1)
        rng = np.random.default_rng(seed + len(name))
        picks = rng.choice(flat.size, size=min(samples_per_tensor, flat.size), replace=False)
        errs = [0.0]
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss_float64(params.cfg, t64, batch, steps, carries)
            flat[i] = orig - h
            down = model.loss_float64(params.cfg, t64, batch, steps, carries)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grad.reshape(-1)[i]
            if abs(an) < 1e-12 and abs(fd) < 1e-10:
                continue
            errs.append(abs(an - fd) / max(abs(an), abs(fd), 1e-8))
        worst[name] = max(errs)
    return worst


def test_gradients_small_sample():
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=4, n_cycles=2, seed=1)
    params = init_params(cfg)
    worst = fd_check(params, toy_batch(), steps=2, samples_per_tensor=3)
    assert max(worst.values()) < 1e-3, worst


def test_decode_head_matches_analytic_softmax_ce():
    # with a zero decode head the logits vanish and the softmax is uniform,
    # so the decode-head gradient has the closed form sum_t y_t^T (1/11 - onehot) / (T*900)
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=4, n_cycles=3, seed=2)
    params = init_params(cfg)
    params.tensors["decode_head.weight"][:] = 0.0
    g_in = Grid(np.arange(12, dtype=np.uint8).reshape(3, 4) % 10)
    g_out = Grid(np.array([[1, 2], [3, 4]], dtype=np.uint8))
    batch = [(model.grid_to_canvas(g_in), 1, model.target_canvas(g_out))]
    steps = 3

    _, grads, _ = backward(params, batch, steps)
    trace = model.forward_recursive(params, model.grid_to_canvas(g_in), 1, steps)
    target = model.target_canvas(g_out).reshape(-1).astype(int)
    onehot = np.zeros((CELLS, NUM_CLASSES))
    onehot[np.arange(CELLS), target] = 1.0
    dlogits = (np.full((CELLS, NUM_CLASSES), 1.0 / NUM_CLASSES) - onehot) / (steps * CELLS)
    expected = sum(state.y.T @ dlogits for state in trace.steps)
    np.testing.assert_allclose(grads["decode_head.weight"], expected, rtol=1e-10, atol=1e-12)


def test_duplicated_example_mean_reduction():
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=4, n_cycles=2, seed=3)
    params = init_params(cfg)
    single = toy_batch(seed=5, tokens=(2,))
    _, g1, _ = backward(params, single, steps=2)
    _, g2, _ = backward(params, single * 2, steps=2)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], rtol=1e-12, atol=1e-15)


def test_blank_row_gradient_gating():
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=4, n_cycles=2, seed=4)
    params = init_params(cfg)
    with_blank = toy_batch(seed=6, tokens=(0, 2))
    without_blank = toy_batch(seed=6, tokens=(1, 2))
    _, g_with, _ = backward(params, with_blank, steps=2)
    _, g_without, _ = backward(params, without_blank, steps=2)
    assert np.abs(g_with["id_embedding"][0]).max() > 0.0
    assert np.abs(g_without["id_embedding"][0]).max() == 0.0


def test_non_finite_gradient_named():
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=4, n_cycles=2, seed=5)
    params = init_params(cfg)
    params.tensors["decode_head.weight"][0, 0] = np.nan
    with pytest.raises(NonFiniteGradient):
        backward(params, toy_batch(seed=7), steps=2)
