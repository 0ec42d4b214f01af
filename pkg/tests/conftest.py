import numpy as np
import pytest

from trmlab import kernels, model, training
from trmlab.arc_data import Dataset, ExamplePair, Grid, Task, build_vocabulary


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT-compile every active kernel before any timed assertion runs.
    kernels.warm_kernels()


def random_grid(rng, max_side=8):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    return Grid(rng.integers(0, 10, (h, w)).astype(np.uint8))


def make_tasks(n_tasks, demos=2, tests=1, seed=0, side=4):
    rng = np.random.default_rng(seed)

    def grid():
        return Grid(rng.integers(0, 10, (side, side)).astype(np.uint8))

    tasks = []
    for t in range(n_tasks):
        demo_pairs = tuple(ExamplePair(grid(), grid()) for _ in range(demos))
        test_pairs = tuple(ExamplePair(grid(), grid()) for _ in range(tests))
        tasks.append(Task(f"task{t:03d}", demo_pairs, test_pairs))
    return Dataset(tuple(tasks), "train")


def identity_rule_tasks(n_tasks, seed=0, side=4):
    """Tasks whose outputs equal their inputs (for equivariant-oracle stubs)."""
    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(n_tasks):
        g1 = Grid(rng.integers(0, 10, (side, side)).astype(np.uint8))
        g2 = Grid(rng.integers(0, 10, (side, side)).astype(np.uint8))
        tasks.append(Task(f"task{t:03d}", (ExamplePair(g1, g1),), (ExamplePair(g2, g2),)))
    return Dataset(tuple(tasks), "eval")


@pytest.fixture(scope="session")
def tiny_dataset():
    return make_tasks(4, demos=2, tests=1, seed=11)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_dataset):
    return build_vocabulary([tiny_dataset])


@pytest.fixture(scope="session")
def tiny_params(tiny_vocab):
    cfg = model.ModelConfig(
        d_model=16, trunk_layers=1, id_vocab_size=tiny_vocab.size, n_cycles=2, seed=9
    )
    return model.init_params(cfg)


@pytest.fixture(scope="session")
def trained_toy(tiny_dataset, tiny_vocab):
    """A briefly trained toy checkpoint shared across behavioral tests."""
    cfg = model.ModelConfig(
        d_model=16, trunk_layers=1, id_vocab_size=tiny_vocab.size, n_cycles=2, seed=9
    )
    tcfg = training.TrainConfig(
        regime="aug0", total_steps=40, batch_size=4, learning_rate=3e-3, seed=3, log_every=20
    )
    ckpt, _ = training.train(tcfg, cfg, tiny_dataset, tiny_vocab)
    return ckpt
