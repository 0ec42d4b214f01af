import numpy as np
import pytest

from trmlab import model, serialization, training
from trmlab.model import ModelConfig, init_params
from trmlab.serialization import WeightFormatError, load_params, load_tensors, save_params, save_tensors

from conftest import make_tasks
from trmlab.arc_data import build_vocabulary


def test_params_round_trip_bit_exact(tmp_path):
    cfg = ModelConfig(d_model=16, trunk_layers=2, id_vocab_size=9, n_cycles=4, seed=12)
    params = init_params(cfg)
    path = tmp_path / "m.weights"
    save_params(path, params)
    loaded = load_params(path)
    assert loaded.cfg == cfg
    for name in params.tensors:
        assert np.array_equal(loaded.tensors[name], params.tensors[name])
        assert loaded.tensors[name].dtype == np.float32


def test_save_load_save_identical_bytes(tmp_path):
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=3, n_cycles=2, seed=1)
    p1 = tmp_path / "a.weights"
    p2 = tmp_path / "b.weights"
    save_params(p1, init_params(cfg))
    save_params(p2, load_params(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.weights"
    path.write_bytes(b"not a weight file")
    with pytest.raises(WeightFormatError):
        load_tensors(path)


def test_truncated_file_rejected(tmp_path):
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=3, n_cycles=2, seed=1)
    path = tmp_path / "m.weights"
    save_params(path, init_params(cfg))
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(WeightFormatError):
        load_tensors(path)


def test_trailing_bytes_rejected(tmp_path):
    cfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=3, n_cycles=2, seed=1)
    path = tmp_path / "m.weights"
    save_params(path, init_params(cfg))
    path.write_bytes(path.read_bytes() + b"extra")
    with pytest.raises(WeightFormatError):
        load_tensors(path)


def test_non_float32_rejected(tmp_path):
    with pytest.raises(WeightFormatError):
        save_tensors(tmp_path / "x.weights", {"a": np.zeros(3)}, {})


def test_checkpoint_round_trip(tmp_path):
    ds = make_tasks(3, seed=21)
    vocab = build_vocabulary([ds])
    mcfg = ModelConfig(d_model=8, trunk_layers=1, id_vocab_size=vocab.size, n_cycles=2, seed=2)
    tcfg = training.TrainConfig(regime="aug0", total_steps=5, batch_size=2, seed=8, log_every=5)
    ckpt, _ = training.train(tcfg, mcfg, ds, vocab)
    path = tmp_path / "ckpt.weights"
    training.save_checkpoint(path, ckpt)
    loaded = training.load_checkpoint(path)
    assert loaded.step == ckpt.step
    assert loaded.train_cfg == ckpt.train_cfg
    assert loaded.rng_state == ckpt.rng_state
    for name in ckpt.params.tensors:
        assert np.array_equal(loaded.params.tensors[name], ckpt.params.tensors[name])
        assert np.array_equal(loaded.adam_m[name], ckpt.adam_m[name])
        assert np.array_equal(loaded.adam_v[name], ckpt.adam_v[name])
