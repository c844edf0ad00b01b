"""Binary parameter container: bit-exact round trip and corruption handling."""

import numpy as np
import pytest

from molfuse.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_bits_and_config(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "encoder/atom_embed": rng.normal(size=(5, 8)),
        "encoder/iter0.filter_w1": rng.normal(size=(8, 8)),
        "fusion/W_g": rng.normal(size=(8, 8)),
        "fusion/gate_b": rng.normal(size=8),
    }
    config = {"n": 8, "K": 8, "T": 1, "cutoff": 5.0}
    path = tmp_path / "params.bin"
    save_checkpoint(path, arrays, config)
    loaded, loaded_config = load_checkpoint(path)
    assert loaded_config == config
    assert list(loaded) == list(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == arr.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "v9.bin"
    save_checkpoint(path, {}, {})
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "t.bin"
    save_checkpoint(path, {"a": np.zeros(2)}, {})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
