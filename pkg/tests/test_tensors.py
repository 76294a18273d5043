import numpy as np
import pytest

from aocstream.tensors import (ActivationTensor, WeightTensor, decode_dump, encode_dump,
                               load_activation, load_weights, save_activation, save_weights)


def test_activation_dump_round_trip(tmp_path):
    vals = np.arange(-60, 60).reshape(3, 5, 8)
    t = ActivationTensor(vals, 8, -7)
    save_activation(t, tmp_path / "a.act")
    assert load_activation(tmp_path / "a.act") == t


def test_header_is_readable_text():
    blob = encode_dump(np.zeros((2, 1, 1)), 10, -9)
    head = blob.split(b"\n", 1)[0].decode()
    assert head.startswith("aocstream-tensor/1 kind=activation shape=2,1,1 bits=10 scale_exp=-9")
    assert "dtype=<i2" in head


def test_weights_with_bias_round_trip(tmp_path):
    w = WeightTensor(np.full((4, 2, 3, 3), -5), np.array([1, -2, 3, 1 << 20]), -7, -3)
    path = str(tmp_path / "w.bin")
    save_weights(w, path)
    assert load_weights(path) == w


def test_truncated_dump_rejected():
    blob = encode_dump(np.ones((2, 2, 2)), 8, 0)
    with pytest.raises(ValueError):
        decode_dump(blob[:-1])
    with pytest.raises(ValueError):
        decode_dump(b"garbage\n")


def test_range_checked():
    with pytest.raises(ValueError):
        ActivationTensor(np.full((1, 1, 1), 128), 8, 0)
    ActivationTensor(np.full((1, 1, 1), 511), 10, 0)
