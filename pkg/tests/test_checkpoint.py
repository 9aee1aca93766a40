"""Checkpoint container round trips and corruption handling."""

import numpy as np
import pytest

from plls import checkpoint
from plls.tensor import Tensor


def _params(rng):
    return [
        Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        Tensor(rng.standard_normal(7), requires_grad=True),
    ]


def test_round_trip(tmp_path, rng):
    params = _params(rng)
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {"kind": "test", "widths": [3, 4]}, params)
    desc, buffers = checkpoint.load_params(path)
    assert desc == {"kind": "test", "widths": [3, 4]}
    assert len(buffers) == 2
    np.testing.assert_array_equal(buffers[0], params[0].data.ravel())
    np.testing.assert_array_equal(buffers[1], params[1].data.ravel())


def test_assign_restores_values(tmp_path, rng):
    params = _params(rng)
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {}, params)
    fresh = [Tensor(np.zeros((3, 4))), Tensor(np.zeros(7))]
    _, buffers = checkpoint.load_params(path)
    checkpoint.assign_params(fresh, buffers)
    np.testing.assert_array_equal(fresh[0].data, params[0].data)
    np.testing.assert_array_equal(fresh[1].data, params[1].data)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.load_params(path)


def test_bad_version(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {}, _params(rng))
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load_params(path)


def test_truncated_buffer(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {}, _params(rng))
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.load_params(path)


def test_corrupt_descriptor(tmp_path):
    blob = b"{not json"
    import struct

    path = tmp_path / "model.ckpt"
    path.write_bytes(
        checkpoint.MAGIC + struct.pack("<I", checkpoint.VERSION)
        + struct.pack("<I", len(blob)) + blob
    )
    with pytest.raises(checkpoint.CheckpointError, match="descriptor"):
        checkpoint.load_params(path)


def test_assign_count_mismatch(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {}, _params(rng))
    _, buffers = checkpoint.load_params(path)
    with pytest.raises(checkpoint.CheckpointError, match="count"):
        checkpoint.assign_params([Tensor(np.zeros(3))], buffers)


def test_assign_size_mismatch(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    checkpoint.save_params(path, {}, _params(rng))
    _, buffers = checkpoint.load_params(path)
    with pytest.raises(checkpoint.CheckpointError, match="size"):
        checkpoint.assign_params([Tensor(np.zeros(5)), Tensor(np.zeros(7))], buffers)
