import numpy as np
import pytest

from hierasurg import tensorio
from hierasurg.errors import IntegrityError


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "u1", "<u2"])
def test_round_trip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    if dtype in ("u1", "<u2"):
        arr = rng.integers(0, 250, size=(3, 5, 7)).astype(dtype)
    else:
        arr = rng.standard_normal((3, 5, 7)).astype(dtype)
    p = tmp_path / "t.hstn"
    tensorio.write_tensor(p, arr)
    back = tensorio.read_tensor(p)
    assert back.dtype == np.dtype(dtype)
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_scalar_and_empty(tmp_path):
    for arr in (np.float64(3.5).reshape(()), np.zeros((0, 4), dtype="<f4")):
        p = tmp_path / "s.hstn"
        tensorio.write_tensor(p, np.asarray(arr))
        back = tensorio.read_tensor(p)
        assert back.shape == np.asarray(arr).shape
        np.testing.assert_array_equal(back, arr)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "t.hstn"
    tensorio.write_tensor(p, np.ones((2, 2), dtype="<f4"))
    raw = bytearray(p.read_bytes())
    raw[0] = ord("X")
    p.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        tensorio.read_tensor(p)


def test_truncation_rejected(tmp_path):
    p = tmp_path / "t.hstn"
    tensorio.write_tensor(p, np.ones((4, 4), dtype="<f8"))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(IntegrityError):
        tensorio.read_tensor(p)


def test_trailing_bytes_rejected(tmp_path):
    p = tmp_path / "t.hstn"
    tensorio.write_tensor(p, np.ones(3, dtype="u1"))
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(IntegrityError):
        tensorio.read_tensor(p)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    tensors = {
        "w.weight": rng.standard_normal((8, 3)).astype("<f4"),
        "w.bias": rng.standard_normal(8).astype("<f4"),
        "step": np.array([42], dtype="<f8"),
    }
    header = {"seed": 11, "loss": 0.25}
    p = tmp_path / "model.ckpt"
    tensorio.write_checkpoint(p, header, tensors)
    head, back = tensorio.read_checkpoint(p)
    assert head["seed"] == 11
    assert head["tensor_names"] == list(tensors)
    for name, arr in tensors.items():
        assert back[name].tobytes() == arr.tobytes()


def test_checkpoint_truncation_rejected(tmp_path):
    p = tmp_path / "model.ckpt"
    tensorio.write_checkpoint(p, {}, {"a": np.ones((16,), dtype="<f4")})
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(IntegrityError):
        tensorio.read_checkpoint(p)


def test_atomic_write_leaves_no_tmp(tmp_path):
    p = tmp_path / "t.hstn"
    tensorio.write_tensor(p, np.zeros(4, dtype="<f4"))
    assert [f.name for f in tmp_path.iterdir()] == ["t.hstn"]
