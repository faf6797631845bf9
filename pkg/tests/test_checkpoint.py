import numpy as np
import pytest

from relpose.errors import DataError
from relpose.numerics import load_checkpoint, save_checkpoint
from relpose.numerics.checkpoint import MAGIC


def _tensors():
    rng = np.random.default_rng(0)
    return {
        "a.weight": rng.normal(size=(3, 4, 2)),
        "a.bias": rng.normal(size=3).astype(np.float32),
        "steps": np.arange(5, dtype=np.int64),
        "scalar": np.array(2.5),
    }


def test_round_trip_is_bit_exact(tmp_path):
    t = _tensors()
    path = save_checkpoint(tmp_path / "x.ckpt", t, {"stage": 2, "config_hash": "abc"})
    got, meta = load_checkpoint(path)
    assert meta == {"stage": 2, "config_hash": "abc"}
    assert list(got) == list(t)
    for k in t:
        assert got[k].dtype == t[k].dtype
        assert got[k].tobytes() == t[k].tobytes()
    assert path.read_bytes().startswith(MAGIC)


def test_same_content_gives_same_bytes(tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", _tensors(), {"k": 1}).read_bytes()
    b = save_checkpoint(tmp_path / "b.ckpt", _tensors(), {"k": 1}).read_bytes()
    assert a == b


@pytest.mark.parametrize("mutate", ["flip", "truncate", "magic", "empty"])
def test_corruption_is_detected(tmp_path, mutate):
    path = save_checkpoint(tmp_path / "x.ckpt", _tensors(), {})
    blob = bytearray(path.read_bytes())
    if mutate == "flip":
        blob[len(blob) // 2] ^= 0xFF
    elif mutate == "truncate":
        blob = blob[:-10]
    elif mutate == "magic":
        blob[:4] = b"JUNK"
    else:
        blob = bytearray()
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "x.ckpt", {"c": np.zeros(2, dtype=np.complex128)}, {})
