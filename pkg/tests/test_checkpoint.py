import numpy as np
import pytest

from mpsvqc import checkpoint as C
from mpsvqc import mps as M
from mpsvqc.errors import FormatError, TruncatedFileError


@pytest.mark.parametrize("mode", ["standard", "activated"])
def test_mps_round_trip(tmp_path, mode):
    m = M.init_mps(7, 3, 2, mode=mode, seed=4, noise=0.2)
    C.save_mps(tmp_path / "m.ckpt", m, {"note": "x"}, [("head_w", np.arange(4.0).reshape(2, 2))])
    back, meta, extra = C.load_mps(tmp_path / "m.ckpt")
    assert meta["note"] == "x" and meta["mode"] == mode
    np.testing.assert_array_equal(extra["head_w"], np.arange(4.0).reshape(2, 2))
    assert C.mps_checksum(back) == C.mps_checksum(m)
    C.save_mps(tmp_path / "n.ckpt", back, {"note": "x"}, [("head_w", extra["head_w"])])
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "n.ckpt").read_bytes()


def test_checksum_sensitive():
    m = M.init_mps(5, 2, 2, seed=0)
    before = C.mps_checksum(m)
    m.sites[1][0, 0, 0] += 1e-15
    assert C.mps_checksum(m) != before


def test_corrupted_checkpoints(tmp_path):
    path = tmp_path / "m.ckpt"
    C.save_mps(path, M.init_mps(4, 2, 2))
    raw = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(FormatError):
        C.load_mps(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(TruncatedFileError):
        C.load_mps(path)
    path.write_bytes(raw[:10])
    with pytest.raises(TruncatedFileError):
        C.load_mps(path)


def test_kind_mismatch(tmp_path):
    C.save_arrays(tmp_path / "v.ckpt", "vqc", {}, [("params", np.zeros(3))])
    with pytest.raises(FormatError):
        C.load_mps(tmp_path / "v.ckpt")
    kind, meta, arrays = C.load_arrays(tmp_path / "v.ckpt")
    assert kind == "vqc" and arrays["params"].shape == (3,)


def test_config_hash_stable():
    assert C.config_hash({"a": 1, "b": 2}) == C.config_hash({"b": 2, "a": 1})
    assert C.config_hash({"a": 1}) != C.config_hash({"a": 2})
