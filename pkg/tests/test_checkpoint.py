import struct

import numpy as np
import pytest

from freqfuse import checkpoint as C
from freqfuse import modules as M
from freqfuse.params import ParamStore
from freqfuse.scenes import FormatError


def minimal_reader(buf):
    assert buf[:4] == b"FDCK"
    version, count = struct.unpack_from("<HI", buf, 4)
    assert version == 1
    off, out = 10, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        name = buf[off + 2:off + 2 + n].decode()
        off += 2 + n
        dims = struct.unpack_from("<4I", buf, off)
        off += 16
        size = dims[0] * dims[1] * dims[2] * dims[3]
        out[name] = np.frombuffer(buf, "<f4", size, off).reshape(dims)
        off += 4 * size
    assert off == len(buf)
    return out


@pytest.fixture
def store():
    s = ParamStore(3)
    M.SACParams.build(s, "sac", 3, 5, 4)
    M.FDParams.build(s, "fd", 4, 8)
    return s


def test_roundtrip_within_f32(store, tmp_path):
    path = tmp_path / "m.ckpt"
    C.save_checkpoint(store, path)
    back = C.load_checkpoint(path)
    assert list(back) == list(store.state())
    for k, v in store.state().items():
        np.testing.assert_array_equal(back[k], v.astype(np.float32).astype(np.float64))
        np.testing.assert_allclose(back[k], v, rtol=2 ** -24, atol=0)


def test_save_load_save_byte_stable(store, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    C.save_checkpoint(store, a)
    store.load_state(C.load_checkpoint(a))
    C.save_checkpoint(store, b)
    assert a.read_bytes() == b.read_bytes()


def test_independent_reader(store):
    buf = C.encode(store.state())
    parsed = minimal_reader(buf)
    for k, v in C.decode(buf).items():
        np.testing.assert_array_equal(parsed[k].astype(np.float64), v)


def test_corrupted_magic_and_truncation(store):
    buf = C.encode(store.state())
    with pytest.raises(FormatError, match="magic"):
        C.decode(b"FDCX" + buf[4:])
    with pytest.raises(FormatError) as err:
        C.decode(buf[:-3])
    assert err.value.offset > 0


def test_duplicate_names_rejected():
    one = C.encode({"w": np.zeros((1, 1, 1, 1))})
    body = one[10:]
    forged = b"FDCK" + struct.pack("<HI", 1, 2) + body + body
    with pytest.raises(FormatError, match="duplicate"):
        C.decode(forged)


def test_mismatched_state_lists_names(store):
    other = ParamStore(0)
    M.FDParams.build(other, "fd", 4, 8)
    with pytest.raises(KeyError, match="sac.gate.weight"):
        other.load_state(store.state())
