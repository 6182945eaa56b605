import numpy as np
import pytest

import oracles as R
from freqfuse import modules as M
from freqfuse.gradcheck import _randomize
from freqfuse.params import ParamStore
from freqfuse import tensor as T
from freqfuse.tensor import Graph, Tensor


def _store(seed, build):
    store = ParamStore(seed)
    p = build(store)
    _randomize(store, np.random.default_rng(seed + 1))
    return store, p


def _state(store):
    return {k: v.copy() for k, v in store.state().items()}


# compositional oracles

@pytest.mark.parametrize("seed", range(3))
def test_ff_matches_numpy_composition(seed):
    store, p = _store(seed, lambda s: M.FFParams.build(s, "ff", 3))
    x = np.random.default_rng(seed).standard_normal((2, 3, 8, 4))
    got = M.ff_forward(Tensor(x), p).data
    np.testing.assert_allclose(got, R.ff(_state(store), "ff", x), atol=1e-9, rtol=0)


@pytest.mark.parametrize("seed", range(2))
def test_msff_matches_numpy_composition(seed):
    store, p = _store(seed, lambda s: M.MSFFParams.build(s, "m", 8, 8, focus_in=2, focus_out=4))
    rng = np.random.default_rng(seed)
    hi, lo = rng.standard_normal((1, 2, 16, 16)), rng.standard_normal((1, 4, 8, 8))
    got = M.msfffe_forward([Tensor(hi), Tensor(lo)], p).data
    want = R.msff(_state(store), "m", [hi, lo])
    np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)


def test_msff_without_focus_matches_oracle():
    store, p = _store(5, lambda s: M.MSFFParams.build(s, "m", 8, 4, large_kernel=7))
    x = np.random.default_rng(5).standard_normal((2, 8, 8, 8))
    got = M.msfffe_forward([Tensor(x)], p).data
    np.testing.assert_allclose(got, R.msff(_state(store), "m", [x], large_kernel=7), atol=1e-9, rtol=0)


@pytest.mark.parametrize("hw", [(8, 8), (4, 16)])
def test_fd_matches_numpy_composition(hw):
    store, p = _store(3, lambda s: M.FDParams.build(s, "fd", 4, 8))
    x = np.random.default_rng(3).standard_normal((2, 4) + hw)
    got = M.fd_forward(Tensor(x), p).data
    np.testing.assert_allclose(got, R.fd(_state(store), "fd", x), atol=1e-9, rtol=0)


def test_sac_matches_numpy_composition():
    store, p = _store(4, lambda s: M.SACParams.build(s, "sac", 3, 5, 4))
    rng = np.random.default_rng(4)
    st = {k: t.data for k, t in store.tensors.items()}
    st["sac.offset.weight"][...] = rng.uniform(-0.05, 0.05, st["sac.offset.weight"].shape)
    st["sac.offset.bias"][...] = np.array([0.37, -0.41, -0.29, 0.33]).reshape(1, 4, 1, 1)
    x1, x2 = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((2, 5, 4, 4))
    got, parts = M.sac_forward(Tensor(x1), Tensor(x2), p, return_parts=True)
    want, wparts = R.sac(_state(store), "sac", x1, x2)
    np.testing.assert_allclose(got.data, want, atol=1e-9, rtol=0)
    for k, v in wparts.items():
        np.testing.assert_allclose(parts[k].data, v, atol=1e-9, rtol=0, err_msg=k)


# fixed points at initialization

def test_ff_is_identity_at_init(rng):
    store = ParamStore(0)
    p = M.FFParams.build(store, "ff", 4)
    x = rng.standard_normal((1, 4, 8, 8))
    np.testing.assert_array_equal(M.ff_forward(Tensor(x), p).data, x)


def test_ff_unit_mask_is_a_roundtrip(rng):
    store = ParamStore(0)
    p = M.FFParams.build(store, "ff", 3, alpha=1.0, beta=0.0)
    st = {k: t.data for k, t in store.tensors.items()}
    st["ff.mask.weight"][...] = 0.0
    st["ff.mask.bias"][...] = 1.0
    st["ff.value.weight"][...] = np.eye(3).reshape(3, 3, 1, 1)
    st["ff.value.bias"][...] = 0.0
    x = rng.standard_normal((2, 3, 8, 16))
    np.testing.assert_allclose(M.ff_forward(Tensor(x), p).data, x, atol=1e-12)


def test_sac_at_init_is_half_sum_of_branches(rng):
    store = ParamStore(1)
    p = M.SACParams.build(store, "sac", 6, 8, 4)
    x1, x2 = rng.standard_normal((1, 6, 8, 8)), rng.standard_normal((1, 8, 4, 4))
    out, parts = M.sac_forward(Tensor(x1), Tensor(x2), p, return_parts=True)
    np.testing.assert_array_equal(parts["delta1"].data, 0.0)
    np.testing.assert_array_equal(parts["delta2"].data, 0.0)
    np.testing.assert_allclose(out.data, 0.5 * parts["x1"].data + 0.5 * parts["x_fused"].data, atol=1e-12)


def test_zero_gate_logits_average_the_branches(rng):
    a, b = rng.standard_normal((2, 1, 3, 4, 4))
    got = M.gated_fusion(Tensor(a), Tensor(b), Tensor(np.zeros((1, 3, 4, 4)))).data
    np.testing.assert_allclose(got, 0.5 * a + 0.5 * b, atol=1e-15)


def test_msff_passes_x2_through_untouched(rng):
    # with an identity exit conv the last 3/4 of the channels are gelu(x2)
    store = ParamStore(2)
    p = M.MSFFParams.build(store, "m", 8, large_kernel=3)
    st = {k: t.data for k, t in store.tensors.items()}
    st["m.exit.weight"][...] = np.eye(8).reshape(8, 8, 1, 1)
    st["m.exit.bias"][...] = 0.0
    x = rng.standard_normal((1, 8, 8, 8))
    out = M.msfffe_forward([Tensor(x)], p).data
    np.testing.assert_allclose(out[:, 2:], R.gelu(x[:, 2:]), atol=1e-14)


# shape contracts

def test_msff_full_width_shape():
    store = ParamStore(0)
    p = M.MSFFParams.build(store, "m", 256)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 256, 16, 16)))
    assert M.msfffe_forward([x], p).shape == (1, 256, 16, 16)


@pytest.mark.parametrize("c_out", [32, 64, 128])
def test_fd_halves_resolution(c_out):
    store = ParamStore(0)
    p = M.FDParams.build(store, "fd", 64, c_out)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 64, 16, 16)))
    assert M.fd_forward(x, p).shape == (1, c_out, 8, 8)


def test_sac_output_at_high_resolution():
    store = ParamStore(0)
    p = M.SACParams.build(store, "sac", 3, 5, 4)
    out = M.sac_forward(Tensor(np.zeros((2, 3, 16, 8))), Tensor(np.zeros((2, 5, 8, 4))), p)
    assert out.shape == (2, 4, 16, 8)


@pytest.mark.parametrize("build", [
    lambda s: M.MSFFParams.build(s, "m", 6),
    lambda s: M.FDParams.build(s, "fd", 5, 8),
    lambda s: M.FDParams.build(s, "fd", 4, 7),
])
def test_bad_channel_counts_raise(build):
    with pytest.raises(M.ConfigError):
        build(ParamStore(0))


def test_msff_rejects_wrong_input_width():
    p = M.MSFFParams.build(ParamStore(0), "m", 8)
    with pytest.raises(M.ConfigError):
        M.msfffe_forward([Tensor(np.zeros((1, 12, 4, 4)))], p)


def test_fd_rejects_wrong_input_width():
    p = M.FDParams.build(ParamStore(0), "fd", 4, 8)
    with pytest.raises(M.ConfigError):
        M.fd_forward(Tensor(np.zeros((1, 6, 4, 4))), p)


def test_fd_rejects_odd_spatial_dims():
    p = M.FDParams.build(ParamStore(0), "fd", 4, 8)
    with pytest.raises(T.ShapeError):
        M.fd_forward(Tensor(np.zeros((1, 4, 7, 8))), p)


# determinism and gradient flow

def test_forward_is_deterministic(rng):
    x = rng.standard_normal((1, 8, 8, 8))
    outs = []
    for _ in range(2):
        store = ParamStore(11)
        p = M.MSFFParams.build(store, "m", 8, large_kernel=5)
        outs.append(M.msfffe_forward([Tensor(x)], p).data)
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.parametrize("seed", range(5))
def test_branch_parameters_receive_gradient(seed):
    # parameters behind the alpha=0 gate of an untouched FF are exempt
    store = ParamStore(seed)
    p = M.MSFFParams.build(store, "m", 8, large_kernel=5)
    exempt = {id(p.ff.mask_conv.weight), id(p.ff.mask_conv.bias),
              id(p.ff.value_conv.weight), id(p.ff.value_conv.bias)}
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 8, 8, 8)))
    with Graph() as g:
        out = M.msfffe_forward([x], p)
        g.backward(T.sum(T.mul(out, Tensor(rng.standard_normal(out.shape)))))
    for t in p.branch_params():
        if id(t) in exempt:
            continue
        assert t.grad is not None and np.any(t.grad != 0), t.name
