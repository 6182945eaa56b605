import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqfuse import kernels
from freqfuse.kernels import pykernels

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                              reason="extension not built")
BACKENDS = [pykernels]
if "compiled" in kernels.available_backends():
    from freqfuse.kernels import _ckernels
    BACKENDS.append(_ckernels)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("n", [1, 2, 4, 8, 64, 256])
def test_fft_rows_matches_numpy(mod, n, rng):
    z = rng.standard_normal((5, n)) + 1j * rng.standard_normal((5, n))
    np.testing.assert_allclose(mod.fft_rows(z), np.fft.fft(z, axis=1), atol=1e-10 * n)
    np.testing.assert_allclose(mod.fft_rows(z, True), np.fft.ifft(z, axis=1) * n, atol=1e-10 * n)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_fft2_planes_matches_numpy(mod, rng):
    z = rng.standard_normal((3, 8, 32)) + 1j * rng.standard_normal((3, 8, 32))
    np.testing.assert_allclose(mod.fft2_planes(z), np.fft.fft2(z), atol=1e-10)
    assert mod.fft2_planes(np.zeros((0, 4, 4))).shape == (0, 4, 4)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_fft_rejects_bad_length(mod):
    with pytest.raises(ValueError, match="power of two"):
        mod.fft_rows(np.zeros((2, 6), dtype=complex))


def test_inputs_not_modified(rng):
    z = rng.standard_normal((2, 4, 4)) + 0j
    before = z.copy()
    for mod in BACKENDS:
        mod.fft2_planes(z)
    assert np.array_equal(z, before)


@compiled
@given(st.integers(1, 3), st.integers(1, 4), st.integers(3, 12), st.integers(3, 12),
       st.sampled_from([1, 3, 5, 7]), st.integers(0, 2 ** 32 - 1))
def test_dwconv_parity(n, c, h, w, k, seed):
    rng = np.random.default_rng(seed)
    pad = k // 2
    x = rng.standard_normal((n, c, h, w))
    wt = rng.standard_normal((c, k, k))
    y_py = pykernels.dwconv_forward(x, wt, pad)
    np.testing.assert_allclose(_ckernels.dwconv_forward(x, wt, pad), y_py, atol=1e-12)
    g = rng.standard_normal(y_py.shape)
    for a, b in zip(_ckernels.dwconv_backward(g, x, wt, pad), pykernels.dwconv_backward(g, x, wt, pad)):
        np.testing.assert_allclose(a, b, atol=1e-11)


@compiled
@given(st.integers(1, 2), st.integers(1, 3), st.integers(2, 9), st.integers(2, 9),
       st.floats(0.0, 4.0), st.integers(0, 2 ** 32 - 1))
def test_grid_sample_parity(n, c, h, w, spread, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    off = rng.uniform(-spread, spread, size=(n, 2, h, w))
    np.testing.assert_allclose(_ckernels.grid_sample_forward(x, off),
                               pykernels.grid_sample_forward(x, off), atol=1e-12)
    g = rng.standard_normal((n, c, h, w))
    for a, b in zip(_ckernels.grid_sample_backward(g, x, off), pykernels.grid_sample_backward(g, x, off)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backend_switching_restores():
    start = kernels.backend()
    with kernels.backend_scope("python"):
        assert kernels.backend() == "python"
        assert kernels.fft_rows is pykernels.fft_rows
    assert kernels.backend() == start
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")


def test_env_var_selects_fallback():
    env = dict(os.environ, FREQFUSE_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from freqfuse import kernels; print(kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_model_step_identical_on_both_backends():
    if "compiled" not in kernels.available_backends():
        pytest.skip("extension not built")
    from freqfuse import scenes, train
    from freqfuse.model import ToyDetectorConfig
    data = scenes.generate(scenes.SceneSpec(seed=3), 2)
    cfg = ToyDetectorConfig(batch_size=2, stage_channels=(16, 16, 16), stem_channels=16,
                            fusion_channels=16, align_channels=16, head_channels=16)
    losses = {}
    for be in ("compiled", "python"):
        with kernels.backend_scope(be):
            model = train.build(cfg, 0)
            losses[be] = [r.loss for r in train.train(model, data, 2, seed=0)]
    np.testing.assert_allclose(losses["compiled"], losses["python"], rtol=1e-10)
