import re

import numpy as np
import pytest

from freqfuse import checkpoint, scenes
from freqfuse import spectral as S
from freqfuse import train as TR
from freqfuse.cli import config_sidecar, main
from freqfuse.model import ToyDetectorConfig

SMALL_CFG = ("image_size=32\nstem_channels=8\nstage_channels=8,16,16\nfusion_channels=16\n"
             "align_channels=16\nhead_channels=16\nlarge_kernel=7\nbatch_size=2\nlr=0.001\n")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def usage_exit(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main(list(argv))
    capsys.readouterr()
    return exc.value.code


@pytest.fixture
def small(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL_CFG)
    data = tmp_path / "d.fds"
    assert run(capsys, "gen-data", "--out", str(data), "--count", "4", "--seed", "1", "--size", "32")[0] == 0
    return cfg, data


# gen-data

def test_gen_data_deterministic_and_reloadable(tmp_path, capsys):
    a, b = tmp_path / "a.fds", tmp_path / "b.fds"
    for p in (a, b):
        code, out, _ = run(capsys, "gen-data", "--out", str(p), "--count", "100", "--seed", "7")
        assert code == 0 and "100" in out
    assert a.read_bytes() == b.read_bytes()
    assert len(scenes.load(a)) == 100


def test_gen_data_rejects_non_power_of_two(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "x"), "--count", "2", "--seed", "0",
                       "--size", "48")
    assert code == 1
    assert "power of two" in err and "FFT" in err


def test_gen_data_unwritable_path(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "no" / "dir" / "x"), "--count", "1",
                       "--seed", "0")
    assert code == 1 and err


# train / eval

def test_train_and_eval_output_format(small, tmp_path, capsys):
    cfg, data = small
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt),
                       "--steps", "3", "--seed", "2")
    assert code == 0
    steps = [ln for ln in out.splitlines() if ln.startswith("step=")]
    assert len(steps) == 3
    assert re.fullmatch(r"step=3 loss=\S+ cls=\S+ l1=\S+ box=\S+", steps[-1])
    assert ckpt.exists() and (tmp_path / "m.ckpt.config").exists()
    code, out, _ = run(capsys, "eval", "--data", str(data), "--ckpt", str(ckpt))
    assert code == 0
    assert re.fullmatch(r"AP=\d\.\d+ AP50=\d\.\d+\n", out)


def test_train_twice_identical(small, tmp_path, capsys):
    cfg, data = small
    outs = []
    for name in ("a", "b"):
        ckpt = tmp_path / name
        code, out, _ = run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt),
                           "--steps", "3")
        assert code == 0
        outs.append(([ln for ln in out.splitlines() if ln.startswith("step=")], ckpt.read_bytes()))
    assert outs[0] == outs[1]


def test_zero_steps_checkpoint_is_initialization(small, tmp_path, capsys):
    cfg, data = small
    ckpt = tmp_path / "z"
    assert run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt),
               "--steps", "0", "--seed", "5")[0] == 0
    init = TR.build(ToyDetectorConfig.load(cfg), 5).store.state()
    assert ckpt.read_bytes() == checkpoint.encode(init)


def test_eval_config_mismatch_lists_names(small, tmp_path, capsys):
    cfg, data = small
    ckpt = tmp_path / "m"
    run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt), "--steps", "0")
    other = tmp_path / "other.cfg"
    other.write_text(SMALL_CFG + "align=off\n")
    code, _, err = run(capsys, "eval", "--data", str(data), "--ckpt", str(ckpt), "--config", str(other))
    assert code == 1
    assert "load error" in err and "align.gate.weight" in err


def test_eval_uses_sidecar_config(small, tmp_path, capsys):
    cfg, data = small
    ckpt = tmp_path / "m"
    run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt), "--steps", "0")
    assert ToyDetectorConfig.load(config_sidecar(ckpt)) == ToyDetectorConfig.load(cfg)


def test_train_rejects_bad_wiring_before_any_step(small, tmp_path, capsys):
    _, data = small
    bad = tmp_path / "bad.cfg"
    bad.write_text("stage_channels=8,16,18\n")
    code, out, err = run(capsys, "train", "--data", str(data), "--config", str(bad), "--out",
                         str(tmp_path / "m"))
    assert code == 1 and "configuration error" in err and "step=" not in out
    assert not (tmp_path / "m").exists()


def test_train_on_corrupt_dataset(tmp_path, capsys, small):
    cfg, data = small
    broken = tmp_path / "broken.fds"
    broken.write_bytes(data.read_bytes()[:-5])
    code, _, err = run(capsys, "train", "--data", str(broken), "--config", str(cfg), "--out",
                       str(tmp_path / "m"))
    assert code == 1 and "offset" in err


# gradcheck / selftest

@pytest.mark.parametrize("module", ["box-geometry", "spectral"])
def test_gradcheck_module_passes(module, capsys):
    code, out, _ = run(capsys, "gradcheck", "--module", module)
    lines = out.strip().splitlines()
    assert code == 0 and lines
    for ln in lines:
        assert re.fullmatch(rf"op={module}/\S+ max_rel_err=\S+ pass=true", ln)


def test_unknown_module_is_usage_error(capsys):
    assert usage_exit(capsys, "gradcheck", "--module", "nope") == 2
    assert usage_exit(capsys, "bench", "--op", "nope") == 2
    assert usage_exit(capsys, "bench", "--runs", "5") == 2
    assert usage_exit(capsys) == 2


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    suites = [ln for ln in out.splitlines() if ln.startswith("suite=")]
    assert code == 0
    assert len(suites) >= 8
    assert all("pass=true" in ln for ln in suites)


def test_sign_flip_in_magnitude_backward_is_named(monkeypatch, capsys):
    original = S._magnitude_backward
    monkeypatch.setattr(S, "_magnitude_backward", lambda g, z, mag: -original(g, z, mag))
    code, out, _ = run(capsys, "gradcheck", "--module", "spectral")
    assert code == 1
    assert re.search(r"op=spectral/magnitude max_rel_err=\S+ pass=false", out)
    code, out, _ = run(capsys, "selftest")
    assert code == 1
    assert "gradcheck:spectral/magnitude" in out


# bench

def _median(out, size):
    m = re.search(rf"op=fft2 size={size} backend=\w+ median_ns=(\d+) cov=([\d.]+) runs=30", out)
    return float(m.group(1)), float(m.group(2))


def test_bench_fft2_stable_and_monotone(capsys):
    code, out16, _ = run(capsys, "bench", "--op", "fft2", "--size", "16x16", "--backend", "python")
    assert code == 0
    code, out32, _ = run(capsys, "bench", "--op", "fft2", "--size", "32x32", "--backend", "python")
    m16, cov16 = _median(out16, "16x16")
    m32, cov32 = _median(out32, "32x32")
    assert m16 > 0 and cov16 < 0.2 and cov32 < 0.2
    assert m32 > m16


def test_bench_reports_conv_order_without_winner(capsys):
    code, out, _ = run(capsys, "bench", "--op", "conv3x3", "--size", "16x16", "--backend", "python")
    assert code == 0 and "order" not in out
    code, out, _ = run(capsys, "bench", "--size", "8x8", "--backend", "python")
    assert code == 0
    assert re.search(r"order backend=python faster=(dwconv31|conv3x3) slower=(dwconv31|conv3x3)", out)


def test_bench_both_backends_prints_speedup(capsys):
    from freqfuse import kernels
    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled kernels not built")
    code, out, _ = run(capsys, "bench", "--op", "fft2", "--size", "16x16")
    assert code == 0 and "speedup_compiled_over_python=" in out


def test_bad_size_argument(capsys):
    assert usage_exit(capsys, "bench", "--size", "16by16") == 2
    assert usage_exit(capsys, "bench", "--size", "0x4") == 2


def test_checkpoint_file_matches_store(small, tmp_path, capsys):
    cfg, data = small
    ckpt = tmp_path / "m"
    run(capsys, "train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt), "--steps", "1")
    state = checkpoint.load_checkpoint(ckpt)
    model = TR.build(ToyDetectorConfig.load(cfg), 0)
    model.store.load_state(state)
    assert all(np.array_equal(model.store.state()[k], v) for k, v in state.items())
