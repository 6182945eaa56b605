"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``FREQFUSE_KERNELS=python``
to force the fallback, or call :func:`use_backend` at runtime.
"""

import os
from contextlib import contextmanager

from . import pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("fft_rows", "fft2_planes", "dwconv_forward", "dwconv_backward",
          "grid_sample_forward", "grid_sample_backward")

_backend = None


def available_backends():
    return ("compiled", "python") if _ckernels is not None else ("python",)


def use_backend(name):
    """Select ``"compiled"``, ``"python"`` or ``"auto"`` for every kernel."""
    global _backend
    if name == "auto":
        name = "compiled" if _ckernels is not None else "python"
    if name == "compiled" and _ckernels is None:
        raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown kernel backend {name!r}")
    mod = _ckernels if name == "compiled" else pykernels
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    _backend = name


def backend():
    return _backend


@contextmanager
def backend_scope(name):
    prev = _backend
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


use_backend(os.environ.get("FREQFUSE_KERNELS", "auto"))
