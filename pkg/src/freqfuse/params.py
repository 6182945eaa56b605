"""Named learnable tensors with reproducible initialization.

Each tensor draws from its own Philox stream keyed by sha256(seed, name), so
values depend only on the seed and the parameter's name, never on creation
order or platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .nn import ConvSpec
from .tensor import Tensor


def keyed_generator(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))


class ParamStore:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.tensors: dict[str, Tensor] = {}

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return list(self.tensors)

    def add(self, name: str, data) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def uniform(self, name, shape, fan_in):
        bound = np.sqrt(1.0 / max(1, fan_in))
        return self.add(name, keyed_generator(self.seed, name).uniform(-bound, bound, size=shape))

    def conv(self, name, cin, cout, k, stride=1, padding=None, depthwise=False,
             bias=True, zero=False) -> ConvSpec:
        """Register ``name.weight`` (and ``name.bias``) and return a ConvSpec.

        ``padding`` defaults to k // 2. ``zero`` starts the weight at exactly 0.
        """
        if depthwise and cin != cout:
            raise ValueError(f"depthwise conv {name!r} needs cin == cout, got {cin}, {cout}")
        shape = (cout, 1, k, k) if depthwise else (cout, cin, k, k)
        fan_in = k * k if depthwise else cin * k * k
        if zero:
            w = self.add(f"{name}.weight", np.zeros(shape))
        else:
            w = self.uniform(f"{name}.weight", shape, fan_in)
        b = self.add(f"{name}.bias", np.zeros((1, cout, 1, 1))) if bias else None
        return ConvSpec(w, b, stride=stride, padding=k // 2 if padding is None else padding,
                        depthwise=depthwise)

    def scalar(self, name, value) -> Tensor:
        return self.add(name, np.full((1, 1, 1, 1), float(value)))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray], strict=True):
        missing = [k for k in self.tensors if k not in state]
        extra = [k for k in state if k not in self.tensors]
        if strict and (missing or extra):
            raise KeyError(f"parameter mismatch: missing={missing} extra={extra}")
        for k, v in state.items():
            if k not in self.tensors:
                continue
            t = self.tensors[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {t.shape}")
            t.data = v.copy()
