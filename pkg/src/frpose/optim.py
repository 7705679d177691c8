"""Adam optimizer over named parameter collections."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor

__all__ = ["Adam"]


class Adam:
    """Adam with bias correction (Kingma & Ba defaults).

    ``step`` requires every parameter to carry a gradient and clears all
    gradients afterwards; a fresh state plus a zero gradient therefore
    leaves a parameter untouched while still advancing the step counter.
    """

    def __init__(self, params: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]],
                 lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = dict(params)
        if not self.params:
            raise ValueError("adam: no parameters to optimize")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"adam: parameter {name!r} has no gradient")
        self.t += 1
        b1, b2 = self.betas
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- checkpoint plumbing --------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray], t: int) -> None:
        for name, p in self.params.items():
            for kind, store in (("m", self.m), ("v", self.v)):
                key = f"adam.{kind}.{name}"
                if key not in arrays:
                    raise KeyError(f"adam: checkpoint is missing {key!r}")
                value = arrays[key]
                if value.shape != p.data.shape:
                    raise ValueError(f"adam: {key!r} has shape {value.shape}, "
                                     f"parameter is {p.data.shape}")
                store[name] = value.astype(p.data.dtype, copy=True)
        self.t = int(t)
