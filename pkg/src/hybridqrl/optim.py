"""Gradient-descent optimizers and learning-rate schedules."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor

__all__ = ["SGD", "Adam", "sgd_step", "piecewise_constant"]


def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
             lr: float) -> Mapping[str, Tensor]:
    """One plain gradient step, in place; returns ``params`` for chaining."""
    for name, p in params.items():
        g = grads.get(name)
        if g is not None:
            p.data -= lr * g
    return params


def piecewise_constant(boundaries: Sequence[int], values: Sequence[float]):
    """Step-indexed piecewise-constant schedule.

    ``values`` has one more entry than ``boundaries``; steps <= boundaries[i]
    use values[i], later steps fall through to the next interval.
    """
    if len(values) != len(boundaries) + 1:
        raise ValueError("need len(values) == len(boundaries) + 1")
    bounds = list(boundaries)
    if bounds != sorted(bounds):
        raise ValueError("boundaries must be increasing")
    vals = [float(v) for v in values]

    def schedule(step: int) -> float:
        for b, v in zip(bounds, vals):
            if step <= b:
                return v
        return vals[-1]
    return schedule


class _Optimizer:
    """Shared bookkeeping: parameter dict, base lr, per-prefix lr overrides.

    ``lr_overrides`` maps a name prefix (e.g. "policy") to a multiplier-free
    absolute learning rate; the longest matching prefix wins.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float,
                 lr_overrides: Mapping[str, float] | None = None,
                 schedule=None):
        self.params = dict(params)
        self.lr = float(lr)
        self.lr_overrides = dict(lr_overrides or {})
        self.schedule = schedule
        self.step_count = 0

    def _lr_for(self, name: str) -> float:
        base = self.lr if self.schedule is None else self.schedule(self.step_count)
        best = None
        for prefix, lr in self.lr_overrides.items():
            if name.startswith(prefix) and (best is None or len(prefix) > best[0]):
                best = (len(prefix), lr)
        return best[1] if best is not None else base

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        raise NotImplementedError


class SGD(_Optimizer):
    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            g = grads.get(name)
            if g is not None:
                p.data -= self._lr_for(name) * g


class Adam(_Optimizer):
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_overrides: Mapping[str, float] | None = None,
                 schedule=None):
        super().__init__(params, lr, lr_overrides, schedule)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self._lr_for(name) * (m / c1) / (np.sqrt(v / c2) + self.eps)
