"""AdamW with decoupled weight decay and linear learning-rate warmup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class LrSchedule:
    """Linear warmup from `warmup_start` to `base`, then constant."""

    base: float
    warmup_steps: int = 0
    warmup_start: float = 0.0

    def at(self, step: int) -> float:
        if self.warmup_steps <= 0 or step >= self.warmup_steps:
            return self.base
        frac = step / self.warmup_steps
        return self.warmup_start + (self.base - self.warmup_start) * frac


class AdamW:
    """Decoupled weight decay: the decay term never enters the moments."""

    def __init__(
        self,
        params: dict[str, Tensor],
        schedule: LrSchedule,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = dict(params)
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def current_lr(self) -> float:
        return self.schedule.at(self.step_count)

    def step(self) -> None:
        """Apply one update using the learning rate for the current step.

        Parameters whose grad is None are treated as having zero gradient,
        so their moments still decay; a NaN gradient is a hard error.
        """
        lr = self.current_lr()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif np.isnan(g).any():
                raise NumericError(f"NaN gradient in parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - np.asarray(lr * update, dtype=p.data.dtype)
        self.step_count = t

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
