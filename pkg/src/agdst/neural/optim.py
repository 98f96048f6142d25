"""Adam with warmup plus inverse-time decay, and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import NumericError


@dataclass
class Schedule:
    base_lr: float = 1e-3
    warmup_steps: int = 100
    decay_rate: float = 0.0
    steps_per_epoch: int = 1

    def lr(self, step: int) -> float:
        """Learning rate for 1-based update ``step``."""
        if step < 1:
            raise ValueError("step is 1-based")
        epoch = (step - 1) // max(1, self.steps_per_epoch)
        decay = 1.0 / (1.0 + self.decay_rate * epoch)
        if self.warmup_steps > 0:
            return self.base_lr * min(step / self.warmup_steps, decay)
        return self.base_lr * decay

    def to_json(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], schedule: Schedule,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        """One in-place update; returns the learning rate used."""
        self.step += 1
        lr = self.schedule.lr(self.step)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
            if not np.isfinite(p).all():
                raise NumericError(f"non-finite parameter {name} after update")
        return lr

    def state(self) -> dict:
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "schedule": self.schedule.to_json()}


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        bad = next(n for n, g in grads.items() if not np.isfinite(g).all())
        raise NumericError(f"non-finite gradient for {bad}")
    if max_norm > 0 and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(s)
    return norm
