"""AdamW with decoupled weight decay, and the warmup+cosine schedule."""

import math
from dataclasses import dataclass

import numpy as np

from .model import ParamStore


class NonFiniteGradient(RuntimeError):
    """Raised when a gradient turns NaN/Inf; carries the tensor name."""


@dataclass
class Schedule:
    """Linear warmup to peak_lr, then cosine annealing to final_lr.

    Step s maps to: s/warmup * peak during warmup; afterwards
    final + 0.5*(peak-final)*(1+cos(pi*t)) with t the cosine progress,
    reaching exactly final_lr at the last step.
    """

    warmup_epochs: int
    total_epochs: int
    peak_lr: float
    final_lr: float
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.final_lr > self.peak_lr:
            raise ValueError("final_lr must not exceed peak_lr")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @classmethod
    def from_steps(cls, total_steps: int, warmup_steps: int, peak_lr: float, final_lr: float):
        return cls(warmup_steps, total_steps, peak_lr, final_lr, steps_per_epoch=1)

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


def lr_at(sched: Schedule, global_step: int) -> float:
    if global_step < 0:
        raise ValueError("step must be >= 0")
    warm, total = sched.warmup_steps, sched.total_steps
    if global_step < warm:
        return sched.peak_lr * global_step / warm
    last = total - 1
    if global_step >= last:
        return sched.final_lr
    t = (global_step - warm) / (last - warm) if last > warm else 1.0
    return sched.final_lr + 0.5 * (sched.peak_lr - sched.final_lr) * (1.0 + math.cos(math.pi * t))


class AdamW:
    """Decoupled-weight-decay Adam over a ParamStore.

    Update: p <- p - lr*wd*p - lr*m_hat/(sqrt(v_hat)+eps).
    """

    def __init__(self, store: ParamStore, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store}
        self.v = {name: np.zeros_like(t.data) for name, t in store}

    def step(self, lr: float):
        """Apply one update from the accumulated gradients, then clear them."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.store:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name!r}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * update
        self.store.zero_grad()

    def state_tensors(self):
        """Moment buffers for checkpointing, in parameter order."""
        for name, _ in self.store:
            yield f"adam.m.{name}", self.m[name]
            yield f"adam.v.{name}", self.v[name]

    def load_state(self, tensors: dict, step_count: int):
        for name, _ in self.store:
            self.m[name] = np.array(tensors[f"adam.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(tensors[f"adam.v.{name}"], dtype=self.v[name].dtype)
        self.step_count = step_count
