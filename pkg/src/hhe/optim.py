"""Optimizers and the piecewise-constant learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class StageSchedule:
    """Learning rate ``base_lr * decay**stage`` over consecutive epoch stages."""

    base_lr: float = 1e-3
    stage_epochs: tuple = (30, 10, 10)
    decay: float = 0.1

    @property
    def total_epochs(self):
        return sum(self.stage_epochs)

    def stage_of(self, epoch):
        end = 0
        for i, n in enumerate(self.stage_epochs):
            end += n
            if epoch < end:
                return i
        return len(self.stage_epochs) - 1

    def lr_at(self, epoch):
        return self.base_lr * self.decay ** self.stage_of(epoch)


def _check_shapes(params, grads):
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != p.shape:
            raise ShapeMismatch(
                f"gradient for {name!r} has shape {np.shape(g)}, parameter has {p.shape}"
            )


@dataclass
class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    schedule: StageSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads, epoch):
        _check_shapes(params, grads)
        self.t += 1
        lr = self.schedule.lr_at(epoch)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class NesterovSGD:
    """SGD with Nesterov momentum; updates parameter arrays in place."""

    schedule: StageSchedule
    momentum: float = 0.9
    t: int = 0
    velocity: dict = field(default_factory=dict)

    def step(self, params, grads, epoch):
        _check_shapes(params, grads)
        self.t += 1
        lr = self.schedule.lr_at(epoch)
        for name, p in params.items():
            g = grads[name]
            buf = self.velocity.setdefault(name, np.zeros_like(p))
            buf *= self.momentum
            buf += g
            p -= lr * (g + self.momentum * buf)
