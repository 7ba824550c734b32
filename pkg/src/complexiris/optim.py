"""Nesterov SGD with global gradient-norm clipping and a step schedule."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter
from .ctensor import ComplexTensor

# (first epoch, learning rate); epochs are 0-based
FULL_SCHEDULE = ((0, 0.01), (10, 0.1), (130, 0.01), (160, 0.001))
DESK_SCHEDULE = ((0, 0.01), (3, 0.1), (21, 0.01), (27, 0.001))


class NumericalError(FloatingPointError):
    pass


def learning_rate(schedule, epoch: int) -> float:
    starts = [s for s, _ in schedule]
    i = bisect.bisect_right(starts, epoch) - 1
    if i < 0:
        raise ValueError(f"schedule does not cover epoch {epoch}")
    return float(schedule[i][1])


def parse_schedule(text: str):
    """Parse ``"0:0.01,10:0.1,130:0.01"`` into a schedule tuple."""
    items = []
    for part in text.split(","):
        start, lr = part.split(":")
        items.append((int(start), float(lr)))
    items.sort()
    if not items or items[0][0] != 0:
        raise ValueError("learning-rate schedule must start at epoch 0")
    if any(lr <= 0 for _, lr in items):
        raise ValueError("learning rates must be positive")
    return tuple(items)


def format_schedule(schedule) -> str:
    return ",".join(f"{s}:{lr:g}" for s, lr in schedule)


@dataclass
class OptimState:
    momentum: float = 0.9
    clip_norm: float = 1.0
    schedule: tuple = FULL_SCHEDULE
    velocity: dict = field(default_factory=dict)
    last_grad_norm: float = 0.0


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g.re.astype(np.float64) ** 2) + np.sum(g.im.astype(np.float64) ** 2))
    return math.sqrt(total)


def sgd_step(params, state: OptimState, epoch: int, grads=None):
    """One clipped Nesterov update, in place on ``params``.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero. Gradients are cleared afterwards.
    """
    params = [p for p in params if p.trainable]
    if grads is None:
        grads = [p.grad for p in params]
    grads = [ComplexTensor.zeros(p.value.shape, p.value.dtype) if g is None else g
             for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if p.real_only:
            g.im[...] = 0
        if not (np.all(np.isfinite(g.re)) and np.all(np.isfinite(g.im))):
            raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
    norm = global_grad_norm(grads)
    state.last_grad_norm = norm
    factor = state.clip_norm / norm if norm > state.clip_norm else 1.0
    lr = learning_rate(state.schedule, epoch)
    mu = state.momentum
    for p, g in zip(params, grads):
        key = id(p) if p.name is None else p.name
        gr, gi = g.re * factor, g.im * factor
        v = state.velocity.get(key)
        if v is None:
            v = ComplexTensor.zeros(p.value.shape, p.value.dtype)
        vr = mu * v.re + gr
        vi = mu * v.im + gi
        state.velocity[key] = ComplexTensor(vr, vi, dtype=p.value.dtype)
        new_re = p.value.re - lr * (gr + mu * vr)
        new_im = p.value.im - lr * (gi + mu * vi)
        if p.real_only:
            new_im = np.zeros_like(new_im)
        p.value = ComplexTensor(new_re, new_im, dtype=p.value.dtype)
        p.grad = None
    return params, state
