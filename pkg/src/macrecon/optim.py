"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NonFiniteError, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState) -> tuple[list[Tensor], AdamState]:
    """One Adam update.  Returns fresh parameter tensors; ``state`` is updated in place.

    The whole step is rejected before anything is touched if any gradient is
    non-finite.  A parameter whose gradient is ``None`` or identically zero is
    skipped together with its moments, so a zero gradient never moves a
    parameter regardless of accumulated momentum.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    gs = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else np.asarray(g.data if isinstance(g, Tensor) else g)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad {i} has shape {g.shape}, param has {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: gradient {i} (shape {p.shape}) is not finite")
        gs.append(g)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("adam_step: optimizer state tracks a different parameter list")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    out = []
    for p, g, m, v in zip(params, gs, state.m, state.v):
        if not g.any():
            out.append(p)
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        out.append(Tensor((p.data - update).astype(p.dtype, copy=False)))
    return out, state


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, params, grads):
        new, self.state = adam_step(params, grads, self.state)
        return new
