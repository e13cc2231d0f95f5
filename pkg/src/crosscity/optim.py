"""ADAM optimizer over lists of leaf tensors."""

import numpy as np

from .errors import NumericalError


class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, state, checked=False):
    """One ADAM update in place. Gradients are read from ``p.grad``.

    Parameters with a None gradient are treated as zero-gradient.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        if checked and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at parameter {i}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
