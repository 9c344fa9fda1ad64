"""Adam and Xavier initialization."""
import numpy as np

from .tensor import Tensor


class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state, maximize=False):
    """Apply one bias-corrected Adam update in place.

    ``grads`` is a sequence aligned with ``params``. With ``maximize`` the
    update ascends instead of descending.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {p.name or 'parameter'}: "
                             f"param {p.shape}, grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {p.name or 'parameter'}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    sign = 1.0 if maximize else -1.0
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p.data = p.data + sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def xavier_init(rows, cols, rng, name=None):
    """Glorot-uniform ``rows x cols`` parameter tensor."""
    if rows < 1 or cols < 1:
        raise ValueError("xavier_init needs rows, cols >= 1")
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True, name=name)
