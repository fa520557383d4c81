"""AdamW with decoupled weight decay.

The update is deterministic given parameters, gradients, and state, so a
checkpointed run resumed mid-stream is bitwise identical to an
uninterrupted one.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               step: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """Apply one update in place on param / m / v.

    ``step`` is the 1-based count including this update; bias correction
    uses it directly. Decay multiplies the parameter before the moment
    term, so zero gradient with wd > 0 shrinks by exactly (1 - lr * wd).
    """
    if grad.shape != param.shape or m.shape != param.shape or v.shape != param.shape:
        raise ShapeError(
            f"adamw_step: param {param.shape}, grad {grad.shape}, "
            f"m {m.shape}, v {v.shape} must all match")
    if step < 1:
        raise ValueError(f"adamw_step: step must be >= 1, got {step}")
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """Holds first/second moments keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor], lr: float = 6e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p.data, grad, self.m[name], self.v[name], self.step_count,
                       self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat array view of the state for checkpointing."""
        out = {"optim.step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["optim.step"][0])
        for name in self.params:
            self.m[name] = np.array(arrays[f"optim.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"optim.v.{name}"], dtype=np.float64)
