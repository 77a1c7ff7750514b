"""
AdamW with decoupled weight decay:

    theta <- theta * (1 - lr * wd)
    m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
import math

import numpy as np

from mobility.core.tensor import Tensor
from mobility.errors import FrozenParameterError, NonFiniteGradient, ShapeMismatch


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
               lr: float, wd: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Pure update; returns new parameter arrays and the advanced state"""
    step = state.step + 1
    new_state = AdamState(step=step)
    updated = {}
    for name, theta in params.items():
        g = grads.get(name)
        g = np.zeros_like(theta) if g is None else g
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))

        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)

        decayed = theta * (1.0 - lr * wd)
        updated[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state.m[name] = m
        new_state.v[name] = v
    return updated, new_state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients so their global L2 norm is at most max_norm"""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if not np.isfinite(total):
        raise NonFiniteGradient(f"gradient norm is {total}")
    if max_norm <= 0 or total <= max_norm:
        return grads, total
    factor = max_norm / (total + 1e-12)
    return {name: g * factor for name, g in grads.items()}, total


def scheduled_lr(step: int, total_steps: int, peak: float, warmup_ratio: float = 0.0,
                 min_lr_ratio: float = 1.0) -> float:
    """
    Linear warmup to `peak`, then cosine decay to `peak * min_lr_ratio`.

    `step` counts from 0; min_lr_ratio=1 gives a constant rate after warmup.
    """
    warmup = int(total_steps * warmup_ratio)
    if step < warmup:
        return peak * (step + 1) / warmup
    decay_steps = max(1, total_steps - warmup)
    progress = min(1.0, (step - warmup) / decay_steps)
    floor = peak * min_lr_ratio
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Optimizer over named trainable tensors; frozen tensors are refused"""

    def __init__(self, params: Dict[str, Tensor], lr: float = 3e-4, weight_decay: float = 0.01,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: Optional[float] = None):
        frozen = sorted(name for name, p in params.items() if p.frozen)
        if frozen:
            raise FrozenParameterError(f"frozen tensors cannot be optimized: {', '.join(frozen)}")
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState()
        self.last_grad_norm = 0.0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        grads = {name: p.grad if p.grad is not None else np.zeros_like(p.values)
                 for name, p in self.params.items()}
        if self.clip_norm:
            grads, self.last_grad_norm = clip_grad_norm(grads, self.clip_norm)
        updated, self.state = adamw_step(
            {name: p.values for name, p in self.params.items()},
            grads,
            self.state,
            self.lr,
            self.weight_decay,
            self.betas[0],
            self.betas[1],
            self.eps,
        )
        for name, values in updated.items():
            self.params[name].assign(values)

    def registered_frozen(self) -> int:
        """Audit: frozen tensors present in optimizer state"""
        return sum(1 for p in self.params.values() if p.frozen)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name in self.params:
            if name in self.state.m:
                arrays[f'adam_m/{name}'] = self.state.m[name]
                arrays[f'adam_v/{name}'] = self.state.v[name]
        return arrays

    def load_state_arrays(self, step: int, arrays: Dict[str, np.ndarray]):
        state = AdamState(step=step)
        for name in self.params:
            if f'adam_m/{name}' in arrays:
                state.m[name] = arrays[f'adam_m/{name}']
                state.v[name] = arrays[f'adam_v/{name}']
        self.state = state
