"""
Minimal reverse-mode differentiable arrays on top of numpy.

Every op computes its forward value eagerly and, when a ComputationTape is
active and any input requires a gradient, records a closure that maps the
output gradient to input gradients. ComputationTape.backward replays those
closures in exact reverse order.

Frozen tensors (backbone weights) still receive gradients so that upstream
parameters can be trained through them; optimizers refuse to register them.
"""

import math
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mobility.config import Config
from mobility.errors import (
    ShapeMismatch,
    IndexOutOfRange,
    NonFiniteValue,
    NonFiniteGradient,
)

GELU_COEFF = 0.7978845608  # sqrt(2/pi), pinned
GELU_CUBIC = 0.044715

_local = threading.local()


def _tape_stack() -> List['ComputationTape']:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def current_tape() -> Optional['ComputationTape']:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """64-bit array value with an optional gradient slot"""

    __slots__ = ('values', 'requires_grad', 'frozen', 'grad', 'name')

    def __init__(self, values, requires_grad: bool = False, frozen: bool = False,
                 name: Optional[str] = None):
        arr = np.array(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"non-finite values in tensor {name or ''}".strip())
        self.values = arr
        self.requires_grad = requires_grad or frozen
        self.frozen = frozen
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, values: np.ndarray, requires_grad: bool) -> 'Tensor':
        obj = cls.__new__(cls)
        obj.values = values
        obj.requires_grad = requires_grad
        obj.frozen = False
        obj.grad = None
        obj.name = None
        return obj

    @classmethod
    def constant(cls, values) -> 'Tensor':
        return cls(values, requires_grad=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeMismatch(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def assign(self, values: np.ndarray):
        """Replace values in place (optimizer updates, checkpoint restore)"""
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ShapeMismatch(f"cannot assign {arr.shape} to tensor of shape {self.values.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"non-finite values assigned to {self.name or 'tensor'}")
        self.values = arr

    def zero_grad(self):
        self.grad = None

    def __add__(self, other): return add(self, _as_tensor(other))
    def __radd__(self, other): return add(_as_tensor(other), self)
    def __sub__(self, other): return sub(self, _as_tensor(other))
    def __mul__(self, other): return mul(self, _as_tensor(other))
    def __rmul__(self, other): return mul(_as_tensor(other), self)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return scale(self, -1.0)

    def __repr__(self):
        flags = ' frozen' if self.frozen else (' grad' if self.requires_grad else '')
        return f"Tensor(shape={self.shape}{flags})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.constant(x)


class TapeEntry:
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class ComputationTape:
    """Ordered record of executed ops; use as a context manager"""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.backward_visits = 0

    def __enter__(self) -> 'ComputationTape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def record(self, entry: TapeEntry):
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into .grad of every leaf that requires it"""
        if loss.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        leaves: Dict[int, Tensor] = {}

        for entry in reversed(self.entries):
            self.backward_visits += 1
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            input_grads = entry.backward(g)
            for tensor, tg in zip(entry.inputs, input_grads):
                if tg is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg
                leaves[key] = tensor

        for key, g in grads.items():
            tensor = leaves.get(key)
            if tensor is not None:
                tensor.grad = g if tensor.grad is None else tensor.grad + g
        return grads


def _result(op: str, values: np.ndarray, inputs: Tuple[Tensor, ...],
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if Config.DEBUG and not np.isfinite(values).all():
        raise NonFiniteValue(f"{op} produced non-finite values")
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(values, needs_grad)
    if needs_grad:
        tape.record(TapeEntry(op, inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values + b.values
    except ValueError as e:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}: {e}")
    return _result('add', values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values - b.values
    except ValueError as e:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}: {e}")
    return _result('sub', values, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values * b.values
    except ValueError as e:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}: {e}")
    return _result('mul', values, (a, b),
                   lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _result('scale', a.values * c, (a,), lambda g: (g * c,))


# Linear algebra and layout

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (..., k, n); leading dims broadcast"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    values = np.matmul(a.values, b.values)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result('matmul', values, (a, b), backward)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return _result('swapaxes', np.swapaxes(a.values, axis1, axis2), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        values = a.values.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}: {e}")
    return _result('reshape', values, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat of {[t.shape for t in tensors]}: {e}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result('concat', values, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along one axis"""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] = g
        return (full,)

    return _result('narrow', a.values[index], (a,), backward)


def take(table: Tensor, indices) -> Tensor:
    """Row gather: table[indices] for an integer index array of any shape"""
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexOutOfRange(f"index outside [0, {rows}): min={idx.min()} max={idx.max()}")

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, idx, g)
        return (full,)

    return _result('take', table.values[idx], (table,), backward)


def sum_all(a: Tensor) -> Tensor:
    return _result('sum', np.array(a.values.sum()), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
        return _result('mean', np.array(a.values.mean()), (a,),
                       lambda g: (np.full(a.shape, float(g) / n),))
    n = a.shape[axis]
    values = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result('mean', values, (a,), backward)


# Nonlinearities

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted"""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result('softmax', y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm over {d} features got gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    values = x_hat * gamma.values + beta.values

    def backward(g):
        g_hat = g * gamma.values
        gx = inv_std * (g_hat
                        - g_hat.mean(axis=-1, keepdims=True)
                        - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True))
        g_gamma = (g * x_hat).reshape(-1, d).sum(axis=0)
        g_beta = g.reshape(-1, d).sum(axis=0)
        return gx, g_gamma, g_beta

    return _result('layer_norm', values, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU"""
    v = x.values
    t = np.tanh(GELU_COEFF * (v + GELU_CUBIC * v ** 3))
    values = 0.5 * v * (1.0 + t)

    def backward(g):
        dt = (1.0 - t ** 2) * GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _result('gelu', values, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    z = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result('sigmoid', y, (x,), lambda g: (g * y * (1.0 - y),))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor._wrap(keep, False))


# Losses

def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]"""
    if logits.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects (batch, classes), got {logits.shape}")
    b, v = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (b,):
        raise ShapeMismatch(f"expected {b} targets, got {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise IndexOutOfRange(f"target outside [0, {v})")

    shifted = logits.values - logits.values.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    loss = -log_p[rows, t].mean()

    def backward(g):
        grad = np.exp(log_p)
        grad[rows, t] -= 1.0
        return (grad * (float(g) / b),)

    return _result('cross_entropy', np.array(loss), (logits,), backward)


# Verification

def finite_diff_check(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5,
                      coords: Optional[Sequence[int]] = None) -> float:
    """
    Compare the tape gradient of scalar f at theta with central differences.

    Returns max over the checked coordinates of
    |analytic - numeric| / max(1, |analytic|).
    """
    if not theta.requires_grad:
        theta.requires_grad = True
    return finite_diff_check_params(lambda: f(theta), {'theta': theta}, h=h, coords=coords)['theta']


def finite_diff_check_params(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor],
                             h: float = 1e-5, max_coords: Optional[int] = None,
                             seed: int = 0, coords: Optional[Sequence[int]] = None) -> Dict[str, float]:
    """Per-parameter worst relative error; explicit coords, a random sample of max_coords, or all"""
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.zero_grad()
    with ComputationTape() as tape:
        out = loss_fn()
    tape.backward(out)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.values)).reshape(-1)
                for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        if coords is not None:
            checked = coords
        elif max_coords is None or p.size <= max_coords:
            checked = range(p.size)
        else:
            checked = rng.choice(p.size, size=max_coords, replace=False)
        original = p.values
        worst = 0.0
        for i in checked:
            bumped = original.copy().reshape(-1)
            bumped[i] += h
            p.values = bumped.reshape(original.shape)
            f_plus = loss_fn().item()
            bumped[i] -= 2 * h
            p.values = bumped.reshape(original.shape)
            f_minus = loss_fn().item()
            p.values = original

            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic[name][i]
            if not (math.isfinite(a) and math.isfinite(numeric)):
                raise NonFiniteGradient(f"{name}[{i}]: analytic={a}, numeric={numeric}")
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        errors[name] = worst
    return errors
