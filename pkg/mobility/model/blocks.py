"""
Pre-norm gated transformer block:

    Z   = X + MHA(LN1(X))
    out = Z + (GELU(LN2(Z) W_1) W_2) * sigmoid(LN2(Z) W_gate)

Attention is full (non-causal) over the second-to-last axis; any leading
axes are treated as independent sequences.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import math

import numpy as np

from mobility.core.tensor import (
    Tensor,
    add,
    dropout,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    swapaxes,
)
from mobility.errors import ShapeMismatch

FFN_EXPANSION = 4


@dataclass
class BlockParams:
    """One gated block; w_q/w_k/w_v hold all heads side by side (d x h*d_k)"""

    ln1_gamma: Tensor
    ln1_beta: Tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    w_gate: Tensor
    w_1: Tensor
    w_2: Tensor
    heads: int = 4
    dropout: float = 0.0

    @classmethod
    def initialize(cls, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0,
                   frozen: bool = False, prefix: str = 'block') -> 'BlockParams':
        if d % heads != 0:
            raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")

        def matrix(fan_in, fan_out, name):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)),
                          requires_grad=True, frozen=frozen, name=f'{prefix}.{name}')

        def vector(fill, name):
            return Tensor(np.full(d, fill), requires_grad=True, frozen=frozen, name=f'{prefix}.{name}')

        hidden = FFN_EXPANSION * d
        return cls(
            ln1_gamma=vector(1.0, 'ln1_gamma'),
            ln1_beta=vector(0.0, 'ln1_beta'),
            w_q=matrix(d, d, 'w_q'),
            w_k=matrix(d, d, 'w_k'),
            w_v=matrix(d, d, 'w_v'),
            w_out=matrix(d, d, 'w_out'),
            ln2_gamma=vector(1.0, 'ln2_gamma'),
            ln2_beta=vector(0.0, 'ln2_beta'),
            w_gate=matrix(d, d, 'w_gate'),
            w_1=matrix(d, hidden, 'w_1'),
            w_2=matrix(hidden, d, 'w_2'),
            heads=heads,
            dropout=dropout,
        )

    TENSOR_FIELDS = ('ln1_gamma', 'ln1_beta', 'w_q', 'w_k', 'w_v', 'w_out',
                     'ln2_gamma', 'ln2_beta', 'w_gate', 'w_1', 'w_2')

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f'{prefix}.{name}': getattr(self, name) for name in self.TENSOR_FIELDS}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, Tensor], heads: int, dropout: float = 0.0) -> 'BlockParams':
        return cls(**{name: tensors[name] for name in cls.TENSOR_FIELDS}, heads=heads, dropout=dropout)


@dataclass
class AttentionCounter:
    """
    Score-matrix entries per sample for one layer of each attention stage
    (heads not multiplied).
    """

    entries: Dict[str, int] = field(default_factory=dict)
    calls: Dict[str, int] = field(default_factory=dict)

    def record(self, stage: str, seq_len: int, sequences: int = 1):
        self.entries[stage] = seq_len * seq_len * sequences
        self.calls[stage] = self.calls.get(stage, 0) + 1

    def get(self, stage: str) -> int:
        return self.entries.get(stage, 0)

    @property
    def history_entries(self) -> int:
        """Attention spent on the history before it reaches the backbone"""
        return self.get('intra') + self.get('inter') + self.get('dense_history')

    def complexity_summary(self, history_length: int, horizon: int) -> Dict[str, float]:
        """Recorded history cost against dense attention over the raw slots"""
        dense = history_length * history_length
        return {
            'history_entries': self.history_entries,
            'backbone_entries': self.get('backbone'),
            'dense_history_entries': dense,
            'dense_total_entries': (history_length + horizon) ** 2,
            'ratio': dense / self.history_entries if self.history_entries else float('inf'),
        }


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    x = reshape(x, (*lead, s, heads, d // heads))
    return swapaxes(x, -2, -3)  # (..., h, s, d_k)


def _merge_heads(x: Tensor) -> Tensor:
    x = swapaxes(x, -2, -3)  # (..., s, h, d_k)
    *lead, s, h, d_k = x.shape
    return reshape(x, (*lead, s, h * d_k))


def multi_head_attention(x: Tensor, params: BlockParams) -> Tensor:
    """Softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated then W_out"""
    q = _split_heads(matmul(x, params.w_q), params.heads)
    k = _split_heads(matmul(x, params.w_k), params.heads)
    v = _split_heads(matmul(x, params.w_v), params.heads)
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(params.d_k))
    context = matmul(softmax_rows(scores), v)
    return matmul(_merge_heads(context), params.w_out)


def gated_ffn(z: Tensor, params: BlockParams) -> Tensor:
    ffn = matmul(gelu(matmul(z, params.w_1)), params.w_2)
    return mul(ffn, sigmoid(matmul(z, params.w_gate)))


def gated_block(x: Tensor, params: BlockParams, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeMismatch(f"gated_block expects (..., s >= 1, d), got {x.shape}")
    if x.shape[-1] != params.d:
        raise ShapeMismatch(f"input width {x.shape[-1]} != block width {params.d}")

    attn = multi_head_attention(layer_norm(x, params.ln1_gamma, params.ln1_beta), params)
    z = add(x, dropout(attn, params.dropout, rng, training))
    ffn = gated_ffn(layer_norm(z, params.ln2_gamma, params.ln2_beta), params)
    return add(z, dropout(ffn, params.dropout, rng, training))


def stack_blocks(x: Tensor, layers: Sequence[BlockParams], training: bool = False,
                 rng: Optional[np.random.Generator] = None,
                 counter: Optional[AttentionCounter] = None, stage: str = 'attention',
                 sequences_per_sample: int = 1) -> Tensor:
    """Apply layers in order; zero layers is the identity"""
    if counter is not None and layers:
        counter.record(stage, x.shape[-2], sequences_per_sample)
    for params in layers:
        x = gated_block(x, params, training, rng)
    return x


def initialize_stack(count: int, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0,
                     frozen: bool = False, prefix: str = 'layer') -> List[BlockParams]:
    return [BlockParams.initialize(d, heads, rng, dropout, frozen, prefix=f'{prefix}.{i}')
            for i in range(count)]
