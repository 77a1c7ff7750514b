"""
Temporal tokenization: split the slot sequence into day segments, refine
each segment with intra-segment attention (weights shared across
segments), pool every segment to one token, then mix tokens with
inter-segment attention.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple
import math

import numpy as np

from mobility.config import ModelConfig
from mobility.core.tensor import (
    Tensor,
    matmul,
    mean,
    reshape,
    scale,
    softmax_rows,
)
from mobility.errors import EmptySegment, IndivisibleLength, ShapeMismatch
from mobility.model.blocks import AttentionCounter, BlockParams, initialize_stack, stack_blocks


def segment(sequence: Tensor, length: int) -> Tensor:
    """(..., T, D) -> (..., N, L, D); lossless"""
    if sequence.ndim < 2:
        raise ShapeMismatch(f"segment expects (..., T, D), got {sequence.shape}")
    *lead, total, d = sequence.shape
    if length < 1 or total % length != 0:
        raise IndivisibleLength(f"sequence length {total} not divisible by segment length {length}")
    return reshape(sequence, (*lead, total // length, length, d))


def intra_attention(segments: Tensor, layers: List[BlockParams], training: bool = False,
                    rng: Optional[np.random.Generator] = None,
                    counter: Optional[AttentionCounter] = None) -> Tensor:
    """Attention restricted to slots of the same segment"""
    n_segments = segments.shape[-3] if segments.ndim >= 3 else 1
    return stack_blocks(segments, layers, training, rng, counter, 'intra', n_segments)


def inter_attention(tokens: Tensor, layers: List[BlockParams], training: bool = False,
                    rng: Optional[np.random.Generator] = None,
                    counter: Optional[AttentionCounter] = None) -> Tensor:
    """Attention over the segment tokens"""
    return stack_blocks(tokens, layers, training, rng, counter, 'inter', 1)


@dataclass
class PoolParams:
    query: Tensor  # (D,)
    w_key: Tensor  # (D, D)
    w_value: Tensor  # (D, D)

    @classmethod
    def initialize(cls, d: int, rng: np.random.Generator) -> 'PoolParams':
        std = 1.0 / math.sqrt(d)
        return cls(
            query=Tensor(rng.normal(0.0, std, size=d), requires_grad=True, name='pool.query'),
            w_key=Tensor(rng.normal(0.0, std, size=(d, d)), requires_grad=True, name='pool.w_key'),
            w_value=Tensor(rng.normal(0.0, std, size=(d, d)), requires_grad=True, name='pool.w_value'),
        )

    def named_parameters(self) -> Dict[str, Tensor]:
        return {'pool.query': self.query, 'pool.w_key': self.w_key, 'pool.w_value': self.w_value}


def pool_with_weights(refined: Tensor, params: PoolParams) -> Tuple[Tensor, Tensor]:
    """Single-query attention pooling over the slot axis: (..., L, D) -> (..., D)"""
    if refined.ndim < 2 or refined.shape[-2] == 0:
        raise EmptySegment(f"cannot pool segment of shape {refined.shape}")
    *lead, length, d = refined.shape
    keys = matmul(refined, params.w_key)
    values = matmul(refined, params.w_value)
    scores = matmul(keys, reshape(params.query, (d, 1)))  # (..., L, 1)
    scores = scale(reshape(scores, (*lead, 1, length)), 1.0 / math.sqrt(d))
    weights = softmax_rows(scores)  # (..., 1, L)
    pooled = matmul(weights, values)  # (..., 1, D)
    return reshape(pooled, (*lead, d)), reshape(weights, (*lead, length))


def pool(refined: Tensor, params: PoolParams) -> Tensor:
    return pool_with_weights(refined, params)[0]


def mean_pool(refined: Tensor) -> Tensor:
    if refined.ndim < 2 or refined.shape[-2] == 0:
        raise EmptySegment(f"cannot pool segment of shape {refined.shape}")
    return mean(refined, axis=-2)


class HierarchicalTokenizer:
    """segment -> intra attention -> pool -> inter attention"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 intra_layers: Optional[int] = None, inter_layers: Optional[int] = None):
        self.segment_length = config.segment_length
        self.pooling = config.pooling
        d = config.d_model
        n_intra = config.intra_layers if intra_layers is None else intra_layers
        n_inter = config.inter_layers if inter_layers is None else inter_layers
        self.intra_layers = initialize_stack(n_intra, d, config.heads, rng, config.dropout, prefix='intra')
        self.pool_params = PoolParams.initialize(d, rng)
        self.inter_layers = initialize_stack(n_inter, d, config.heads, rng, config.dropout, prefix='inter')

    def named_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for i, block in enumerate(self.intra_layers):
            params.update(block.named_parameters(f'intra.{i}'))
        if self.pooling == 'attention':
            params.update(self.pool_params.named_parameters())
        for i, block in enumerate(self.inter_layers):
            params.update(block.named_parameters(f'inter.{i}'))
        return params

    def __call__(self, encoded: Tensor, training: bool = False,
                 rng: Optional[np.random.Generator] = None,
                 counter: Optional[AttentionCounter] = None) -> Tensor:
        """(..., T, D) slot encodings -> (..., N, D) segment tokens"""
        segments = segment(encoded, self.segment_length)
        refined = intra_attention(segments, self.intra_layers, training, rng, counter)
        if self.pooling == 'attention':
            tokens = pool(refined, self.pool_params)
        else:
            tokens = mean_pool(refined)
        return inter_attention(tokens, self.inter_layers, training, rng, counter)
