"""
Cross-representational fusion, frozen backbone pass and location head.

    CE_i     = SE~_i + TE_i             history segment tokens, i = 1..N
    CE_{N+j} = E~_{T+j} + TE_T          future temporal encodings, j = 1..H
    logits   = backbone(CE)[N:] @ W_o + b_o
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from mobility.config import ModelConfig, TrainConfig
from mobility.core.tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    matmul,
    narrow,
    reshape,
    softmax_rows,
    take,
)
from mobility.core.trajectory import GridSpec, MISSING, SampleBatch
from mobility.errors import AllTargetsMissing, ShapeMismatch
from mobility.model.backbone import BackboneSpec, BaseBackbone, get_backbone
from mobility.model.blocks import AttentionCounter
from mobility.model.encoder import EncoderParams, encode_observation, encode_temporal
from mobility.model.tokenizer import HierarchicalTokenizer


@dataclass
class FusedSequence:
    sequence: Tensor  # (..., N + H, D)
    history_positions: int

    @property
    def horizon(self) -> int:
        return self.sequence.shape[-2] - self.history_positions


def _as_constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.constant(x)


def fuse(segment_tokens: Tensor, history_te, future_temporal: Tensor, task_te,
         use_traj_info: bool = True, use_task_desc: bool = True) -> FusedSequence:
    """
    Add history TE to each segment token and the single task TE to every
    future position, then concatenate along the sequence axis. Disabled TE
    terms contribute zero.
    """
    history_te = _as_constant(history_te)
    task_te = _as_constant(task_te)
    d = segment_tokens.shape[-1]
    if history_te.shape != segment_tokens.shape:
        raise ShapeMismatch(f"history TE {history_te.shape} does not match segment tokens {segment_tokens.shape}")
    if future_temporal.shape[-1] != d or task_te.shape[-1] != d:
        raise ShapeMismatch(f"future {future_temporal.shape} / task TE {task_te.shape} width differs from {d}")
    if task_te.shape[:-1] != future_temporal.shape[:-2]:
        raise ShapeMismatch(f"task TE {task_te.shape} does not match future batch {future_temporal.shape}")

    history = add(segment_tokens, history_te) if use_traj_info else segment_tokens
    if use_task_desc:
        broadcast = reshape(task_te, (*task_te.shape[:-1], 1, d))
        future = add(future_temporal, broadcast)
    else:
        future = future_temporal
    return FusedSequence(concat([history, future], axis=-2), segment_tokens.shape[-2])


@dataclass
class HeadParams:
    w_o: Tensor  # (D, V)
    b_o: Tensor  # (V,)

    @classmethod
    def initialize(cls, d: int, vocabulary: int, rng: np.random.Generator) -> 'HeadParams':
        return cls(
            w_o=Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, vocabulary)), requires_grad=True, name='head.w_o'),
            b_o=Tensor(np.zeros(vocabulary), requires_grad=True, name='head.b_o'),
        )

    def named_parameters(self) -> Dict[str, Tensor]:
        return {'head.w_o': self.w_o, 'head.b_o': self.b_o}


def head_logits(hidden: Tensor, head: HeadParams) -> Tensor:
    """(..., D) -> (..., V)"""
    if hidden.ndim == 1:
        return add(reshape(matmul(reshape(hidden, (1, hidden.shape[0])), head.w_o), (head.w_o.shape[1],)), head.b_o)
    return add(matmul(hidden, head.w_o), head.b_o)


def predict_distribution(hidden: Tensor, head: HeadParams) -> Tensor:
    """softmax(W_o h + b_o) over the location vocabulary"""
    return softmax_rows(head_logits(hidden, head))


def sequence_loss(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy over observed targets; (..., H, V) logits, (..., H) targets"""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} do not match targets {targets.shape}")
    flat_targets = targets.reshape(-1)
    observed = np.flatnonzero(flat_targets != MISSING)
    if observed.size == 0:
        raise AllTargetsMissing("no observed target to score")
    rows = reshape(logits, (flat_targets.size, logits.shape[-1]))
    return cross_entropy(take(rows, observed), flat_targets[observed])


def rank_locations(logits: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Location ids by descending logit, ties by ascending id; top-k if given"""
    order = np.argsort(-logits, axis=-1, kind='stable')
    return order if k is None else order[..., :k]


class MobilityModel:
    """Encoder -> tokenizer -> fusion -> frozen backbone -> head"""

    def __init__(self, config: ModelConfig, grid: GridSpec, backbone: BaseBackbone,
                 rng: np.random.Generator,
                 no_hierarchical_attention: bool = False,
                 no_tokenization: bool = False,
                 use_traj_info: bool = True,
                 use_task_desc: bool = True):
        self.config = config
        self.grid = grid
        self.backbone = backbone
        self.no_tokenization = no_tokenization
        self.use_traj_info = use_traj_info
        self.use_task_desc = use_task_desc

        self.encoder = EncoderParams.initialize(config, grid, rng)
        depth = 0 if no_hierarchical_attention else None
        self.tokenizer = HierarchicalTokenizer(config, rng, intra_layers=depth, inter_layers=depth)
        self.head = HeadParams.initialize(config.d_model, grid.vocabulary_size, rng)

    def named_parameters(self) -> Dict[str, Tensor]:
        """Trainable parameters only"""
        params = dict(self.encoder.named_parameters())
        if not self.no_tokenization:
            params.update(self.tokenizer.named_parameters())
        params.update(self.head.named_parameters())
        return params

    def frozen_parameters(self) -> Dict[str, Tensor]:
        return self.backbone.named_parameters()

    def history_stream(self, batch: SampleBatch, history_te: np.ndarray, training: bool,
                       rng: Optional[np.random.Generator], counter: Optional[AttentionCounter]):
        encoded = encode_observation(batch.history_slots, batch.history_dows, batch.history_locations,
                                     self.grid, self.encoder)
        if not self.no_tokenization:
            return self.tokenizer(encoded, training, rng, counter), history_te
        # Dense path: every history slot is its own position, carrying its day's TE
        if counter is not None:
            counter.record('dense_history', encoded.shape[-2])
        return encoded, np.repeat(history_te, self.config.segment_length, axis=-2)

    def forward(self, batch: SampleBatch, history_te: np.ndarray, task_te: np.ndarray,
                training: bool = False, rng: Optional[np.random.Generator] = None,
                counter: Optional[AttentionCounter] = None) -> Tensor:
        """Logits (B, H, V) for the future slots"""
        history, te = self.history_stream(batch, history_te, training, rng, counter)
        future = encode_temporal(batch.future_slots, batch.future_dows, self.encoder)
        fused = fuse(history, te, future, task_te, self.use_traj_info, self.use_task_desc)
        hidden = self.backbone.forward(fused.sequence, counter)
        horizon = narrow(hidden, -2, fused.history_positions, hidden.shape[-2])
        return head_logits(horizon, self.head)

    def rankings(self, batch: SampleBatch, history_te: np.ndarray, task_te: np.ndarray,
                 k: Optional[int] = None, full: bool = False) -> np.ndarray:
        """Top-k location ids (B, H, k) in eval mode (k defaults to config.top_k); full=True orders all V cells"""
        logits = self.forward(batch, history_te, task_te, training=False)
        if full:
            return rank_locations(logits.values)
        return rank_locations(logits.values, k if k is not None else self.config.top_k)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise ShapeMismatch(f"state is missing parameters: {', '.join(missing)}")
        for name, p in params.items():
            p.assign(state[name])


def build_model(config: TrainConfig, grid: Optional[GridSpec] = None) -> MobilityModel:
    """Deterministic model construction from a training config"""
    model_config = config.model
    grid = grid or GridSpec(model_config.grid_width, model_config.grid_height)
    backbone = get_backbone(BackboneSpec.parse(config.backbone, seed=config.seed), model_config.d_model)
    return MobilityModel(
        model_config,
        grid,
        backbone,
        np.random.default_rng(config.seed),
        no_hierarchical_attention=config.no_hierarchical_attention,
        no_tokenization=config.no_tokenization,
        use_traj_info=not config.no_traj_info,
        use_task_desc=not config.no_task_desc,
    )
