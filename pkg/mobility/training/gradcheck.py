"""
End-to-end gradient verification on a tiny configuration: encoder,
tokenizer, fusion, frozen backbone and head, against central differences.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional
import time

from mobility.config import ModelConfig, TrainConfig
from mobility.core.tensor import ComputationTape, finite_diff_check_params
from mobility.core.trajectory import GridSpec, SampleBatch
from mobility.data.loader import build_samples, observed_only
from mobility.data.synthetic import generate_synthetic
from mobility.model.predictor import build_model, sequence_loss
from mobility.semantic.cache import SemanticContext
from mobility.semantic.stub import StubEmbedder
from mobility.training.optimizer import AdamW


@dataclass
class GradcheckResult:
    max_error: float
    errors: Dict[str, float]
    backbone_unchanged: bool
    frozen_in_optimizer: int
    elapsed: float
    parameters: int = 0
    worst: Optional[str] = field(default=None)

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance and self.backbone_unchanged and self.frozen_in_optimizer == 0


def tiny_config(dim: int = 16, grid: GridSpec = GridSpec(10, 10), seed: int = 0) -> TrainConfig:
    return TrainConfig(
        seed=seed,
        model=ModelConfig(
            d_model=dim, tod_dim=8, dow_dim=8, loc_dim=8, coord_dim=8,
            heads=4 if dim % 4 == 0 else 1, intra_layers=1, inter_layers=1, dropout=0.0,
            grid_width=grid.width, grid_height=grid.height, top_k=5,
        ),
        backbone='frozen-random:1:2',
    )


def run_gradcheck(dim: int = 16, grid: GridSpec = GridSpec(10, 10), users: int = 2, seed: int = 0,
                  max_coords: Optional[int] = 6, h: float = 1e-5) -> GradcheckResult:
    start = time.perf_counter()
    config = tiny_config(dim, grid, seed)
    dataset = generate_synthetic(users, 8, noise=0.3, seed=seed, grid=grid)
    samples = observed_only([s for t in dataset.trajectories for s in build_samples(t, grid, num_days=8)])
    batch = SampleBatch.from_samples(samples)
    context = SemanticContext(StubEmbedder(dim, seed), grid)
    te_hist, te_task = context.for_batch(samples)

    model = build_model(config, grid)
    params = model.named_parameters()

    def loss_fn():
        return sequence_loss(model.forward(batch, te_hist, te_task, training=False), batch.targets)

    errors = finite_diff_check_params(loss_fn, params, h=h, max_coords=max_coords, seed=seed)

    # One optimizer step must leave the frozen backbone untouched
    before = model.backbone.checksum()
    optimizer = AdamW(params, lr=1e-2, weight_decay=0.01)
    optimizer.zero_grad()
    with ComputationTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    optimizer.step()
    after = model.backbone.checksum()

    worst = max(errors, key=errors.get) if errors else None
    return GradcheckResult(
        max_error=max(errors.values(), default=0.0),
        errors=errors,
        backbone_unchanged=before == after,
        frozen_in_optimizer=optimizer.registered_frozen(),
        elapsed=time.perf_counter() - start,
        parameters=int(sum(p.size for p in params.values())),
        worst=worst,
    )
