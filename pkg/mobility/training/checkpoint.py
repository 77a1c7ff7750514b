from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from mobility.config import TrainConfig
from mobility.core.container import read_container, write_container
from mobility.errors import CheckpointFormatError, ChecksumMismatch
from mobility.model.predictor import MobilityModel, build_model

PARAM_PREFIX = 'param/'


@dataclass
class Checkpoint:
    """Trainable parameters, optimizer moments and run bookkeeping"""

    config: TrainConfig
    parameters: Dict[str, np.ndarray]
    backbone_checksum: str
    epoch: int = 0
    global_step: int = 0
    optimizer_step: int = 0
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)
    val_history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc1: float = -1.0
    loss_trace: List[float] = field(default_factory=list)

    def save(self, path: str | Path):
        meta = {
            'kind': 'checkpoint',
            'config': self.config.to_dict(),
            'backbone_checksum': self.backbone_checksum,
            'epoch': self.epoch,
            'global_step': self.global_step,
            'optimizer_step': self.optimizer_step,
            'val_history': self.val_history,
            'best_epoch': self.best_epoch,
            'best_val_acc1': self.best_val_acc1,
            'loss_trace': self.loss_trace,
        }
        tensors = {PARAM_PREFIX + name: values for name, values in self.parameters.items()}
        tensors.update(self.optimizer_state)
        write_container(path, meta, tensors)

    @classmethod
    def load(cls, path: str | Path) -> 'Checkpoint':
        meta, tensors = read_container(path)
        if meta.get('kind') != 'checkpoint':
            raise CheckpointFormatError(f"{path} is not a training checkpoint (kind={meta.get('kind')!r})")
        return cls(
            config=TrainConfig.from_dict(meta['config']),
            parameters={name[len(PARAM_PREFIX):]: values for name, values in tensors.items()
                        if name.startswith(PARAM_PREFIX)},
            backbone_checksum=meta['backbone_checksum'],
            epoch=meta['epoch'],
            global_step=meta['global_step'],
            optimizer_step=meta['optimizer_step'],
            optimizer_state={name: values for name, values in tensors.items()
                             if not name.startswith(PARAM_PREFIX)},
            val_history=meta['val_history'],
            best_epoch=meta['best_epoch'],
            best_val_acc1=meta['best_val_acc1'],
            loss_trace=meta['loss_trace'],
        )


def restore_model(checkpoint: Checkpoint) -> MobilityModel:
    """Rebuild the model from its config and load the stored parameters"""
    model = build_model(checkpoint.config)
    actual = model.backbone.checksum()
    if actual != checkpoint.backbone_checksum:
        raise ChecksumMismatch(checkpoint.backbone_checksum, actual)
    model.load_state_dict(checkpoint.parameters)
    return model
