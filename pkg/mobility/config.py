from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Optional, Tuple, Dict, Any
import json
import logging
import os

from dotenv import load_dotenv

from mobility.errors import UsageError

load_dotenv()


def _env_flag(name: str, default: bool = False) -> bool:
    return os.environ.get(name, str(default)).lower() in ('true', '1', 'yes')


class Config:
    """Global configuration"""

    # Output directories
    RESULTS_DIR: Path = Path(os.environ.get('MOBILITY_RESULTS_DIR', 'results'))
    CHECKPOINT_DIR: Path = RESULTS_DIR / 'checkpoints'
    REPORTS_DIR: Path = RESULTS_DIR / 'reports'
    LOGS_DIR: Path = Path(os.environ.get('MOBILITY_LOG_DIR', 'mobility/logs'))

    # Finite checks after every tensor op
    DEBUG: bool = _env_flag('MOBILITY_DEBUG')

    # Discretization
    SLOTS_PER_DAY: int = 48
    HISTORY_DAYS: int = 7
    GRID_WIDTH: int = 200
    GRID_HEIGHT: int = 200

    DEFAULT_TOP_K: int = 10
    GRADCHECK_TOLERANCE: float = 1e-4

    @classmethod
    def ensure_directories(cls):
        """Create necessary directories"""
        cls.CHECKPOINT_DIR.mkdir(parents=True, exist_ok=True)
        cls.REPORTS_DIR.mkdir(parents=True, exist_ok=True)
        cls.LOGS_DIR.mkdir(parents=True, exist_ok=True)


# Hyperparameter grids searched for the full-size runs
SEARCH_LEARNING_RATES: Tuple[float, ...] = (1e-4, 3e-4, 5e-4)
SEARCH_WEIGHT_DECAYS: Tuple[float, ...] = (0.0, 0.001, 0.01)

# Peak rate of the desk-scale warmup/cosine schedule
DESK_LEARNING_RATE: float = 3e-3

POOLING_MODES = ('attention', 'mean')


def _check_keys(cls, data: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")


@dataclass
class ModelConfig:
    """Architecture dimensions"""

    d_model: int = 64
    tod_dim: int = 128
    dow_dim: int = 128
    loc_dim: int = 256
    coord_dim: int = 128
    heads: int = 4
    intra_layers: int = 2
    inter_layers: int = 2
    dropout: float = 0.1
    pooling: str = 'attention'
    segment_length: int = Config.SLOTS_PER_DAY
    history_days: int = Config.HISTORY_DAYS
    horizon: int = Config.SLOTS_PER_DAY
    grid_width: int = Config.GRID_WIDTH
    grid_height: int = Config.GRID_HEIGHT
    top_k: int = Config.DEFAULT_TOP_K

    def validate(self):
        if self.d_model < 1 or self.d_model % self.heads != 0:
            raise UsageError(f"d_model={self.d_model} must be a positive multiple of heads={self.heads}")
        if self.pooling not in POOLING_MODES:
            raise UsageError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.top_k < 5:
            raise UsageError(f"top_k must be >= 5, got {self.top_k}")
        if min(self.intra_layers, self.inter_layers) < 0:
            raise UsageError("layer counts must be non-negative")
        if self.grid_width < 1 or self.grid_height < 1:
            raise UsageError("grid dimensions must be positive")

    @property
    def history_length(self) -> int:
        return self.history_days * self.segment_length

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        _check_keys(cls, data)
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainConfig:
    """Training run configuration, loadable from a JSON file"""

    learning_rate: float = DESK_LEARNING_RATE
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    # Linear warmup over this fraction of all steps, then cosine decay to learning_rate * min_lr_ratio
    warmup_ratio: float = 0.05
    min_lr_ratio: float = 0.1

    # Ablations
    no_hierarchical_attention: bool = False
    no_tokenization: bool = False
    no_traj_info: bool = False
    no_task_desc: bool = False

    model: ModelConfig = field(default_factory=ModelConfig)
    backbone: str = 'frozen-random:2:4'
    embedder: str = 'stub'

    data: Optional[str] = None
    split_ratios: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    clip_norm: float = 1.0

    def validate(self, logger: Optional[logging.Logger] = None):
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise UsageError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise UsageError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise UsageError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if not 0.0 <= self.min_lr_ratio <= 1.0:
            raise UsageError(f"min_lr_ratio must be in [0, 1], got {self.min_lr_ratio}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise UsageError(f"split ratios must sum to 1, got {self.split_ratios}")
        self.model.validate()

        if logger:
            if self.learning_rate not in (*SEARCH_LEARNING_RATES, DESK_LEARNING_RATE):
                logger.warning(f"learning_rate {self.learning_rate} outside grid {SEARCH_LEARNING_RATES} "
                               f"and desk default {DESK_LEARNING_RATE}")
            if self.weight_decay not in SEARCH_WEIGHT_DECAYS:
                logger.warning(f"weight_decay {self.weight_decay} outside grid {SEARCH_WEIGHT_DECAYS}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        data = dict(data)
        _check_keys(cls, data)
        if 'model' in data:
            data['model'] = ModelConfig.from_dict(data['model'])
        if 'split_ratios' in data:
            data['split_ratios'] = tuple(data['split_ratios'])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['split_ratios'] = list(self.split_ratios)
        return data

    @classmethod
    def load(cls, path: str | Path) -> 'TrainConfig':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)
