from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional
import json

from mobility.metrics.breakdown import TemporalBreakdown
from mobility.metrics.ranking import RankedPrediction

REPORT_VERSION = 1
METRIC_KEYS = ('acc@1', 'acc@3', 'acc@5', 'mrr', 'dtw', 'bleu')


@dataclass
class PredictionReport:
    """Evaluation of one predictor on one split"""

    predictor: str
    split: str
    metrics: Dict[str, float]
    breakdown: TemporalBreakdown
    samples: int
    observed_slots: int
    data_fingerprint: str
    config: Dict[str, Any] = field(default_factory=dict)
    bleu_aggregation: str = 'per-trajectory mean'
    bleu_smoothing: str = 'none'
    top_k: int = 10

    # Per-slot rankings (optional, large)
    predictions: Optional[List[RankedPrediction]] = field(default=None)

    def to_dict(self) -> dict:
        base = {
            'version': REPORT_VERSION,
            'predictor': self.predictor,
            'split': self.split,
            'metrics': self.metrics,
            'breakdown': self.breakdown.to_dict(),
            'samples': self.samples,
            'observed_slots': self.observed_slots,
            'data_fingerprint': self.data_fingerprint,
            'config': self.config,
            'bleu_aggregation': self.bleu_aggregation,
            'bleu_smoothing': self.bleu_smoothing,
            'top_k': self.top_k,
        }
        if self.predictions is not None:
            base['predictions'] = [p.to_dict() for p in self.predictions]
        return base

    @classmethod
    def from_dict(cls, data: dict) -> 'PredictionReport':
        predictions = data.get('predictions')
        return cls(
            predictor=data['predictor'],
            split=data['split'],
            metrics=dict(data['metrics']),
            breakdown=TemporalBreakdown.from_dict(data['breakdown']),
            samples=data['samples'],
            observed_slots=data['observed_slots'],
            data_fingerprint=data['data_fingerprint'],
            config=data.get('config', {}),
            bleu_aggregation=data.get('bleu_aggregation', 'per-trajectory mean'),
            bleu_smoothing=data.get('bleu_smoothing', 'none'),
            top_k=data.get('top_k', 10),
            predictions=[RankedPrediction.from_dict(p) for p in predictions] if predictions is not None else None,
        )

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> 'PredictionReport':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))

    def summary_lines(self) -> List[str]:
        lines = [f"{self.predictor} on {self.split}: {self.samples} samples, {self.observed_slots} observed slots"]
        lines += [f"  {key:<6} {self.metrics[key]:.4f}" for key in METRIC_KEYS if key in self.metrics]
        if self.breakdown.weekday is not None:
            lines.append(f"  weekday acc@1 {self.breakdown.weekday:.4f}")
        if self.breakdown.weekend is not None:
            lines.append(f"  weekend acc@1 {self.breakdown.weekend:.4f}")
        return lines
