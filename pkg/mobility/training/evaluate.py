from typing import Dict, List, Optional, Sequence

import numpy as np

from mobility.config import Config
from mobility.core.result import PredictionReport
from mobility.core.trajectory import GridSpec, PredictionSample, SampleBatch, data_fingerprint
from mobility.errors import EmptySplit
from mobility.metrics.base import BasePredictor
from mobility.metrics.breakdown import temporal_breakdown
from mobility.metrics.ranking import RankedPrediction, accuracy_at_k, mrr
from mobility.metrics.sequence import mean_bleu, mean_dtw
from mobility.model.predictor import MobilityModel
from mobility.semantic.cache import SemanticContext

EVAL_BATCH = 64


class ModelPredictor(BasePredictor):
    """Eval-mode rankings from a trained model"""

    def __init__(self, model: MobilityModel, context: SemanticContext, batch_size: int = EVAL_BATCH):
        self.model = model
        self.context = context
        self.batch_size = batch_size

    @property
    def name(self) -> str:
        return 'model'

    def rank(self, samples: Sequence[PredictionSample], k: int) -> np.ndarray:
        chunks = []
        for start in range(0, len(samples), self.batch_size):
            chunk = samples[start:start + self.batch_size]
            te_hist, te_task = self.context.for_batch(chunk)
            chunks.append(self.model.rankings(SampleBatch.from_samples(chunk), te_hist, te_task, k))
        return np.concatenate(chunks, axis=0)


def ranking_metrics(preds: Sequence[RankedPrediction]) -> Dict[str, float]:
    return {
        'acc@1': accuracy_at_k(preds, 1),
        'acc@3': accuracy_at_k(preds, 3),
        'acc@5': accuracy_at_k(preds, 5),
        'mrr': mrr(preds),
    }


def evaluate_predictor(predictor: BasePredictor, samples: Sequence[PredictionSample], grid: GridSpec,
                       split: str = 'test', top_k: int = Config.DEFAULT_TOP_K,
                       smoothing: str = 'none', config: Optional[dict] = None,
                       keep_predictions: bool = True) -> PredictionReport:
    """Full metric suite for any predictor"""
    samples = [s for s in samples if s.observed_targets > 0]
    if not samples:
        raise EmptySplit(f"split {split!r} has no sample with an observed target")

    preds = predictor.predict(samples, top_k)
    metrics = ranking_metrics(preds)
    metrics['dtw'] = mean_dtw(preds, grid)
    metrics['bleu'] = mean_bleu(preds, smoothing)
    return PredictionReport(
        predictor=predictor.name,
        split=split,
        metrics=metrics,
        breakdown=temporal_breakdown(preds),
        samples=len(samples),
        observed_slots=sum(s.observed_targets for s in samples),
        data_fingerprint=data_fingerprint(samples),
        config=config or {},
        bleu_smoothing=smoothing,
        top_k=top_k,
        predictions=preds if keep_predictions else None,
    )


def evaluate(model: MobilityModel, context: SemanticContext, samples: Sequence[PredictionSample],
             split: str = 'test', smoothing: str = 'none', config: Optional[dict] = None) -> PredictionReport:
    """Evaluate a trained model on one split"""
    return evaluate_predictor(ModelPredictor(model, context), samples, model.grid, split,
                              model.config.top_k, smoothing, config)


def validation_metrics(model: MobilityModel, context: SemanticContext,
                       samples: Sequence[PredictionSample]) -> Dict[str, float]:
    """Ranking metrics only, used once per epoch"""
    preds: List[RankedPrediction] = ModelPredictor(model, context).predict(list(samples), model.config.top_k)
    return ranking_metrics(preds)
