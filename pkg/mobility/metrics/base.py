from abc import ABC, abstractmethod
from typing import List, Sequence

import numpy as np

from mobility.core.trajectory import PredictionSample
from mobility.metrics.ranking import RankedPrediction, predictions_from_rankings


class BasePredictor(ABC):
    """Abstract next-day location predictor"""

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def rank(self, samples: Sequence[PredictionSample], k: int) -> np.ndarray:
        """Top-k location ids per future slot, shape (S, H, k)"""
        pass

    def predict(self, samples: Sequence[PredictionSample], k: int) -> List[RankedPrediction]:
        if not samples:
            return []
        rankings = self.rank(samples, k)
        return predictions_from_rankings(
            [s.user_id for s in samples],
            [s.target_day for s in samples],
            np.stack([s.targets for s in samples]),
            rankings,
        )
