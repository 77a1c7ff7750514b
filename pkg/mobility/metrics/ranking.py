from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from mobility.core.trajectory import MISSING
from mobility.errors import NoObservedTargets


@dataclass(frozen=True)
class RankedPrediction:
    """One future slot: the true cell and the top-K predicted cells, best first"""

    true_location: int
    ranking: Tuple[int, ...]
    user_id: int = 0
    day: int = 0
    slot: int = 0

    @property
    def observed(self) -> bool:
        return self.true_location != MISSING

    @property
    def dow(self) -> int:
        return self.day % 7

    @property
    def rank(self) -> int:
        """1-based position of the true cell, 0 when outside the stored top-K"""
        try:
            return self.ranking.index(self.true_location) + 1
        except ValueError:
            return 0

    @property
    def top1(self) -> int:
        return self.ranking[0] if self.ranking else MISSING

    def to_dict(self) -> dict:
        return {'user_id': self.user_id, 'day': self.day, 'slot': self.slot,
                'true_location': self.true_location, 'ranking': list(self.ranking)}

    @classmethod
    def from_dict(cls, data: dict) -> 'RankedPrediction':
        return cls(data['true_location'], tuple(data['ranking']), data['user_id'], data['day'], data['slot'])


def observed_ranks(preds: Sequence[RankedPrediction]) -> np.ndarray:
    ranks = np.array([p.rank for p in preds if p.observed], dtype=np.int64)
    if ranks.size == 0:
        raise NoObservedTargets("no observed target among predictions")
    return ranks


def accuracy_at_k(preds: Sequence[RankedPrediction], k: int) -> float:
    """Fraction of observed slots whose true cell is in the top k"""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranks = observed_ranks(preds)
    return float(((ranks >= 1) & (ranks <= k)).mean())


def mrr(preds: Sequence[RankedPrediction]) -> float:
    """Mean reciprocal rank; a true cell outside the stored top-K contributes 0"""
    ranks = observed_ranks(preds)
    reciprocal = np.where(ranks > 0, 1.0 / np.maximum(ranks, 1), 0.0)
    return float(reciprocal.mean())


def predictions_from_rankings(user_ids: Sequence[int], days: Sequence[int], targets: np.ndarray,
                              rankings: np.ndarray) -> List[RankedPrediction]:
    """(S,) ids and target days, (S, H) targets, (S, H, K) rankings -> flat slot list"""
    preds = []
    for user_id, day, row_targets, row_rankings in zip(user_ids, days, targets, rankings):
        for slot, (target, ranking) in enumerate(zip(row_targets, row_rankings)):
            preds.append(RankedPrediction(int(target), tuple(int(r) for r in ranking),
                                          int(user_id), int(day), slot))
    return preds
