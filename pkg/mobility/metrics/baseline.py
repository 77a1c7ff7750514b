from collections import Counter, defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from mobility.core.trajectory import MISSING, PredictionSample, WEEKEND_DOWS
from mobility.metrics.base import BasePredictor


def _ordered(counter: Counter) -> List[int]:
    """Most frequent first, ties by ascending id"""
    return [loc for loc, _ in sorted(counter.items(), key=lambda item: (-item[1], item[0]))]


def day_class(dow: int) -> str:
    return 'weekend' if dow in WEEKEND_DOWS else 'weekday'


class FrequencyBaseline(BasePredictor):
    """
    Modal-location predictor. Rankings come from the most specific level
    with data, topped up from coarser ones:
    (user, slot, day class) -> (user, slot) -> user -> global.
    """

    def __init__(self):
        self.by_user_slot_class: Dict[Tuple[int, int, str], Counter] = defaultdict(Counter)
        self.by_user_slot: Dict[Tuple[int, int], Counter] = defaultdict(Counter)
        self.by_user: Dict[int, Counter] = defaultdict(Counter)
        self.global_counts: Counter = Counter()
        self._cache: Dict[tuple, List[int]] = {}

    @property
    def name(self) -> str:
        return 'frequency'

    def fit(self, samples: Sequence[PredictionSample]) -> 'FrequencyBaseline':
        """Count each distinct observed (user, day, slot) once across windows and targets"""
        seen: Dict[Tuple[int, int, int], int] = {}
        for s in samples:
            for days, slots, locs in ((s.history_days, s.history_slots, s.history_locations),
                                      (s.future_days, s.future_slots, s.targets)):
                for day, slot, loc in zip(days, slots, locs):
                    if loc != MISSING:
                        seen[(s.user_id, int(day), int(slot))] = int(loc)

        for (user, day, slot), loc in seen.items():
            self.by_user_slot_class[(user, slot, day_class(day % 7))][loc] += 1
            self.by_user_slot[(user, slot)][loc] += 1
            self.by_user[user][loc] += 1
            self.global_counts[loc] += 1
        self._cache.clear()
        return self

    def ranking(self, user_id: int, slot: int, dow: int, k: int) -> List[int]:
        key = (user_id, slot, day_class(dow), k)
        if key in self._cache:
            return self._cache[key]

        levels = [
            self.by_user_slot_class.get((user_id, slot, day_class(dow))),
            self.by_user_slot.get((user_id, slot)),
            self.by_user.get(user_id),
            self.global_counts,
        ]
        ranking: List[int] = []
        for counts in levels:
            if not counts:
                continue
            for loc in _ordered(counts):
                if loc not in ranking:
                    ranking.append(loc)
                if len(ranking) == k:
                    break
            if len(ranking) == k:
                break
        self._cache[key] = ranking
        return ranking

    def rank(self, samples: Sequence[PredictionSample], k: int) -> np.ndarray:
        horizon = len(samples[0].targets)
        out = np.full((len(samples), horizon, k), MISSING, dtype=np.int64)
        for i, s in enumerate(samples):
            for j, (day, slot) in enumerate(zip(s.future_days, s.future_slots)):
                ranking = self.ranking(s.user_id, int(slot), int(day) % 7, k)
                out[i, j, :len(ranking)] = ranking
        return out
