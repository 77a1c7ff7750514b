from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd

from mobility.config import Config
from mobility.core.trajectory import WEEKDAYS, WEEKEND_DOWS
from mobility.metrics.ranking import RankedPrediction


@dataclass
class TemporalBreakdown:
    """Acc@1 per slot of day and per day of week; None marks an empty bin"""

    by_slot: List[Optional[float]]
    slot_counts: List[int]
    by_dow: List[Optional[float]]
    dow_counts: List[int]
    weekday: Optional[float] = None
    weekend: Optional[float] = None
    day_class_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'by_slot': self.by_slot,
            'slot_counts': self.slot_counts,
            'by_dow': self.by_dow,
            'dow_counts': self.dow_counts,
            'weekday': self.weekday,
            'weekend': self.weekend,
            'day_class_counts': self.day_class_counts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'TemporalBreakdown':
        return cls(**data)

    def slot_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'slot': range(len(self.by_slot)),
            'acc@1': self.by_slot,
            'count': self.slot_counts,
        })

    def dow_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'dow': range(7),
            'weekday': WEEKDAYS,
            'acc@1': self.by_dow,
            'count': self.dow_counts,
        })


def _binned(frame: pd.DataFrame, column: str, bins: int):
    grouped = frame.groupby(column)['hit'].agg(['mean', 'count'])
    acc: List[Optional[float]] = [None] * bins
    counts = [0] * bins
    for key, row in grouped.iterrows():
        acc[int(key)] = float(row['mean'])
        counts[int(key)] = int(row['count'])
    return acc, counts


def temporal_breakdown(preds: Sequence[RankedPrediction],
                       slots_per_day: int = Config.SLOTS_PER_DAY) -> TemporalBreakdown:
    """Partition observed slots by slot of day and day of week"""
    frame = pd.DataFrame(
        [(p.slot, p.dow, float(p.rank == 1)) for p in preds if p.observed],
        columns=['slot', 'dow', 'hit'],
    )
    by_slot, slot_counts = _binned(frame, 'slot', slots_per_day)
    by_dow, dow_counts = _binned(frame, 'dow', 7)

    weekend_mask = frame['dow'].isin(WEEKEND_DOWS)
    weekend = frame.loc[weekend_mask, 'hit']
    weekday = frame.loc[~weekend_mask, 'hit']
    return TemporalBreakdown(
        by_slot=by_slot,
        slot_counts=slot_counts,
        by_dow=by_dow,
        dow_counts=dow_counts,
        weekday=float(weekday.mean()) if len(weekday) else None,
        weekend=float(weekend.mean()) if len(weekend) else None,
        day_class_counts={'weekday': int(len(weekday)), 'weekend': int(len(weekend))},
    )
