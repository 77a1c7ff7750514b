from dataclasses import dataclass, field
from typing import List, Tuple, Sequence, Dict, Any
import hashlib

import numpy as np

from mobility.config import Config
from mobility.errors import OutOfGrid, DuplicateObservation, MalformedRow

MISSING = -1
WEEKDAYS = ('Monday', 'Tuesday', 'Wednesday', 'Thursday', 'Friday', 'Saturday', 'Sunday')
WEEKEND_DOWS = (5, 6)


def day_of_week(day: int) -> int:
    """Day 0 is a Monday"""
    return day % 7


@dataclass(frozen=True)
class GridSpec:
    """Integer grid of cells, 1-based coordinates"""

    width: int = Config.GRID_WIDTH
    height: int = Config.GRID_HEIGHT

    @property
    def vocabulary_size(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        return 1 <= x <= self.width and 1 <= y <= self.height

    def location_id(self, x: int, y: int) -> int:
        if not self.contains(x, y):
            raise OutOfGrid(f"cell ({x}, {y}) outside {self.width}x{self.height} grid")
        return (x - 1) * self.height + (y - 1)

    def inverse_location_id(self, location: int) -> Tuple[int, int]:
        if not 0 <= location < self.vocabulary_size:
            raise OutOfGrid(f"location id {location} outside vocabulary of {self.vocabulary_size}")
        return location // self.height + 1, location % self.height + 1

    def cell_arrays(self, locations: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized inverse; MISSING entries map to (0, 0)"""
        locations = np.asarray(locations)
        safe = np.where(locations < 0, 0, locations)
        x = np.where(locations < 0, 0, safe // self.height + 1)
        y = np.where(locations < 0, 0, safe % self.height + 1)
        return x, y

    @classmethod
    def parse(cls, text: str) -> 'GridSpec':
        """'WxH' -> GridSpec"""
        try:
            w, h = (int(p) for p in text.lower().split('x'))
        except ValueError:
            raise ValueError(f"grid must look like WxH, got {text!r}")
        if w < 1 or h < 1:
            raise ValueError(f"grid dimensions must be positive, got {text!r}")
        return cls(w, h)

    def __str__(self):
        return f"{self.width}x{self.height}"


def location_id(x: int, y: int, grid: GridSpec = GridSpec()) -> int:
    return grid.location_id(x, y)


def inverse_location_id(location: int, grid: GridSpec = GridSpec()) -> Tuple[int, int]:
    return grid.inverse_location_id(location)


@dataclass(frozen=True, order=True)
class Observation:
    day: int
    slot: int
    x: int
    y: int

    def __post_init__(self):
        if self.day < 0:
            raise MalformedRow(f"negative day {self.day}")
        if not 0 <= self.slot < Config.SLOTS_PER_DAY:
            raise MalformedRow(f"slot {self.slot} outside [0, {Config.SLOTS_PER_DAY})")
        if self.x < 1 or self.y < 1:
            raise OutOfGrid(f"cell ({self.x}, {self.y}) below grid origin")

    @property
    def timestamp(self) -> Tuple[int, int]:
        return self.day, self.slot


class Trajectory:
    """One user's observations, strictly increasing by (day, slot)"""

    def __init__(self, user_id: int, observations: Sequence[Observation]):
        self.user_id = int(user_id)
        ordered = sorted(observations, key=lambda o: o.timestamp)
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.timestamp == cur.timestamp:
                raise DuplicateObservation(self.user_id, cur.day, cur.slot)
        self.observations: List[Observation] = ordered

    @property
    def num_days(self) -> int:
        return self.observations[-1].day + 1 if self.observations else 0

    def by_day(self) -> Dict[int, List[Observation]]:
        days: Dict[int, List[Observation]] = {}
        for obs in self.observations:
            days.setdefault(obs.day, []).append(obs)
        return days

    def __len__(self):
        return len(self.observations)

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.user_id == other.user_id
                and self.observations == other.observations)

    def __repr__(self):
        return f"Trajectory(user_id={self.user_id}, observations={len(self.observations)})"


@dataclass
class PredictionSample:
    """History window of whole days plus the next day's targets"""

    user_id: int
    target_day: int
    history_locations: np.ndarray  # (T,) location ids or MISSING
    history_days: np.ndarray
    history_slots: np.ndarray
    future_days: np.ndarray  # (H,)
    future_slots: np.ndarray
    targets: np.ndarray  # (H,) location ids or MISSING

    @property
    def observed_targets(self) -> int:
        return int((self.targets != MISSING).sum())

    @property
    def history_length(self) -> int:
        return len(self.history_locations)

    @property
    def history_day_indices(self) -> List[int]:
        return sorted(set(int(d) for d in self.history_days))

    @property
    def key(self) -> Tuple[int, int]:
        return self.user_id, self.target_day


@dataclass
class SampleBatch:
    """Stacked arrays for a list of samples"""

    user_ids: np.ndarray
    target_days: np.ndarray
    history_locations: np.ndarray  # (B, T)
    history_slots: np.ndarray
    history_dows: np.ndarray
    future_slots: np.ndarray  # (B, H)
    future_dows: np.ndarray
    targets: np.ndarray
    samples: List[PredictionSample] = field(default_factory=list, repr=False)

    @classmethod
    def from_samples(cls, samples: Sequence[PredictionSample]) -> 'SampleBatch':
        return cls(
            user_ids=np.array([s.user_id for s in samples], dtype=np.int64),
            target_days=np.array([s.target_day for s in samples], dtype=np.int64),
            history_locations=np.stack([s.history_locations for s in samples]),
            history_slots=np.stack([s.history_slots for s in samples]),
            history_dows=np.stack([s.history_days % 7 for s in samples]),
            future_slots=np.stack([s.future_slots for s in samples]),
            future_dows=np.stack([s.future_days % 7 for s in samples]),
            targets=np.stack([s.targets for s in samples]),
            samples=list(samples),
        )

    def __len__(self):
        return len(self.user_ids)


def data_fingerprint(samples: Sequence[PredictionSample]) -> str:
    """SHA-256 over the sample arrays, order-sensitive"""
    h = hashlib.sha256()
    for s in samples:
        h.update(np.array([s.user_id, s.target_day], dtype='<i8').tobytes())
        h.update(s.history_locations.astype('<i8').tobytes())
        h.update(s.targets.astype('<i8').tobytes())
    return h.hexdigest()


def trajectories_summary(trajectories: Sequence[Trajectory]) -> Dict[str, Any]:
    return {
        'users': len(trajectories),
        'observations': sum(len(t) for t in trajectories),
        'days': max((t.num_days for t in trajectories), default=0),
    }
