"""
Trajectory ingestion (uid,d,t,x,y CSV), serialization, sample construction
and chronological splitting.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import re

import numpy as np
import pandas as pd

from mobility.config import Config
from mobility.core.trajectory import (
    GridSpec,
    MISSING,
    Observation,
    PredictionSample,
    Trajectory,
)
from mobility.errors import (
    DuplicateObservation,
    EmptySplit,
    MalformedRow,
    OutOfGrid,
)

CSV_COLUMNS = ['uid', 'd', 't', 'x', 'y']
PARSER_LINE = re.compile(r'line (\d+)')


def parse_trajectory_csv(path: str | Path, grid: GridSpec = GridSpec()) -> List[Trajectory]:
    """Read a YJMob100K-style CSV into one Trajectory per uid"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Trajectory file not found: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        # pandas reports 1-based file lines, header included
        match = PARSER_LINE.search(str(e))
        raise MalformedRow(f"unparseable CSV: {e}", line=int(match.group(1)) if match else None)
    except pd.errors.EmptyDataError:
        raise MalformedRow("empty file, expected header uid,d,t,x,y", line=1)

    if list(df.columns) != CSV_COLUMNS:
        raise MalformedRow(f"header must be {','.join(CSV_COLUMNS)}, got {','.join(df.columns)}", line=1)

    # Line numbers: header is line 1
    lines = df.index.to_numpy() + 2
    parsed = {}
    for col in CSV_COLUMNS:
        text = df[col].str.strip()
        ok = text.str.fullmatch(r'-?\d+', na=False)
        if not ok.all():
            bad = int(lines[~ok.to_numpy()][0])
            raise MalformedRow(f"column {col!r} is not an integer", line=bad)
        parsed[col] = text.astype(np.int64).to_numpy()

    day, slot, x, y = parsed['d'], parsed['t'], parsed['x'], parsed['y']
    bad_time = (day < 0) | (slot < 0) | (slot >= Config.SLOTS_PER_DAY)
    if bad_time.any():
        i = int(np.argmax(bad_time))
        raise MalformedRow(f"day/slot ({day[i]}, {slot[i]}) out of range", line=int(lines[i]))
    bad_cell = (x < 1) | (x > grid.width) | (y < 1) | (y > grid.height)
    if bad_cell.any():
        i = int(np.argmax(bad_cell))
        raise OutOfGrid(f"cell ({x[i]}, {y[i]}) outside {grid}", line=int(lines[i]))

    frame = pd.DataFrame(parsed)
    dup = frame.duplicated(subset=['uid', 'd', 't'])
    if dup.any():
        row = frame[dup].iloc[0]
        raise DuplicateObservation(int(row['uid']), int(row['d']), int(row['t']))

    frame = frame.sort_values(['uid', 'd', 't'], kind='mergesort')
    trajectories = []
    for uid, group in frame.groupby('uid', sort=True):
        observations = [Observation(int(d), int(t), int(xx), int(yy))
                        for d, t, xx, yy in zip(group['d'], group['t'], group['x'], group['y'])]
        trajectories.append(Trajectory(int(uid), observations))
    return trajectories


def write_trajectory_csv(trajectories: Sequence[Trajectory], path: str | Path):
    """Serialize to the same uid,d,t,x,y schema (LF newlines)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [(t.user_id, o.day, o.slot, o.x, o.y) for t in trajectories for o in t.observations]
    df = pd.DataFrame(rows, columns=CSV_COLUMNS)
    df.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')


def build_samples(trajectory: Trajectory, grid: GridSpec = GridSpec(),
                  num_days: Optional[int] = None,
                  history_days: int = Config.HISTORY_DAYS,
                  slots_per_day: int = Config.SLOTS_PER_DAY) -> List[PredictionSample]:
    """
    One sample per target day d in [history_days, D): history is the
    preceding whole days, future is day d. Unobserved slots are MISSING.
    """
    total_days = num_days if num_days is not None else trajectory.num_days
    if total_days < history_days + 1:
        return []

    table = np.full((total_days, slots_per_day), MISSING, dtype=np.int64)
    for obs in trajectory.observations:
        if obs.day < total_days:
            table[obs.day, obs.slot] = grid.location_id(obs.x, obs.y)

    slots = np.arange(slots_per_day, dtype=np.int64)
    samples = []
    for d in range(history_days, total_days):
        hist_days = np.repeat(np.arange(d - history_days, d, dtype=np.int64), slots_per_day)
        samples.append(PredictionSample(
            user_id=trajectory.user_id,
            target_day=d,
            history_locations=table[d - history_days:d].reshape(-1).copy(),
            history_days=hist_days,
            history_slots=np.tile(slots, history_days),
            future_days=np.full(slots_per_day, d, dtype=np.int64),
            future_slots=slots.copy(),
            targets=table[d].copy(),
        ))
    return samples


@dataclass
class DatasetSplits:
    train: List[PredictionSample]
    val: List[PredictionSample]
    test: List[PredictionSample]
    train_days: Tuple[int, int]
    val_days: Tuple[int, int]
    test_days: Tuple[int, int]

    def get(self, name: str) -> List[PredictionSample]:
        if name not in ('train', 'val', 'test'):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def summary(self) -> dict:
        return {
            'train': {'samples': len(self.train), 'days': list(self.train_days)},
            'val': {'samples': len(self.val), 'days': list(self.val_days)},
            'test': {'samples': len(self.test), 'days': list(self.test_days)},
        }


def split_days(num_days: int, ratios: Tuple[float, float, float] = (0.7, 0.2, 0.1)) -> Tuple[Tuple[int, int], ...]:
    """Half-open day ranges for train/val/test"""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n_train = int(np.floor(ratios[0] * num_days + 1e-9))
    n_val = int(np.floor(ratios[1] * num_days + 1e-9))
    n_test = num_days - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise EmptySplit(f"{num_days} days with ratios {ratios} gives {n_train}/{n_val}/{n_test} days")
    return (0, n_train), (n_train, n_train + n_val), (n_train + n_val, num_days)


def chronological_split(trajectories: Sequence[Trajectory],
                        ratios: Tuple[float, float, float] = (0.7, 0.2, 0.1),
                        grid: GridSpec = GridSpec(),
                        num_days: Optional[int] = None) -> DatasetSplits:
    """Assign each sample to a split by the day it predicts"""
    total_days = num_days if num_days is not None else max((t.num_days for t in trajectories), default=0)
    train_days, val_days, test_days = split_days(total_days, ratios)

    splits = DatasetSplits([], [], [], train_days, val_days, test_days)
    for trajectory in trajectories:
        for sample in build_samples(trajectory, grid, num_days=total_days):
            if sample.target_day < train_days[1]:
                splits.train.append(sample)
            elif sample.target_day < val_days[1]:
                splits.val.append(sample)
            else:
                splits.test.append(sample)
    return splits


def observed_only(samples: Sequence[PredictionSample]) -> List[PredictionSample]:
    """Drop samples whose future day has no observed target"""
    return [s for s in samples if s.observed_targets > 0]
