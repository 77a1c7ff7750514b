"""
Synthetic routine-driven trajectories.

Each user gets a home, work and leisure cell. Weekdays: home at night,
work 09:00-17:00. Weekends: leisure 10:00-18:00, home otherwise. Each slot
is independently replaced by a random neighbour (Chebyshev radius 5) with
probability `noise`, then dropped with probability `dropout`.
"""

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple
import json

import numpy as np

from mobility.config import Config
from mobility.core.trajectory import GridSpec, Observation, Trajectory, day_of_week
from mobility.data.loader import write_trajectory_csv
from mobility.errors import InvalidNoise

NEIGHBOR_RADIUS = 5
DEFAULT_DROPOUT = 0.3

WORK_SLOTS = range(18, 34)     # 09:00-17:00
LEISURE_SLOTS = range(20, 36)  # 10:00-18:00


@dataclass
class GeneratorConfig:
    users: int
    days: int
    noise: float
    seed: int
    dropout: float = DEFAULT_DROPOUT
    grid_width: int = Config.GRID_WIDTH
    grid_height: int = Config.GRID_HEIGHT


@dataclass
class UserRoutine:
    user_id: int
    home: int
    work: int
    leisure: int
    weekday: List[int] = field(default_factory=list)  # 48 location ids
    weekend: List[int] = field(default_factory=list)

    def expected(self, day: int, slot: int) -> int:
        table = self.weekend if day_of_week(day) >= 5 else self.weekday
        return table[slot]


@dataclass
class SyntheticDataset:
    config: GeneratorConfig
    trajectories: List[Trajectory]
    routines: Dict[int, UserRoutine]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.config.grid_width, self.config.grid_height)

    def sidecar(self) -> dict:
        return {
            'generator': asdict(self.config),
            'routines': [asdict(self.routines[uid]) for uid in sorted(self.routines)],
        }


def _routine(user_id: int, home: int, work: int, leisure: int) -> UserRoutine:
    slots = Config.SLOTS_PER_DAY
    weekday = [work if s in WORK_SLOTS else home for s in range(slots)]
    weekend = [leisure if s in LEISURE_SLOTS else home for s in range(slots)]
    return UserRoutine(user_id, home, work, leisure, weekday, weekend)


def _neighbors(location: int, grid: GridSpec) -> np.ndarray:
    x, y = grid.inverse_location_id(location)
    cells = []
    for dx in range(-NEIGHBOR_RADIUS, NEIGHBOR_RADIUS + 1):
        for dy in range(-NEIGHBOR_RADIUS, NEIGHBOR_RADIUS + 1):
            if (dx or dy) and grid.contains(x + dx, y + dy):
                cells.append(grid.location_id(x + dx, y + dy))
    return np.array(cells, dtype=np.int64)


def generate_synthetic(users: int, days: int, noise: float, seed: int,
                       grid: GridSpec = GridSpec(),
                       dropout: float = DEFAULT_DROPOUT) -> SyntheticDataset:
    """Bit-reproducible for a fixed seed"""
    if not 0.0 <= noise <= 1.0:
        raise InvalidNoise(f"noise must be in [0, 1], got {noise}")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")
    if users < 1 or days < 8:
        raise ValueError(f"need users >= 1 and days >= 8, got users={users}, days={days}")
    if grid.vocabulary_size < 3:
        raise ValueError(f"grid {grid} too small for distinct home/work/leisure cells")

    rng = np.random.default_rng(seed)
    config = GeneratorConfig(users, days, noise, seed, dropout, grid.width, grid.height)

    trajectories = []
    routines = {}
    neighbor_cache: Dict[int, np.ndarray] = {}
    for user_id in range(users):
        home, work, leisure = (int(c) for c in rng.choice(grid.vocabulary_size, size=3, replace=False))
        routine = _routine(user_id, home, work, leisure)
        routines[user_id] = routine

        observations = []
        for day in range(days):
            noise_draws = rng.random(Config.SLOTS_PER_DAY)
            pick_draws = rng.random(Config.SLOTS_PER_DAY)
            drop_draws = rng.random(Config.SLOTS_PER_DAY)
            for slot in range(Config.SLOTS_PER_DAY):
                cell = routine.expected(day, slot)
                if noise_draws[slot] < noise:
                    if cell not in neighbor_cache:
                        neighbor_cache[cell] = _neighbors(cell, grid)
                    candidates = neighbor_cache[cell]
                    if len(candidates):
                        cell = int(candidates[int(pick_draws[slot] * len(candidates))])
                if drop_draws[slot] < dropout:
                    continue
                x, y = grid.inverse_location_id(cell)
                observations.append(Observation(day, slot, x, y))
        trajectories.append(Trajectory(user_id, observations))

    return SyntheticDataset(config, trajectories, routines)


def write_synthetic(dataset: SyntheticDataset, out_dir: str | Path,
                    stem: str = 'trajectories') -> Tuple[Path, Path]:
    """CSV plus a JSON sidecar with generator config and routine tables"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f'{stem}.csv'
    sidecar_path = out_dir / f'{stem}.routines.json'
    write_trajectory_csv(dataset.trajectories, csv_path)
    with open(sidecar_path, 'w', encoding='utf-8') as f:
        json.dump(dataset.sidecar(), f, indent=2)
    return csv_path, sidecar_path


def load_routines(sidecar_path: str | Path) -> Dict[int, UserRoutine]:
    with open(sidecar_path, encoding='utf-8') as f:
        data = json.load(f)
    return {r['user_id']: UserRoutine(**r) for r in data['routines']}


def routine_accuracy(trajectories: Sequence[Trajectory], routines: Dict[int, UserRoutine],
                     grid: GridSpec) -> float:
    """Fraction of observed slots sitting on the routine cell"""
    hits = total = 0
    for trajectory in trajectories:
        routine = routines[trajectory.user_id]
        for obs in trajectory.observations:
            total += 1
            hits += grid.location_id(obs.x, obs.y) == routine.expected(obs.day, obs.slot)
    return hits / total if total else 0.0
