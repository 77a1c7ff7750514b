"""
Prompt rendering for the semantic context.

One history prompt per day-segment, one task prompt per target day. Rendering
is byte-deterministic: identical inputs always give identical UTF-8 bytes and
therefore identical digests.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple
import hashlib

from mobility.config import Config
from mobility.core.trajectory import GridSpec, MISSING, Observation, PredictionSample, WEEKDAYS

TRANSITION_THRESHOLD = 2  # Chebyshev distance between consecutive records
SLOT_HOURS = 0.5

HISTORY_TEMPLATE = (
    "This is the trajectory of user {user_id} of day {day} which is a {weekday}. "
    "The trajectory consists of {count} records, each record of coordinate is as follows: {records}"
    "\n\n"
    "Key transitions: {transitions}"
    "\n\n"
    "Main stay locations: {stays}"
)

TASK_TEMPLATE = (
    "You are a mobility prediction assistant that forecasts human movement patterns in urban "
    "environments. The city is represented as a {width} x {height} grid of cells, where each cell "
    "is identified by coordinates (X,Y). The X coordinate increases from left (0) to right "
    "({max_x}), and the Y coordinate increases from top (0) to bottom ({max_y})."
    "\n\n"
    "TASK: Based on User {user_id}'s historical movement patterns, predict their locations for "
    "Day {day} ({weekday}). The predictions should capture expected locations at 30-minute "
    "intervals throughout the day ({slots} time slots). The model should analyze patterns like "
    "frequent locations, typical daily routines, and time-dependent behaviors to generate "
    "accurate predictions of where this user is likely to be throughout the next day."
    "\n\n"
    "The previous days' trajectory data contains information about the user's typical movement "
    "patterns, regular visited locations, transition times, and duration of stays. Key patterns "
    "to consider include: home and work locations, morning and evening routines, lunch-time "
    "behaviors, weekend vs. weekday differences, and recurring visit patterns."
)

# (slot, x, y)
Record = Tuple[int, int, int]


class PromptKind(Enum):
    HISTORY_SEGMENT = 'history'
    TASK = 'task'


@dataclass(frozen=True)
class PromptText:
    text: str
    kind: PromptKind

    @property
    def digest(self) -> bytes:
        """SHA-256 of the UTF-8 prompt bytes"""
        return hashlib.sha256(self.text.encode('utf-8')).digest()


def slot_clock(slot: int) -> str:
    """Slot index -> HH:MM; slot 48 renders as 24:00"""
    minutes = slot * 30
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _cell(x: int, y: int) -> str:
    return f"(X={x}, Y={y})"


def _transitions(records: Sequence[Record]) -> List[str]:
    lines = []
    for (_, x0, y0), (slot, x1, y1) in zip(records, records[1:]):
        if max(abs(x1 - x0), abs(y1 - y0)) >= TRANSITION_THRESHOLD:
            lines.append(f"At {slot_clock(slot)}: {_cell(x0, y0)} → {_cell(x1, y1)}")
    return lines


def _stays(records: Sequence[Record]) -> List[str]:
    """Maximal runs of consecutive records at the same cell"""
    lines = []
    start = 0
    for i in range(1, len(records) + 1):
        if i < len(records) and records[i][1:] == records[start][1:]:
            continue
        run = records[start:i]
        _, x, y = run[0]
        hours = len(run) * SLOT_HOURS
        lines.append(f"{_cell(x, y)} from {slot_clock(run[0][0])} to {slot_clock(run[-1][0] + 1)} "
                     f"({hours:.1f} hours)")
        start = i
    return lines


def _join(items: List[str]) -> str:
    return '; '.join(items) + '.' if items else 'none.'


def render_history_prompt(user_id: int, day: int, dow: int, records: Sequence[Record]) -> PromptText:
    """Describe one day of a user's trajectory; records are (slot, x, y) sorted by slot"""
    records = sorted(records)
    text = HISTORY_TEMPLATE.format(
        user_id=user_id,
        day=day,
        weekday=WEEKDAYS[dow],
        count=len(records),
        records=_join([f"{slot_clock(s)}: {_cell(x, y)}" for s, x, y in records]),
        transitions=_join(_transitions(records)),
        stays=_join(_stays(records)),
    )
    return PromptText(text, PromptKind.HISTORY_SEGMENT)


def render_task_prompt(user_id: int, target_day: int, dow: int, grid: GridSpec = GridSpec()) -> PromptText:
    text = TASK_TEMPLATE.format(
        width=grid.width,
        height=grid.height,
        max_x=grid.width - 1,
        max_y=grid.height - 1,
        user_id=user_id,
        day=target_day,
        weekday=WEEKDAYS[dow],
        slots=Config.SLOTS_PER_DAY,
    )
    return PromptText(text, PromptKind.TASK)


def records_from_observations(observations: Sequence[Observation]) -> List[Record]:
    return [(o.slot, o.x, o.y) for o in observations]


def sample_day_records(sample: PredictionSample, day: int, grid: GridSpec) -> List[Record]:
    """Observed (slot, x, y) of one history day of a sample"""
    mask = (sample.history_days == day) & (sample.history_locations != MISSING)
    slots = sample.history_slots[mask]
    xs, ys = grid.cell_arrays(sample.history_locations[mask])
    return [(int(s), int(x), int(y)) for s, x, y in zip(slots, xs, ys)]


def history_prompts(sample: PredictionSample, grid: GridSpec) -> List[PromptText]:
    """One prompt per history day, oldest first"""
    return [render_history_prompt(sample.user_id, day, day % 7, sample_day_records(sample, day, grid))
            for day in sample.history_day_indices]


def task_prompt(sample: PredictionSample, grid: GridSpec) -> PromptText:
    return render_task_prompt(sample.user_id, sample.target_day, sample.target_day % 7, grid)
