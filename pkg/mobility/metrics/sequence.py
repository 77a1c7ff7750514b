"""
Trajectory-level similarity: dynamic time warping over cell centres and
BLEU over location-id sequences.
"""

from collections import Counter
from itertools import groupby
from typing import Hashable, List, Sequence, Tuple
import math

import numpy as np

from mobility.core.trajectory import GridSpec
from mobility.errors import EmptySequence
from mobility.metrics.ranking import RankedPrediction

SMOOTHING_MODES = ('none', 'epsilon', 'add-one')
EPSILON = 0.1

Cell = Tuple[float, float]


def dtw(a: Sequence[Cell], b: Sequence[Cell]) -> float:
    """Minimal cumulative Euclidean cost over boundary-anchored monotone alignments"""
    if len(a) == 0 or len(b) == 0:
        raise EmptySequence("dtw needs two nonempty sequences")
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))

    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def _ngrams(sequence: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(sequence[i:i + n]) for i in range(len(sequence) - n + 1))


def modified_precision(reference: Sequence[Hashable], hypothesis: Sequence[Hashable], n: int) -> Tuple[int, int]:
    """(clipped matches, hypothesis n-gram count)"""
    hyp_counts = _ngrams(hypothesis, n)
    ref_counts = _ngrams(reference, n)
    clipped = sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
    return clipped, sum(hyp_counts.values())


def brevity_penalty(ref_len: int, hyp_len: int) -> float:
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu(reference: Sequence[Hashable], hypothesis: Sequence[Hashable], max_n: int = 4,
         smoothing: str = 'none') -> float:
    """
    Uniform-weight BLEU of one hypothesis against one reference.

    smoothing='none' scores 0 as soon as any order has no match; 'epsilon'
    replaces a zero numerator by 0.1; 'add-one' adds one to numerator and
    denominator for orders above one.
    """
    if len(reference) == 0 or len(hypothesis) == 0:
        raise EmptySequence("bleu needs a nonempty reference and hypothesis")
    if smoothing not in SMOOTHING_MODES:
        raise ValueError(f"smoothing must be one of {SMOOTHING_MODES}, got {smoothing!r}")

    log_sum = 0.0
    for n in range(1, max_n + 1):
        matches, total = modified_precision(reference, hypothesis, n)
        if smoothing == 'add-one' and n > 1:
            matches, total = matches + 1, total + 1
        elif smoothing == 'epsilon' and matches == 0 and total > 0:
            matches = EPSILON
        if matches == 0 or total == 0:
            return 0.0
        log_sum += math.log(matches / total) / max_n
    return brevity_penalty(len(reference), len(hypothesis)) * math.exp(log_sum)


def trajectory_pairs(preds: Sequence[RankedPrediction]) -> List[Tuple[List[int], List[int]]]:
    """
    Per (user, day): observed true cells and the top-1 cells at the same
    slots, in slot order. Days without an observed target are skipped.
    """
    ordered = sorted((p for p in preds if p.observed), key=lambda p: (p.user_id, p.day, p.slot))
    pairs = []
    for _, group in groupby(ordered, key=lambda p: (p.user_id, p.day)):
        group = list(group)
        pairs.append(([p.true_location for p in group], [p.top1 for p in group]))
    return pairs


def mean_dtw(preds: Sequence[RankedPrediction], grid: GridSpec) -> float:
    """Per-trajectory DTW in grid units, averaged"""
    values = []
    for truth, predicted in trajectory_pairs(preds):
        tx, ty = grid.cell_arrays(np.array(truth))
        px, py = grid.cell_arrays(np.array(predicted))
        values.append(dtw(np.stack([tx, ty], axis=-1), np.stack([px, py], axis=-1)))
    if not values:
        raise EmptySequence("no observed trajectory to compare")
    return float(np.mean(values))


def mean_bleu(preds: Sequence[RankedPrediction], smoothing: str = 'none') -> float:
    """Per-trajectory BLEU, averaged (not corpus-level)"""
    values = [bleu(truth, predicted, smoothing=smoothing) for truth, predicted in trajectory_pairs(preds)]
    if not values:
        raise EmptySequence("no observed trajectory to compare")
    return float(np.mean(values))
