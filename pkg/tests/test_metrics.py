import itertools
import math

import numpy as np
import pytest

from mobility.core.trajectory import GridSpec, MISSING
from mobility.data.loader import chronological_split
from mobility.data.synthetic import generate_synthetic
from mobility.errors import EmptySequence, NoObservedTargets
from mobility.metrics.baseline import FrequencyBaseline
from mobility.metrics.breakdown import temporal_breakdown
from mobility.metrics.ranking import RankedPrediction, accuracy_at_k, mrr
from mobility.metrics.sequence import bleu, dtw, mean_bleu, mean_dtw
from mobility.training.evaluate import evaluate_predictor


def ranked(true_location, rank, k=5, **kwargs):
    """Prediction whose true cell sits at 1-based `rank` (0: absent)"""
    ranking = [100 + i for i in range(k)]
    if rank:
        ranking[rank - 1] = true_location
    return RankedPrediction(true_location, tuple(ranking), **kwargs)


class TestRanking:

    def test_fixture(self):
        preds = [ranked(1, 1), ranked(2, 2), ranked(3, 4)]
        assert accuracy_at_k(preds, 1) == pytest.approx(1 / 3)
        assert accuracy_at_k(preds, 3) == pytest.approx(2 / 3)
        assert accuracy_at_k(preds, 5) == pytest.approx(1.0)
        assert mrr(preds) == pytest.approx((1 + 1 / 2 + 1 / 4) / 3)
        assert mrr(preds) == pytest.approx(0.583333, abs=1e-6)

    def test_absent_counts_zero(self):
        preds = [ranked(1, 1), ranked(2, 0)]
        assert accuracy_at_k(preds, 5) == 0.5
        assert mrr(preds) == 0.5

    def test_missing_targets_ignored(self):
        preds = [ranked(1, 2), RankedPrediction(MISSING, (1, 2, 3, 4, 5))]
        assert accuracy_at_k(preds, 1) == 0.0
        assert mrr(preds) == 0.5

    def test_no_observed_targets(self):
        with pytest.raises(NoObservedTargets):
            mrr([RankedPrediction(MISSING, (1, 2, 3, 4, 5))])
        with pytest.raises(NoObservedTargets):
            accuracy_at_k([], 1)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            preds = [ranked(1, int(r), k=10) for r in rng.integers(0, 11, size=20)]
            accs = [accuracy_at_k(preds, k) for k in range(1, 11)]
            assert all(a <= b for a, b in zip(accs, accs[1:]))
            assert accs[0] <= mrr(preds) <= 1.0

    def test_rank_property(self):
        assert ranked(7, 3).rank == 3
        assert ranked(7, 0).rank == 0
        assert ranked(7, 1).top1 == 7


def brute_force_dtw(a, b):
    """Minimum over every boundary-anchored monotone path"""
    n, m = len(a), len(b)
    cost = [[math.dist(a[i], b[j]) for j in range(m)] for i in range(n)]
    best = math.inf

    def walk(i, j, total):
        nonlocal best
        total += cost[i][j]
        if total >= best:
            return
        if i == n - 1 and j == m - 1:
            best = total
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, total)

    walk(0, 0, 0.0)
    return best


class TestDtw:

    def test_identical(self):
        a = [(1, 1), (2, 5), (4, 4)]
        assert dtw(a, a) == 0.0

    def test_single_points(self):
        assert dtw([(0, 0)], [(3, 4)]) == 5.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        cells = list(itertools.product(range(1, 6), repeat=2))
        for _ in range(200):
            a = [cells[i] for i in rng.integers(0, 25, size=rng.integers(1, 7))]
            b = [cells[i] for i in rng.integers(0, 25, size=rng.integers(1, 7))]
            assert dtw(a, b) == pytest.approx(brute_force_dtw(a, b), abs=1e-9)
            assert dtw(a, b) == pytest.approx(dtw(b, a), abs=1e-9)

    def test_empty(self):
        with pytest.raises(EmptySequence):
            dtw([], [(1, 1)])


class TestBleu:

    def test_identical(self):
        assert bleu('ABCDE', 'ABCDE') == pytest.approx(1.0)

    def test_disjoint(self):
        assert bleu('ABCD', 'WXYZ') == 0.0

    def test_missing_four_gram(self):
        assert bleu('ABCD', 'ABCC') == 0.0

    def test_epsilon_smoothing(self):
        expected = math.exp((math.log(3 / 4) + math.log(2 / 3) + math.log(1 / 2) + math.log(0.1)) / 4)
        assert bleu('ABCD', 'ABCC', smoothing='epsilon') == pytest.approx(expected)

    def test_add_one_smoothing(self):
        expected = math.exp((math.log(3 / 4) + math.log(3 / 4) + math.log(2 / 3) + math.log(1 / 2)) / 4)
        assert bleu('ABCD', 'ABCC', smoothing='add-one') == pytest.approx(expected)

    def test_brevity_penalty(self):
        reference = list('ABCDEFGH')
        assert bleu(reference, reference[:4]) == pytest.approx(math.exp(1 - 8 / 4))

    def test_clipping(self):
        assert bleu('AB', 'AAAA', max_n=1) == pytest.approx(0.25)

    def test_unknown_smoothing(self):
        with pytest.raises(ValueError):
            bleu('AB', 'AB', smoothing='laplace')


def perfect_day(user_id, day, cells):
    return [RankedPrediction(c, (c, 0, 1, 2, 3), user_id, day, slot) for slot, c in enumerate(cells)]


class TestTrajectoryMetrics:

    def test_perfect_predictions(self, grid):
        preds = perfect_day(0, 7, [1, 1, 5, 5, 9, 9]) + perfect_day(1, 8, [3, 4, 5, 6])
        assert mean_dtw(preds, grid) == 0.0
        assert mean_bleu(preds) == pytest.approx(1.0)

    def test_per_trajectory_average(self, grid):
        good = perfect_day(0, 7, [1, 2, 3, 4])
        far = [RankedPrediction(grid.location_id(1, 1), (grid.location_id(4, 5),), 1, 7, 0)]
        assert mean_dtw(good + far, grid) == pytest.approx(5.0 / 2)

    def test_missing_slots_skipped(self, grid):
        preds = perfect_day(0, 7, [1, 2, 3, 4]) + [RankedPrediction(MISSING, (9,), 0, 7, 4)]
        assert mean_bleu(preds) == pytest.approx(1.0)


class TestBreakdown:

    def test_single_slot(self):
        preds = [ranked(1, 1, user_id=0, day=2, slot=5), ranked(1, 2, user_id=1, day=2, slot=5)]
        breakdown = temporal_breakdown(preds)
        assert breakdown.by_slot[5] == 0.5
        assert sum(v is not None for v in breakdown.by_slot) == 1
        assert breakdown.by_dow[2] == 0.5
        assert breakdown.weekend is None
        assert breakdown.weekday == 0.5

    def test_partition_recovers_global(self):
        rng = np.random.default_rng(2)
        preds = [ranked(1, int(rng.integers(0, 3)), user_id=0, day=int(rng.integers(0, 14)),
                        slot=int(rng.integers(0, 48))) for _ in range(500)]
        breakdown = temporal_breakdown(preds)
        global_acc = accuracy_at_k(preds, 1)
        for values, counts in ((breakdown.by_slot, breakdown.slot_counts),
                               (breakdown.by_dow, breakdown.dow_counts)):
            assert sum(counts) == 500
            weighted = sum(v * c for v, c in zip(values, counts) if v is not None) / sum(counts)
            assert weighted == pytest.approx(global_acc)
        classes = breakdown.day_class_counts
        assert classes['weekday'] + classes['weekend'] == 500

    def test_weekend_days(self):
        preds = [ranked(1, 1, day=5), ranked(1, 0, day=6), ranked(1, 0, day=7)]
        breakdown = temporal_breakdown(preds)
        assert breakdown.weekend == 0.5
        assert breakdown.weekday == 0.0
        assert list(breakdown.dow_frame()['count']) == [1, 0, 0, 0, 0, 1, 1]


class TestFrequencyBaseline:

    def test_noise_free_routine_is_solved(self, grid):
        dataset = generate_synthetic(users=4, days=30, noise=0.0, seed=3, grid=grid, dropout=0.0)
        splits = chronological_split(dataset.trajectories, grid=grid)
        baseline = FrequencyBaseline().fit(splits.train)
        report = evaluate_predictor(baseline, splits.test, grid, top_k=5)
        assert report.metrics['acc@1'] == 1.0
        assert report.metrics['mrr'] == 1.0
        assert report.metrics['dtw'] == 0.0
        assert report.metrics['bleu'] == pytest.approx(1.0)

    def test_noisy_routine(self):
        grid = GridSpec(20, 20)
        dataset = generate_synthetic(users=20, days=40, noise=0.3, seed=4, grid=grid, dropout=0.0)
        splits = chronological_split(dataset.trajectories, grid=grid)
        report = evaluate_predictor(FrequencyBaseline().fit(splits.train), splits.test, grid, top_k=5)
        assert abs(report.metrics['acc@1'] - 0.7) < 0.03

    def test_unseen_user_falls_back_to_global(self, grid):
        dataset = generate_synthetic(users=3, days=14, noise=0.0, seed=5, grid=grid, dropout=0.0)
        splits = chronological_split(dataset.trajectories, grid=grid)
        baseline = FrequencyBaseline().fit(splits.train)
        ranking = baseline.ranking(user_id=99, slot=3, dow=0, k=5)
        assert ranking == [loc for loc, _ in sorted(baseline.global_counts.items(),
                                                    key=lambda item: (-item[1], item[0]))][:5]

    def test_rankings_padded_when_vocabulary_is_small(self, grid):
        dataset = generate_synthetic(users=1, days=14, noise=0.0, seed=6, grid=grid, dropout=0.0)
        splits = chronological_split(dataset.trajectories, grid=grid)
        rankings = FrequencyBaseline().fit(splits.train).rank(splits.test, 5)
        # home, work and leisure are the only cells ever seen
        assert rankings.shape == (len(splits.test), 48, 5)
        assert (rankings[..., 3:] == MISSING).all()
