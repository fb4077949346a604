"""Micro precision/recall/F1 against an independent counting oracle."""

import random
import statistics

import pytest

from protoed import Mention, Scores, ValidationError, aggregate_runs, micro_f1


def oracle_micro(predictions, gold):
    """Set-based reference implementation, written independently of the
    library code: count exact (start, end, type) matches and apply the
    textbook formulas. A zero denominator scores 1.0 only when both sides
    are empty (nothing to find, nothing found), else 0.0 on that axis."""
    tp = fp = fn = 0
    for sid in gold:
        g = {(m.start, m.end, m.label) for m in gold[sid]}
        p = {(m.start, m.end, m.label) for m in predictions[sid]}
        tp += len(g & p)
        fp += len(p - g)
        fn += len(g - p)
    both_empty = tp + fp + fn == 0
    precision = tp / (tp + fp) if tp + fp else (1.0 if both_empty else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if both_empty else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def random_mentions(rng, labels, max_mentions=4):
    out = []
    used = set()
    for _ in range(rng.randint(0, max_mentions)):
        start = rng.randint(0, 8)
        end = start + rng.randint(1, 2)
        label = rng.choice(labels)
        if (start, end, label) in used:
            continue
        used.add((start, end, label))
        out.append(Mention(start, end, label))
    return out


class TestMicroF1:
    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(42)
        labels = ["a", "b", "c"]
        for _ in range(1000):
            sids = [f"s{i}" for i in range(rng.randint(1, 6))]
            gold = {sid: random_mentions(rng, labels) for sid in sids}
            pred = {sid: random_mentions(rng, labels) for sid in sids}
            got = micro_f1(pred, gold)
            want_p, want_r, want_f = oracle_micro(pred, gold)
            assert got.precision == want_p
            assert got.recall == want_r
            assert got.f1 == want_f

    def test_perfect_prediction(self):
        gold = {"s": [Mention(0, 1, "a"), Mention(2, 3, "b")]}
        assert micro_f1(gold, gold) == Scores(1.0, 1.0, 1.0)

    def test_both_empty_scores_one(self):
        assert micro_f1({"s": []}, {"s": []}) == Scores(1.0, 1.0, 1.0)

    def test_empty_prediction_nonempty_gold(self):
        got = micro_f1({"s": []}, {"s": [Mention(0, 1, "a")]})
        assert got == Scores(0.0, 0.0, 0.0)

    def test_nonempty_prediction_empty_gold(self):
        got = micro_f1({"s": [Mention(0, 1, "a")]}, {"s": []})
        assert got == Scores(0.0, 0.0, 0.0)

    def test_half_overlap(self):
        gold = {"s": [Mention(0, 1, "a"), Mention(2, 3, "a")]}
        pred = {"s": [Mention(0, 1, "a"), Mention(4, 5, "a")]}
        assert micro_f1(pred, gold) == Scores(0.5, 0.5, 0.5)

    def test_type_mismatch_is_a_miss(self):
        gold = {"s": [Mention(0, 1, "a")]}
        pred = {"s": [Mention(0, 1, "b")]}
        assert micro_f1(pred, gold) == Scores(0.0, 0.0, 0.0)

    def test_span_mismatch_is_a_miss(self):
        gold = {"s": [Mention(0, 2, "a")]}
        pred = {"s": [Mention(0, 1, "a")]}
        assert micro_f1(pred, gold) == Scores(0.0, 0.0, 0.0)

    def test_invariant_to_mention_order(self):
        rng = random.Random(7)
        labels = ["a", "b"]
        for _ in range(100):
            gold = {"s": random_mentions(rng, labels)}
            pred = {"s": random_mentions(rng, labels)}
            shuffled_pred = {"s": list(reversed(pred["s"]))}
            assert micro_f1(pred, gold) == micro_f1(shuffled_pred, gold)

    def test_mismatched_sentence_ids_rejected(self):
        with pytest.raises(ValidationError, match="s2"):
            micro_f1({"s1": []}, {"s1": [], "s2": []})


class TestAggregateRuns:
    def test_mean_and_sample_std(self):
        runs = [Scores(1, 1, 0.4), Scores(1, 1, 0.6)]
        report = aggregate_runs([0, 1], runs)
        assert report.mean_f1 == pytest.approx(0.5)
        assert report.std_f1 == pytest.approx(statistics.stdev([0.4, 0.6]))
        assert report.std_f1 == pytest.approx(0.14142135623730953)

    def test_matches_statistics_module_on_random_runs(self):
        rng = random.Random(3)
        for _ in range(200):
            f1s = [rng.random() for _ in range(rng.randint(2, 8))]
            runs = [Scores(0, 0, f) for f in f1s]
            report = aggregate_runs(list(range(len(f1s))), runs)
            assert report.mean_f1 == pytest.approx(statistics.fmean(f1s), abs=1e-12)
            assert report.std_f1 == pytest.approx(statistics.stdev(f1s), abs=1e-12)

    def test_single_run_has_no_std(self):
        report = aggregate_runs([5], [Scores(1, 1, 0.7)])
        assert report.mean_f1 == 0.7
        assert report.std_f1 is None
        assert report.seeds == (5,)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_runs([], [])

    def test_misaligned_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_runs([0, 1], [Scores(1, 1, 1)])

    def test_as_dict_round_trip_fields(self):
        report = aggregate_runs([0], [Scores(0.1, 0.2, 0.3)])
        d = report.as_dict()
        assert d["seeds"] == [0]
        assert d["runs"] == [{"precision": 0.1, "recall": 0.2, "f1": 0.3}]
