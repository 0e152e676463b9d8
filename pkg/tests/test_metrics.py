import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mistfed.errors import ConfigurationError, UsageError
from mistfed.metrics import (
    classification_metrics,
    confusion_counts,
    macro_ovr_auc,
    model_drift,
    pairwise_auc,
    pr_auc,
    roc_auc,
    runtime_stats,
    write_curve_csv,
)

SCORES = [0.9, 0.7, 0.6, 0.2]
LABELS = [1, 0, 1, 0]


class TestClassification:
    def test_perfect(self):
        m = classification_metrics([0, 1, 1, 0], [0, 1, 1, 0])
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_single_class_predictions(self):
        m = classification_metrics([1] * 4, [0, 1, 0, 1])
        assert m.accuracy == 0.5 and m.recall in (0.0, 1.0)
        m = classification_metrics([0] * 4, [0, 1, 0, 1])
        assert m.recall == 0.0 and m.degenerate

    def test_hand_counted(self):
        m = classification_metrics([1, 1, 0, 0], [1, 0, 0, 0], positive_class=1)
        assert m.precision == 0.5 and m.recall == 1.0 and m.accuracy == 0.75
        assert m.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_macro(self):
        m = classification_metrics([0, 1, 2, 2], [0, 1, 2, 1])
        # per-class precision 1, 1, 0.5; recall 1, 0.5, 1
        assert m.precision == pytest.approx(2.5 / 3)
        assert m.recall == pytest.approx(2.5 / 3)
        assert m.accuracy == 0.75

    def test_confusion_totals(self, rng):
        p, y = rng.integers(0, 3, 40), rng.integers(0, 3, 40)
        c = confusion_counts(p, y, 3)
        assert c.total == 40
        assert np.all(c.tp + c.fp + c.fn + c.tn == 40)

    def test_empty(self):
        with pytest.raises(UsageError):
            classification_metrics([], [])


class TestCurves:
    def test_perfect_ranking(self):
        assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]).auc == 1.0
        assert pr_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]).auc == 1.0

    def test_all_ties(self):
        assert roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]).auc == 0.5

    def test_fixed_example(self):
        assert roc_auc(SCORES, LABELS).auc == 0.75
        assert pr_auc(SCORES, LABELS).auc == 0.5 * (1 + 2 / 3)

    def test_single_class(self):
        with pytest.raises(UsageError, match="AUC undefined"):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(UsageError):
            pr_auc([0.1, 0.2], [0, 0])

    def test_random_ranking_ap_is_prevalence(self):
        gen = np.random.default_rng(11)
        y = gen.random(10_000) < 0.3
        ap = pr_auc(gen.random(10_000), y).auc
        assert abs(ap - y.mean()) <= 0.05

    def test_curve_ordering(self, rng):
        s, y = rng.random(50), rng.random(50) < 0.5
        roc = roc_auc(s, y).points
        pr = pr_auc(s, y).points
        assert [p.x for p in roc] == sorted(p.x for p in roc)
        assert [p.x for p in pr] == sorted(p.x for p in pr)
        assert roc[0].x == roc[0].y == 0.0 and roc[-1].x == roc[-1].y == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=12))
    def test_trapezoid_matches_pairwise(self, rows):
        s = np.array([r[0] / 5 for r in rows])
        y = np.array([r[1] for r in rows])
        if y.all() or not y.any():
            return
        assert abs(roc_auc(s, y).auc - pairwise_auc(s, y)) <= 1e-12

    def test_permutation_invariant(self, rng):
        s, y = rng.integers(0, 4, 30) / 4, rng.random(30) < 0.4
        perm = rng.permutation(30)
        assert roc_auc(s[perm], y[perm]).auc == roc_auc(s, y).auc
        assert pr_auc(s[perm], y[perm]).auc == pr_auc(s, y).auc

    def test_macro_ovr(self):
        probs = np.eye(3)[[0, 1, 2, 0]]
        assert macro_ovr_auc(probs, [0, 1, 2, 0]) == 1.0

    def test_csv_export(self, tmp_path):
        path = tmp_path / "roc.csv"
        write_curve_csv(roc_auc(SCORES, LABELS), path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["threshold", "x", "y"]
        assert rows[1][0] == "inf"
        assert len(rows) == 1 + 5


class TestDrift:
    def test_zero(self):
        ref = np.array([1.0, 2.0])
        d = model_drift([ref.copy(), ref.copy()], ref)
        assert d.per_client_drift == [0.0, 0.0] and d.mean == 0.0 and d.median == 0.0

    def test_three_four_five(self):
        ref = np.array([6.0, 8.0])
        assert model_drift([ref + [3.0, 4.0]], ref).per_client_drift == [0.5]

    def test_mean_median(self):
        ref = np.array([1.0, 0.0])
        d = model_drift([ref + [0, 0.1], ref + [0, 0.2], ref + [0, 0.3]], ref)
        assert d.mean == pytest.approx(0.2) and d.median == pytest.approx(0.2)

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            model_drift([np.zeros(3)], np.zeros(2))


class TestRuntime:
    def test_single(self):
        r = runtime_stats([2.5])
        assert r.mean == r.median == r.min == r.max == 2.5

    def test_examples(self):
        r = runtime_stats([1, 2, 3, 100])
        assert (r.mean, r.median, r.min, r.max) == (26.5, 2.5, 1.0, 100.0)

    def test_empty(self):
        with pytest.raises(UsageError):
            runtime_stats([])
