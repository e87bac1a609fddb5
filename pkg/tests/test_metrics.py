import numpy as np
import pytest

from hflab.metrics import compute_metrics, rank_auc


def brute_force_auc(scores, labels):
    """O(n^2) pairwise oracle: wins + half-ties over positive/negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestExamples:
    def test_perfect_ranking(self):
        r = compute_metrics([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], 0.5)
        assert r.auc == 1.0 and r.f1 == 1.0

    def test_all_equal_scores_tie_rule(self):
        r = compute_metrics([0.4] * 6, [1, 0, 1, 0, 0, 1], 0.5)
        assert r.auc == 0.5

    def test_definitional_arithmetic(self):
        # TP 2, FP 1, FN 1, TN 6
        scores = [0.9, 0.8, 0.7, 0.2] + [0.1] * 6
        labels = [1, 1, 0, 1] + [0] * 6
        r = compute_metrics(scores, labels, 0.5)
        assert (r.tp, r.fp, r.fn, r.tn) == (2, 1, 1, 6)
        assert r.precision == pytest.approx(2 / 3)
        assert r.recall == pytest.approx(2 / 3)
        assert r.f1 == pytest.approx(2 / 3)
        assert r.specificity == pytest.approx(6 / 7)
        assert r.accuracy == pytest.approx(0.8)

    def test_single_class_auc_absent(self):
        r = compute_metrics([0.2, 0.9], [1, 1], 0.5)
        assert r.auc is None
        assert r.recall == 0.5

    def test_degenerate_f1_zero(self):
        r = compute_metrics([0.1, 0.1], [1, 0], 0.5)
        assert r.f1 == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics([0.1], [1, 0], 0.5)


class TestAucOracle:
    def test_matches_brute_force_with_heavy_ties(self, rng):
        for _ in range(200):
            n = int(rng.integers(10, 500))
            # coarse grid forces ties
            scores = rng.integers(0, 7, size=n) / 6.0
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert rank_auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)

    def test_invariant_under_monotone_transform(self, rng):
        scores = rng.normal(size=300)
        labels = (rng.random(300) < 0.3).astype(int)
        base = rank_auc(scores, labels)
        for transform in (lambda s: 3 * s + 7, np.tanh, lambda s: np.exp(s / 4)):
            assert rank_auc(transform(scores), labels) == pytest.approx(base, abs=1e-12)


class TestIdentities:
    def test_confusion_identities_random(self, rng):
        for _ in range(50):
            n = int(rng.integers(5, 200))
            scores = rng.random(n)
            labels = rng.integers(0, 2, size=n)
            r = compute_metrics(scores, labels, threshold=float(rng.random()))
            assert r.tp + r.fp + r.fn + r.tn == r.n == n
            assert r.accuracy == pytest.approx((r.tp + r.tn) / n)
            if r.tn + r.fp:
                assert r.specificity == pytest.approx(r.tn / (r.tn + r.fp))
            if r.tp + r.fp:
                assert r.precision == pytest.approx(r.tp / (r.tp + r.fp))
            if r.tp + r.fn:
                assert r.recall == pytest.approx(r.tp / (r.tp + r.fn))
