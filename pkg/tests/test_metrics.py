import numpy as np
import pytest

from trmsm.metrics import confusion, report, scores


def brute_force(gold, pred, k):
    """Counts tp/fp/fn per class by walking the pairs."""
    f1s, recalls, present = [], [], []
    for c in range(k):
        tp = sum(g == c and p == c for g, p in zip(gold, pred))
        fp = sum(g != c and p == c for g, p in zip(gold, pred))
        fn = sum(g == c and p != c for g, p in zip(gold, pred))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        recalls.append(rec)
        present.append(tp + fp + fn > 0)
    n = len(gold)
    support = [sum(g == c for g in gold) for c in range(k)]
    weighted = sum(f * s for f, s in zip(f1s, support)) / n
    kept = [f for f, keep in zip(f1s, present) if keep]
    macro = sum(kept) / len(kept)
    tp_all = sum(g == p for g, p in zip(gold, pred))
    fp_all = fn_all = n - tp_all
    micro = tp_all / (tp_all + 0.5 * (fp_all + fn_all))
    return dict(per_class_acc=recalls, per_class_f1=f1s, weighted_f1=weighted, macro_f1=macro,
                micro_f1=micro, m_f1=(macro + micro) / 2, accuracy=tp_all / n)


def get(gold, pred, k):
    return scores(confusion(gold, pred, k))


class TestHandWorked:
    def test_binary_case(self):
        s = get([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert s.per_class_f1 == pytest.approx([2 / 3, 0.8], abs=1e-12)
        assert s.macro_f1 == pytest.approx(0.733333, abs=1e-6)
        assert s.micro_f1 == pytest.approx(0.75, abs=1e-12)
        assert s.m_f1 == pytest.approx(0.741667, abs=1e-6)
        assert s.weighted_f1 == pytest.approx(0.733333, abs=1e-6)
        assert s.per_class_acc == [0.5, 1.0]

    def test_perfect(self):
        s = get([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert s.weighted_f1 == s.macro_f1 == s.micro_f1 == s.accuracy == 1.0

    def test_class_never_seen_is_left_out_of_macro(self):
        s = get([0, 1], [0, 1], 4)
        assert s.macro_f1 == 1.0
        assert s.per_class_f1 == [1.0, 1.0, 0.0, 0.0]

    def test_predicted_but_absent_class_counts(self):
        s = get([0, 0], [0, 1], 2)
        assert s.per_class_f1 == pytest.approx([2 / 3, 0.0])
        assert s.macro_f1 == pytest.approx(1 / 3)


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(500):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(1, 60))
        gold = rng.integers(0, k, size=n).tolist()
        # mix of skilled and random predictors
        pred = [g if rng.random() < rng.random() else int(rng.integers(0, k)) for g in gold]
        got = get(gold, pred, k).to_dict()
        want = brute_force(gold, pred, k)
        for key, value in want.items():
            np.testing.assert_allclose(got[key], value, rtol=0, atol=1e-12, err_msg=key)


class TestInvariants:
    def test_micro_equals_accuracy(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            gold, pred = rng.integers(0, 5, size=(2, 40))
            s = get(gold, pred, 5)
            assert s.micro_f1 == pytest.approx(s.accuracy, abs=1e-15)

    def test_weighted_equals_macro_on_balanced_support(self):
        rng = np.random.default_rng(2)
        gold = np.repeat(np.arange(4), 10)
        for _ in range(50):
            pred = rng.integers(0, 4, size=40)
            s = get(gold, pred, 4)
            if all(s.per_class_f1[c] > 0 or (pred == c).any() for c in range(4)):
                assert s.weighted_f1 == pytest.approx(s.macro_f1, abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            gold, pred = rng.integers(0, 6, size=(2, 25))
            s = get(gold, pred, 6).to_dict()
            for key in ("weighted_f1", "macro_f1", "micro_f1", "m_f1", "accuracy"):
                assert 0.0 <= s[key] <= 1.0
            assert all(0.0 <= v <= 1.0 for v in s["per_class_f1"] + s["per_class_acc"])

    def test_order_invariance(self):
        rng = np.random.default_rng(4)
        gold, pred = rng.integers(0, 5, size=(2, 30))
        perm = rng.permutation(30)
        assert get(gold, pred, 5) == get(gold[perm], pred[perm], 5)


class TestErrors:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0], 2)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion([0, 2], [0, 1], 2)
        with pytest.raises(ValueError):
            confusion([0, 1], [0, -1], 2)

    def test_empty(self):
        cm = confusion([], [], 3)
        assert cm.counts.shape == (3, 3) and cm.total == 0
        s = scores(cm)
        assert s.accuracy == s.weighted_f1 == s.macro_f1 == 0.0


def test_report_record():
    r = report([0, 1, 1], [0, 1, 0], 2)
    assert r["confusion"] == [[1, 0], [1, 1]]
    assert r["count"] == 3
    assert r["accuracy"] == pytest.approx(2 / 3)
