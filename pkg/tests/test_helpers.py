import numpy as np
import pytest
import torch as ch
from hypothesis import assume, given, settings, strategies as st
from sklearn.metrics import roc_auc_score

from medanon.tools.helpers import (AverageMeter, DegenerateLabelError,
                                   NonFiniteError, ShapeError,
                                   UndefinedCorrelationError, accuracy, auc,
                                   check_finite, derive_seeds, pearson,
                                   stream_seed)

unit_floats = st.floats(0, 1, allow_nan=False)


def test_accuracy_counts_threshold_as_positive():
    assert accuracy([0.5, 0.49, 0.9, 0.1], [1, 0, 1, 1]) == 0.75
    assert accuracy([0.3, 0.3], [0, 0], threshold=0.3) == 0.0


def test_accuracy_rejects_bad_input():
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ShapeError):
        accuracy([0.1, 0.2], [1])


def test_pearson_extremes():
    a = np.arange(10.0)
    assert pearson(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-12)
    assert pearson(a, -a) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_undefined_for_constant_vector():
    with pytest.raises(UndefinedCorrelationError):
        pearson(np.ones(5), np.arange(5.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(unit_floats, unit_floats), min_size=3, max_size=40))
def test_pearson_matches_numpy(pairs):
    a, b = np.array(pairs).T
    assume(a.std() > 1e-3 and b.std() > 1e-3)
    assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-9)


def test_auc_hand_examples():
    assert auc([0.1, 0.2, 0.3, 0.7, 0.8, 0.9], [0, 0, 0, 1, 1, 1]) == 1.0
    assert auc([0.1, 0.2, 0.3, 0.7, 0.8, 0.9], [1, 1, 1, 0, 0, 0]) == 0.0
    assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
    # pairs (pos, neg): (0.8,0.3) (0.8,0.9) (0.4,0.3) (0.4,0.9) -> 2/4
    assert auc([0.3, 0.8, 0.9, 0.4], [0, 1, 0, 1]) == 0.5


def test_auc_needs_both_classes():
    with pytest.raises(DegenerateLabelError):
        auc([0.1, 0.9], [1, 1])
    with pytest.raises(DegenerateLabelError):
        auc([0.1, 0.9], [0, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4).map(lambda v: v / 4), st.booleans()),
                min_size=2, max_size=50))
def test_auc_matches_sklearn_with_ties(cases):
    scores, labels = zip(*cases)
    labels = np.array(labels, dtype=float)
    assume(0 < labels.sum() < len(labels))
    assert auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores),
                                                abs=1e-12)


def test_derive_seeds_is_reproducible_and_distinct():
    assert derive_seeds(3, 4) == derive_seeds(3, 4)
    assert len(set(derive_seeds(3, 100))) == 100
    assert derive_seeds(3, 4) != derive_seeds(4, 4)
    assert all(0 <= s < 2 ** 63 for s in derive_seeds(0, 10))


def test_stream_seed_depends_on_key_order():
    assert stream_seed(1, 2) == stream_seed(1, 2)
    assert stream_seed(1, 2) != stream_seed(2, 1)
    assert len({stream_seed(7, c) for c in range(1000)}) == 1000


def test_check_finite_names_the_step():
    t = ch.tensor([1.0, float('nan')])
    with pytest.raises(NonFiniteError, match='at step 12'):
        check_finite(t, 'encoder loss', 12)
    with pytest.raises(FloatingPointError):
        check_finite(ch.tensor([float('inf')]), 'x')
    ok = ch.ones(3)
    assert check_finite(ok, 'x') is ok


def test_average_meter():
    meter = AverageMeter()
    meter.update(1.0, 3)
    meter.update(5.0)
    assert meter.avg == 2.0
    assert meter.count == 4
    assert meter.val == 5.0


def _auc_all_pairs(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
               for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        size = int(rng.integers(2, 12))
        labels = rng.integers(0, 2, size)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(size), 1)
        assert auc(scores, labels) == pytest.approx(
            _auc_all_pairs(scores, labels), abs=1e-12)
        correct = sum(int((s >= 0.5) == bool(l))
                      for s, l in zip(scores, labels))
        assert accuracy(scores, labels) == pytest.approx(correct / size,
                                                         abs=1e-12)
        a, b = rng.random(size), rng.random(size)
        ma, mb = sum(a) / size, sum(b) / size
        cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
        va = sum((x - ma) ** 2 for x in a)
        vb = sum((y - mb) ** 2 for y in b)
        assert pearson(a, b) == pytest.approx(cov / np.sqrt(va * vb),
                                              abs=1e-12)
