from fractions import Fraction
from itertools import product

import pytest

from conftest import rec
from slotrefine.core import ScoreManifest
from slotrefine.errors import MissingLabelError, SingleClassError
from slotrefine.metrics import (
    ap,
    auc,
    format_delta,
    pr_points,
    rank_displacement,
    roc_points,
    subset_report,
)
from slotrefine.routing import RoutingThreshold, partition


def brute_auc(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [a for a, l in zip(s, y) if l == 0]
    won = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else 0 for p in pos for n in neg)
    return won / (len(pos) * len(neg))


def brute_ap(s, y):
    """Precision table, equal scores kept in input order."""
    order = sorted(range(len(s)), key=lambda i: -s[i])
    hits, total = 0, Fraction(0)
    for k, i in enumerate(order, start=1):
        if y[i] == 1:
            hits += 1
            total += Fraction(hits, k)
    return total / sum(y)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.5, 0.5], [0, 1]) == 0.5


def test_ap_examples():
    assert ap([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert ap([0.3, 0.2], [1, 1]) == 1.0
    for k in range(1, 6):
        assert ap([1.0] * k + [0.0], [0] * k + [1]) == pytest.approx(1 / (k + 1), abs=1e-15)


def test_single_class_errors():
    with pytest.raises(SingleClassError):
        auc([0.1, 0.2], [1, 1])


def test_exhaustive_small_sets_against_brute_force():
    values = [0.0, 0.5, 1.0]
    for n in range(2, 5):
        for s in product(values, repeat=n):
            for y in product((0, 1), repeat=n):
                if 0 < sum(y) < n:
                    assert abs(auc(s, y) - float(brute_auc(s, y))) <= 1e-12
                if sum(y):
                    assert abs(ap(s, y) - float(brute_ap(s, y))) <= 1e-12


def test_curves_end_at_full_recall():
    s, y = [0.9, 0.1, 0.5, 0.5], [1, 0, 1, 0]
    assert roc_points(s, y)[-1][1:] == (1.0, 1.0)
    assert pr_points(s, y)[-1][1:] == (1.0, 0.5)


def test_subset_report_and_missing_labels():
    m = ScoreManifest((rec("a", 0.2, 0), rec("b", 0.9, 1), rec("c", 0.7, 0), rec("d", 0.6, 1)))
    p = partition(list(m), RoutingThreshold(0.5, 0.0, 0, 0))
    r = subset_report(m, p, "uncertain")
    assert r.subset == "uncertain" and (r.n_real, r.n_fake) == (1, 2) and r.auc == 0.5
    with pytest.raises(SingleClassError):
        subset_report(m, p, "confident")
    unl = ScoreManifest((rec("a", 0.2), rec("b", 0.9, 1)))
    with pytest.raises(MissingLabelError):
        subset_report(unl, None, "full")


def test_format_delta_is_signed():
    m = ScoreManifest((rec("a", 0.9, 0), rec("b", 0.1, 1)))
    after = ScoreManifest((rec("a", 0.1, 0), rec("b", 0.9, 1)))
    text = format_delta(subset_report(m, None), subset_report(after, None))
    assert "AUC 0.0 -> 100.0 (+100.0)" in text and "(+50.0)" in text


def test_displacement_example():
    p = partition([rec("a", 0.9), rec("b", 0.7), rec("c", 0.6)], RoutingThreshold(0.5, 0.0, 0, 0))
    before = ScoreManifest((rec("a", 0.9), rec("b", 0.7), rec("c", 0.6)))
    after = ScoreManifest((rec("a", 0.6), rec("b", 0.9), rec("c", 0.7)))
    d = {r.sample_id: r.displacement for r in rank_displacement(before, after, p)}
    assert d == {"a": 2, "b": -1, "c": -1}
    assert all(r.displacement == 0 for r in rank_displacement(before, before, p))
