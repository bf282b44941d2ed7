from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import labeled, rec
from slotrefine.errors import MissingLabelError, SingleClassError
from slotrefine.routing import (
    Partition,
    candidate_thresholds,
    estimate_youden_threshold,
    load_partition,
    partition,
    route,
    save_partition,
)


def sweep(reals, fakes):
    """Exact-fraction oracle: best J over every midpoint, smallest tau on ties."""
    best = None
    for tau in candidate_thresholds(list(reals) + list(fakes)):
        j = Fraction(sum(s > tau for s in fakes), len(fakes)) - Fraction(sum(s > tau for s in reals), len(reals))
        if best is None or j > best[1]:
            best = (tau, j)
    return best


def test_separable_example():
    t = estimate_youden_threshold(labeled([0.1, 0.2], [0.8, 0.9]))
    assert t.tau == 0.5 and t.youden_j == 1.0
    assert t.candidate_count == 5


def test_overlapping_example():
    reals, fakes = [0.1, 0.35, 0.4], [0.3, 0.8, 0.9]
    t = estimate_youden_threshold(labeled(reals, fakes))
    assert t.tau == pytest.approx(0.6) and t.youden_j == pytest.approx(2 / 3)
    tau, j = sweep(reals, fakes)
    assert t.tau == tau and Fraction(t.youden_j).limit_denominator(100) == j


def test_ties_pick_smallest_threshold():
    # two gaps give J = 1/2; the lower one wins
    t = estimate_youden_threshold(labeled([0.1, 0.5], [0.3, 0.9]))
    assert t.tau == sweep([0.1, 0.5], [0.3, 0.9])[0] == 0.2


def test_single_class_and_missing_label():
    with pytest.raises(SingleClassError):
        estimate_youden_threshold(labeled([0.1, 0.2], []))
    with pytest.raises(MissingLabelError):
        estimate_youden_threshold(labeled([0.1], [0.9]) + [rec("u", 0.5, None, "val")])


def test_equal_to_tau_is_confident():
    thr = estimate_youden_threshold(labeled([0.1, 0.2], [0.8, 0.9]))
    p = partition([rec("eq", 0.5), rec("lo", 0.49), rec("hi", 0.51)], thr)
    assert p.confident == ("eq", "lo") and p.uncertain == ("hi",)


def test_routing_disabled_sends_all_to_uncertain():
    p = route(labeled([0.1], [0.9]), [rec("a", 0.0), rec("b", 1.0)], use_routing=False)
    assert p.confident == () and p.uncertain == ("a", "b") and not p.routing_enabled


def test_partition_round_trip(tmp_path):
    p = route(labeled([0.1], [0.9]), [rec("a", 0.0), rec("b", 1.0)])
    save_partition(p, tmp_path / "p.json", provenance={"x": 1})
    assert load_partition(tmp_path / "p.json") == p


def test_custom_criterion_hook():
    from slotrefine.routing import RoutingThreshold

    p = route([], [rec("a", 0.3), rec("b", 0.7)], criterion=lambda v: RoutingThreshold(0.3, 0.0, 0, 0))
    assert isinstance(p, Partition) and p.confident == ("a",)


scores = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(scores, min_size=1, max_size=10), st.lists(scores, min_size=1, max_size=10))
def test_matches_sweep(reals, fakes):
    t = estimate_youden_threshold(labeled(reals, fakes))
    tau, j = sweep(reals, fakes)
    assert t.tau == tau
    assert abs(t.youden_j - float(j)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_monotone_transform_keeps_partition_of_val(reals, fakes):
    # scaling by a power of two is exact, so order is kept and the split must be too the induced split of the validation set
    t1 = estimate_youden_threshold(labeled(reals, fakes))
    t2 = estimate_youden_threshold(labeled([4 * s for s in reals], [4 * s for s in fakes]))
    split1 = [s > t1.tau for s in reals + fakes]
    split2 = [4 * s > t2.tau for s in reals + fakes]
    assert split1 == split2


@settings(max_examples=100, deadline=None)
@given(st.lists(scores, max_size=20), scores)
def test_partition_totality(test_scores, tau):
    from slotrefine.routing import RoutingThreshold

    recs = [rec(f"s{i}", s) for i, s in enumerate(test_scores)]
    p = partition(recs, RoutingThreshold(tau, 0.0, 0, 0))
    assert set(p.confident).isdisjoint(p.uncertain)
    assert len(p.confident) + len(p.uncertain) == len(recs)
    by_id = {r.sample_id: r.base_score for r in recs}
    assert all(by_id[i] <= tau for i in p.confident) and all(by_id[i] > tau for i in p.uncertain)
