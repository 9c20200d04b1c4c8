import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_panel
from synthreg.inference import (
    ObservedStudy,
    markov_interval,
    null_adjusted_panel,
    predictive_interval,
    randomization_test,
    rank_test,
)


def test_threshold_for_twenty_periods():
    r = np.arange(20, dtype=float)
    report = rank_test(r, 1, 0.05)
    assert report.threshold_index == 19 == math.ceil(20 * 0.95)


def test_strict_maximum_p_value():
    r = np.linspace(0, 1, 20)
    report = rank_test(r, 20, 0.05)
    assert report.p_value == pytest.approx(0.05)
    assert report.residual_rank == 1 and report.reject


def test_full_ties_never_reject():
    report = rank_test(np.full(20, 0.3), 7, 0.5)
    assert report.p_value == 1.0 and not report.reject


def test_single_period_never_rejects():
    report = rank_test([0.4], 1, 0.9)
    assert report.p_value == 1.0 and not report.reject


def test_least_favorable_scaling():
    r = np.linspace(0, 1, 40)
    assert rank_test(r, 40, 0.1, C=2).p_value == pytest.approx(2 / 40)
    assert rank_test(r, 10, 0.1, C=4).p_value == 1.0


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 5)), st.sampled_from([0.05, 0.1, 0.2]),
       st.sampled_from([1.0, 2.0, 3.0]))
def test_exhaustive_size(r, alpha, C):
    rejections = sum(rank_test(r, S, alpha, C).reject for S in range(1, r.size + 1))
    assert rejections <= alpha * r.size / C + 1e-9


@given(arrays(np.int64, st.integers(2, 30), elements=st.integers(0, 50)), st.integers(0, 1000))
def test_shift_invariance(r, c):
    # integer-valued residuals keep the shift exact in floating point
    r = r.astype(float)
    for S in range(1, r.size + 1):
        a, b = rank_test(r, S, 0.1), rank_test(r + c, S, 0.1)
        assert (a.reject, a.p_value) == (b.reject, b.p_value)


def test_rank_test_input_errors():
    with pytest.raises(ValueError):
        rank_test([-0.1, 0.2], 1, 0.05)
    with pytest.raises(ValueError):
        rank_test([0.1, 0.2], 3, 0.05)
    with pytest.raises(ValueError):
        rank_test([0.1, 0.2], 1, 0.05, C=0.5)


def test_report_json_keys():
    d = rank_test([0.1, 0.5, 0.2], 2, 0.1).to_dict()
    assert set(d) == {"p_value", "reject", "alpha", "C", "threshold_index", "residual_rank"}


def test_null_adjustment_only_touches_post_periods(rng):
    p = random_panel(rng, 2, 10)
    study = ObservedStudy.from_panel(p, 6, effects=np.full(10, 0.5), null_effects=np.full(10, 0.5))
    assert np.allclose(null_adjusted_panel(study).treated, p.treated)


def test_test_does_not_depend_on_s_except_rank(rng):
    p = random_panel(rng, 3, 30)
    reports = [randomization_test(ObservedStudy.from_panel(p, S), {"kind": "ftl"}) for S in (4, 19)]
    assert reports[0].residuals == reports[1].residuals


def test_large_effect_is_detected(rng):
    p = random_panel(rng, 3, 40)
    p = p.with_treated(p.controls @ np.array([0.2, 0.3, 0.5]))
    effects = np.zeros(40)
    effects[39] = 0.9
    study = ObservedStudy.from_panel(p, 40, effects=effects)
    report = randomization_test(study, {"kind": "ftl"}, alpha=0.05)
    assert report.reject and report.residual_rank == 1


def test_markov_examples():
    assert markov_interval(0.0, 0.0, 10, 0.1) == 0.0
    assert markov_interval(0.01, 1.0, 100, 0.1) == pytest.approx(0.2)
    assert markov_interval(0.01, 1.0, 100, 0.05) == pytest.approx(2 * markov_interval(0.01, 1.0, 100, 0.1))
    with pytest.raises(ValueError):
        markov_interval(0.01, 1.0, 100, 0.0)
    with pytest.raises(ValueError):
        markov_interval(-0.01, 1.0, 100, 0.1)


def test_predictive_interval_flags_estimate(rng):
    p = random_panel(rng, 2, 30)
    iv = predictive_interval(ObservedStudy.from_panel(p, 20), {"kind": "ftl"}, delta=0.1)
    assert iv.oracle_source == "pre-treatment estimate"
    assert iv.lower < iv.prediction < iv.upper
    assert iv.upper - iv.prediction == pytest.approx(math.sqrt(iv.c))
    supplied = predictive_interval(ObservedStudy.from_panel(p, 20), {"kind": "ftl"}, 0.1, 1.0, 0.02)
    assert supplied.oracle_source == "supplied"
    assert supplied.c == pytest.approx((0.02 + 1.0 / 30) / 0.1)


def test_predictive_interval_uses_only_pre_periods(rng):
    p = random_panel(rng, 2, 30)
    a = predictive_interval(ObservedStudy.from_panel(p, 12), {"kind": "ftl"})
    b = predictive_interval(ObservedStudy.from_panel(p, 12, effects=np.full(30, 0.7)), {"kind": "ftl"})
    assert a.prediction == b.prediction
    assert b.effect == pytest.approx(a.effect + 0.7)
