#!/usr/bin/env python3
"""
Tests for the convergence lab: truncation and the dyadic decomposition,
Baum-Katz series estimates and SLLN trajectories.
"""

import math
import sys
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.dependence import parse_model
from models.errors import PreconditionError
from models.slowly_varying import SlowlyVaryingSpec
from models.tails import parse_tail
from services.convergence_lab import convergence_service, lil_envelope, trend_verdict, wilson_interval
from services.rv_funcs import rv_service

DECOMPOSITION_PRESETS = [
    "iid-normal",
    "mpnd:m=2,lags=0.4,-0.05",
    "na-gauss:rho=-0.05",
    "mend:m=3,block=na-gauss:rho=-0.05",
]


# -- helpers ---------------------------------------------------------------------

def test_wilson_interval_for_zero_count():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12)
    # z^2 / (n + z^2) at z = 1.96
    assert hi == pytest.approx(3.8415 / 103.8415, rel=1e-3)


def test_wilson_interval_brackets_estimate():
    lo, hi = wilson_interval(37, 200)
    assert lo < 37 / 200 < hi


@pytest.mark.parametrize("sums, expected", [
    ([0.0, 1.0, 1.5, 1.75, 1.75, 1.75, 1.75], "stabilizing"),
    ([0.0, 1.0, 2.0, 3.0, 4.0, 5.0], "growing"),
    ([0.0, 1.0, 3.0, 4.0, 4.5, 6.0], "inconclusive"),
    ([0.0, 0.0, 0.0, 0.0], "stabilizing"),
])
def test_trend_verdict(sums, expected):
    assert trend_verdict(sums) == expected


def test_lil_envelope_value():
    n = 2 ** 20
    assert lil_envelope(n) == pytest.approx(math.sqrt(2.0 * n * math.log(math.log(n))) / n)
    assert lil_envelope(n, sigma=2.0) == pytest.approx(2.0 * lil_envelope(n))


def test_max_abs_partial_sums():
    M = convergence_service.max_abs_partial_sums([1.0, -3.0, 1.0])
    np.testing.assert_array_equal(M, [1.0, 2.0, 2.0])
    M = convergence_service.max_abs_partial_sums([[1.0, 1.0], [2.0, 0.0]], centers=[1.0, 1.0])
    np.testing.assert_array_equal(M, [[0.0, 0.0], [1.0, 1.0]])


def test_max_abs_partial_sums_rejects_mismatched_centers():
    with pytest.raises(PreconditionError):
        convergence_service.max_abs_partial_sums([1.0, 2.0, 3.0], centers=[0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=-50.0, max_value=50.0), min_size=1, max_size=64))
def test_max_abs_unchanged_by_values_inside_current_max(values):
    M = convergence_service.max_abs_partial_sums(values)
    s = float(np.cumsum(values)[-1])
    extended = convergence_service.max_abs_partial_sums(values + [-s / 2.0, s / 4.0, 0.0])
    np.testing.assert_array_equal(extended[:len(values)], M)
    assert np.all(extended[len(values):] == M[-1])


# -- truncation ---------------------------------------------------------------------

def test_truncate_path():
    tp = convergence_service.truncate_path([0.5, 2.0, 3.0], 1.0)
    np.testing.assert_array_equal(tp.values, [0.5, 1.0, 1.0])
    assert tp.level == 1.0


def test_truncate_path_preconditions():
    with pytest.raises(PreconditionError):
        convergence_service.truncate_path([1.0, -0.5], 1.0)
    with pytest.raises(PreconditionError):
        convergence_service.truncate_path([1.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=-50.0, max_value=50.0), min_size=1, max_size=64))
def test_split_parts_recombine(values):
    pos, neg = convergence_service.split_parts(values)
    assert np.all(pos >= 0) and np.all(neg >= 0)
    np.testing.assert_allclose(pos - neg, values)


# -- dyadic decomposition -----------------------------------------------------------

def _norm(p=1.5):
    return rv_service.make_normalizer(p, None, SlowlyVaryingSpec.one())


def test_decomposition_levels_and_blocks():
    norm = _norm()
    tail = parse_tail("exp:1")
    path = np.array([0.5, 3.0, 0.2, 1.7])
    d = convergence_service.dyadic_decomposition(path, norm, 2, tail)
    np.testing.assert_allclose(d.levels, norm.b(np.array([1.0, 2.0, 4.0])))
    np.testing.assert_allclose(d.clamped[0], np.minimum(path, d.levels[0]))
    np.testing.assert_allclose(d.means, [tail.clamped_mean(b) for b in d.levels])
    np.testing.assert_allclose(d.increments_mean, np.diff(d.means), rtol=1e-12)
    assert d.block_index(5, 1) == 2


def test_decomposition_check_on_small_path():
    report = convergence_service.dyadic_decomposition_check([0.5, 3.0, 0.2], _norm(), 2, parse_tail("exp:1"))
    assert report.holds
    assert report.lhs >= 0.0
    assert all(t >= 0.0 for t in report.third_terms)
    assert len(report.first_terms) == len(report.second_terms) == 2


def test_decomposition_preconditions():
    tail = parse_tail("exp:1")
    with pytest.raises(PreconditionError):
        convergence_service.dyadic_decomposition([1.0, 2.0], _norm(), 3, tail)
    with pytest.raises(PreconditionError):
        convergence_service.dyadic_decomposition([1.0, -2.0, 0.5], _norm(), 2, tail)
    with pytest.raises(PreconditionError):
        convergence_service.dyadic_decomposition([1.0], _norm(), 0, tail)


@pytest.mark.parametrize("preset", DECOMPOSITION_PRESETS)
def test_decomposition_holds_on_presets(preset):
    model = parse_model(preset)
    reports = convergence_service.decomposition_check_model(model, _norm(), 10, range(100))
    assert len(reports) == 200
    assert all(r.holds for r in reports)


def test_decomposition_holds_with_log_normalizer():
    norm = rv_service.make_normalizer(1.2, None, SlowlyVaryingSpec.logpow(-1.0 / 1.2))
    reports = convergence_service.decomposition_check_model(parse_model("iid-normal"), norm, 8, range(20))
    assert all(r.holds for r in reports)


# -- Monte Carlo exceedances ------------------------------------------------------------

def test_exceedance_prob_is_worker_invariant():
    model = parse_model("mpnd:m=2,lags=0.4,-0.05")
    norm = _norm()
    one = convergence_service.exceedance_prob_mc(model, 256, 0.5, norm, reps=600, seed=9, workers=1)
    many = convergence_service.exceedance_prob_mc(model, 256, 0.5, norm, reps=600, seed=9, workers=4)
    assert one == many
    assert one.ci_lo <= one.p_hat <= one.ci_hi


def test_exceedance_prob_preconditions():
    model = parse_model("iid-normal")
    with pytest.raises(PreconditionError):
        convergence_service.exceedance_prob_mc(model, 16, 1.0, _norm(), reps=99, seed=0)
    with pytest.raises(PreconditionError):
        convergence_service.exceedance_prob_mc(model, 16, 0.0, _norm(), reps=100, seed=0)


def test_exceedance_needs_finite_mean():
    model = parse_model("iid-pareto:alpha=0.8")
    with pytest.raises(PreconditionError):
        convergence_service.exceedance_prob_mc(model, 16, 1.0, _norm(), reps=100, seed=0)


@pytest.mark.parametrize("preset", ["iid-normal", "na-gauss:rho=-0.05", "mpnd:m=2,lags=0.4,-0.05"])
def test_exceedance_prob_nonincreasing_in_eps(preset):
    model = parse_model(preset)
    estimates = [convergence_service.exceedance_prob_mc(model, 128, eps, _norm(), reps=400, seed=11)
                 for eps in (0.1, 0.3, 0.6, 1.2)]
    counts = [e.count for e in estimates]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > counts[-1]


def test_series_estimates_nonincreasing_in_eps():
    results = convergence_service.baum_katz_series(
        parse_model("mpnd:m=2,lags=0.4,-0.05"), 1.5, None, SlowlyVaryingSpec.one(), [0.25, 0.5, 1.0],
        K=8, reps=300, seed=5,
    )
    for smaller, larger in zip(results, results[1:]):
        assert all(a >= b for a, b in zip(smaller.p_hat, larger.p_hat))


# -- Baum-Katz series -----------------------------------------------------------------------

def test_baum_katz_iid_normal_stabilizes():
    results = convergence_service.baum_katz_series(
        parse_model("iid-normal"), 1.5, None, SlowlyVaryingSpec.one(), [1.0], K=15, reps=2000, seed=7,
    )
    est = results[0]
    assert len(est.n) == 15 and est.n[-1] == 2 ** 15
    assert est.partial_sums[-1] > 0.0
    assert est.verdict == "stabilizing"
    assert est.dyadic_verdict == "stabilizing"
    assert est.forms_agree
    # increment over (2^12, 2^13] against the partial sum at 2^13
    assert est.increments[12] / est.partial_sums[12] < 1e-3
    assert est.last_increment_ratio < 1e-3
    assert all(lo <= p <= hi for lo, p, hi in zip(est.ci_lo, est.p_hat, est.ci_hi))


def test_baum_katz_counterexample_does_not_stabilize():
    results = convergence_service.baum_katz_series(
        parse_model("counterexample:p=1.5"), 1.5, None, SlowlyVaryingSpec.one(), [0.4], K=13, reps=2000, seed=7,
    )
    assert results[0].verdict != "stabilizing"
    assert results[0].last_increment_ratio > 1e-3


def test_baum_katz_is_worker_invariant():
    args = (parse_model("na-gauss:rho=-0.05"), 1.5, None, SlowlyVaryingSpec.one(), [0.5, 1.0])
    one = convergence_service.baum_katz_series(*args, K=8, reps=300, seed=4, workers=1)
    many = convergence_service.baum_katz_series(*args, K=8, reps=300, seed=4, workers=3)
    assert [r.model_dump() for r in one] == [r.model_dump() for r in many]


def test_baum_katz_p_one_needs_increasing_L():
    with pytest.raises(PreconditionError):
        convergence_service.baum_katz_series(
            parse_model("iid-normal"), 1.0, None, SlowlyVaryingSpec.logpow(-1.0), [1.0], K=4, reps=100, seed=0,
        )


def test_baum_katz_preconditions():
    model = parse_model("iid-normal")
    with pytest.raises(PreconditionError):
        convergence_service.baum_katz_series(model, 1.5, None, SlowlyVaryingSpec.one(), [1.0], K=0, reps=100, seed=0)
    with pytest.raises(PreconditionError):
        convergence_service.baum_katz_series(model, 1.5, None, SlowlyVaryingSpec.one(), [-1.0], K=4, reps=100, seed=0)


# -- SLLN trajectories ------------------------------------------------------------------------

CHECKPOINTS = [2 ** k for k in range(21)]


def test_slln_iid_normal_within_lil_envelope():
    traj = convergence_service.slln_trajectory(
        parse_model("iid-normal"), 1.0, SlowlyVaryingSpec.one(), CHECKPOINTS, list(range(1, 9)), sigma=1.0,
    )
    assert traj.envelope == pytest.approx(lil_envelope(2 ** 20))
    assert traj.final_max_abs <= 5.0 * traj.envelope
    assert len(traj.values) == 8 and len(traj.values[0]) == len(CHECKPOINTS)


def test_slln_negatively_associated_at_p_three_halves():
    traj = convergence_service.slln_trajectory(
        parse_model("na-gauss:rho=-0.05"), 1.5, SlowlyVaryingSpec.one(), CHECKPOINTS, list(range(1, 9)),
    )
    assert traj.envelope is None
    assert traj.final_max_abs < 0.05


def test_slln_is_worker_invariant():
    args = (parse_model("mend:m=3,block=na-gauss:rho=-0.05"), 1.5, SlowlyVaryingSpec.one(), [1, 8, 64, 512])
    one = convergence_service.slln_trajectory(*args, seeds=[3, 1, 2], workers=1)
    many = convergence_service.slln_trajectory(*args, seeds=[3, 1, 2], workers=3)
    assert one == many
    assert one.seeds == [3, 1, 2]


def test_slln_preconditions():
    model = parse_model("iid-normal")
    with pytest.raises(PreconditionError):
        convergence_service.slln_trajectory(model, 1.0, SlowlyVaryingSpec.one(), [0, 4], [1])
    with pytest.raises(PreconditionError):
        convergence_service.slln_trajectory(model, 1.0, SlowlyVaryingSpec.one(), [4], [])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
