#!/usr/bin/env python3
"""
Tests for the slowly varying function calculus.
Covers safe logs, evaluation and derivatives, the Galambos ratio, de Bruijn
conjugates (closed form and fixed-point inversion) and the normalizer b(n).
"""

import math
import sys
import warnings
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.errors import ConfigError, DomainError, PreconditionError, RangeError, UnsupportedError
from models.slowly_varying import SlowlyVaryingSpec, fixed_point_conjugate, parse_spec, safe_log, safe_loglog
from services.rv_funcs import geometric_grid, rv_service

GRID = geometric_grid(1e2, 1e300, 32)

CLOSED_SPECS = [
    SlowlyVaryingSpec.one(),
    SlowlyVaryingSpec.logpow(-1.0),
    SlowlyVaryingSpec.logpow(0.5),
    SlowlyVaryingSpec.logpow(2.0),
    SlowlyVaryingSpec.loglogpow(1.0),
    SlowlyVaryingSpec.loglogpow(-2.0 / 3.0),
    SlowlyVaryingSpec.product(SlowlyVaryingSpec.logpow(1.0), SlowlyVaryingSpec.loglogpow(2.0)),
]


# -- safe logs ---------------------------------------------------------------

def test_safe_log_examples():
    assert safe_log(0.0) == 1.0
    assert safe_log(1.0) == 1.0
    assert safe_log(math.e ** 2) == pytest.approx(2.0, rel=1e-15)
    assert safe_loglog(0.0) == 1.0


def test_safe_log_rejects_negative():
    with pytest.raises(DomainError):
        safe_log(-1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=1e300), st.floats(min_value=0.0, max_value=1e300))
def test_safe_log_monotone_and_at_least_one(a, b):
    lo, hi = min(a, b), max(a, b)
    assert safe_log(lo) >= 1.0
    assert safe_log(lo) <= safe_log(hi)


# -- evaluation and derivatives ------------------------------------------------

def test_eval_L_examples():
    assert rv_service.eval_L(SlowlyVaryingSpec.logpow(2.0), math.e ** 3) == pytest.approx(9.0, rel=1e-14)
    assert rv_service.eval_L(SlowlyVaryingSpec.one(), 1e6) == 1.0
    assert rv_service.eval_L(SlowlyVaryingSpec.loglogpow(1.0), math.exp(math.e ** 2)) == pytest.approx(2.0, rel=1e-14)


def test_tabulated_spec_interpolates_and_refuses_extrapolation():
    spec = SlowlyVaryingSpec.tabulated([10.0, 1000.0], [1.0, 4.0])
    assert spec.value(100.0) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(RangeError):
        spec.value(1e4)
    with pytest.raises(UnsupportedError):
        spec.derivative(100.0)


def test_eval_dL_examples():
    assert rv_service.eval_dL(SlowlyVaryingSpec.logpow(1.0), math.e ** 2) == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert rv_service.eval_dL(SlowlyVaryingSpec.one(), 123.0) == 0.0
    assert rv_service.eval_dL(SlowlyVaryingSpec.logpow(2.0), math.e) == pytest.approx(2.0 / math.e, rel=1e-14)


def test_eval_dL_below_floor_is_domain_error():
    with pytest.raises(DomainError):
        rv_service.eval_dL(SlowlyVaryingSpec.loglogpow(1.0), 3.0)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(CLOSED_SPECS), st.floats(min_value=20.0, max_value=1e200))
def test_derivative_matches_central_difference(spec, x):
    if spec.kind == "one":
        return
    x = max(x, 2.0 * spec.domain_floor)
    h = 1e-6 * x
    numeric = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h)
    assert spec.derivative(x) == pytest.approx(numeric, rel=1e-5, abs=1e-300)


# -- Galambos ratio ------------------------------------------------------------

def test_galambos_ratio_exact_values():
    grid = geometric_grid(math.e ** 10, math.e ** 200, 16)
    report = rv_service.check_galambos(SlowlyVaryingSpec.logpow(1.0), grid)
    assert report.values[0] == pytest.approx(0.1, rel=1e-12)

    x = math.exp(math.e ** 3)
    grid = geometric_grid(x, x * 1e100, 16)
    report = rv_service.check_galambos(SlowlyVaryingSpec.loglogpow(1.0), grid)
    assert report.values[0] == pytest.approx(1.0 / (3.0 * math.e ** 3), rel=1e-10)


@pytest.mark.parametrize("spec", CLOSED_SPECS, ids=str)
def test_galambos_passes_for_builtin_kinds(spec):
    report = rv_service.check_galambos(spec, GRID)
    assert report.pass_


def test_galambos_fails_for_slowly_decaying_ratio():
    report = rv_service.check_galambos(SlowlyVaryingSpec.logpow(50.0), GRID)
    assert not report.pass_


def test_galambos_rejects_tabulated():
    spec = SlowlyVaryingSpec.tabulated([1e2, 1e300], [1.0, 2.0])
    with pytest.raises(UnsupportedError):
        rv_service.check_galambos(spec, GRID)


def test_reports_carry_plain_booleans():
    with warnings.catch_warnings():
        warnings.simplefilter("error", DeprecationWarning)
        galambos = rv_service.check_galambos(SlowlyVaryingSpec.logpow(2.0), GRID)
        pair = rv_service.verify_conjugate_pair(rv_service.de_bruijn_conjugate(SlowlyVaryingSpec.logpow(2.0)),
                                                GRID, tol=0.2)
    assert type(galambos.pass_) is bool
    assert type(pair.pass_) is bool


# -- slow variation ------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("spec", CLOSED_SPECS, ids=str)
def test_scaled_ratio_tends_to_one(spec, lam):
    x = geometric_grid(1e3, 1e290, 24)
    dev = np.abs(rv_service.eval_L(spec, lam * x) / rv_service.eval_L(spec, x) - 1.0)
    assert dev[-1] < 0.01
    assert dev[-1] <= dev[0]


# -- conjugates ----------------------------------------------------------------

@pytest.mark.parametrize("spec", CLOSED_SPECS, ids=str)
def test_closed_form_conjugate_is_reciprocal_and_passes(spec):
    pair = rv_service.de_bruijn_conjugate(spec)
    assert pair.provenance == "closed_form"
    x = np.geomspace(1e3, 1e250, 25)
    np.testing.assert_allclose(pair.Lt.value(x) * spec.value(x), 1.0, rtol=1e-13)
    report = rv_service.verify_conjugate_pair(pair, GRID, tol=0.2)
    assert report.pass_


def test_conjugate_of_one_and_log_power():
    assert rv_service.de_bruijn_conjugate(SlowlyVaryingSpec.one()).Lt.kind == "one"
    pair = rv_service.de_bruijn_conjugate(SlowlyVaryingSpec.loglogpow(2.0 * (1.0 - 1.5) / 1.5))
    assert pair.Lt.gamma == pytest.approx(2.0 / 3.0)


def test_conjugate_ratio_closed_form_values():
    pair = rv_service.de_bruijn_conjugate(SlowlyVaryingSpec.logpow(1.0))
    for ln_x in (100.0, 700.0):
        x = math.exp(ln_x)
        ratio = pair.L.value(x) * pair.Lt.value(x * pair.L.value(x))
        assert ratio == pytest.approx(ln_x / (ln_x + math.log(ln_x)), rel=1e-12)


def _lambert_oracle(gamma: float, x: float) -> float:
    """Exact solution of t (ln(x t))^gamma = 1."""
    w = mpmath.lambertw(mpmath.mpf(x) ** (1 / mpmath.mpf(gamma)) / gamma)
    return float((gamma * w.real) ** (-gamma))


@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_numeric_inversion_matches_lambert_w(gamma):
    spec = SlowlyVaryingSpec.logpow(gamma)
    x = np.geomspace(1e3, 1e300, 20)
    t = fixed_point_conjugate(spec, x)
    oracle = np.array([_lambert_oracle(gamma, float(v)) for v in x])
    np.testing.assert_allclose(t, oracle, rtol=1e-6)


def test_numeric_conjugate_tracks_closed_form():
    spec = SlowlyVaryingSpec.logpow(2.0)
    numeric = rv_service.de_bruijn_conjugate(spec, method="numeric")
    assert numeric.provenance == "numeric_inversion"
    report = rv_service.verify_conjugate_pair(numeric, geometric_grid(1e3, 1e200, 16), tol=0.2)
    assert report.pass_


def test_closed_method_on_tabulated_is_unsupported():
    spec = SlowlyVaryingSpec.tabulated([1.0, 1e300], [1.0, 2.0])
    with pytest.raises(UnsupportedError):
        rv_service.de_bruijn_conjugate(spec, method="closed")


# -- normalizer ----------------------------------------------------------------

def test_normalizer_examples():
    norm = rv_service.make_normalizer(1.5, 2.0 / 3.0, SlowlyVaryingSpec.one(), A=1.0)
    assert norm.b(64) == pytest.approx(16.0, rel=1e-14)
    assert rv_service.make_normalizer(1.0, 1.0).b(1e6) == pytest.approx(1e6, rel=1e-14)

    Lt = SlowlyVaryingSpec.loglogpow(2.0 / 3.0)
    norm = rv_service.make_normalizer(1.5, 2.0 / 3.0, Lt, A=math.e)
    expected = 256.0 * math.log(math.log(256.0)) ** (2.0 / 3.0)
    assert norm.b(4096) == pytest.approx(expected, rel=1e-12)
    assert norm.b(4096) == pytest.approx(366.5, abs=0.2)


def test_normalizer_below_cutoff_uses_floor_value():
    Lt = SlowlyVaryingSpec.logpow(1.0)
    norm = rv_service.make_normalizer(1.5, 2.0 / 3.0, Lt, A=8.0)
    assert norm.b(2) == pytest.approx(2.0 ** (2.0 / 3.0) * Lt.value(4.0), rel=1e-14)


def test_normalizer_rejects_small_alpha():
    with pytest.raises(PreconditionError):
        rv_service.make_normalizer(1.5, 0.5)


@pytest.mark.parametrize("Lt", [SlowlyVaryingSpec.one(), SlowlyVaryingSpec.logpow(1.0),
                                SlowlyVaryingSpec.loglogpow(2.0 / 3.0)], ids=str)
def test_normalizer_strictly_increasing(Lt):
    rv_service.make_normalizer(1.5, None, Lt).check_monotone(2 ** 20)


# -- parsing -------------------------------------------------------------------

def test_parse_spec_round_trip_and_errors():
    for text in ("one", "logpow:2.0", "loglogpow:-0.5", "product:logpow:1.0,loglogpow:2.0"):
        assert parse_spec(text).to_string() == text
    with pytest.raises(ConfigError) as exc:
        parse_spec("sqrtlog:2")
    assert exc.value.key == "L"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
