#!/usr/bin/env python3
"""
Tests for the dependent-sequence generators.
Covers preset parsing, reproducible streams, the Gaussian copula structures,
Markov chain validation, phi coefficients and variance-domination estimates.
"""

import itertools
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

from models.dependence import SHIPPED_PRESETS, MarkovChainSpec, NAGaussStructure, parse_model
from models.errors import (
    ConfigError,
    DegenerateInputError,
    ModelValidationError,
    NumericError,
    PreconditionError,
    UnsupportedError,
)
from services.dependence_gen import check_nondecreasing, dependence_service, parse_transform, phi_from_matrix
from services.random_streams import run_chunks, stream


def _corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


# -- presets -------------------------------------------------------------------

@pytest.mark.parametrize("preset", SHIPPED_PRESETS + (
    "iid-rademacher", "iid-halfnormal", "iid-exp:rate=1", "iid-pareto:alpha=2.5,scale=1",
    "iid-uniform:a=0,b=1", "const:c=0", "counterexample:p=1.5,L=one",
))
def test_presets_build_and_generate(preset):
    model = dependence_service.build_model(preset)
    path = dependence_service.generate_path(model, 64, seed=3)
    assert path.values.shape == (64,)
    assert np.all(np.isfinite(path.values))
    assert path.fingerprint == parse_model(preset).fingerprint


def test_unknown_preset_is_config_error():
    with pytest.raises(ConfigError) as exc:
        parse_model("garch:p=1")
    assert exc.value.key == "model"
    with pytest.raises(ConfigError):
        parse_model("mpnd:lags=0.1")


def test_positive_lag_beyond_m_is_rejected():
    with pytest.raises(ModelValidationError):
        parse_model("mpnd:m=1,lags=0.3")


def test_na_block_size_and_psd_check():
    s = parse_model("na-gauss:rho=-0.05").structure
    assert s.block_size == 21
    assert parse_model("na-gauss:rho=-0.3").structure.block_size == 4
    with pytest.raises(ModelValidationError):
        parse_model("na-gauss:rho=-0.5,d=4")
    with pytest.raises(ModelValidationError):
        NAGaussStructure(matrix=((1.0, 0.2), (0.2, 1.0)))


# -- reproducibility ---------------------------------------------------------------

def test_same_seed_same_bytes_other_seed_differs():
    model = parse_model("mpnd:m=2,lags=0.4,-0.05")
    a = dependence_service.generate_path(model, 500, seed=11).values
    b = dependence_service.generate_path(model, 500, seed=11).values
    c = dependence_service.generate_path(model, 500, seed=12).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("preset", SHIPPED_PRESETS)
def test_batch_is_independent_of_worker_count(preset):
    model = parse_model(preset)
    one = dependence_service.generate_batch(model, 40, seed=5, reps=600, workers=1)
    many = dependence_service.generate_batch(model, 40, seed=5, reps=600, workers=8)
    assert one.tobytes() == many.tobytes()


def test_run_chunks_keeps_replicate_order():
    out = run_chunks(lambda rows: np.array([[r, stream(9, r).random()] for r in rows]), 50, workers=4, chunk_size=7)
    assert out[:, 0].tolist() == list(range(50))
    assert out[13, 1] == stream(9, 13).random()


# -- marginals -----------------------------------------------------------------------

@pytest.mark.parametrize("preset,mean,sd", [
    ("iid-normal", 0.0, 1.0),
    ("iid-exp:rate=2", 0.5, 0.5),
    ("iid-uniform:a=0,b=2", 1.0, 2.0 / math.sqrt(12.0)),
    ("iid-halfnormal", math.sqrt(2.0 / math.pi), math.sqrt(1.0 - 2.0 / math.pi)),
    ("iid-rademacher", 0.0, 1.0),
])
def test_marginal_moments(preset, mean, sd):
    model = parse_model(preset)
    x = dependence_service.generate_path(model, 200_000, seed=21).values
    assert abs(x.mean() - mean) < 5.0 * sd / math.sqrt(x.size)
    assert x.std() == pytest.approx(sd, rel=0.02)
    assert model.marginal.mean() == pytest.approx(mean, rel=1e-12, abs=1e-12)


def test_pareto_tail_matches_closed_form():
    model = parse_model("iid-pareto:alpha=2.5,scale=1")
    x = dependence_service.generate_path(model, 200_000, seed=4).values
    assert x.min() >= 1.0
    assert np.mean(x > 2.0) == pytest.approx(2.0 ** -2.5, abs=0.005)


# -- dependence structures -----------------------------------------------------------

def test_mpnd_lag_correlations_cholesky_and_fft():
    model = parse_model("mpnd:m=2,lags=0.4,-0.05")
    batch = dependence_service.generate_batch(model, 8, seed=1, reps=20_000)
    assert _corr(batch[:, 2], batch[:, 3]) == pytest.approx(0.4, abs=0.03)
    assert _corr(batch[:, 2], batch[:, 4]) == pytest.approx(-0.05, abs=0.03)
    assert abs(_corr(batch[:, 2], batch[:, 5])) < 0.03

    long_path = dependence_service.generate_path(model, 2 ** 15, seed=2).values
    assert _corr(long_path[:-1], long_path[1:]) == pytest.approx(0.4, abs=0.03)


def test_non_psd_lags_fail_factorization():
    model = dependence_service.build_model("mpnd:m=2,lags=0.5,-0.3,-0.1")
    with pytest.raises(NumericError):
        dependence_service.generate_path(model, 64, seed=0)
    with pytest.raises(NumericError):
        dependence_service.generate_path(model, 4096, seed=0)


def test_na_blocks_are_negatively_correlated_and_independent():
    model = parse_model("na-gauss:rho=-0.05")
    batch = dependence_service.generate_batch(model, 42, seed=8, reps=20_000)
    assert _corr(batch[:, 0], batch[:, 1]) == pytest.approx(-0.05, abs=0.03)
    assert abs(_corr(batch[:, 20], batch[:, 21])) < 0.03
    nq = dependence_service.negative_quadrant_check(batch, 0, 1, 0.0, 0.0)
    assert nq["holds"]


@pytest.mark.parametrize("transform", ["identity", "truncate:1.0", "clamp:0.5"])
def test_mpnd_negative_quadrant_beyond_m_under_monotone_maps(transform):
    model = parse_model("mpnd:m=2,lags=0.4,-0.05")
    batch = parse_transform(transform)(dependence_service.generate_batch(model, 8, seed=13, reps=40_000))
    for j, k in [(0, 2), (1, 3), (2, 6), (0, 7)]:
        for s, t in [(0.0, 0.0), (-0.4, 0.3), (0.3, -0.4)]:
            nq = dependence_service.negative_quadrant_check(batch, j, k, s, t)
            assert nq["holds"], (j, k, s, t, nq)


def test_mend_interleaves_independent_copies():
    model = parse_model("mend:m=3,block=na-gauss:rho=-0.05")
    batch = dependence_service.generate_batch(model, 12, seed=6, reps=20_000)
    assert abs(_corr(batch[:, 0], batch[:, 1])) < 0.03
    assert _corr(batch[:, 0], batch[:, 3]) == pytest.approx(-0.05, abs=0.03)


def test_phimix_chain_visits_states_at_stationary_rates():
    model = parse_model("phimix:a=0.3,b=0.2,emit=identity")
    x = dependence_service.generate_path(model, 100_000, seed=13).values
    assert set(np.unique(x)) <= {0.0, 1.0}
    assert x.mean() == pytest.approx(0.6, abs=0.02)


# -- Markov chains and phi ------------------------------------------------------------

@pytest.mark.parametrize("transition", [
    ((0.5, 0.6), (0.5, 0.5)),
    ((1.2, -0.2), (0.5, 0.5)),
    ((1.0, 0.0), (0.0, 1.0)),
    ((0.0, 1.0), (1.0, 0.0)),
])
def test_invalid_chains_are_rejected(transition):
    with pytest.raises(ModelValidationError):
        MarkovChainSpec(states=(0.0, 1.0), transition=transition)


def test_phi_two_state_closed_form():
    chain = MarkovChainSpec.two_state(0.3, 0.2)
    for n in range(31):
        assert dependence_service.phi_coefficient(chain, n) == pytest.approx(0.6 * 0.5 ** n, rel=1e-10, abs=1e-12)
    dyadic = dependence_service.phi_dyadic(chain, 5)
    np.testing.assert_allclose(dyadic, 0.6 * 0.5 ** (2.0 ** np.arange(6)), rtol=1e-10)


def _brute_phi(P, pi, n):
    Pn = np.linalg.matrix_power(P, n)
    s = len(pi)
    best = 0.0
    for i in range(s):
        for r in range(s + 1):
            for subset in itertools.combinations(range(s), r):
                idx = list(subset)
                best = max(best, abs(Pn[i, idx].sum() - pi[idx].sum()))
    return best


@pytest.mark.parametrize("states", [2, 3, 5, 10])
def test_phi_matches_subset_brute_force(states):
    rng = np.random.default_rng(states)
    P = rng.dirichlet(np.ones(states), size=states)
    P = P / P.sum(axis=1, keepdims=True)
    chain = MarkovChainSpec(states=tuple(float(s) for s in range(states)), transition=tuple(map(tuple, P)))
    for n in (0, 1, 2, 5):
        assert dependence_service.phi_coefficient(chain, n) == pytest.approx(
            _brute_phi(chain.matrix, chain.stationary, n), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.01, max_value=0.99), st.floats(min_value=0.01, max_value=0.99),
       st.integers(min_value=0, max_value=40))
def test_phi_is_nonincreasing_and_bounded(a, b, n):
    chain = MarkovChainSpec.two_state(a, b)
    now = dependence_service.phi_coefficient(chain, n)
    later = dependence_service.phi_coefficient(chain, n + 1)
    assert 0.0 <= later <= now + 1e-12 <= 1.0 + 1e-12


def test_phi_series_converges_by_six_doublings():
    report = dependence_service.phi_series_check(MarkovChainSpec.two_state(0.3, 0.2), 12)
    assert report.verdict == "pass"
    assert report.partial_sums[6] == report.partial_sum
    assert report.converged_at == 7


def test_phi_series_slow_chain_is_inconclusive():
    report = dependence_service.phi_series_check(MarkovChainSpec.two_state(1e-6, 1e-6), 20)
    assert report.verdict == "inconclusive"


def test_phi_needs_stationary_start_and_enough_terms():
    chain = MarkovChainSpec(states=(0.0, 1.0), transition=((0.7, 0.3), (0.2, 0.8)), initial=(1.0, 0.0))
    with pytest.raises(UnsupportedError):
        dependence_service.phi_coefficient(chain, 1)
    with pytest.raises(PreconditionError):
        dependence_service.phi_series_check(MarkovChainSpec.two_state(0.3, 0.2), 5)
    assert phi_from_matrix(chain.matrix, chain.stationary, 0) == pytest.approx(0.6)


# -- variance domination ----------------------------------------------------------------

def test_declared_constants():
    assert dependence_service.declared_C(parse_model("iid-normal")) == 1.0
    assert dependence_service.declared_C(parse_model("mpnd:m=2,lags=0.4,-0.05")) == pytest.approx(1.8)
    phimix = dependence_service.declared_C(parse_model("phimix:a=0.3,b=0.2,emit=identity"))
    expected = 1.0 + 4.0 * math.sqrt(0.6) * (math.sqrt(0.5) / (1.0 - math.sqrt(0.5)))
    assert phimix == pytest.approx(expected, rel=1e-12)


def test_iid_identity_cell_equals_one_within_ci():
    report = dependence_service.variance_domination_ratio(
        parse_model("iid-normal"), ["identity"], [0], [1, 16], reps=4000, seed=3)
    assert report.ratio_estimates[0] == pytest.approx(1.0, rel=1e-12)
    assert abs(report.ratio_estimates[1] - 1.0) <= report.ci_halfwidths[1]
    assert report.pass_


@pytest.mark.parametrize("preset", SHIPPED_PRESETS)
def test_presets_satisfy_variance_domination(preset):
    model = parse_model(preset)
    report = dependence_service.variance_domination_ratio(
        model, ["identity", "truncate:1.0", "clamp:0.5"], [0, 7], [1, 16], reps=2000, seed=17, workers=2)
    assert len(report.cells) == 12
    assert report.pass_, f"C_hat {report.C_hat} vs declared {report.declared_C}"


def test_variance_domination_preconditions():
    with pytest.raises(PreconditionError):
        dependence_service.variance_domination_ratio(parse_model("iid-normal"), ["identity"], [0], [4], 999, 1)
    with pytest.raises(DegenerateInputError):
        dependence_service.variance_domination_ratio(parse_model("const:c=0"), ["identity"], [0], [4], 1000, 1)
    with pytest.raises(ConfigError):
        dependence_service.variance_domination_ratio(parse_model("iid-normal"), ["square"], [0], [4], 1000, 1)


def test_decreasing_transform_is_rejected():
    with pytest.raises(PreconditionError):
        check_nondecreasing(lambda x: -x, -3.0, 3.0, "negate")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
