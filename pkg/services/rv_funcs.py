"""Calculus of slowly varying functions: evaluation, Galambos ratio, de Bruijn
conjugates and the normalizing sequence b(n)."""
import logging
from typing import Optional, Sequence

import numpy as np

from models.errors import PreconditionError, RangeError, UnsupportedError
from models.slowly_varying import (
    ConjugatePair,
    ConjugateReport,
    GalambosReport,
    Normalizer,
    SlowlyVaryingSpec,
    safe_log,
)

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 8
OVERFLOW_BOUND = 1e308
RATIO_NOISE = 1e-8


def geometric_grid(lo: float, hi: float, count: int) -> np.ndarray:
    if lo <= 0 or hi <= lo or count < 2:
        raise PreconditionError(f"invalid geometric grid {lo}:{hi}:{count}")
    return np.geomspace(lo, hi, count)


def eventually_nonincreasing(values: np.ndarray, rtol: float = 1e-9, atol: float = 1e-12) -> bool:
    """True when the last half of `values` never rises beyond float noise."""
    tail = np.asarray(values, dtype=float)[len(values) // 2:]
    rises = np.diff(tail) - (rtol * np.abs(tail[:-1]) + atol)
    return bool(np.all(rises <= 0))


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    x = np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size < MIN_GRID_POINTS:
        raise PreconditionError(f"grid needs at least {MIN_GRID_POINTS} points, got {x.size}")
    if np.any(np.diff(x) <= 0):
        raise PreconditionError("grid must be strictly increasing")
    return x


class RVFuncsService:
    def safe_log(self, x):
        return safe_log(x)

    def eval_L(self, spec: SlowlyVaryingSpec, x):
        return spec.value(x)

    def eval_dL(self, spec: SlowlyVaryingSpec, x):
        return spec.derivative(x)

    def check_galambos(self, spec: SlowlyVaryingSpec, grid: Sequence[float], tol: float = 0.05) -> GalambosReport:
        """r(x) = x L'(x) / L(x) must shrink towards 0 along the grid."""
        if spec.kind == "tabulated":
            raise UnsupportedError("Galambos check needs an analytic derivative")
        x = _check_grid(grid)
        if x[0] < spec.domain_floor:
            raise PreconditionError(f"grid starts at {x[0]} below A = {spec.domain_floor}")
        r = x * spec.derivative(x) / spec.value(x)
        passed = bool(eventually_nonincreasing(np.abs(r)) and abs(r[-1]) <= tol)
        if not passed:
            logger.warning(f"Galambos check failed for {spec}: |r(x_max)| = {abs(r[-1]):.3g}")
        return GalambosReport(spec=str(spec), x=x.tolist(), values=r.tolist(), pass_=passed)

    def de_bruijn_conjugate(self, spec: SlowlyVaryingSpec, method: str = "auto") -> ConjugatePair:
        if method not in ("auto", "closed", "numeric"):
            raise PreconditionError(f"unknown conjugate method '{method}'")
        if method != "numeric" and spec.is_closed_form:
            return ConjugatePair(L=spec, Lt=spec.reciprocal(), provenance="closed_form")
        if method == "closed":
            raise UnsupportedError(f"no closed-form conjugate for {spec}")
        Lt = SlowlyVaryingSpec(kind="numeric_conjugate", base=spec)
        logger.info(f"Using fixed-point inversion for the conjugate of {spec}")
        return ConjugatePair(L=spec, Lt=Lt, provenance="numeric_inversion")

    def verify_conjugate_pair(self, pair: ConjugatePair, grid: Sequence[float],
                              tol: float = 0.2) -> ConjugateReport:
        x = _check_grid(grid)
        Lx = pair.L.value(x)
        Ltx = pair.Lt.value(x)
        if x[-1] * max(Lx[-1], Ltx[-1], 1.0) > OVERFLOW_BOUND:
            raise RangeError(f"grid top {x[-1]:.3g} overflows x L(x); lower the grid")
        ratios = Lx * pair.Lt.value(x * Lx)
        inverse = Ltx * pair.L.value(x * Ltx)
        passed = True
        for series in (ratios, inverse):
            dev = np.abs(series - 1.0)
            # below the fixed-point tolerance the deviation is solver noise
            dev[dev < RATIO_NOISE] = 0.0
            passed = bool(passed and eventually_nonincreasing(dev) and dev[-1] <= tol)
        if not passed:
            logger.warning(f"Conjugate pair ({pair.L}, {pair.Lt}) failed the trend check at tol {tol}")
        return ConjugateReport(
            L=str(pair.L), Lt=str(pair.Lt), provenance=pair.provenance,
            x=x.tolist(), ratios=ratios.tolist(), inverse_ratios=inverse.tolist(),
            tol=tol, pass_=passed,
        )

    def normalizer_b(self, norm: Normalizer, n):
        return norm.b(n)

    def make_normalizer(self, p: float, alpha: Optional[float] = None,
                        Lt: Optional[SlowlyVaryingSpec] = None, A: Optional[float] = None) -> Normalizer:
        Lt = Lt or SlowlyVaryingSpec.one()
        return Normalizer(
            alpha=1.0 / p if alpha is None else alpha,
            p=p,
            Lt=Lt,
            A=Lt.domain_floor if A is None else A,
        )


rv_service = RVFuncsService()
