"""Dominating tails, tail-integral moments and uniform moment conditions."""
import logging
import math
import warnings
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from models.dependence import DependenceModel, ThreePoint
from models.errors import PreconditionError, QuadratureError
from models.slowly_varying import SlowlyVaryingSpec, safe_loglog
from models.tails import MomentFunctional, MomentResult, TailFunction, UniformMomentReport

logger = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e12
DEFAULT_CEILING = 1e300
LOG_SCALE_FROM = 1e15
NEGLIGIBLE = 1e-17
SLOPE_MARGIN = 0.01
TAIL_FLOOR = 1e-290
QUAD_LIMITS = (50, 200, 1000)
GROWTH_TOL = 0.05


def _quad_panel(f, a: float, b: float) -> float:
    """Integrate one panel, raising the subdivision limit on IntegrationWarning."""
    for attempt in Retrying(
        stop=stop_after_attempt(len(QUAD_LIMITS)),
        retry=retry_if_exception_type(integrate.IntegrationWarning),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    ):
        with attempt:
            limit = QUAD_LIMITS[attempt.retry_state.attempt_number - 1]
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                value, _ = integrate.quad(f, a, b, limit=limit, epsabs=1e-15, epsrel=1e-11)
    return value


def _decade_edges(lo: float, hi: float) -> List[float]:
    edges = [lo]
    if lo < 1.0 < hi:
        edges.append(1.0)
    x = max(edges[-1], 1.0)
    while x * 10.0 < hi:
        x *= 10.0
        if x > edges[-1]:
            edges.append(x)
    edges.append(hi)
    return edges


class DominationService:
    def dominating_tail(self, family: Sequence[TailFunction]) -> TailFunction:
        return TailFunction.supremum(list(family))

    def moment_via_tail(self, g: MomentFunctional, tail: TailFunction, A: Optional[float] = None,
                        upper: float = DEFAULT_CEILING) -> MomentResult:
        """E g(xi) = E[g(xi) 1(xi <= A)] + g(A) P(xi > A) + int_A^upper g'(x) P(xi > x) dx."""
        A = g.A if A is None else A
        if A < 0:
            raise PreconditionError(f"integration cutoff must be >= 0, got {A}")
        panels: List[Dict[str, float]] = []
        try:
            head = 0.0
            S_A = tail(A)
            if A > 0:
                head = _quad_panel(lambda x: g.dg(x) * (tail(x) - S_A), 0.0, A)
            body = g.g(A) * S_A if A > 0 else 0.0
            top = min(upper, tail.support_top)
            total, diverged = 0.0, False
            last_decade = None
            edges = _decade_edges(A, top)
            for a, b in zip(edges[:-1], edges[1:]):
                if a >= LOG_SCALE_FROM:
                    piece = _quad_panel(lambda u: g.dg(math.exp(u)) * tail(math.exp(u)) * math.exp(u),
                                        math.log(a), math.log(b))
                else:
                    piece = _quad_panel(lambda x: g.dg(x) * tail(x), a, b)
                total += piece
                panels.append({"lo": a, "hi": b, "value": piece})
                if total > DIVERGENCE_CAP:
                    diverged = True
                    break
                if b >= tail.support_top or abs(piece) <= NEGLIGIBLE * abs(total):
                    break
                if tail(b) < TAIL_FLOOR:
                    # tail below the normal range on an unbounded support
                    diverged = self._slow_decay(g, tail, last_decade)
                    break
                if a >= 1.0:
                    last_decade = (a, b)
            else:
                diverged = self._slow_decay(g, tail, last_decade)
        except integrate.IntegrationWarning as e:
            raise QuadratureError(f"quadrature did not converge: {e}", panels=panels)
        if diverged:
            logger.info(f"Moment integral diverges (panels: {len(panels)})")
            return MomentResult(value=math.inf, diverged=True, head=head, body=body, tail=math.inf, panels=panels)
        return MomentResult(value=head + body + total, diverged=False, head=head, body=body, tail=total, panels=panels)

    @staticmethod
    def _slow_decay(g: MomentFunctional, tail: TailFunction, decade: Optional[Tuple[float, float]]) -> bool:
        """Integral comparison on the last decade reached: decay no faster than x^-(1 + SLOPE_MARGIN)."""
        if decade is None:
            return False
        a, b = decade
        fa = g.dg(a) * tail(a)
        fb = g.dg(b) * tail(b)
        if fb <= 0.0:
            return False
        if fa <= 0.0:
            return True
        slope = (math.log(fb) - math.log(fa)) / (math.log(b) - math.log(a))
        logger.debug(f"Integrand log-log slope {slope:.4g} on [{a:.3g}, {b:.3g}]")
        return slope >= -1.0 - SLOPE_MARGIN

    def check_uniform_moment(self, family: Union[DependenceModel, ThreePoint, TailFunction],
                             functional: MomentFunctional, grid: Optional[Sequence[float]] = None,
                             growth_tol: float = GROWTH_TOL) -> UniformMomentReport:
        """sup_n E g(|X_n|) over a geometric index grid up to 1e300."""
        marginal = family.marginal if isinstance(family, DependenceModel) else family
        if isinstance(marginal, ThreePoint):
            fam = marginal.family
            idx = np.asarray(grid if grid is not None else np.geomspace(max(fam.B, 16), 1e300, 61), dtype=float)
            values = np.array([fam.weighted_moment(n, functional.g) for n in idx])
        else:
            tail = marginal if isinstance(marginal, TailFunction) else marginal.abs_tail()
            result = self.moment_via_tail(functional, tail)
            idx = np.asarray(grid if grid is not None else [1.0, 1e300], dtype=float)
            values = np.full(idx.shape, result.value)
        if not np.all(np.isfinite(values)):
            return UniformMomentReport(indices=idx.tolist(), values=values.tolist(), finite=False,
                                       sup_value=math.inf, growth_rate=math.inf, witness="moment integral diverges")
        growth = float((values[-1] - values[-2]) / (safe_loglog(idx[-1]) - safe_loglog(idx[-2]))) if len(idx) > 1 else 0.0
        finite = growth <= growth_tol
        witness = (f"value grows like {growth:.4g} * loglog n at n = {idx[-1]:.3g}"
                   if not finite else f"growth rate {growth:.3g} in loglog n")
        return UniformMomentReport(
            indices=idx.tolist(), values=values.tolist(), finite=finite,
            sup_value=float(values.max()) if finite else math.inf, growth_rate=growth, witness=witness,
        )

    def galambos_threshold(self, L: SlowlyVaryingSpec, p: float, grid: Sequence[float]) -> float:
        """First grid point beyond which |x L'/L| <= p/2 and x^p L, x^p L log loglog^2 increase."""
        x = np.asarray(grid, dtype=float)
        x = x[x >= L.domain_floor]
        if x.size < 2:
            raise PreconditionError("grid has fewer than two points beyond A")
        r = np.abs(x * L.derivative(x) / L.value(x))
        ok = r <= p / 2.0
        g1 = p * np.log(x) + np.log(L.value(x))
        weighted = MomentFunctional(p=1.0, L=SlowlyVaryingSpec.one(), weight="log_loglog2")
        g2 = g1 + np.log(weighted.V.value(x))
        inc = np.ones_like(ok)
        inc[:-1] = (np.diff(g1) > 0) & (np.diff(g2) > 0)
        good = ok & inc
        bad = np.flatnonzero(~good)
        if bad.size == 0:
            return float(x[0])
        if bad[-1] == x.size - 1:
            raise PreconditionError(f"threshold conditions fail at the grid top for L = {L}, p = {p}")
        return float(x[bad[-1] + 1])

    def dominated_moment_bound(self, sup_moment: float, L: SlowlyVaryingSpec, p: float,
                               B: float, head: float = 0.0) -> float:
        """head + (3p/2) sup_i E g(|X_i|) / loglog(B)."""
        return head + 1.5 * p * sup_moment / safe_loglog(B)


domination_service = DominationService()
