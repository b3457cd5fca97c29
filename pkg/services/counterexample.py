"""Exact computations on the three-point counterexample family."""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from models.counterexample import CounterexampleFamily
from models.errors import PreconditionError
from models.slowly_varying import SlowlyVaryingSpec, safe_log, safe_loglog
from services.random_streams import run_chunks, stream

logger = logging.getLogger(__name__)

INTEGRAL_TEST_FROM = 16
COUNT_BLOCK = 1 << 20


class BCSeries(BaseModel):
    N: int
    B: int
    partial_sum: float
    integral_bound: float
    diverges: bool  # analytic: the integral-test tail is infinite


class ExceedanceCounts(BaseModel):
    N: int
    seeds: List[int]
    counts: List[int]
    mean_count: float
    expected: float
    tolerance: float
    consistent: bool


def lnlnln(x: float) -> float:
    return math.log(math.log(math.log(x)))


def integral_test_tail(n0: float) -> float:
    """int_{n0}^inf dx / (x ln x lnln x), in closed form.

    q_n decreases on [n0, inf), so the series diverges exactly when this is infinite.
    """
    return lnlnln(math.inf) - lnlnln(n0)


class CounterexampleService:
    def build_counterexample(self, p: float, L: Optional[SlowlyVaryingSpec] = None, A: Optional[float] = None,
                             B: Optional[int] = None) -> CounterexampleFamily:
        fam = CounterexampleFamily(p=p, L=L or SlowlyVaryingSpec.one(), A=A, B_override=B)
        B_value = fam.B
        q = fam.q(float(B_value))
        if not 0.0 < q < 1.0:
            raise PreconditionError(f"q_B = {q} is not a probability")
        logger.info(f"Built counterexample family p = {p}, L = {fam.L}, A = {fam.floor:.6g}, B = {B_value}")
        return fam

    def ce_moment_dichotomy(self, fam: CounterexampleFamily, n: float) -> Tuple[float, float]:
        """(E g log loglog^2, E g log loglog) of |X_n|, both exact."""
        if n < fam.B:
            raise PreconditionError(f"n must be >= B = {fam.B}, got {n}")
        h = fam.h(float(n))
        q = fam.q(float(n))
        g = float(n)  # g(h(n)) = n
        lh, llh = safe_log(h), safe_loglog(h)
        return g * lh * llh ** 2 * q, g * lh * llh * q

    def ce_bc_series(self, fam: CounterexampleFamily, N: int) -> BCSeries:
        """sum_{n=B}^N q_n, which equals sum P(|X_n| > h(n)/2)."""
        B = fam.B
        if N < B:
            raise PreconditionError(f"N must be >= B = {B}, got {N}")
        total = self._q_sum(fam, B, N)
        n0 = max(B, INTEGRAL_TEST_FROM)
        bound = lnlnln(N) - lnlnln(n0) if N > n0 else 0.0
        return BCSeries(N=N, B=B, partial_sum=total, integral_bound=bound,
                        diverges=math.isinf(integral_test_tail(n0)))

    def ce_exceedance_counts(self, fam: CounterexampleFamily, N: int, seeds: Sequence[int],
                             workers: int = 1) -> ExceedanceCounts:
        """Per seed, the number of n <= N with X_n != 0, i.e. |X_n| > b_n / 2."""
        B = fam.B
        n = np.arange(B, N + 1, dtype=float)
        q = fam.q(n) if n.size else n

        def chunk(rows):
            out = []
            for r in rows:
                rng = stream(seeds[r])
                count = 0
                for lo in range(0, q.size, COUNT_BLOCK):
                    block = q[lo:lo + COUNT_BLOCK]
                    count += int(np.count_nonzero(rng.random(block.size) < block))
                out.append(count)
            return np.array(out)

        counts = run_chunks(chunk, len(seeds), workers) if seeds else np.array([], dtype=int)
        expected = math.fsum(q) if q.size else 0.0
        mean = float(np.mean(counts)) if counts.size else 0.0
        tol = 3.0 * math.sqrt(expected)
        return ExceedanceCounts(N=N, seeds=list(seeds), counts=counts.tolist(), mean_count=mean,
                                expected=expected, tolerance=tol, consistent=abs(mean - expected) <= tol)

    def _q_sum(self, fam: CounterexampleFamily, lo: int, hi: int) -> float:
        """fsum of q_n over lo <= n <= hi, blockwise."""
        parts = []
        for start in range(lo, hi + 1, COUNT_BLOCK):
            n = np.arange(start, min(start + COUNT_BLOCK, hi + 1), dtype=float)
            parts.append(math.fsum(fam.q(n)))
        return math.fsum(parts)

    def dichotomy_table(self, fam: CounterexampleFamily, ns: Sequence[float],
                        bc_limit: int = 10 ** 6) -> List[Dict[str, float]]:
        """One row per n; the series column is NaN beyond bc_limit."""
        rows = []
        running, reached = 0.0, fam.B - 1
        for n in sorted(ns):
            double, single = self.ce_moment_dichotomy(fam, n)
            bc = math.nan
            if n <= bc_limit:
                running += self._q_sum(fam, reached + 1, int(n))
                reached = int(n)
                bc = running
            rows.append({
                "n": float(n),
                "q_n": fam.q(float(n)),
                "double_weight": double,
                "single_weight": single,
                "bc_partial_sum": bc,
            })
        return rows


counterexample_service = CounterexampleService()
