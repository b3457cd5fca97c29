"""Monte Carlo Baum-Katz series, SLLN trajectories and the per-path truncation
machinery behind the dyadic decomposition inequality."""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from models.convergence import (
    DecompositionReport,
    DyadicDecomposition,
    ExceedanceEstimate,
    SeriesEstimate,
    Trajectory,
    TruncatedPath,
)
from models.dependence import DependenceModel
from models.errors import PreconditionError
from models.slowly_varying import Normalizer, SlowlyVaryingSpec
from models.tails import TailFunction
from services.dependence_gen import sample
from services.random_streams import run_chunks, stream
from services.rv_funcs import rv_service

logger = logging.getLogger(__name__)

STABILIZING_REL = 1e-3
SLACK_REL = 1e-12
SLACK_ABS = 1e-12
CI_LEVEL = 0.95


def wilson_interval(count: int, reps: int, level: float = CI_LEVEL) -> Tuple[float, float]:
    ci = stats.binomtest(int(count), int(reps)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def trend_verdict(partial_sums: Sequence[float]) -> str:
    """Classify dyadic partial sums G_0..G_K by their last increments."""
    g = np.asarray(partial_sums, dtype=float)
    if g[-1] == 0.0:
        return "stabilizing"
    inc = np.diff(g)
    if inc.size >= 3 and np.all(inc[-3:] < STABILIZING_REL * g[-1]):
        return "stabilizing"
    if inc.size >= 4 and np.all(np.diff(inc[-4:]) >= 0):
        return "growing"
    return "inconclusive"


def lil_envelope(n: int, sigma: float = 1.0) -> float:
    """sigma sqrt(2 n lnln n) / n, the LIL scale of S_n / n."""
    return sigma * math.sqrt(2.0 * n * math.log(math.log(n))) / n


def _centers(model: DependenceModel, n: int) -> np.ndarray:
    index = np.arange(1, n + 1)
    mu = np.broadcast_to(np.asarray(model.marginal.mean(index), dtype=float), (n,))
    if not np.all(np.isfinite(mu)):
        raise PreconditionError(f"model {model} has no finite mean; centering is undefined")
    return mu


class ConvergenceLabService:
    # -- per-path machinery ---------------------------------------------------

    def max_abs_partial_sums(self, values, centers=0.0) -> np.ndarray:
        """M_j = max_{i <= j} |S_i| along the last axis."""
        x = np.asarray(values, dtype=float)
        c = np.asarray(centers, dtype=float)
        if c.ndim > 0 and c.shape[-1] != x.shape[-1]:
            raise PreconditionError(f"centers have length {c.shape[-1]}, path has length {x.shape[-1]}")
        return np.maximum.accumulate(np.abs(np.cumsum(x - c, axis=-1)), axis=-1)

    def truncate_path(self, values, b: float) -> TruncatedPath:
        x = np.asarray(values, dtype=float)
        if b <= 0:
            raise PreconditionError(f"truncation level must be > 0, got {b}")
        if np.any(x < 0):
            raise PreconditionError("truncation expects a nonnegative path; split it with split_parts first")
        return TruncatedPath(original=x, level=b, values=np.minimum(x, b))

    def split_parts(self, values) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(values, dtype=float)
        return np.maximum(x, 0.0), np.maximum(-x, 0.0)

    def plugin_means(self, tail: TailFunction, levels: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """E min(X, b) and E X 1(X > b) for each level b."""
        clamped = np.array([tail.clamped_mean(b) for b in levels])
        excess = np.array([tail.excess_mean(b) for b in levels])
        return clamped, excess

    def dyadic_decomposition(self, values, norm: Normalizer, n: int, tail: TailFunction) -> DyadicDecomposition:
        x = np.asarray(values, dtype=float)
        if n < 1:
            raise PreconditionError(f"dyadic exponent must be >= 1, got {n}")
        if x.size < 2 ** n - 1:
            raise PreconditionError(f"path length {x.size} is below 2^n - 1 = {2 ** n - 1}")
        if np.any(x < 0):
            raise PreconditionError("dyadic decomposition expects a nonnegative path")
        x = x[: 2 ** n]
        levels = np.asarray(norm.b(2.0 ** np.arange(n + 1)), dtype=float)
        clamped = np.minimum(x[None, :], levels[:, None])
        means, excess = self.plugin_means(tail, levels)
        # E(X_{2^m} - X_{2^(m-1)}) directly, not as a difference of means
        inc_mean = np.array([tail.integral(levels[m - 1], levels[m]) for m in range(1, n + 1)])
        blocks = np.diff(clamped, axis=0) - inc_mean[:, None]
        return DyadicDecomposition(n=n, levels=levels, clamped=clamped, means=means,
                                   increments_mean=inc_mean, excess_means=excess, blocks=blocks)

    def dyadic_decomposition_check(self, values, norm: Normalizer, n: int, tail: TailFunction,
                                   part: str = "positive") -> DecompositionReport:
        d = self.dyadic_decomposition(values, norm, n, tail)
        length = d.clamped.shape[1]
        top = min(2 ** n - 1, length)
        lhs = float(np.max(np.abs(d.partial_sums(n)[1:top + 1]), initial=0.0))

        first, second, third = [], [], []
        for m in range(1, n + 1):
            size = 2 ** m
            starts = np.arange(0, 2 ** (n - m)) * size
            prev = d.partial_sums(m - 1)
            half_hi = np.minimum(starts + size // 2, length)
            lo = np.minimum(starts, length)
            first.append(float(np.max(np.abs(prev[half_hi] - prev[lo]))))
            ycum = np.concatenate([[0.0], np.cumsum(d.blocks[m - 1])])
            full_hi = np.minimum(starts + size, length)
            second.append(float(np.max(np.abs(ycum[full_hi] - ycum[lo]))))
            third.append(float(2 ** (m + 1) * d.excess_means[m - 1]))
        rhs = math.fsum(first) + math.fsum(second) + math.fsum(third)
        holds = bool(lhs <= rhs * (1.0 + SLACK_REL) + SLACK_ABS)
        if not holds:
            logger.error(f"Decomposition inequality violated on the {part} part: {lhs!r} > {rhs!r}")
        return DecompositionReport(part=part, n=n, lhs=lhs, first_terms=first, second_terms=second,
                                   third_terms=third, rhs=rhs, holds=holds)

    def decomposition_check_model(self, model: DependenceModel, norm: Normalizer, n: int,
                                  seeds: Sequence[int]) -> List[DecompositionReport]:
        """Run the check on both parts of one path per seed."""
        pos_tail = model.marginal.positive_tail()
        neg_tail = model.marginal.negative_tail()
        reports = []
        for seed in seeds:
            path = sample(model, 2 ** n - 1, [stream(seed)])[0]
            pos, neg = self.split_parts(path)
            reports.append(self.dyadic_decomposition_check(pos, norm, n, pos_tail, "positive"))
            reports.append(self.dyadic_decomposition_check(neg, norm, n, neg_tail, "negative"))
        failed = sum(not r.holds for r in reports)
        logger.info(f"Decomposition check on {model}: {len(reports) - failed}/{len(reports)} hold")
        return reports

    # -- Monte Carlo ----------------------------------------------------------

    def exceedance_prob_mc(self, model: DependenceModel, n: int, eps: float, norm: Normalizer,
                           reps: int, seed: int, workers: int = 1) -> ExceedanceEstimate:
        if reps < 100:
            raise PreconditionError(f"exceedance estimates need reps >= 100, got {reps}")
        if eps <= 0:
            raise PreconditionError(f"eps must be > 0, got {eps}")
        centers = _centers(model, n)
        threshold = eps * norm.b(n)

        def chunk(rows):
            paths = sample(model, n, [stream(seed, r) for r in rows])
            M = self.max_abs_partial_sums(paths, centers)[:, -1]
            return np.array([[np.count_nonzero(M > threshold)]])

        count = int(run_chunks(chunk, reps, workers).sum())
        lo, hi = wilson_interval(count, reps)
        return ExceedanceEstimate(n=n, eps=eps, count=count, reps=reps, p_hat=count / reps, ci_lo=lo, ci_hi=hi)

    def baum_katz_series(self, model: DependenceModel, p: float, alpha: Optional[float],
                         L: SlowlyVaryingSpec, eps: Sequence[float], K: int, reps: int, seed: int,
                         workers: int = 1) -> List[SeriesEstimate]:
        """One path of length 2^K per replicate serves every n and every eps."""
        if K < 1:
            raise PreconditionError(f"K must be >= 1, got {K}")
        if any(e <= 0 for e in eps):
            raise PreconditionError("eps values must be > 0")
        if p == 1.0:
            x = np.geomspace(1.0, 1e300, 200)
            Lx = L.value(x)
            if np.any(Lx < 1.0) or np.any(np.diff(Lx) < 0):
                raise PreconditionError(f"p = 1 needs L >= 1 and nondecreasing; {L} is not")
        Lt = rv_service.de_bruijn_conjugate(L).Lt
        norm = rv_service.make_normalizer(p, alpha, Lt)
        N = 2 ** K
        ns = np.arange(1, N + 1, dtype=float)
        b = norm.b(ns)
        b_dyadic = norm.b(2.0 ** np.arange(1, K + 1))
        dyadic_idx = 2 ** np.arange(1, K + 1) - 2
        eps_arr = np.asarray(eps, dtype=float)
        centers = _centers(model, N)
        logger.info(f"Baum-Katz run on {model}: 2^{K} steps, {reps} replicates, eps = {list(eps)}")

        def chunk(rows):
            paths = sample(model, N, [stream(seed, r) for r in rows])
            M = self.max_abs_partial_sums(paths, centers)
            counts = np.stack([(M > e * b).sum(axis=0) for e in eps_arr])
            dyadic = np.stack([(M[:, dyadic_idx] > e * b_dyadic).sum(axis=0) for e in eps_arr])
            return np.concatenate([counts, dyadic], axis=1)[None]

        totals = run_chunks(chunk, reps, workers).sum(axis=0)
        weights = ns ** (norm.alpha * p - 2.0)
        grid = 2 ** np.arange(0, K + 1)
        results = []
        for i, e in enumerate(eps_arr):
            p_hat = totals[i, :N] / reps
            partial = np.cumsum(weights * p_hat)
            g = partial[grid - 1]
            dy_terms = 2.0 ** (np.arange(1, K + 1) * (norm.alpha * p - 1.0)) * totals[i, N:] / reps
            dy_partial = np.cumsum(dy_terms)
            verdict = trend_verdict(g)
            dyadic_verdict = trend_verdict(np.concatenate([[0.0], dy_partial]))
            if verdict != "stabilizing":
                logger.warning(f"Baum-Katz series at eps = {e} is {verdict} over 2^{K} steps")
            cis = [wilson_interval(int(totals[i, n - 1]), reps) for n in grid[1:]]
            increments = np.diff(g)
            results.append(SeriesEstimate(
                eps=float(e),
                n=grid[1:].tolist(),
                p_hat=p_hat[grid[1:] - 1].tolist(),
                ci_lo=[c[0] for c in cis],
                ci_hi=[c[1] for c in cis],
                weights=weights[grid[1:] - 1].tolist(),
                partial_sums=g[1:].tolist(),
                increments=increments.tolist(),
                last_increment_ratio=float(increments[-1] / g[-1]) if g[-1] > 0 else 0.0,
                verdict=verdict,
                dyadic_terms=dy_terms.tolist(),
                dyadic_partial_sums=dy_partial.tolist(),
                dyadic_verdict=dyadic_verdict,
                forms_agree=verdict == dyadic_verdict,
            ))
        return results

    def slln_trajectory(self, model: DependenceModel, p: float, Lt: SlowlyVaryingSpec,
                        checkpoints: Sequence[int], seeds: Sequence[int], centers=None,
                        workers: int = 1, sigma: Optional[float] = None) -> Trajectory:
        """S_n / b_n at each checkpoint, one path per seed.

        With p = 1 and a known marginal standard deviation the LIL envelope at
        the last checkpoint is attached.
        """
        checkpoints = sorted(int(c) for c in checkpoints)
        if not checkpoints or checkpoints[0] < 1:
            raise PreconditionError("checkpoints must be >= 1")
        if not seeds:
            raise PreconditionError("slln trajectory needs at least one seed")
        N = checkpoints[-1]
        norm = rv_service.make_normalizer(p, 1.0 / p, Lt)
        mu = _centers(model, N) if centers is None else np.broadcast_to(np.asarray(centers, dtype=float), (N,))
        idx = np.asarray(checkpoints) - 1
        scale = norm.b(np.asarray(checkpoints, dtype=float))

        def chunk(rows):
            paths = np.concatenate([sample(model, N, [stream(seeds[r])]) for r in rows])
            return np.cumsum(paths - mu, axis=1)[:, idx] / scale

        values = run_chunks(chunk, len(seeds), workers)
        envelope = lil_envelope(N, sigma) if p == 1.0 and sigma is not None and N >= 3 else None
        return Trajectory(checkpoints=checkpoints, seeds=list(seeds), values=values.tolist(),
                          final_max_abs=float(np.max(np.abs(values[:, -1]))), envelope=envelope)


convergence_service = ConvergenceLabService()
