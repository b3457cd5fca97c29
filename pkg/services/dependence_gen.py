"""Sample-path generation under the dependence structures, variance-domination
estimates and phi-mixing coefficients."""
import logging
import math
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from models.dependence import (
    DependenceModel,
    IIDStructure,
    MarkovChainSpec,
    MENDStructure,
    MPNDStructure,
    NAGaussStructure,
    PhiMixStructure,
    PhiSeriesReport,
    SamplePath,
    VarianceDominationReport,
    parse_model,
)
from models.errors import (
    ConfigError,
    DegenerateInputError,
    NumericError,
    PreconditionError,
    UnsupportedError,
)
from services.random_streams import run_chunks, stream

logger = logging.getLogger(__name__)

CHOLESKY_MAX_N = 2048
MONOTONE_GRID = 10_000
PHI_SUM_MAX_TERMS = 10_000
DEFAULT_CONFIDENCE = 0.99


# =============================================================================
# COVARIANCE FACTORS
# =============================================================================

def _lag_row(lags: Tuple[float, ...], n: int) -> np.ndarray:
    r = np.zeros(n)
    r[0] = 1.0
    k = min(len(lags), n - 1)
    r[1:k + 1] = lags[:k]
    return r


@lru_cache(maxsize=32)
def _toeplitz_cholesky(lags: Tuple[float, ...], n: int) -> np.ndarray:
    r = _lag_row(lags, n)
    try:
        return linalg.cholesky(linalg.toeplitz(r), lower=True)
    except linalg.LinAlgError as e:
        raise NumericError(f"covariance factorization failure for lags {lags} at n = {n}: {e}")


@lru_cache(maxsize=32)
def _circulant_eigenvalues(lags: Tuple[float, ...], n: int) -> np.ndarray:
    r = _lag_row(lags, n)
    row = np.concatenate([r, r[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise NumericError(f"covariance factorization failure: circulant embedding has eigenvalue {lam.min():.3g}")
    return np.maximum(lam, 0.0)


@lru_cache(maxsize=32)
def _psd_factor(block: Tuple[Tuple[float, ...], ...]) -> np.ndarray:
    w, v = linalg.eigh(np.array(block))
    if w.min() < -1e-10:
        raise NumericError(f"covariance factorization failure: block eigenvalue {w.min():.3g}")
    return v * np.sqrt(np.maximum(w, 0.0))


# =============================================================================
# GENERATION
# =============================================================================

def _normals(rngs: Sequence[np.random.Generator], shape) -> np.ndarray:
    return np.stack([rng.standard_normal(shape) for rng in rngs])


def _latent(model: DependenceModel, n: int, rngs: Sequence[np.random.Generator]) -> Optional[np.ndarray]:
    """Standard Gaussian field with the structure's correlation, or None for chains."""
    s = model.structure
    if isinstance(s, IIDStructure):
        return _normals(rngs, n)
    if isinstance(s, MPNDStructure):
        if n <= CHOLESKY_MAX_N:
            return _normals(rngs, n) @ _toeplitz_cholesky(s.lags, n).T
        lam = _circulant_eigenvalues(s.lags, n)
        size = lam.size
        w = np.sqrt(lam / size) * (_normals(rngs, size) + 1j * _normals(rngs, size))
        return np.fft.fft(w, axis=1).real[:, :n]
    if isinstance(s, NAGaussStructure):
        d = s.block_size
        blocks = -(-n // d)
        factor = _psd_factor(tuple(map(tuple, s.block_matrix())))
        z = _normals(rngs, (blocks, d)) @ factor.T
        return z.reshape(len(rngs), blocks * d)[:, :n]
    return None


def _simulate_chain(s: PhiMixStructure, n: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    chain = s.chain
    P = chain.matrix
    cum = np.cumsum(P, axis=1)
    init = np.asarray(chain.initial) if chain.initial is not None else chain.stationary
    u = np.stack([rng.random(n + 1) for rng in rngs])
    state = np.minimum(np.searchsorted(np.cumsum(init), u[:, 0], side="right"), P.shape[0] - 1)
    states = np.empty((len(rngs), n), dtype=np.int64)
    for t in range(n):
        states[:, t] = state
        state = np.minimum((cum[state] <= u[:, t + 1, None]).sum(axis=1), P.shape[0] - 1)
    return np.asarray(s.emit)[states]


def sample(model: DependenceModel, n: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """One row of length n per generator."""
    s = model.structure
    if isinstance(s, MENDStructure):
        out = np.empty((len(rngs), n))
        # index i (0-based) belongs to copy i mod m
        for c in range(min(s.m, n)):
            out[:, c::s.m] = sample(s.block, len(range(c, n, s.m)), rngs)
        return out
    if isinstance(s, PhiMixStructure):
        return _simulate_chain(s, n, rngs)
    z = _latent(model, n, rngs)
    return model.marginal.transform(z, np.arange(1, n + 1))


# =============================================================================
# TRANSFORMS
# =============================================================================

def parse_transform(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """identity | truncate:t (clip to [-t, t]) | clamp:b (min(x, b))."""
    name, _, arg = text.strip().partition(":")
    try:
        if name == "identity":
            return lambda x: x
        if name == "truncate":
            t = float(arg)
            return lambda x: np.clip(x, -t, t)
        if name == "clamp":
            b = float(arg)
            return lambda x: np.minimum(x, b)
    except ValueError:
        pass
    raise ConfigError(f"unknown transform '{text}' for key 'transforms'", key="transforms")


def check_nondecreasing(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, name: str = "transform") -> None:
    if not (np.isfinite(lo) and np.isfinite(hi)):
        lo, hi = -1.0, 1.0
    elif hi <= lo:
        lo, hi = lo - 1.0, lo + 1.0
    grid = np.linspace(lo, hi, MONOTONE_GRID)
    values = f(grid)
    drops = np.flatnonzero(np.diff(values) < 0)
    if drops.size:
        x = grid[drops[0]]
        raise PreconditionError(f"{name} decreases near x = {x:.6g}")


# =============================================================================
# SERVICE
# =============================================================================

class DependenceService:
    def build_model(self, config) -> DependenceModel:
        if isinstance(config, DependenceModel):
            return config
        if isinstance(config, str):
            model = parse_model(config)
        else:
            model = DependenceModel.model_validate(config)
        logger.info(f"Built dependence model {model} ({model.fingerprint[:12]})")
        return model

    def generate_path(self, model: DependenceModel, n: int, seed: int) -> SamplePath:
        if n < 1:
            raise PreconditionError(f"path length must be >= 1, got {n}")
        values = sample(model, n, [stream(seed)])[0]
        return SamplePath(values=values, seed=seed, fingerprint=model.fingerprint)

    def generate_batch(self, model: DependenceModel, n: int, seed: int, reps: int,
                       workers: int = 1) -> np.ndarray:
        """Replicate r is drawn from stream (seed, r); rows come back in replicate order."""
        return run_chunks(lambda chunk: sample(model, n, [stream(seed, r) for r in chunk]), reps, workers)

    def declared_C(self, model: DependenceModel) -> float:
        s = model.structure
        if isinstance(s, MPNDStructure):
            return 1.0 + 2.0 * sum(abs(r) for r in s.lags[: s.m - 1])
        if isinstance(s, PhiMixStructure):
            chain = s.chain
            if not chain.is_stationary_start:
                raise UnsupportedError("phi coefficients are computed for stationary starts only")
            D = _deviation(chain.matrix, chain.stationary)
            Dk = D
            total = 0.0
            for _ in range(PHI_SUM_MAX_TERMS):
                term = math.sqrt(_half_row_norm(Dk))
                total += term
                if term < 1e-17 * max(total, 1.0):
                    break
                Dk = Dk @ D
            else:
                return math.inf
            return 1.0 + 4.0 * total
        return 1.0

    def variance_domination_ratio(self, model: DependenceModel, transforms: Sequence[str],
                                  ks: Sequence[int], ells: Sequence[int], reps: int, seed: int,
                                  confidence: float = DEFAULT_CONFIDENCE,
                                  workers: int = 1) -> VarianceDominationReport:
        if reps < 1000:
            raise PreconditionError(f"variance-domination estimates need reps >= 1000, got {reps}")
        if min(ells) < 1 or min(ks) < 0:
            raise PreconditionError("block lengths must be >= 1 and offsets >= 0")
        n = max(ks) + max(ells)
        paths = self.generate_batch(model, n, seed, reps, workers)
        lo, hi = float(paths.min()), float(paths.max())
        maps = []
        for name in transforms:
            f = parse_transform(name)
            check_nondecreasing(f, lo, hi, name)
            maps.append((name, f))

        cells, ratios, ses = [], [], []
        for name, f in maps:
            fx = f(paths)
            for k in ks:
                for ell in ells:
                    block = fx[:, k:k + ell]
                    centered = block - block.mean(axis=0)
                    u = centered.sum(axis=1) ** 2
                    v = (centered ** 2).sum(axis=1)
                    denom = v.mean()
                    if denom <= 0:
                        raise DegenerateInputError(f"zero variance in cell k={k}, l={ell}, transform {name}")
                    ratio = u.mean() / denom
                    se = float(np.std(u - ratio * v) / (denom * math.sqrt(reps)))
                    cells.append({"k": k, "l": ell, "transform": name})
                    ratios.append(float(ratio))
                    ses.append(se)

        z = float(special.ndtri(1.0 - (1.0 - confidence) / (2.0 * len(cells))))
        halfwidths = [z * se for se in ses]
        declared = self.declared_C(model)
        passed = all(r - h <= declared for r, h in zip(ratios, halfwidths))
        if not passed:
            logger.warning(f"Variance-domination ratio of {model} exceeds declared C = {declared:.4g}")
        return VarianceDominationReport(
            cells=cells, ratio_estimates=ratios, ci_halfwidths=halfwidths,
            C_hat=max(ratios), declared_C=declared, confidence=confidence, pass_=passed,
        )

    def negative_quadrant_check(self, paths: np.ndarray, j: int, k: int, s: float, t: float,
                                z: float = 3.0) -> Dict[str, float]:
        """P(X_j <= s, X_k <= t) - P(X_j <= s) P(X_k <= t) against a z-sigma band."""
        a = (paths[:, j] <= s).astype(float)
        b = (paths[:, k] <= t).astype(float)
        pa, pb = a.mean(), b.mean()
        diff = float((a * b).mean() - pa * pb)
        influence = (a - pa) * (b - pb) - diff
        halfwidth = float(z * influence.std() / math.sqrt(len(a)))
        return {"joint": float((a * b).mean()), "product": float(pa * pb), "diff": diff,
                "halfwidth": halfwidth, "holds": diff <= halfwidth}

    def phi_coefficient(self, chain: MarkovChainSpec, n: int) -> float:
        if not chain.is_stationary_start:
            raise UnsupportedError("phi coefficients are computed for stationary starts only")
        if n < 0:
            raise PreconditionError(f"phi(n) needs n >= 0, got {n}")
        return phi_from_matrix(chain.matrix, chain.stationary, n)

    def phi_dyadic(self, chain: MarkovChainSpec, k_max: int) -> np.ndarray:
        """phi(2^k) for k = 0..k_max by repeated squaring of P - Pi."""
        if not chain.is_stationary_start:
            raise UnsupportedError("phi coefficients are computed for stationary starts only")
        D = _deviation(chain.matrix, chain.stationary)
        out = []
        for _ in range(k_max + 1):
            out.append(_half_row_norm(D))
            D = D @ D
        return np.array(out)

    def phi_series_check(self, chain: MarkovChainSpec, n_max: int, ratio_bound: float = 0.9) -> PhiSeriesReport:
        if n_max < 10:
            raise PreconditionError(f"phi series check needs n_max >= 10, got {n_max}")
        phi = self.phi_dyadic(chain, n_max)
        terms = np.sqrt(phi)
        partial = np.cumsum(terms)
        converged_at = None
        for k in range(1, len(terms)):
            if terms[k] <= np.finfo(float).eps * partial[k]:
                converged_at = k
                break
        positive = phi[phi > 0]
        tail = positive[len(positive) // 2:]
        if tail.size < 2:
            geometric = True
        else:
            geometric = bool(np.all(tail[1:] / tail[:-1] <= ratio_bound))
        verdict = "pass" if geometric else "inconclusive"
        if verdict == "inconclusive":
            logger.warning(f"phi(2^k) decays slowly up to k = {n_max}; series check is inconclusive")
        return PhiSeriesReport(
            terms=terms.tolist(), partial_sums=partial.tolist(), partial_sum=float(partial[-1]),
            converged_at=converged_at, geometric_bound_pass=geometric, verdict=verdict,
        )


def _deviation(P: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return np.asarray(P, dtype=float) - np.outer(np.ones(len(pi)), pi)


def _half_row_norm(D: np.ndarray) -> float:
    return float(0.5 * np.abs(D).sum(axis=1).max())


def phi_from_matrix(P: np.ndarray, pi: np.ndarray, n: int) -> float:
    """max_i (1/2) sum_j |P^n(i, j) - pi(j)|; works for unvalidated matrices too.

    For n >= 1, P^n - Pi = (P - Pi)^n, which keeps relative accuracy as the
    coefficients decay.
    """
    pi = np.asarray(pi, dtype=float)
    if n == 0:
        return _half_row_norm(_deviation(np.eye(len(pi)), pi))
    return _half_row_norm(np.linalg.matrix_power(_deviation(P, pi), n))


dependence_service = DependenceService()
