from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

Verdict = Literal["stabilizing", "growing", "inconclusive"]


class TruncatedPath(BaseModel):
    """X_i 1(X_i <= b) + b 1(X_i > b) for a nonnegative path."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    original: np.ndarray
    level: float
    values: np.ndarray


class DyadicDecomposition(BaseModel):
    """Clamps of one nonnegative path at b(2^m), m = 0..n, with their plug-in means.

    clamped[m] holds X_{i,2^m}; blocks[m - 1] holds Y_{i,m}.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    levels: np.ndarray
    clamped: np.ndarray
    means: np.ndarray
    increments_mean: np.ndarray
    excess_means: np.ndarray
    blocks: np.ndarray

    def partial_sums(self, m: int) -> np.ndarray:
        """S_{j,m} for j = 0..len(path), with S_{0,m} = 0."""
        return np.concatenate([[0.0], np.cumsum(self.clamped[m] - self.means[m])])

    @staticmethod
    def block_index(j: int, m: int) -> int:
        return j // 2 ** m


class DecompositionReport(BaseModel):
    part: str
    n: int
    lhs: float
    first_terms: List[float]
    second_terms: List[float]
    third_terms: List[float]
    rhs: float
    holds: bool


class ExceedanceEstimate(BaseModel):
    n: int
    eps: float
    count: int
    reps: int
    p_hat: float
    ci_lo: float
    ci_hi: float


class SeriesEstimate(BaseModel):
    eps: float
    n: List[int]
    p_hat: List[float]
    ci_lo: List[float]
    ci_hi: List[float]
    weights: List[float]
    partial_sums: List[float]
    increments: List[float]
    last_increment_ratio: float
    verdict: Verdict
    dyadic_terms: List[float]
    dyadic_partial_sums: List[float]
    dyadic_verdict: Verdict
    forms_agree: bool
    note: str = "verdicts are heuristic; finite data cannot decide convergence of the series"


class Trajectory(BaseModel):
    checkpoints: List[int]
    seeds: List[int]
    values: List[List[float]] = Field(..., description="values[s][c] for seed s at checkpoint c")
    final_max_abs: float
    envelope: Optional[float] = None
