"""Three-point laws P(X_n = 0) = 1 - q_n, P(X_n = +-h(n)) = q_n / 2.

g(x) = x^p L^p(x) is strictly increasing beyond A, h is its inverse and
q_n = 1 / (n log n loglog n). Indices below B carry X_n = 0.
"""
import logging
import math
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy import optimize

from models.errors import DomainError, PreconditionError
from models.slowly_varying import SlowlyVaryingSpec, safe_log, safe_loglog

logger = logging.getLogger(__name__)

ROOT_RTOL = 1e-12
SCAN_TOP = 1e12
SCAN_POINTS = 400
H_CACHE_SIZE = 4096


class CounterexampleFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(..., ge=1.0, lt=2.0)
    L: SlowlyVaryingSpec = SlowlyVaryingSpec()
    A: Optional[float] = Field(None, gt=0)
    B_override: Optional[int] = Field(None, ge=2)

    _h_cache: Dict[float, float] = PrivateAttr(default_factory=dict)
    _floor: Optional[float] = PrivateAttr(None)

    @model_validator(mode="after")
    def _check_monotone(self):
        if self.A is not None:
            x = np.geomspace(self.A, max(SCAN_TOP, 10 * self.A), SCAN_POINTS)
            if np.any(np.diff(self._log_g(x)) <= 0):
                raise PreconditionError(f"g(x) = x^p L^p(x) is not strictly increasing on [{self.A}, inf)")
        return self

    def _log_g(self, x):
        return self.p * (np.log(x) + np.log(self.L.value(x)))

    def g(self, x):
        return np.exp(self._log_g(x))

    @property
    def floor(self) -> float:
        """A, either given or the first scan point beyond which g increases."""
        if self.A is not None:
            return self.A
        if self._floor is None:
            self._floor = find_monotone_floor(self.p, self.L)
        return self._floor

    @property
    def B(self) -> int:
        if self.B_override is not None:
            return self.B_override
        A = self.floor
        return int(math.floor(A + float(self.g(A)))) + 1

    def h(self, y):
        """Inverse of g on [A, inf), by bracketed root finding in log space."""
        arr = np.asarray(y, dtype=float)
        out = np.array([self._h_scalar(float(v)) for v in arr.ravel()]).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def _h_scalar(self, y: float) -> float:
        cached = self._h_cache.get(y)
        if cached is not None:
            return cached
        A = self.floor
        target = math.log(y)
        lo = A
        f_lo = float(self._log_g(lo)) - target
        if f_lo > 0:
            raise DomainError(f"h(y) is defined for y >= g(A) = {float(self.g(A))}, got {y}")
        if f_lo == 0:
            self._remember(y, lo)
            return lo
        hi = max(2.0 * A, y ** (1.0 / self.p))
        while float(self._log_g(hi)) - target < 0:
            lo, hi = hi, hi * 10.0
        root = optimize.brentq(lambda x: float(self._log_g(x)) - target, lo, hi, xtol=1e-300, rtol=ROOT_RTOL)
        self._remember(y, root)
        return root

    def _remember(self, y: float, x: float) -> None:
        if len(self._h_cache) >= H_CACHE_SIZE:
            self._h_cache.pop(next(iter(self._h_cache)))
        self._h_cache[y] = x

    def q(self, n):
        n_arr = np.asarray(n, dtype=float)
        out = 1.0 / (n_arr * safe_log(n_arr) * safe_loglog(n_arr))
        return float(out) if out.ndim == 0 else out

    def Lt(self, x):
        """Induced conjugate h(x^p) / x."""
        arr = np.asarray(x, dtype=float)
        out = self.h(arr ** self.p) / arr
        return float(out) if np.ndim(out) == 0 else out

    def weighted_moment(self, n, weight) -> float:
        """E w(|X_n|) = w(h(n)) q_n for any w with w(0) = 0."""
        if n < self.B:
            return 0.0
        return float(weight(self.h(float(n)))) * self.q(float(n))


def find_monotone_floor(p: float, L: SlowlyVaryingSpec) -> float:
    """First scan point from which x^p L^p(x) increases strictly on the scan grid."""
    x = np.geomspace(max(1.0, L.domain_floor), SCAN_TOP, SCAN_POINTS)
    log_g = p * (np.log(x) + np.log(L.value(x)))
    bad = np.flatnonzero(np.diff(log_g) <= 0)
    if bad.size == 0:
        return float(x[0])
    if bad[-1] + 1 >= len(x) - 1:
        raise PreconditionError(f"x^{p} L^{p}(x) is not eventually increasing for L = {L}")
    return float(x[bad[-1] + 1])
