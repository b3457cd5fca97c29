"""Slowly varying functions, de Bruijn conjugate pairs and normalizing sequences.

All logarithms follow the safe convention log(x) = ln(max{x, e}), so every
iterated log is >= 1 and the log/loglog powers are positive on [0, inf).
"""
import logging
import math
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from models.errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    OscillationError,
    PreconditionError,
    RangeError,
    UnsupportedError,
)

logger = logging.getLogger(__name__)

E = math.e
E_E = math.exp(math.e)

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 200
DAMPING = 0.5


def safe_log(x):
    """ln(max{x, e}); scalar in, scalar out."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"safe_log requires x >= 0, got {x!r}")
    out = np.log(np.maximum(arr, E))
    return float(out) if out.ndim == 0 else out


def safe_loglog(x):
    return safe_log(safe_log(x))


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


Kind = Literal["one", "logpow", "loglogpow", "product", "tabulated", "numeric_conjugate"]


class SlowlyVaryingSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Kind = "one"
    gamma: float = 0.0
    factors: Tuple["SlowlyVaryingSpec", ...] = ()
    grid: Tuple[Tuple[float, float], ...] = ()
    base: Optional["SlowlyVaryingSpec"] = None
    A: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_kind_fields(self):
        if self.kind == "product" and not self.factors:
            raise ValueError("product spec needs at least one factor")
        if self.kind == "numeric_conjugate" and self.base is None:
            raise ValueError("numeric_conjugate spec needs a base")
        if self.kind == "tabulated":
            if len(self.grid) < 2:
                raise ValueError("tabulated spec needs at least two grid points")
            xs = np.array([g[0] for g in self.grid])
            ys = np.array([g[1] for g in self.grid])
            if np.any(xs <= 0) or np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated x grid must be positive and strictly increasing")
            if np.any(ys <= 0):
                raise ValueError("tabulated values must be positive")
        return self

    # -- construction helpers -------------------------------------------------

    @classmethod
    def one(cls) -> "SlowlyVaryingSpec":
        return cls(kind="one")

    @classmethod
    def logpow(cls, gamma: float) -> "SlowlyVaryingSpec":
        return cls(kind="logpow", gamma=gamma)

    @classmethod
    def loglogpow(cls, gamma: float) -> "SlowlyVaryingSpec":
        return cls(kind="loglogpow", gamma=gamma)

    @classmethod
    def product(cls, *factors: "SlowlyVaryingSpec") -> "SlowlyVaryingSpec":
        return cls(kind="product", factors=tuple(factors))

    @classmethod
    def tabulated(cls, xs, ys) -> "SlowlyVaryingSpec":
        return cls(kind="tabulated", grid=tuple((float(a), float(b)) for a, b in zip(xs, ys)))

    # -- properties -----------------------------------------------------------

    @property
    def domain_floor(self) -> float:
        if self.A is not None:
            return self.A
        if self.kind == "one":
            return 1.0
        if self.kind == "logpow":
            return E
        if self.kind == "loglogpow":
            return E_E
        if self.kind == "product":
            return max(f.domain_floor for f in self.factors)
        if self.kind == "tabulated":
            return self.grid[0][0]
        return self.base.domain_floor

    @property
    def is_closed_form(self) -> bool:
        if self.kind in ("one", "logpow", "loglogpow"):
            return True
        if self.kind == "product":
            return all(f.is_closed_form for f in self.factors)
        return False

    # -- evaluation -----------------------------------------------------------

    def value(self, x):
        arr = np.asarray(x, dtype=float)
        if np.any(arr < 0):
            raise DomainError(f"slowly varying functions are defined on [0, inf), got {x!r}")
        return _scalar_or_array(x, self._value(arr))

    def _value(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "one":
            return np.ones_like(x)
        if self.kind == "logpow":
            return safe_log(x) ** self.gamma
        if self.kind == "loglogpow":
            return safe_loglog(x) ** self.gamma
        if self.kind == "product":
            out = np.ones_like(x)
            for f in self.factors:
                out = out * f._value(x)
            return out
        if self.kind == "tabulated":
            xs = np.array([g[0] for g in self.grid])
            ys = np.array([g[1] for g in self.grid])
            if np.any(x < xs[0]) or np.any(x > xs[-1]):
                raise RangeError(f"tabulated spec covers [{xs[0]}, {xs[-1]}]; extrapolation is not allowed")
            return np.exp(np.interp(np.log(x), np.log(xs), np.log(ys)))
        return fixed_point_conjugate(self.base, x)

    def derivative(self, x):
        if self.kind in ("tabulated", "numeric_conjugate"):
            raise UnsupportedError(f"no analytic derivative for kind '{self.kind}'")
        arr = np.asarray(x, dtype=float)
        if np.any(arr < self.domain_floor):
            raise DomainError(f"derivative requires x >= A = {self.domain_floor}, got {x!r}")
        return _scalar_or_array(x, self._derivative(arr))

    def _derivative(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "one":
            return np.zeros_like(x)
        if self.kind == "logpow":
            lx = safe_log(x)
            # right derivative at the kink x = e
            return np.where(x >= E, self.gamma * lx ** (self.gamma - 1.0) / x, 0.0)
        if self.kind == "loglogpow":
            lx = safe_log(x)
            llx = safe_log(lx)
            return np.where(lx >= E, self.gamma * llx ** (self.gamma - 1.0) / (x * lx), 0.0)
        values = [f._value(x) for f in self.factors]
        total = np.zeros_like(x)
        for i, f in enumerate(self.factors):
            term = f._derivative(x)
            for j, v in enumerate(values):
                if j != i:
                    term = term * v
            total = total + term
        return total

    # -- algebra --------------------------------------------------------------

    def power(self, r: float) -> "SlowlyVaryingSpec":
        if self.kind == "one" or r == 1.0:
            return self
        if self.kind in ("logpow", "loglogpow"):
            return self.model_copy(update={"gamma": self.gamma * r})
        if self.kind == "product":
            return self.model_copy(update={"factors": tuple(f.power(r) for f in self.factors)})
        if self.kind == "tabulated":
            return self.model_copy(update={"grid": tuple((a, b ** r) for a, b in self.grid)})
        raise UnsupportedError("cannot raise a numerically inverted conjugate to a power")

    def reciprocal(self) -> "SlowlyVaryingSpec":
        if not self.is_closed_form:
            raise UnsupportedError(f"no closed-form reciprocal for kind '{self.kind}'")
        return self.power(-1.0)

    def to_string(self) -> str:
        if self.kind == "one":
            return "one"
        if self.kind in ("logpow", "loglogpow"):
            return f"{self.kind}:{self.gamma!r}"
        if self.kind == "product" and all(f.kind in ("one", "logpow", "loglogpow") for f in self.factors):
            return "product:" + ",".join(f.to_string() for f in self.factors)
        raise UnsupportedError(f"spec of kind '{self.kind}' has no string form")

    def __str__(self) -> str:
        try:
            return self.to_string()
        except UnsupportedError:
            return f"<{self.kind}>"


SlowlyVaryingSpec.model_rebuild()


def parse_spec(text: str, key: str = "L") -> SlowlyVaryingSpec:
    """Parse 'one', 'logpow:2', 'loglogpow:-0.6667' or 'product:logpow:1,loglogpow:2'."""
    text = text.strip()
    if text == "one":
        return SlowlyVaryingSpec.one()
    head, _, rest = text.partition(":")
    try:
        if head in ("logpow", "loglogpow"):
            return SlowlyVaryingSpec(kind=head, gamma=float(rest))
        if head == "product":
            factors = [parse_spec(part, key) for part in rest.split(",") if part.strip()]
            return SlowlyVaryingSpec.product(*factors)
    except ValueError as e:
        raise ConfigError(f"invalid slowly varying spec '{text}' for key '{key}': {e}", key=key)
    raise ConfigError(f"unknown slowly varying spec '{text}' for key '{key}'", key=key)


# =============================================================================
# FIXED-POINT INVERSION
# =============================================================================

def _iterate(base: SlowlyVaryingSpec, x: np.ndarray, damping: float, tol: float, max_iter: int) -> np.ndarray:
    t = np.ones_like(x)
    prev_step = np.zeros_like(x)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        mapped = 1.0 / base._value(x * t)
        t_new = t + damping * (mapped - t)
        step = t_new - t
        if damping == 1.0:
            growing = active & (prev_step != 0) & (step * prev_step < 0) & (np.abs(step) >= np.abs(prev_step))
            if growing.any():
                i = int(np.flatnonzero(growing.ravel())[0])
                raise OscillationError(
                    "fixed-point iterates oscillate without shrinking",
                    x=float(x.ravel()[i]), last_iterate=float(t_new.ravel()[i]),
                )
        done = np.abs(step) <= tol * np.abs(t_new)
        t = np.where(active, t_new, t)
        prev_step = np.where(active, step, prev_step)
        active &= ~done
        if not active.any():
            return t
    i = int(np.flatnonzero(active.ravel())[0])
    raise ConvergenceError(
        f"fixed-point inversion did not converge in {max_iter} iterations",
        x=float(x.ravel()[i]), last_iterate=float(t.ravel()[i]),
    )


def fixed_point_conjugate(base: SlowlyVaryingSpec, x,
                          tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAX_ITER):
    """Solve t * L(x t) = 1 pointwise, starting from t = 1.

    The first attempt is undamped; oscillation or non-convergence triggers one
    retry with damping 0.5.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    result = None
    for attempt in Retrying(
        stop=stop_after_attempt(2),
        retry=retry_if_exception_type(ConvergenceError),
        reraise=True,
    ):
        with attempt:
            damping = 1.0 if attempt.retry_state.attempt_number == 1 else DAMPING
            if damping != 1.0:
                logger.warning(f"Retrying fixed-point inversion of {base} with damping {damping}")
            result = _iterate(base, arr, damping, tol, max_iter)
    return result.reshape(np.shape(x)) if np.ndim(x) else result[0]


# =============================================================================
# CONJUGATE PAIRS AND NORMALIZERS
# =============================================================================

class ConjugatePair(BaseModel):
    model_config = ConfigDict(frozen=True)

    L: SlowlyVaryingSpec
    Lt: SlowlyVaryingSpec
    provenance: Literal["closed_form", "numeric_inversion"]


class Normalizer(BaseModel):
    """b(n) = n^a Lt(A^a) for n < A and n^a Lt(n^a) for n >= A."""

    model_config = ConfigDict(frozen=True)

    alpha: float
    p: float = Field(..., ge=1.0, lt=2.0)
    Lt: SlowlyVaryingSpec = SlowlyVaryingSpec()
    A: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _check_alpha(self):
        if self.alpha < 1.0 / self.p - 1e-12:
            raise PreconditionError(f"alpha must be >= 1/p = {1.0 / self.p}, got {self.alpha}")
        return self

    def b(self, n):
        arr = np.asarray(n, dtype=float)
        if np.any(arr < 1):
            raise PreconditionError(f"b(n) needs n >= 1, got {n!r}")
        na = arr ** self.alpha
        floor_value = self.Lt.value(self.A ** self.alpha)
        out = np.where(arr < self.A, na * floor_value, na * self.Lt.value(na))
        return _scalar_or_array(n, out)

    def check_monotone(self, n_max: int) -> None:
        values = self.b(np.arange(1, n_max + 1, dtype=float))
        bad = np.flatnonzero(np.diff(values) <= 0)
        if bad.size:
            n = int(bad[0]) + 1
            raise PreconditionError(f"b(n) is not strictly increasing: b({n + 1}) <= b({n})")


class GalambosReport(BaseModel):
    spec: str
    x: List[float]
    values: List[float]
    pass_: bool = Field(..., alias="pass")

    model_config = ConfigDict(populate_by_name=True)


class ConjugateReport(BaseModel):
    L: str
    Lt: str
    provenance: str
    x: List[float]
    ratios: List[float]
    inverse_ratios: List[float]
    tol: float
    pass_: bool = Field(..., alias="pass")

    model_config = ConfigDict(populate_by_name=True)
