"""Survival functions t -> P(Y > t) of nonnegative variables.

Closed forms carry exact integrals so plug-in means (E min(Y, b), E Y 1(Y > b))
need no quadrature; supremum and tabulated tails integrate numerically.
"""
import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, special

from models.errors import ConfigError, PreconditionError, RangeError
from models.slowly_varying import SlowlyVaryingSpec

CLOSED_FORMS = ("exp", "pareto", "uniform", "halfnormal", "normal_upper", "point")

# parameter names accepted positionally, e.g. "exp:1" or "uniform:0,2"
POSITIONAL = {
    "exp": ("rate",),
    "pareto": ("alpha", "scale"),
    "uniform": ("a", "b"),
    "halfnormal": ("sigma",),
    "normal_upper": ("mu", "sigma"),
}


def _psi(z):
    """Antiderivative of the standard normal cdf."""
    return z * special.ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


class TailFunction(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["closed", "tabulated", "sup", "sum"]
    name: Optional[str] = None
    params: Tuple[Tuple[str, float], ...] = ()
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()
    grid: Tuple[Tuple[float, float], ...] = ()
    members: Tuple["TailFunction", ...] = ()

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "closed" and self.name not in CLOSED_FORMS:
            raise ValueError(f"unknown closed-form tail '{self.name}'")
        if self.kind in ("sup", "sum") and not self.members:
            raise ValueError(f"{self.kind} tail needs at least one member")
        if self.kind == "tabulated":
            ts = np.array([g[0] for g in self.grid])
            ps = np.array([g[1] for g in self.grid])
            if len(ts) < 2 or ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
                raise ValueError("tabulated tail grid must start at 0 and increase strictly")
            if np.any(ps < 0) or np.any(ps > 1) or np.any(np.diff(ps) > 0):
                raise ValueError("tabulated tail values must be nonincreasing in [0, 1]")
        return self

    # -- constructors ---------------------------------------------------------

    @classmethod
    def closed(cls, name: str, **params: float) -> "TailFunction":
        return cls(kind="closed", name=name, params=tuple(sorted((k, float(v)) for k, v in params.items())))

    @classmethod
    def point(cls, values, probs) -> "TailFunction":
        return cls(kind="closed", name="point",
                   values=tuple(float(v) for v in values), probs=tuple(float(p) for p in probs))

    @classmethod
    def zero(cls) -> "TailFunction":
        return cls.point([0.0], [1.0])

    @classmethod
    def tabulated(cls, ts, ps) -> "TailFunction":
        return cls(kind="tabulated", grid=tuple((float(t), float(p)) for t, p in zip(ts, ps)))

    @classmethod
    def supremum(cls, members: List["TailFunction"]) -> "TailFunction":
        if not members:
            raise PreconditionError("dominating tail of an empty family")
        if len(members) == 1:
            return members[0]
        return cls(kind="sup", members=tuple(members))

    @classmethod
    def total(cls, members: List["TailFunction"]) -> "TailFunction":
        """Tail of |X| from the tails of X+ and X- (disjoint events)."""
        return cls(kind="sum", members=tuple(members))

    @property
    def p(self) -> Dict[str, float]:
        return dict(self.params)

    @property
    def support_top(self) -> float:
        """Smallest t with P(Y > t) = 0, or inf."""
        if self.kind == "closed":
            if self.name == "uniform":
                return max(self.p["b"], 0.0)
            if self.name == "point":
                return max(max(self.values), 0.0)
            return math.inf
        if self.kind == "tabulated":
            return self.grid[-1][0] if self.grid[-1][1] == 0.0 else math.inf
        return max(m.support_top for m in self.members)

    # -- evaluation -----------------------------------------------------------

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        out = np.clip(self._eval(arr), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def _eval(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "sup":
            return np.max([m._eval(t) for m in self.members], axis=0)
        if self.kind == "sum":
            return np.sum([m._eval(t) for m in self.members], axis=0)
        if self.kind == "tabulated":
            ts = np.array([g[0] for g in self.grid])
            ps = np.array([g[1] for g in self.grid])
            if np.any(t > ts[-1]) and ps[-1] != 0.0:
                raise RangeError(f"tabulated tail ends at {ts[-1]} with mass {ps[-1]} left")
            return np.where(t < 0, 1.0, np.interp(t, ts, ps, right=0.0))
        p = self.p
        if self.name == "exp":
            return np.where(t < 0, 1.0, np.exp(-p["rate"] * np.maximum(t, 0.0)))
        if self.name == "pareto":
            return np.where(t < p["scale"], 1.0, (p["scale"] / np.maximum(t, p["scale"])) ** p["alpha"])
        if self.name == "uniform":
            return np.clip((p["b"] - t) / (p["b"] - p["a"]), 0.0, 1.0)
        if self.name == "halfnormal":
            return np.where(t < 0, 1.0, 2.0 * special.ndtr(-np.maximum(t, 0.0) / p["sigma"]))
        if self.name == "normal_upper":
            return special.ndtr((p["mu"] - t) / p["sigma"])
        v = np.array(self.values)
        w = np.array(self.probs)
        return (w[None, :] * (v[None, :] > np.reshape(t, (-1, 1)))).sum(axis=1).reshape(np.shape(t))

    def integral(self, lo: float, hi: float = math.inf) -> float:
        """Integral of the tail over [lo, hi], 0 <= lo <= hi <= inf."""
        if hi <= lo:
            return 0.0
        if self.kind == "sum":
            return math.fsum(m.integral(lo, hi) for m in self.members)
        if self.kind == "closed":
            return self._closed_integral(lo, hi)
        top = min(hi, self.support_top)
        if top <= lo:
            return 0.0
        if math.isinf(top):
            value, _ = integrate.quad(self._scalar, lo, math.inf, limit=200)
            return value
        value, _ = integrate.quad(self._scalar, lo, top, limit=200)
        return value

    def _scalar(self, t: float) -> float:
        return float(self._eval(np.asarray(t, dtype=float)))

    def _closed_integral(self, lo: float, hi: float) -> float:
        p = self.p
        if self.name == "exp":
            r = p["rate"]
            return (math.exp(-r * lo) - (0.0 if math.isinf(hi) else math.exp(-r * hi))) / r
        if self.name == "pareto":
            a, s = p["alpha"], p["scale"]
            flat = max(0.0, min(hi, s) - lo)
            lo2 = max(lo, s)
            if hi <= lo2:
                return flat
            if a <= 1.0 and math.isinf(hi):
                return math.inf
            if a == 1.0:
                return flat + s * (math.log(hi) - math.log(lo2))
            upper = 0.0 if math.isinf(hi) else hi ** (1.0 - a)
            return flat + s ** a * (lo2 ** (1.0 - a) - upper) / (a - 1.0)
        if self.name == "uniform":
            a, b = p["a"], p["b"]
            flat = max(0.0, min(hi, a) - lo)
            lo2, hi2 = max(lo, a), min(hi, b)
            if hi2 <= lo2:
                return flat
            return flat + ((b - lo2) ** 2 - (b - hi2) ** 2) / (2.0 * (b - a))
        if self.name == "point":
            return math.fsum(w * max(0.0, min(v, hi) - lo) for v, w in zip(self.values, self.probs))
        if self.name == "halfnormal":
            mu, sigma, scale = 0.0, p["sigma"], 2.0
        else:
            mu, sigma, scale = p["mu"], p["sigma"], 1.0
        z_hi = -math.inf if math.isinf(hi) else (mu - hi) / sigma
        upper = 0.0 if math.isinf(z_hi) else float(_psi(z_hi))
        return scale * sigma * (float(_psi((mu - lo) / sigma)) - upper)

    # -- plug-in means --------------------------------------------------------

    def mean(self) -> float:
        return self.integral(0.0)

    def clamped_mean(self, b: float) -> float:
        """E min(Y, b)."""
        return self.integral(0.0, b)

    def excess_mean(self, b: float) -> float:
        """E Y 1(Y > b)."""
        return b * self(b) + self.integral(b)

    def to_string(self) -> str:
        if self.kind == "closed" and self.name in POSITIONAL:
            return f"{self.name}:" + ",".join(f"{k}={self.p[k]!r}" for k in POSITIONAL[self.name])
        if self.kind == "sup":
            return "sup:" + ",".join(m.to_string() for m in self.members)
        return f"<{self.kind}>"


TailFunction.model_rebuild()


def parse_tail(text: str, key: str = "tail") -> TailFunction:
    """Parse 'exp:1', 'pareto:alpha=2.5,scale=1', 'uniform:0,2', 'sup:exp:1,exp:2'."""
    text = text.strip()
    if text.startswith("sup:"):
        members: List[List[str]] = []
        for token in text[4:].split(","):
            name = token.split(":", 1)[0].strip()
            if name in POSITIONAL or not members:
                members.append([token])
            else:
                members[-1].append(token)
        return TailFunction.supremum([parse_tail(",".join(m), key) for m in members])
    name, _, rest = text.partition(":")
    if name not in POSITIONAL:
        raise ConfigError(f"unknown tail '{text}' for key '{key}'", key=key)
    params: Dict[str, float] = {}
    try:
        for i, token in enumerate(t for t in rest.split(",") if t.strip()):
            if "=" in token:
                k, _, v = token.partition("=")
                params[k.strip()] = float(v)
            else:
                params[POSITIONAL[name][i]] = float(token)
    except (ValueError, IndexError):
        raise ConfigError(f"malformed tail parameters in '{text}' for key '{key}'", key=key)
    missing = [k for k in POSITIONAL[name] if k not in params]
    if missing:
        raise ConfigError(f"tail '{text}' is missing {', '.join(missing)} for key '{key}'", key=key)
    return TailFunction.closed(name, **params)


# =============================================================================
# MOMENT FUNCTIONALS
# =============================================================================

class MomentFunctional(BaseModel):
    """g(x) = x^p L^p(x) w(x) with w in {1, log loglog^2, log loglog}."""

    model_config = ConfigDict(frozen=True)

    p: float = Field(..., gt=0)
    L: SlowlyVaryingSpec = SlowlyVaryingSpec()
    weight: Literal["none", "log_loglog2", "log_loglog1"] = "none"
    A: float = Field(0.0, ge=0)

    @property
    def V(self) -> SlowlyVaryingSpec:
        factors = [self.L.power(self.p)]
        if self.weight == "log_loglog2":
            factors += [SlowlyVaryingSpec.logpow(1.0), SlowlyVaryingSpec.loglogpow(2.0)]
        elif self.weight == "log_loglog1":
            factors += [SlowlyVaryingSpec.logpow(1.0), SlowlyVaryingSpec.loglogpow(1.0)]
        return SlowlyVaryingSpec.product(*factors)

    def g(self, x):
        arr = np.asarray(x, dtype=float)
        out = arr ** self.p * self.V.value(arr)
        return float(out) if out.ndim == 0 else out

    def dg(self, x):
        arr = np.asarray(x, dtype=float)
        V = self.V
        out = self.p * arr ** (self.p - 1.0) * V.value(arr) + arr ** self.p * V._derivative(arr)
        return float(out) if out.ndim == 0 else out


class MomentResult(BaseModel):
    value: float
    diverged: bool
    head: float
    body: float
    tail: float
    panels: List[Dict[str, float]] = []


class UniformMomentReport(BaseModel):
    indices: List[float]
    values: List[float]
    finite: bool
    sup_value: float
    growth_rate: float
    witness: str
