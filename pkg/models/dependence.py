"""Marginals, dependence structures and preset strings for sample-path models.

Every model draws a standard Gaussian (or uniform, for chains) latent field and
pushes it through nondecreasing maps, so monotone transforms never change the
declared dependence class.
"""
import hashlib
import logging
import math
from typing import Any, ClassVar, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import linalg, special

from models.counterexample import CounterexampleFamily
from models.errors import ConfigError, ModelValidationError, UnsupportedError
from models.slowly_varying import parse_spec
from models.tails import TailFunction

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
PSD_TOL = 1e-10
MAX_NA_BLOCK = 64


# =============================================================================
# MARGINALS
# =============================================================================

class _Marginal(BaseModel):
    model_config = ConfigDict(frozen=True)

    identically_distributed: ClassVar[bool] = True

    def transform(self, z: np.ndarray, index: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean(self, index=None):
        return self.positive_tail().mean() - self.negative_tail().mean()

    def abs_tail(self) -> TailFunction:
        return TailFunction.total([self.positive_tail(), self.negative_tail()])

    def positive_tail(self) -> TailFunction:
        raise NotImplementedError

    def negative_tail(self) -> TailFunction:
        return TailFunction.zero()

    def to_string(self) -> str:
        params = ",".join(f"{k}={v!r}" for k, v in self.model_dump(exclude={"kind"}).items())
        return f"{self.kind}:{params}" if params else self.kind


class Normal(_Marginal):
    kind: Literal["normal"] = "normal"
    mu: float = 0.0
    sigma: float = Field(1.0, gt=0)

    def transform(self, z, index):
        return self.mu + self.sigma * z

    def mean(self, index=None):
        return self.mu

    def positive_tail(self):
        return TailFunction.closed("normal_upper", mu=self.mu, sigma=self.sigma)

    def negative_tail(self):
        return TailFunction.closed("normal_upper", mu=-self.mu, sigma=self.sigma)


class Pareto(_Marginal):
    kind: Literal["pareto"] = "pareto"
    alpha: float = Field(..., gt=0)
    scale: float = Field(1.0, gt=0)

    def transform(self, z, index):
        return self.scale * special.ndtr(-z) ** (-1.0 / self.alpha)

    def mean(self, index=None):
        return self.alpha * self.scale / (self.alpha - 1.0) if self.alpha > 1 else math.inf

    def positive_tail(self):
        return TailFunction.closed("pareto", alpha=self.alpha, scale=self.scale)


class Uniform(_Marginal):
    kind: Literal["uniform"] = "uniform"
    a: float = 0.0
    b: float = 1.0

    @model_validator(mode="after")
    def _order(self):
        if self.b <= self.a:
            raise ValueError("uniform marginal needs a < b")
        return self

    def transform(self, z, index):
        return self.a + (self.b - self.a) * special.ndtr(z)

    def mean(self, index=None):
        return 0.5 * (self.a + self.b)

    def positive_tail(self):
        return TailFunction.closed("uniform", a=self.a, b=self.b)

    def negative_tail(self):
        return TailFunction.closed("uniform", a=-self.b, b=-self.a)


class Exponential(_Marginal):
    kind: Literal["exp"] = "exp"
    rate: float = Field(1.0, gt=0)

    def transform(self, z, index):
        return -special.log_ndtr(-z) / self.rate

    def mean(self, index=None):
        return 1.0 / self.rate

    def positive_tail(self):
        return TailFunction.closed("exp", rate=self.rate)


class HalfNormal(_Marginal):
    kind: Literal["halfnormal"] = "halfnormal"
    sigma: float = Field(1.0, gt=0)

    def transform(self, z, index):
        return -self.sigma * special.ndtri(0.5 * special.ndtr(-z))

    def mean(self, index=None):
        return self.sigma * math.sqrt(2.0 / math.pi)

    def positive_tail(self):
        return TailFunction.closed("halfnormal", sigma=self.sigma)


class Discrete(_Marginal):
    kind: Literal["discrete"] = "discrete"
    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    @model_validator(mode="after")
    def _check(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("discrete marginal needs matching values and probs")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("discrete values must be sorted")
        if abs(sum(self.probs) - 1.0) > ROW_SUM_TOL * len(self.probs) or min(self.probs) < 0:
            raise ValueError("discrete probs must form a distribution")
        return self

    def transform(self, z, index):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum[:-1], special.ndtr(z), side="right")
        return np.asarray(self.values)[idx]

    def mean(self, index=None):
        return float(np.dot(self.values, self.probs))

    def positive_tail(self):
        return TailFunction.point([max(v, 0.0) for v in self.values], self.probs)

    def negative_tail(self):
        return TailFunction.point([max(-v, 0.0) for v in self.values], self.probs)


class Rademacher(Discrete):
    kind: Literal["rademacher"] = "rademacher"
    values: Tuple[float, ...] = (-1.0, 1.0)
    probs: Tuple[float, ...] = (0.5, 0.5)

    def transform(self, z, index):
        return np.where(z > 0, 1.0, -1.0)

    def to_string(self):
        return "rademacher"


class Constant(Discrete):
    kind: Literal["const"] = "const"
    c: float = 0.0
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = (1.0,)

    @model_validator(mode="before")
    @classmethod
    def _fill(cls, data: Any):
        if isinstance(data, dict):
            data = {**data, "values": (float(data.get("c", 0.0)),), "probs": (1.0,)}
        return data

    def transform(self, z, index):
        return np.full(np.shape(z), self.c)

    def to_string(self):
        return f"const:c={self.c!r}"


class ThreePoint(_Marginal):
    """Per-index law of the counterexample family."""

    kind: Literal["three_point"] = "three_point"
    family: CounterexampleFamily

    identically_distributed: ClassVar[bool] = False

    def transform(self, z, index):
        index = np.broadcast_to(index, np.shape(z))
        q = np.where(index >= self.family.B, self.family.q(np.maximum(index, 1)), 0.0)
        lower = special.ndtr(z) < 0.5 * q
        upper = special.ndtr(-z) < 0.5 * q
        out = np.zeros(np.shape(z))
        hit = lower | upper
        if hit.any():
            heights = self.family.h(index[hit].astype(float))
            out[hit] = np.where(upper[hit], heights, -heights)
        return out

    def mean(self, index=None):
        return 0.0 if index is None else np.zeros(np.shape(index))

    def positive_tail(self):
        raise UnsupportedError("the three-point family is not identically distributed")

    def negative_tail(self):
        raise UnsupportedError("the three-point family is not identically distributed")

    def to_string(self):
        return f"counterexample:p={self.family.p!r},L={self.family.L}"


Marginal = Union[Normal, Pareto, Uniform, Exponential, HalfNormal, Rademacher, Constant, Discrete, ThreePoint]

MARGINALS = {
    "normal": Normal, "pareto": Pareto, "uniform": Uniform, "exp": Exponential,
    "halfnormal": HalfNormal, "rademacher": Rademacher, "const": Constant,
}


# =============================================================================
# MARKOV CHAINS
# =============================================================================

class MarkovChainSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    states: Tuple[float, ...]
    transition: Tuple[Tuple[float, ...], ...]
    initial: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _validate_chain(self):
        P = self.matrix
        s = len(self.states)
        if P.shape != (s, s):
            raise ModelValidationError(f"transition matrix must be {s}x{s}, got {P.shape}")
        if np.any(P < 0):
            i, j = np.argwhere(P < 0)[0]
            raise ModelValidationError(f"negative transition probability at ({i}, {j})", entry=(int(i), int(j)))
        rows = np.abs(P.sum(axis=1) - 1.0)
        if np.any(rows > ROW_SUM_TOL):
            i = int(np.argmax(rows))
            raise ModelValidationError(f"row {i} of the transition matrix sums to {P[i].sum()!r}", entry=i)
        # primitive iff the (s-1)^2 + 1 step reachability matrix is all positive
        step = (P > 0).astype(np.int64)
        reach = step.copy()
        for _ in range((s - 1) ** 2):
            reach = np.minimum(reach @ step, 1)
        if not np.all(reach > 0):
            raise ModelValidationError("chain is not irreducible and aperiodic")
        pi = self.stationary
        residual = float(np.max(np.abs(pi @ P - pi)))
        if residual > STATIONARY_TOL:
            raise ModelValidationError(f"stationary vector residual {residual:.3g} exceeds {STATIONARY_TOL}")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.transition, dtype=float)

    @property
    def stationary(self) -> np.ndarray:
        P = self.matrix
        s = P.shape[0]
        system = np.vstack([P.T - np.eye(s), np.ones((1, s))])
        rhs = np.zeros(s + 1)
        rhs[-1] = 1.0
        pi, *_ = linalg.lstsq(system, rhs)
        return pi

    @property
    def is_stationary_start(self) -> bool:
        return self.initial is None or np.allclose(self.initial, self.stationary, atol=STATIONARY_TOL)

    @classmethod
    def two_state(cls, a: float, b: float) -> "MarkovChainSpec":
        return cls(states=(0.0, 1.0), transition=((1.0 - a, a), (b, 1.0 - b)))


# =============================================================================
# STRUCTURES
# =============================================================================

class IIDStructure(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["iid"] = "iid"


class MPNDStructure(BaseModel):
    """Stationary Gaussian copula; lags[h-1] is the lag-h correlation."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["mpnd"] = "mpnd"
    m: int = Field(..., ge=1)
    lags: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def _check_lags(self):
        for h, r in enumerate(self.lags, start=1):
            if not -1.0 < r < 1.0:
                raise ModelValidationError(f"lag-{h} correlation {r} outside (-1, 1)", entry=h)
            if h >= self.m and r > 0:
                raise ModelValidationError(f"lag-{h} correlation {r} is positive at lag >= m = {self.m}", entry=h)
        return self

    def correlation(self, n: int) -> np.ndarray:
        r = np.zeros(n)
        r[0] = 1.0
        k = min(len(self.lags), n - 1)
        r[1:k + 1] = self.lags[:k]
        return r


class NAGaussStructure(BaseModel):
    """I.i.d. blocks of a Gaussian vector with nonpositive correlations."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["na-gauss"] = "na-gauss"
    rho: Optional[float] = Field(None, le=0.0, gt=-1.0)
    d: Optional[int] = Field(None, ge=1)
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None

    @model_validator(mode="after")
    def _check_matrix(self):
        if (self.rho is None) == (self.matrix is None):
            raise ModelValidationError("na-gauss needs exactly one of rho or an explicit matrix")
        if self.rho is not None:
            if self.d is not None and self.d > 1 and 1.0 + (self.d - 1) * self.rho < -PSD_TOL:
                raise ModelValidationError(f"block size {self.d} with rho {self.rho} is not positive semidefinite")
            return self
        C = np.array(self.matrix, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T):
            raise ModelValidationError("correlation matrix must be square and symmetric")
        off = C - np.diag(np.diag(C))
        if np.any(off > 0):
            i, j = np.argwhere(off > 0)[0]
            raise ModelValidationError(f"positive off-diagonal correlation at ({i}, {j})", entry=(int(i), int(j)))
        if linalg.eigvalsh(C).min() < -PSD_TOL:
            raise ModelValidationError("correlation matrix is not positive semidefinite")
        return self

    @property
    def block_size(self) -> int:
        if self.matrix is not None:
            return len(self.matrix)
        if self.d is not None:
            return self.d
        if self.rho == 0.0:
            return 1
        return min(MAX_NA_BLOCK, int(math.floor(1.0 + 1.0 / abs(self.rho))))

    def block_matrix(self) -> np.ndarray:
        if self.matrix is not None:
            return np.array(self.matrix, dtype=float)
        d = self.block_size
        return np.full((d, d), self.rho) + (1.0 - self.rho) * np.eye(d)


class MENDStructure(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["mend"] = "mend"
    m: int = Field(..., ge=1)
    block: "DependenceModel"


class PhiMixStructure(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["phimix"] = "phimix"
    chain: MarkovChainSpec
    emit: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_emit(self):
        if len(self.emit) != len(self.chain.states):
            raise ModelValidationError("emission needs one value per state")
        if np.any(np.diff(self.emit) < 0):
            raise ModelValidationError("emission map must be nondecreasing in state order")
        return self


Structure = Union[IIDStructure, MPNDStructure, NAGaussStructure, MENDStructure, PhiMixStructure]


class DependenceModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    structure: Structure = Field(..., discriminator="kind")
    marginal: Marginal = Field(default_factory=Normal, discriminator="kind")
    name: Optional[str] = None

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.model_dump_json(exclude={"name"}).encode()).hexdigest()

    def __str__(self) -> str:
        return self.name or self.structure.kind


MENDStructure.model_rebuild()
DependenceModel.model_rebuild()


class SamplePath(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    seed: int
    fingerprint: str


class VarianceDominationReport(BaseModel):
    cells: List[Dict[str, Any]]
    ratio_estimates: List[float]
    ci_halfwidths: List[float]
    C_hat: float
    declared_C: float
    confidence: float
    pass_: bool = Field(..., alias="pass")

    model_config = ConfigDict(populate_by_name=True)


class PhiSeriesReport(BaseModel):
    terms: List[float]
    partial_sums: List[float]
    partial_sum: float
    converged_at: Optional[int]
    geometric_bound_pass: bool
    verdict: Literal["pass", "inconclusive"]


# =============================================================================
# PRESET PARSING
# =============================================================================

GREEDY_KEYS = ("block", "marginal", "L")


def parse_params(text: str, key: str = "model") -> Dict[str, str]:
    """'m=2,lags=0.4,-0.05' -> {'m': '2', 'lags': '0.4,-0.05'}.

    Tokens without '=' extend the previous key; block, marginal and L take the
    rest of the string.
    """
    params: Dict[str, str] = {}
    last = None
    rest = text
    while rest:
        token, sep, tail = rest.partition(",")
        if "=" in token:
            k, _, v = token.partition("=")
            k = k.strip()
            if k in GREEDY_KEYS:
                params[k] = (v + sep + tail).strip()
                break
            params[k] = v.strip()
            last = k
        elif token.strip():
            if last is None:
                raise ConfigError(f"malformed parameter '{token}' in '{text}' for key '{key}'", key=key)
            params[last] += "," + token.strip()
        rest = tail
    return params


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_marginal(text: str, key: str = "model") -> Marginal:
    name, _, rest = text.strip().partition(":")
    cls = MARGINALS.get(name)
    if cls is None:
        raise ConfigError(f"unknown marginal '{name}' for key '{key}'", key=key)
    try:
        return cls(**{k: float(v) for k, v in parse_params(rest, key).items()})
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"invalid marginal '{text}' for key '{key}': {e}", key=key)


def parse_model(text: str, key: str = "model") -> DependenceModel:
    """Build a model from a preset string such as 'mpnd:m=2,lags=0.4,-0.05'."""
    text = text.strip()
    head, _, rest = text.partition(":")
    try:
        if head.startswith("iid-"):
            marginal = parse_marginal(text[4:], key)
            return DependenceModel(structure=IIDStructure(), marginal=marginal, name=text)
        params = parse_params(rest, key)
        marginal = parse_marginal(params.pop("marginal"), key) if "marginal" in params else Normal()
        if head == "const":
            return DependenceModel(structure=IIDStructure(), marginal=Constant(c=float(params.get("c", 0.0))), name=text)
        if head == "mpnd":
            structure = MPNDStructure(m=int(params["m"]), lags=_floats(params.get("lags", "")))
            return DependenceModel(structure=structure, marginal=marginal, name=text)
        if head == "na-gauss":
            d = int(params["d"]) if "d" in params else None
            structure = NAGaussStructure(rho=float(params["rho"]), d=d)
            return DependenceModel(structure=structure, marginal=marginal, name=text)
        if head == "mend":
            block = parse_model(params["block"], key)
            structure = MENDStructure(m=int(params["m"]), block=block)
            return DependenceModel(structure=structure, marginal=block.marginal, name=text)
        if head == "phimix":
            chain = MarkovChainSpec.two_state(float(params["a"]), float(params["b"]))
            emit_text = params.get("emit", "identity")
            emit = chain.states if emit_text == "identity" else _floats(emit_text)
            structure = PhiMixStructure(chain=chain, emit=emit)
            pi = chain.stationary
            return DependenceModel(structure=structure, marginal=Discrete(values=emit, probs=tuple(pi / pi.sum())), name=text)
        if head == "counterexample":
            family = CounterexampleFamily(
                p=float(params.get("p", 1.5)),
                L=parse_spec(params.get("L", "one"), "L"),
                B_override=int(params["B"]) if "B" in params else None,
            )
            return DependenceModel(structure=IIDStructure(), marginal=ThreePoint(family=family), name=text)
    except KeyError as e:
        raise ConfigError(f"model preset '{text}' is missing parameter {e} for key '{key}'", key=key)
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"invalid model preset '{text}' for key '{key}': {e}", key=key)
    raise ConfigError(f"unknown model preset '{text}' for key '{key}'", key=key)


SHIPPED_PRESETS = (
    "iid-normal",
    "mpnd:m=2,lags=0.4,-0.05",
    "na-gauss:rho=-0.05",
    "mend:m=3,block=na-gauss:rho=-0.05",
    "phimix:a=0.3,b=0.2,emit=identity",
)
