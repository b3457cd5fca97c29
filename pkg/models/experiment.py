"""Experiment configuration: one flat record per run, loaded from TOML files,
run manifests and command-line flags.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import settings
from models.dependence import DependenceModel, parse_model
from models.errors import ConfigError, ModelValidationError
from models.slowly_varying import SlowlyVaryingSpec, parse_spec
from models.tails import TailFunction, parse_tail
from services.rv_funcs import geometric_grid

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "conjugate", "galambos", "generate", "var-ratio", "phi", "moment",
    "baum-katz", "slln", "decomposition-check", "counterexample",
)

# Filled in by ExperimentConfig.resolved() for keys left unset.
SUBCOMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "conjugate": {"grid": "1e2:1e300:32", "tol": 0.2},
    "galambos": {"grid": "1e2:1e300:32", "tol": 0.05},
    "generate": {"model": "iid-normal", "n": 1024},
    "var-ratio": {"model": "iid-normal", "reps": 10000},
    "phi": {"model": "phimix:a=0.3,b=0.2,emit=identity", "n": 20},
    "moment": {"tail": "exp:1"},
    "baum-katz": {"model": "iid-normal", "K": 13, "reps": 2000},
    "slln": {"model": "iid-normal", "n": 2 ** 20, "seeds": list(range(1, 9))},
    "decomposition-check": {"model": "iid-normal", "n": 10, "seeds": list(range(100))},
    "counterexample": {"n": 10 ** 6, "seeds": list(range(1, 9))},
}

# Excluded from the config hash: they change where and how fast, not what.
RUNTIME_KEYS = ("workers", "out")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    subcommand: Literal[
        "conjugate", "galambos", "generate", "var-ratio", "phi", "moment",
        "baum-katz", "slln", "decomposition-check", "counterexample",
    ]
    model: Optional[str] = Field(None, description="dependence model, e.g. iid-normal or mpnd:m=2,lags=0.4")
    p: float = Field(1.5, ge=1.0, lt=2.0, description="p must lie in [1, 2)")
    alpha: Union[Literal["auto"], float] = Field("auto", description="'auto' (1/p) or a number >= 1/p")
    eps: List[float] = Field(default_factory=lambda: [1.0], min_length=1, description="eps values must be > 0")
    L: str = Field("one", description="slowly varying function, e.g. one, logpow:2, loglogpow:-1")
    method: Literal["auto", "closed", "numeric"] = "auto"
    K: Optional[int] = Field(None, ge=1, le=24, description="dyadic depth K in [1, 24]")
    n: Optional[int] = Field(None, ge=1)
    reps: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64, description="seed must lie in [0, 2^64)")
    workers: int = Field(1, ge=1)
    out: str = "results"
    grid: Optional[str] = Field(None, description="geometric grid lo:hi:count")
    tol: Optional[float] = Field(None, gt=0)
    tail: Optional[str] = None
    weight: Literal["none", "log_loglog2", "log_loglog1"] = "none"
    seeds: Optional[List[int]] = None
    k_list: List[int] = Field(default_factory=lambda: [0, 7, 100])
    l_list: List[int] = Field(default_factory=lambda: [1, 16, 256])
    transforms: List[str] = Field(default_factory=lambda: ["identity", "truncate:1.0", "clamp:0.5"])
    B: Optional[int] = Field(None, ge=2)

    @field_validator("eps", "seeds", "k_list", "l_list", "transforms", mode="before")
    @classmethod
    def _split_commas(cls, v):
        if isinstance(v, str):
            return [t.strip() for t in v.split(",") if t.strip()]
        if isinstance(v, (int, float)):
            return [v]
        return v

    @field_validator("eps")
    @classmethod
    def _positive_eps(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("eps values must be > 0")
        return v

    @model_validator(mode="after")
    def _parse_specs(self):
        # parsers raise ConfigError naming the key; pydantic lets it through
        if self.model is not None:
            try:
                parse_model(self.model, key="model")
            except ModelValidationError as e:
                raise ConfigError(f"invalid model '{self.model}' for key 'model': {e}", key="model")
        parse_spec(self.L, key="L")
        if self.tail is not None:
            parse_tail(self.tail, key="tail")
        if self.grid is not None:
            parse_grid(self.grid)
        return self

    # -- derived views --------------------------------------------------------

    def resolved(self) -> "ExperimentConfig":
        """Fill subcommand defaults and the seed fallback chain (flag, file, SLLN_LAB_SEED, 0)."""
        update = {k: v for k, v in SUBCOMMAND_DEFAULTS[self.subcommand].items() if getattr(self, k) is None}
        if self.seed is None:
            update["seed"] = settings.seed if settings.seed is not None else 0
        return self.model_copy(update=update)

    @property
    def alpha_value(self) -> Optional[float]:
        return None if self.alpha == "auto" else float(self.alpha)

    @property
    def dependence_model(self) -> DependenceModel:
        if self.model is None:
            raise ConfigError(f"subcommand '{self.subcommand}' needs key 'model'", key="model")
        return parse_model(self.model, key="model")

    @property
    def L_spec(self) -> SlowlyVaryingSpec:
        return parse_spec(self.L, key="L")

    @property
    def tail_function(self) -> TailFunction:
        return parse_tail(self.tail or "exp:1", key="tail")

    @property
    def grid_points(self) -> List[float]:
        lo, hi, count = parse_grid(self.grid or "1e2:1e300:32")
        return geometric_grid(lo, hi, count).tolist()

    def hash_payload(self) -> Dict[str, Any]:
        return self.model_dump(exclude=set(RUNTIME_KEYS))

    # -- serialization --------------------------------------------------------

    def to_toml(self) -> str:
        lines = ["[experiment]"]
        for key, value in self.model_dump().items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return str(value)


def parse_grid(text: str):
    try:
        lo_s, hi_s, count_s = text.split(":")
        lo, hi, count = float(lo_s), float(hi_s), int(count_s)
    except ValueError:
        raise ConfigError(f"grid must look like lo:hi:count, got '{text}'", key="grid")
    if not 0 < lo < hi or count < 8:
        raise ConfigError(f"grid needs 0 < lo < hi and count >= 8, got '{text}'", key="grid")
    return lo, hi, count


# =============================================================================
# LOADING
# =============================================================================

def _flatten(data: Dict[str, Any]) -> Dict[str, Any]:
    """Merge top-level keys and one level of [sections]; a repeated key is an error."""
    flat: Dict[str, Any] = {}
    for name, value in data.items():
        items = value.items() if isinstance(value, dict) else [(name, value)]
        for key, item in items:
            if isinstance(item, dict):
                raise ConfigError(f"nested table '{name}.{key}' is not supported", key=key)
            if key in flat:
                raise ConfigError(f"key '{key}' appears in more than one section", key=key)
            flat[key] = item
    return flat


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a TOML config or a run manifest (its recorded config is replayed)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found", key="config")
    if path.suffix == ".json":
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
            values = dict(manifest["config"])
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"{path} is not a run manifest: {e}", key="config")
        logger.info(f"Replaying run manifest {path} (config hash {manifest.get('config_hash', '?')[:12]})")
        return values
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}", key="config")
    return _flatten(data)


def build_config(file_values: Optional[Dict[str, Any]] = None, **overrides: Any) -> ExperimentConfig:
    """File keys, overridden by non-None flags, validated and resolved."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        err = e.errors()[0]
        key = ".".join(str(part) for part in err["loc"]) or "config"
        field = ExperimentConfig.model_fields.get(str(err["loc"][0])) if err["loc"] else None
        hint = f" ({field.description})" if field is not None and field.description else ""
        raise ConfigError(f"invalid value for '{key}': {err['msg']}{hint}", key=key)
    return config.resolved()
