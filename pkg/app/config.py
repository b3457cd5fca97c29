"""Runtime settings.

Configuration (via env vars or .env):
- SLLN_LAB_SEED (fallback seed when neither flag nor config gives one)
- SLLN_LAB_WORKERS (default 1)
- SLLN_LAB_LOG_LEVEL (default INFO)
- SLLN_LAB_OUT_DIR (default results)
- SLLN_LAB_CHUNK_SIZE (replicates per work unit, default 256)
"""
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()

TOOL_VERSION = "1.0.0"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="SLLN_LAB_", env_file=".env", extra="ignore")

    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"
    out_dir: Path = Path("results")
    # must not depend on the worker count, or reductions stop being reproducible
    chunk_size: int = Field(256, ge=1)


settings = Settings()
