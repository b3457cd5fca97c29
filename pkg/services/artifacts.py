"""Run artifacts: CSV tables, two-column plot data, run manifest and summary.

Every float is written with 17 significant digits so identical runs produce
identical bytes.
"""
import csv
import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.config import TOOL_VERSION
from models.experiment import ExperimentConfig

logger = logging.getLogger(__name__)

# templates folder (relative to project root -> app/templates)
TEMPLATES_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "app", "templates")
env = Environment(
    loader=FileSystemLoader(TEMPLATES_DIR),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


env.filters["fmt"] = fmt


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.hash_payload(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactService:
    def __init__(self):
        self._written: Dict[str, List[Path]] = {}

    def _record(self, out_dir: Path, path: Path) -> Path:
        self._written.setdefault(str(out_dir), []).append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, out_dir: Path, name: str, header: Sequence[str],
                  rows: Iterable[Sequence[Any]]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
        return self._record(out_dir, path)

    def write_dat(self, out_dir: Path, name: str, xs: Sequence[float], ys: Sequence[float]) -> Path:
        """Whitespace-separated x y pairs; non-finite y values are skipped."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for x, y in zip(xs, ys):
                if math.isfinite(y):
                    f.write(f"{fmt(float(x))} {fmt(float(y))}\n")
        return self._record(out_dir, path)

    def write_manifest(self, out_dir: Path, config: ExperimentConfig, summary: Dict[str, Any]) -> Path:
        """manifest.json plus summary.txt for everything written to out_dir so far."""
        out_dir = Path(out_dir)
        files = self._written.pop(str(out_dir), [])
        text = env.get_template("summary.txt").render(
            config=config, summary=summary, files=[p.name for p in files], version=TOOL_VERSION,
        )
        summary_path = out_dir / "summary.txt"
        summary_path.write_text(text, encoding="utf-8")
        files.append(summary_path)
        manifest = {
            "tool_version": TOOL_VERSION,
            "subcommand": config.subcommand,
            "seed": config.seed,
            "config_hash": config_hash(config),
            "config": config.model_dump(),
            "files": {p.name: file_sha256(p) for p in files},
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path} ({len(files)} files, config hash {manifest['config_hash'][:12]})")
        return path

    def output_hashes(self, out_dir: Path, suffixes: Optional[Sequence[str]] = (".csv", ".dat")) -> Dict[str, str]:
        out_dir = Path(out_dir)
        return {p.name: file_sha256(p) for p in sorted(out_dir.iterdir())
                if p.is_file() and (suffixes is None or p.suffix in suffixes)}


artifact_service = ArtifactService()
