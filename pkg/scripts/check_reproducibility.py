"""Run one config at two worker counts and compare the CSV/plot hashes."""
import argparse
import sys
import tempfile
from pathlib import Path

project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

from app.main import main as lab_main
from services.artifacts import artifact_service

load_dotenv()


def hashes_for(subcommand: str, config: str, workers: int, out: Path) -> dict:
    code = lab_main([subcommand, "--config", config, "--workers", str(workers), "--out", str(out)])
    if code != 0:
        raise SystemExit(f"{subcommand} exited with {code} at {workers} workers")
    return artifact_service.output_hashes(out)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("subcommand")
    parser.add_argument("config")
    parser.add_argument("--workers", type=int, nargs=2, default=(1, 8))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        first = hashes_for(args.subcommand, args.config, args.workers[0], Path(tmp) / "a")
        second = hashes_for(args.subcommand, args.config, args.workers[1], Path(tmp) / "b")

    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    if differing:
        print(f"Outputs differ between {args.workers[0]} and {args.workers[1]} workers: {', '.join(differing)}")
        return 1
    print(f"{len(first)} output files identical at {args.workers[0]} and {args.workers[1]} workers")
    return 0


if __name__ == "__main__":
    sys.exit(main())
