#!/usr/bin/env python3
"""
slln-lab - Development Runner
Checks the checkout, installs dependencies and runs the acceptance configs.
"""

import subprocess
import sys
from pathlib import Path

CONFIGS = [
    ("conjugate", "configs/conjugate_logpow.toml"),
    ("phi", "configs/phi_two_state.toml"),
    ("moment", "configs/moment_exp.toml"),
    ("counterexample", "configs/counterexample.toml"),
    ("baum-katz", "configs/baum_katz_iid_normal.toml"),
]


def check_environment():
    """Check if all necessary files exist."""
    required_files = [
        "app/main.py",
        "requirements.txt",
    ] + [config for _, config in CONFIGS]

    missing_files = [file for file in required_files if not Path(file).exists()]
    if missing_files:
        print("Missing required files:")
        for file in missing_files:
            print(f"  - {file}")
        return False

    print("All required files found")
    return True


def install_dependencies():
    """Install dependencies if needed."""
    print("Installing dependencies...")
    try:
        subprocess.run([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"], check=True)
        return True
    except subprocess.CalledProcessError:
        print("Failed to install dependencies")
        return False


def run_configs(out_root: str = "results"):
    """Run every shipped config; stop at the first nonzero exit."""
    for subcommand, config in CONFIGS:
        out = f"{out_root}/{Path(config).stem}"
        print(f"-> {subcommand} {config} (out: {out})")
        code = subprocess.run(
            [sys.executable, "-m", "app.main", subcommand, "--config", config, "--out", out]
        ).returncode
        if code != 0:
            print(f"{subcommand} exited with {code}")
            return False
    return True


def main():
    """Main function."""
    print("slln-lab - Development Runner")
    print("=" * 50)

    if not check_environment():
        sys.exit(1)

    if "--no-install" not in sys.argv and not install_dependencies():
        sys.exit(1)

    if not run_configs():
        sys.exit(1)


if __name__ == "__main__":
    main()
