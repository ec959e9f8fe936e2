#!/usr/bin/env python3
"""Run the mu0-estimate experiment with configs/mu0_estimate.toml (extra arguments are passed on,
e.g. --override output_dir=\"runs/tmp\")."""
import sys
from pathlib import Path

from sharpdrop.experiments import main

if __name__ == "__main__":
    cfg = Path(__file__).resolve().parents[1] / "configs" / "mu0_estimate.toml"
    sys.exit(main(["mu0-estimate", "--config", str(cfg), *sys.argv[1:]]))
