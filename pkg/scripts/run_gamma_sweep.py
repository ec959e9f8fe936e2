#!/usr/bin/env python3
"""Run the gamma-sweep experiment with configs/gamma_sweep.toml (extra arguments are passed on,
e.g. --override output_dir=\"runs/tmp\")."""
import sys
from pathlib import Path

from sharpdrop.experiments import main

if __name__ == "__main__":
    cfg = Path(__file__).resolve().parents[1] / "configs" / "gamma_sweep.toml"
    sys.exit(main(["gamma-sweep", "--config", str(cfg), *sys.argv[1:]]))
