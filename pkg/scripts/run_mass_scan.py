#!/usr/bin/env python3
"""Run the mass-scan experiment with configs/mass_scan.toml (extra arguments are passed on,
e.g. --override output_dir=\"runs/tmp\")."""
import sys
from pathlib import Path

from sharpdrop.experiments import main

if __name__ == "__main__":
    cfg = Path(__file__).resolve().parents[1] / "configs" / "mass_scan.toml"
    sys.exit(main(["mass-scan", "--config", str(cfg), *sys.argv[1:]]))
