#!/usr/bin/env python3
"""Run the recovery experiment with configs/recovery.toml (extra arguments are passed on,
e.g. --override output_dir=\"runs/tmp\")."""
import sys
from pathlib import Path

from sharpdrop.experiments import main

if __name__ == "__main__":
    cfg = Path(__file__).resolve().parents[1] / "configs" / "recovery.toml"
    sys.exit(main(["recovery", "--config", str(cfg), *sys.argv[1:]]))
