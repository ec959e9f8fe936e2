#!/usr/bin/env python3
"""Run the split-demo experiment with configs/split_demo.toml (extra arguments are passed on,
e.g. --override output_dir=\"runs/tmp\")."""
import sys
from pathlib import Path

from sharpdrop.experiments import main

if __name__ == "__main__":
    cfg = Path(__file__).resolve().parents[1] / "configs" / "split_demo.toml"
    sys.exit(main(["split-demo", "--config", str(cfg), *sys.argv[1:]]))
