"""Run every config in scripts/configs and print the rate estimates."""
import sys
from pathlib import Path

from affinepoly.cli import main

here = Path(__file__).parent
code = 0
for cfg in sorted((here / "configs").glob("*.yaml")):
    print(f"== {cfg.name}")
    code |= main(["run", str(cfg), "--out", str(Path("examples_output") / cfg.stem)])
sys.exit(code)
