"""Reproduce the decay-rate tables, optionally a subset by run-name substring.

    python scripts/run_tables.py --out tables_output
    python scripts/run_tables.py --out quick --only haar_alpha0.5 fourier_beta2_theta2m1
"""
import argparse
import sys

from affinepoly.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="tables_output")
    p.add_argument("--only", nargs="*", default=[])
    a = p.parse_args()
    argv = ["reproduce-tables", "--out", a.out] + (["--only", *a.only] if a.only else [])
    sys.exit(main(argv))
