"""Rate estimates s_i against the truncation dimension J for one family.

Shows how a too-small truncation bends s_10, s_11 downward.

    python scripts/convergence_study.py inclusions 1.0 taylor 256 512 1024
"""
import sys

from affinepoly.cli import RunConfig, run_pipeline

family, par, mode = sys.argv[1], float(sys.argv[2]), sys.argv[3]
sizes = [int(s) for s in sys.argv[4:]] or [128, 256, 512]
key = "alpha" if family == "haar" else "beta"
size_key = "L_max" if family == "haar" else "J"
for J in sizes:
    cfg = RunConfig.from_dict(
        {
            "family": {"family": family, key: par, "theta": 0.5, size_key: J},
            "solver": {"mode": mode},
        }
    )
    res = run_pipeline(cfg)
    rates = {r["i"]: r["s_i"] for r in res.rates}
    print(f"{size_key}={J:5d}  " + "  ".join(f"s_{i}={rates.get(i, float('nan')):.3f}" for i in range(6, 12)) + f"  ({res.wall_time:.0f} s)")
