"""Run specifications and reference rates s_6..s_11 for the decay
tables (disjoint inclusions, Fourier sines, Haar wavelets, theta sweeps)."""
from __future__ import annotations

REFERENCE_I = (6, 7, 8, 9, 10, 11)

# (table, family, parameter, theta, mode) -> s_6..s_11
REFERENCE = {
    ("inclusions", 2.0, 0.5, "taylor"): (2.563, 2.708, 2.481, 2.574, 2.439, 2.477),
    ("inclusions", 1.0, 0.5, "taylor"): (1.730, 1.731, 1.726, 1.706, 1.650, 1.643),
    ("inclusions", 0.5, 0.5, "taylor"): (1.225, 1.274, 1.211, 1.235, 1.196, 1.175),
    ("inclusions", 2.0, 0.5, "legendre"): (2.476, 2.578, 2.601, 2.514, 2.543, 2.507),
    ("inclusions", 1.0, 0.5, "legendre"): (1.789, 1.786, 1.701, 1.661, 1.660, 1.642),
    ("inclusions", 0.5, 0.5, "legendre"): (1.302, 1.235, 1.212, 1.200, 1.169, 1.160),
    ("fourier", 2.0, 0.5, "taylor"): (1.452, 1.619, 1.495, 1.515, 1.533, 1.515),
    ("fourier", 1.5, 0.5, "taylor"): (1.165, 1.320, 1.278, 1.257, 1.270, 1.258),
    ("fourier", 1.25, 0.5, "taylor"): (1.250, 1.092, 1.147, 1.141, 1.143, 1.143),
    ("fourier", 2.0, 0.5, "legendre"): (1.593, 1.682, 1.597, 1.632, 1.637, 1.639),
    ("fourier", 1.5, 0.5, "legendre"): (1.294, 1.353, 1.337, 1.338, 1.341, 1.327),
    ("fourier", 1.25, 0.5, "legendre"): (1.250, 1.154, 1.192, 1.187, 1.173, 1.191),
    ("fourier", 2.0, 2**-3, "legendre"): (1.876, 1.767, 1.822, 1.813, 1.813, 1.814),
    ("fourier", 2.0, 2**-5, "legendre"): (2.000, 1.872, 1.908, 1.905, 1.898, 1.921),
    ("haar", 2.0, 0.5, "taylor"): (1.450, 1.569, 1.794, 1.633, 1.799, 1.866),
    ("haar", 1.0, 0.5, "taylor"): (1.301, 0.993, 1.122, 1.186, 1.225, 1.266),
    ("haar", 0.5, 0.5, "taylor"): (0.927, 0.878, 0.803, 0.866, 0.872, 0.903),
    ("haar", 2.0, 0.5, "legendre"): (1.853, 1.779, 1.874, 1.913, 1.909, 2.037),
    ("haar", 1.0, 0.5, "legendre"): (1.165, 1.339, 1.275, 1.330, 1.247, 1.268),
    ("haar", 0.5, 0.5, "legendre"): (0.947, 0.939, 0.953, 0.949, 0.961, 0.958),
    ("haar", 2.0, 2**-3, "legendre"): (2.388, 2.082, 2.226, 2.056, 2.238, 2.196),
    ("haar", 2.0, 2**-5, "legendre"): (2.123, 2.175, 2.347, 2.410, 2.321, 2.396),
}

# truncation needed so that s_11 is not distorted by missing coordinates;
# small theta makes the singletons t_{e_j} dominate, so sweeps need more of them
TRUNCATION = {
    ("inclusions", 2.0, 0.5): {"J": 1024},
    ("inclusions", 1.0, 0.5): {"J": 2048},
    ("inclusions", 0.5, 0.5): {"J": 2048},
    ("fourier", 2.0, 0.5): {"J": 1024},
    ("fourier", 2.0, 2**-3): {"J": 2048},
    ("fourier", 2.0, 2**-5): {"J": 2048},
    ("fourier", 1.5, 0.5): {"J": 1024},
    ("fourier", 1.25, 0.5): {"J": 2048},
    ("haar", 2.0, 0.5): {"L_max": 9},
    ("haar", 2.0, 2**-3): {"L_max": 9},
    ("haar", 2.0, 2**-5): {"L_max": 10},
    ("haar", 1.0, 0.5): {"L_max": 9},
    ("haar", 0.5, 0.5): {"L_max": 10},
}

PARAM = {"inclusions": "beta", "fourier": "beta", "haar": "alpha"}


def family_block(family: str, par: float, theta: float) -> dict:
    block = {"family": family, PARAM[family]: par, "theta": theta}
    block.update(TRUNCATION[(family, par, theta)])
    return block


def run_name(family: str, par: float, theta: float, mode: str) -> str:
    t = {0.5: "1", 2**-3: "3", 2**-5: "5"}[theta]
    return f"{family}_{PARAM[family]}{par:g}_theta2m{t}_{mode}"


def table_runs(select=None) -> list[dict]:
    """Config dicts for every reference entry, in a fixed order."""
    runs = []
    for (family, par, theta, mode) in REFERENCE:
        name = run_name(family, par, theta, mode)
        if select is not None and not select(family, par, theta, mode):
            continue
        solver = {"mode": mode, "N_target": 2**13}
        solver.update({"bulk": 0.2} if mode == "taylor" else {"dorfler": 0.5, "cg_tol": 1e-10})
        runs.append(
            {
                "name": name,
                "family": family_block(family, par, theta),
                "solver": solver,
                "mesh": {"elements": "auto"},
                "load": {"constant": 1.0},
            }
        )
    return runs


def reference_for(family: str, par: float, theta: float, mode: str):
    return REFERENCE.get((family, float(par), float(theta), mode))
