"""Configuration-driven runner: ``run``, ``reproduce-tables``, ``oracle-check``
and ``analyze`` subcommands.

Exit codes: 0 success, 1 failed check, 2 invalid config, 3 solver failure.
"""
from __future__ import annotations

import os

# single-threaded BLAS keeps reductions, hence CSV bytes, identical across machines
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import analysis, fields, galerkin, taylor
from .coefficients import CoefficientMap, read_norm_csv
from .fem1d import NotPositiveDefiniteError, load_constant, load_from_energy_pair, uniform_space
from .multiindex import MultiIndex
from .tables import REFERENCE_I, reference_for, table_runs

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
FAMILIES = ("inclusions", "fourier", "haar", "constant", "half_inclusions")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class SolverFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


def _num(block: dict, key: str, path: str, kind=float, lo=None, hi=None, required=True, default=None):
    if key not in block:
        if required:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if kind is int and (not float(v).is_integer()):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {v!r}")
    v = kind(v)
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{path}.{key}", f"{v!r} outside [{lo}, {hi}]")
    return v


@dataclass
class SolverConfig:
    mode: str
    N_target: int = 2**13
    bulk: float | None = None
    dorfler: float | None = None
    cg_tol: float | None = None

    @classmethod
    def from_dict(cls, d) -> "SolverConfig":
        if not isinstance(d, dict):
            raise ConfigError("solver", "expected a mapping")
        mode = d.get("mode")
        if mode not in ("taylor", "legendre"):
            raise ConfigError("solver.mode", f"expected 'taylor' or 'legendre', got {mode!r}")
        known = {"mode", "N_target", "bulk", "dorfler", "cg_tol"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"solver.{sorted(extra)[0]}", "unknown key")
        n = _num(d, "N_target", "solver", int, lo=1, required=False, default=2**13)
        if mode == "taylor":
            if "dorfler" in d or "cg_tol" in d:
                raise ConfigError("solver", "dorfler/cg_tol only apply to mode=legendre")
            return cls(mode, n, bulk=_num(d, "bulk", "solver", lo=1e-12, hi=1.0, required=False, default=0.2))
        if "bulk" in d:
            raise ConfigError("solver.bulk", "only applies to mode=taylor")
        return cls(
            mode,
            n,
            dorfler=_num(d, "dorfler", "solver", lo=1e-12, hi=1.0, required=False, default=0.5),
            cg_tol=_num(d, "cg_tol", "solver", lo=1e-16, hi=1.0, required=False, default=1e-10),
        )

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class RunConfig:
    family: dict
    solver: SolverConfig
    mesh: dict = field(default_factory=lambda: {"elements": "auto"})
    load: dict = field(default_factory=lambda: {"constant": 1.0})
    output_dir: str | None = None
    name: str | None = None

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a mapping")
        extra = set(d) - {"family", "solver", "mesh", "load", "output_dir", "name"}
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown key")
        if "family" not in d:
            raise ConfigError("family", "missing")
        if "solver" not in d:
            raise ConfigError("solver", "missing")
        fam = _validate_family(d["family"])
        solver = SolverConfig.from_dict(d["solver"])
        mesh = d.get("mesh", {"elements": "auto"})
        if not isinstance(mesh, dict) or set(mesh) - {"elements"}:
            raise ConfigError("mesh", "expected {elements: auto | integer}")
        el = mesh.get("elements", "auto")
        if el != "auto":
            _num(mesh, "elements", "mesh", int, lo=1)
        load = d.get("load", {"constant": 1.0})
        _validate_load(load)
        out = d.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_dir", "expected a string")
        return cls(fam, solver, {"elements": el}, load, out, d.get("name"))

    def to_dict(self) -> dict:
        d = {"family": self.family, "solver": self.solver.to_dict(), "mesh": self.mesh, "load": self.load}
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        if self.name is not None:
            d["name"] = self.name
        return d

    def digest(self) -> str:
        """sha256 of the canonical JSON of everything except ``output_dir``."""
        d = self.to_dict()
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _validate_family(f) -> dict:
    if not isinstance(f, dict):
        raise ConfigError("family", "expected a mapping")
    fam = f.get("family")
    if fam not in FAMILIES:
        raise ConfigError("family.family", f"expected one of {FAMILIES}, got {fam!r}")
    if fam == "constant":
        b = f.get("b")
        if not isinstance(b, list) or not b:
            raise ConfigError("family.b", "expected a nonempty list")
        return {"family": fam, "b": [float(v) for v in b]}
    if fam == "half_inclusions":
        for key in ("edges", "b"):
            if not isinstance(f.get(key), list):
                raise ConfigError(f"family.{key}", "expected a list")
        return {"family": fam, "edges": [float(v) for v in f["edges"]], "b": [float(v) for v in f["b"]]}
    par = "alpha" if fam == "haar" else "beta"
    out = {"family": fam}
    out[par] = _num(f, par, "family", lo=1e-12)
    if fam == "fourier" and out[par] <= 1:
        raise ConfigError("family.beta", "Fourier sines need beta > 1")
    theta = _num(f, "theta", "family")
    if not 0 < theta < 1:
        raise ConfigError("family.theta", f"expected 0 < theta < 1, got {theta!r}")
    out["theta"] = theta
    if fam == "haar":
        out["L_max"] = _num(f, "L_max", "family", int, lo=0, required=False, default=7)
    else:
        out["J"] = _num(f, "J", "family", int, lo=1, required=False, default=256)
    extra = set(f) - set(out)
    if extra:
        raise ConfigError(f"family.{sorted(extra)[0]}", "unknown key")
    return out


def _validate_load(load) -> None:
    if not isinstance(load, dict) or len(load) != 1:
        raise ConfigError("load", "expected exactly one of {constant: c} or {energy_pair: {knots, values}}")
    if "constant" in load:
        _num(load, "constant", "load")
    elif "energy_pair" in load:
        ep = load["energy_pair"]
        if not isinstance(ep, dict) or not isinstance(ep.get("knots"), list) or not isinstance(ep.get("values"), list):
            raise ConfigError("load.energy_pair", "expected {knots: [...], values: [...]}")
        if len(ep["knots"]) != len(ep["values"]) or len(ep["knots"]) < 2:
            raise ConfigError("load.energy_pair", "knots and values need equal length >= 2")
        if ep["knots"][0] != 0 or ep["knots"][-1] != 1 or ep["values"][0] != 0 or ep["values"][-1] != 0:
            raise ConfigError("load.energy_pair", "the hat profile must vanish at x=0 and x=1")
    else:
        raise ConfigError(f"load.{next(iter(load))}", "unknown load kind")


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    try:
        if str(path).endswith(".json"):
            data = json.loads(text)
        else:
            import yaml

            data = yaml.safe_load(text)
    except Exception as exc:  # parse errors are validation errors
        raise ConfigError("<file>", f"cannot parse: {exc}") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------
# pipeline


@dataclass
class RunResult:
    config: RunConfig
    cmap: CoefficientMap
    seq: analysis.RearrangedSequence
    rates: list
    rates_reason: str | None
    diagnostics: dict
    mesh: dict
    wall_time: float


def build_problem(cfg: RunConfig):
    try:
        fld = fields.family_from_config(cfg.family)
    except fields.EllipticityError as exc:
        raise ConfigError("family", str(exc)) from exc
    el = cfg.mesh["elements"]
    extra = cfg.load["energy_pair"]["knots"] if "energy_pair" in cfg.load else ()
    space = fields.default_space(fld, None if el == "auto" else int(el), extra=extra)
    disc = fields.DiscreteField(fld, space)
    if "constant" in cfg.load:
        load = load_constant(space, float(cfg.load["constant"]))
    else:
        ep = cfg.load["energy_pair"]
        load = load_from_energy_pair(space, ep["knots"], ep["values"])
    return fld, space, disc, load


def _family_weights(fld):
    fam = fld.family.get("family")
    try:
        if fam == "inclusions":
            return "finite_overlap_M1", fields.weights_finite_overlap(fld, M=1)
        if fam == "fourier":
            return f"finite_overlap_M{fld.J}", fields.weights_finite_overlap(fld, M=fld.J)
        if fam == "haar":
            beta = fld.family["alpha"] / 2
            return f"wavelet_beta{beta:g}", fields.weights_wavelet(fld, beta)
    except fields.EllipticityError:
        return None, None
    return None, None


def diagnostics_for(cfg: RunConfig, fld, disc, cmap, seq, rates) -> dict:
    use_a = cmap.kind == "legendre"
    f_dual = disc.dual_norm(cmap.load)
    lo, hi = fields.weighted_ellipticity_bounds(fld)
    weighted = []
    candidates = [("unit", np.ones(fld.J))]
    name, ws = _family_weights(fld)
    if ws is not None:
        candidates.append((name, ws.rho))
    for label, rho in candidates:
        delta = fields.compute_delta(fld, rho) if fld.J else 0.0
        if delta >= 1:
            continue
        ps, bound = analysis.weighted_l2_diagnostic(cmap, rho, use_a, delta=delta, f_dual=f_dual)
        weighted.append({"weights": label, "delta": delta, "partial_sum": ps, "bound": bound, "holds": ps <= bound})
    tails = [analysis.n_term_tail(seq, 2**i) for i in range(0, 12) if 2**i <= len(seq)]
    out = {
        "mode": cmap.kind,
        "n_coefficients": len(cmap),
        "n_members": len(cmap.members),
        "theta_upper": hi,
        "theta_lower": lo,
        "rates": rates,
        "weighted_l2": weighted,
        "n_term_tail": tails,
        "computed_prefix_only": True,
    }
    fam = fld.family.get("family")
    if fam in analysis.REFERENCE_RATES:
        out["reference_inverse_p"] = analysis.reference_rate(fld.family)
        par = fld.family.get("beta", fld.family.get("alpha"))
        ref = reference_for(fam, par, fld.family["theta"], cmap.kind)
        if ref is not None:
            out["reference_s"] = dict(zip(map(str, REFERENCE_I), ref))
    return out


def run_pipeline(cfg: RunConfig) -> RunResult:
    t0 = time.perf_counter()
    fld, space, disc, load = build_problem(cfg)
    s = cfg.solver
    try:
        if s.mode == "taylor":
            cmap, _ = taylor.greedy_expand(disc, load, s.N_target, bulk=s.bulk)
        else:
            cmap, _ = galerkin.adaptive_solve(disc, load, s.N_target, dorfler=s.dorfler, tol=s.cg_tol)
    except (galerkin.ConvergenceError, NotPositiveDefiniteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise SolverFailure(f"{s.mode} solve failed: {exc}") from exc
    seq = analysis.rearrange(cmap)
    rates = analysis.rate_table(seq)
    reason = None
    if not rates:
        reason = f"only {len(seq)} coefficient(s); s_1 needs at least 2"
    diag = diagnostics_for(cfg, fld, disc, cmap, seq, rates)
    if reason:
        diag["rates_reason"] = reason
    mesh = {"elements": space.n_elements, "dofs": space.dof_count, "h_min": float(space.h.min()), "h_max": float(space.h.max())}
    return RunResult(cfg, cmap, seq, rates, reason, diag, mesh, time.perf_counter() - t0)


def rates_csv(rates: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "s_i"])
    for r in rates:
        w.writerow([r["i"], repr(r["s_i"])])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, MultiIndex):
        return o.to_dict()
    raise TypeError(type(o))


def versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "affinepoly": pkg}


def write_outputs(res: RunResult, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "rearrangement.csv": res.seq.to_csv(),
        "rates.csv": rates_csv(res.rates),
        "coefficients.csv": res.cmap.to_csv(),
        "diagnostics.json": _json(res.diagnostics),
    }
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "config": res.config.to_dict(),
        "config_sha256": res.config.digest(),
        "mesh": res.mesh,
        "counts": {"coefficients": len(res.cmap), "members": len(res.cmap.members)},
        "versions": versions(),
        "wall_time_s": round(res.wall_time, 3),
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(_json(manifest))
    return manifest


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir or "run_output"
    res = run_pipeline(cfg)
    write_outputs(res, out)
    if res.rates_reason:
        print(f"rates: none ({res.rates_reason})")
    for r in res.rates:
        tag = " (pre-asymptotic)" if r["pre_asymptotic"] else ""
        print(f"s_{r['i']:<2d} = {r['s_i']:.3f}{tag}")
    print(f"wrote {out}")
    return EXIT_OK


def reproduce_tables(out_dir, select=None, log=print) -> tuple[list[dict], list[str]]:
    """Run every table configuration; returns comparison rows and failures."""
    out = Path(out_dir)
    rows, failures = [], []
    for spec in table_runs(select):
        name = spec.pop("name")
        cfg = RunConfig.from_dict({**spec, "name": name})
        try:
            res = run_pipeline(cfg)
        except (SolverFailure, ConfigError) as exc:
            failures.append(f"{name}: {exc}")
            log(f"[fail] {name}: {exc}")
            continue
        write_outputs(res, out / name)
        fam = cfg.family
        par = fam.get("beta", fam.get("alpha"))
        ref = reference_for(fam["family"], par, fam["theta"], cfg.solver.mode)
        ours = {r["i"]: r["s_i"] for r in res.rates}
        for i, r in zip(REFERENCE_I, ref):
            s = ours.get(i, math.nan)
            rows.append(
                {
                    "run": name,
                    "family": fam["family"],
                    "param": par,
                    "theta": fam["theta"],
                    "mode": cfg.solver.mode,
                    "i": i,
                    "s_i": s,
                    "reference": r,
                    "deviation": s - r,
                    "inverse_p": analysis.reference_rate(fam),
                }
            )
        log(f"[done] {name}: " + " ".join(f"{ours.get(i, math.nan):.3f}" for i in REFERENCE_I) + f"  ({res.wall_time:.1f} s)")
    write_table_report(rows, out)
    return rows, failures


def write_table_report(rows: list[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    cols = ["run", "family", "param", "theta", "mode", "i", "s_i", "reference", "deviation", "inverse_p"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    (out / "tables.csv").write_text(buf.getvalue())
    lines = ["run | " + " | ".join(f"s_{i} ours/ref" for i in REFERENCE_I) + " | 1/p", "--- |" + " --- |" * (len(REFERENCE_I) + 1)]
    for run in dict.fromkeys(r["run"] for r in rows):
        rr = [r for r in rows if r["run"] == run]
        cells = [f"{r['s_i']:.3f}/{r['reference']:.3f} ({r['deviation']:+.3f})" for r in rr]
        lines.append(f"{run} | " + " | ".join(cells) + f" | {rr[0]['inverse_p']:g}")
    (out / "tables.md").write_text("\n".join(lines) + "\n")


def cmd_reproduce(args) -> int:
    sel = None
    if args.only:
        keys = args.only

        def sel(family, par, theta, mode):
            from .tables import run_name

            return any(k in run_name(family, par, theta, mode) for k in keys)

    _, failures = reproduce_tables(args.out, sel)
    print(f"report: {Path(args.out) / 'tables.md'}")
    if failures:
        print(f"{len(failures)} run(s) failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def oracle_check() -> list[dict]:
    """Closed-form Taylor, quadrature Legendre and no-psi degenerate checks."""
    from .multiindex import MultiIndex as MI

    report = []
    # constant field, closed form
    b = tuple(0.5 * 2.0**-j for j in range(1, 5))
    fld = fields.make_constant(b)
    space = uniform_space(16)
    disc = fields.DiscreteField(fld, space)
    load = load_constant(space, 1.0)
    cm = taylor.layerwise(disc, load, 6)
    t0 = cm[MI.zero()]
    dev = max(
        float(disc.v_norms(cm[n] - taylor.closed_form_constant(t0, b, n))[0] / disc.v_norms(taylor.closed_form_constant(t0, b, n))[0])
        for n in cm.keys
    )
    report.append({"check": "taylor_constant_field", "max_rel_dev": dev, "tol": 1e-9, "pass": dev <= 1e-9})
    # single variable Legendre vs tensor quadrature
    fld = fields.make_constant((0.5,))
    disc = fields.DiscreteField(fld, space)
    cmL, _ = galerkin.adaptive_solve(disc, load, 41, tol=1e-13, max_degree=40)
    ks = [MI.unit(1, k) if k else MI.zero() for k in range(11)]
    q = galerkin.quadrature_coefficients(disc, load, ks, 60)
    dev = max(float(disc.v_norms(cmL[n] - q[n])[0] / disc.v_norms(q[n])[0]) for n in ks)
    report.append({"check": "legendre_quadrature_J1", "max_rel_dev": dev, "tol": 1e-8, "pass": dev <= 1e-8})
    # no psi: all higher coefficients vanish
    fld = fields.make_constant((0.0, 0.0))
    disc = fields.DiscreteField(fld, space)
    cm0 = taylor.layerwise(disc, load, 3)
    top = max(cm0.v_norm(n) for n in cm0.keys if n != MI.zero())
    report.append({"check": "no_psi_degenerate", "max_abs": top, "tol": 1e-12, "pass": top <= 1e-12})
    return report


def cmd_oracle(args) -> int:
    report = oracle_check()
    for r in report:
        val = r.get("max_rel_dev", r.get("max_abs"))
        print(f"[{'pass' if r['pass'] else 'FAIL'}] {r['check']}: {val:.3e} (tol {r['tol']:.0e})")
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_FAIL


def cmd_analyze(args) -> int:
    try:
        pairs = read_norm_csv(Path(args.csv).read_text())
    except (KeyError, ValueError) as exc:
        raise ConfigError(args.csv, f"not a coefficient CSV: {exc}") from exc
    if not pairs:
        raise ConfigError(args.csv, "no coefficients")
    seq = analysis.rearrange(pairs)
    rates = analysis.rate_table(seq)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rearrangement.csv").write_text(seq.to_csv())
        (out / "rates.csv").write_text(rates_csv(rates))
    if not rates:
        print("rates: none (fewer than 2 coefficients)")
    for r in rates:
        tag = " (pre-asymptotic)" if r["pre_asymptotic"] else ""
        print(f"s_{r['i']:<2d} = {r['s_i']:.3f}{tag}")
    tail = analysis.n_term_tail(seq, 0)
    print(f"l2 norm of computed sequence: {tail['tail']:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affinepoly", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.set_defaults(func=cmd_run)
    t = sub.add_parser("reproduce-tables", help="run all decay-table configurations")
    t.add_argument("--out", default="tables_output")
    t.add_argument("--only", nargs="*", help="substrings selecting run names")
    t.set_defaults(func=cmd_reproduce)
    o = sub.add_parser("oracle-check", help="closed-form and quadrature oracles")
    o.set_defaults(func=cmd_oracle)
    a = sub.add_parser("analyze", help="rates from a coefficient CSV")
    a.add_argument("csv")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
