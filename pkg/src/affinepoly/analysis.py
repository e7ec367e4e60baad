"""Decreasing rearrangements, decay-rate estimates, weighted summability
diagnostics and n-term tails of computed coefficient sequences."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .multiindex import MultiIndex, legendre_weight, monomial_weight

PRE_ASYMPTOTIC = 5


@dataclass
class RearrangedSequence:
    values: np.ndarray
    origin: list = field(default_factory=list)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, n: int) -> float:
        """1-based ``t*_n``."""
        if n < 1:
            raise IndexError("ranks start at 1")
        return float(self.values[n - 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "norm", "index_json"])
        for r, (v, nu) in enumerate(zip(self.values, self.origin), start=1):
            w.writerow([r, repr(float(v)), nu.to_json() if nu is not None else ""])
        return buf.getvalue()


def rearrange(items) -> RearrangedSequence:
    """Sort norms decreasingly; ties keep canonical index order.

    ``items`` is a ``CoefficientMap``, ``(nu, norm)`` pairs, or bare norms.
    """
    if hasattr(items, "norm_items"):
        pairs = items.norm_items()
    else:
        pairs = list(items)
        if pairs and not isinstance(pairs[0], tuple):
            pairs = [(None, float(v)) for v in pairs]
        elif pairs:
            pairs.sort(key=lambda t: t[0].sort_key())
    if not pairs:
        raise ValueError("nothing to rearrange")
    v = np.array([p[1] for p in pairs], dtype=float)
    order = np.argsort(-v, kind="stable")
    return RearrangedSequence(v[order], [pairs[k][0] for k in order])


def rate_estimates(seq, i_max: int = 11) -> list[float]:
    """``s_i = log2 t*_{2^(i-1)} - log2 t*_{2^i}`` for ``i = 1..i_max``."""
    v = seq.values if isinstance(seq, RearrangedSequence) else np.asarray(seq, dtype=float)
    if len(v) < 2**i_max:
        raise ValueError(f"need {2**i_max} entries for s_{i_max}, have {len(v)}")
    lg = np.log2(v[[2**i - 1 for i in range(i_max + 1)]])
    return [float(lg[i - 1] - lg[i]) for i in range(1, i_max + 1)]


def rate_table(seq, i_max: int = 11) -> list[dict]:
    """Rows ``{i, s_i, pre_asymptotic}`` for every ``i`` the sequence supports."""
    n = min(i_max, int(math.floor(math.log2(len(seq)))) if len(seq) else 0)
    if n < 1:
        return []
    return [{"i": i, "s_i": s, "pre_asymptotic": i <= PRE_ASYMPTOTIC} for i, s in enumerate(rate_estimates(seq, n), 1)]


def _weights(nus: Sequence[MultiIndex], rho, use_a_nu: bool) -> np.ndarray:
    w = np.array([monomial_weight(rho, nu) for nu in nus])
    if use_a_nu:
        w /= np.array([legendre_weight(nu) for nu in nus])
    return w


def taylor_bound_constant(delta: float, abar_max: float, abar_min: float, f_dual: float) -> float:
    if delta >= 1:
        raise ValueError(f"delta = {delta!r} >= 1")
    return (2 - delta) * abar_max / ((2 - 2 * delta) * abar_min**3) * f_dual**2


def legendre_bound_constant(delta: float, abar_max: float, abar_min: float, f_dual: float) -> float:
    if delta >= 1:
        raise ValueError(f"delta = {delta!r} >= 1")
    return (2 - delta) * (1 + delta) * abar_max**2 * f_dual**2 / (2 * (1 - delta) ** 4 * abar_min**4)


def weighted_partial_sums(cmap, rho, use_a_nu: bool) -> tuple[list, np.ndarray]:
    """Running sums of ``(w_nu ||v_nu||_V)^2`` in canonical order."""
    items = cmap.norm_items()
    nus = [n for n, _ in items]
    v = np.array([x for _, x in items])
    return nus, np.cumsum((_weights(nus, rho, use_a_nu) * v) ** 2)


def weighted_l2_diagnostic(cmap, rho, use_a_nu: bool | None = None, delta: float | None = None, f_dual: float | None = None) -> tuple[float, float]:
    """``(partial_sum, bound)`` for ``w_nu = rho^nu`` (Taylor) or
    ``a_nu^-1 rho^nu`` (Legendre).

    ``delta`` defaults to the certified upper value from ``compute_delta``,
    ``f_dual`` to the discrete dual norm of the load the map was built with.
    """
    from .fields import compute_delta

    fld = cmap.disc.field
    rho = np.asarray(rho, dtype=float)
    if use_a_nu is None:
        use_a_nu = cmap.kind == "legendre"
    delta = compute_delta(fld, rho) if delta is None else delta
    if f_dual is None:
        f_dual = cmap.disc.dual_norm(cmap.load)
    const = legendre_bound_constant if use_a_nu else taylor_bound_constant
    bound = const(delta, fld.abar_max, fld.abar_min, f_dual)
    _, sums = weighted_partial_sums(cmap, rho, use_a_nu)
    return float(sums[-1]), float(bound)


def n_term_tail(items, n: int) -> dict:
    """l2 tail beyond the ``n`` largest computed norms.

    Only computed coefficients enter, so this is a lower proxy of the best
    n-term error; the returned metadata says so.
    """
    seq = items if isinstance(items, RearrangedSequence) else rearrange(items)
    if n < 0:
        raise ValueError("n must be >= 0")
    tail = seq.values[n:]
    return {"n": n, "tail": float(np.sqrt(np.sum(tail[::-1] ** 2))), "computed_prefix_only": True}


def weight_ordered_tail(cmap, rho, n: int, use_a_nu: bool = True) -> dict:
    """Keep the ``n`` computed indices with the smallest weights ``w_nu``;
    report the discarded l2 mass and ``sup_{nu not kept} w_nu^-1 * (sum w^2 ||u||^2)^(1/2)``."""
    items = cmap.norm_items()
    nus = [nu for nu, _ in items]
    v = np.array([x for _, x in items])
    w = _weights(nus, np.asarray(rho, dtype=float), use_a_nu)
    order = np.argsort(w, kind="stable")
    out = order[n:]
    tail = float(np.sqrt(np.sum(v[out] ** 2)))
    weighted = float(np.sqrt(np.sum((w * v) ** 2)))
    sup_inv = float(np.max(1.0 / w[out])) if len(out) else 0.0
    return {
        "n": n,
        "selected": [nus[k] for k in order[:n]],
        "tail": tail,
        "bound": sup_inv * weighted,
        "sup_inverse_weight": sup_inv,
        "computed_prefix_only": True,
    }


REFERENCE_RATES = {
    "inclusions": lambda p: p["beta"] + 0.5,
    "fourier": lambda p: p["beta"],
    "haar": lambda p: p["alpha"] + 0.5,
}


def reference_rate(family: dict) -> float:
    """Predicted ``1/p_bar`` for a family config."""
    return float(REFERENCE_RATES[family["family"]](family))


def load_norm_pairs(lines: Iterable[tuple[MultiIndex, float]]) -> RearrangedSequence:
    return rearrange(list(lines))
