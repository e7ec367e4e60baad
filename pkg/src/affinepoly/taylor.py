"""Taylor coefficients ``t_nu`` of ``y -> u(y)`` by the recursion

    int abar t_nu' v' = - sum_{j in supp nu} int psi_j t_{nu - e_j}' v',

and a bulk-chasing greedy exploration over downward-closed sets.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .coefficients import CoefficientMap
from .fields import DiscreteField
from .frontier import Frontier, RowStore
from .multiindex import DownwardClosedSet, MultiIndex

ZERO = MultiIndex.zero()
_CHUNK = 512


class IncompleteLayerError(ValueError):
    pass


def compute_t0(disc: DiscreteField, load: np.ndarray) -> np.ndarray:
    return disc.factor.solve(load)


def new_map(disc: DiscreteField, load: np.ndarray) -> CoefficientMap:
    cmap = CoefficientMap(disc, kind="taylor")
    cmap.load = load
    cmap.insert(ZERO, compute_t0(disc, load))
    cmap.members.add(ZERO)
    return cmap


def coupling_flux(disc: DiscreteField, cmap: CoefficientMap, pairs, n_rows: int, coeffs=None) -> np.ndarray:
    """Weighted flux ``sum psi_j (coef * parent')`` at quadrature points.

    ``pairs`` is a list of ``(row, j, parent_index)``; returns an
    ``(n_rows, nq)`` array ``F`` such that ``G^T F[row]`` is the load.
    """
    F = np.zeros((n_rows, disc.nq))
    if not pairs:
        return F
    parents = sorted({p for _, _, p in pairs}, key=cmap.index.__getitem__)
    prow = {p: i for i, p in enumerate(parents)}
    grads = disc.grads(cmap.vectors[cmap.rows(parents)])
    by_j = defaultdict(list)
    for k, (r, j, p) in enumerate(pairs):
        by_j[j].append((r, prow[p], 1.0 if coeffs is None else coeffs[k]))
    for j in sorted(by_j):
        rr = np.array([t[0] for t in by_j[j]])
        pp = np.array([t[1] for t in by_j[j]])
        cc = np.array([t[2] for t in by_j[j]])
        idx, w = disc.psi_idx[j - 1], disc.psi_w[j - 1]
        if isinstance(idx, slice):
            F[rr] += cc[:, None] * grads[pp] * w[None, :]
        else:
            F[rr[:, None], idx[None, :]] += cc[:, None] * grads[pp[:, None], idx[None, :]] * w[None, :]
    return F


def taylor_batch(cmap: CoefficientMap, nus: list[MultiIndex]) -> np.ndarray:
    """Compute and insert ``t_nu`` for all ``nus`` (parents must be present)."""
    disc = cmap.disc
    out = np.zeros((len(nus), disc.space.dof_count))
    for start in range(0, len(nus), _CHUNK):
        chunk = nus[start : start + _CHUNK]
        pairs = []
        for r, nu in enumerate(chunk):
            if nu == ZERO:
                raise ValueError("t_0 comes from compute_t0, not the recursion")
            for j, parent in nu.backward_neighbors():
                if parent not in cmap:
                    raise KeyError(f"missing backward neighbor {parent!r} of {nu!r}")
                pairs.append((r, j, parent))
        F = coupling_flux(disc, cmap, pairs, len(chunk))
        X = disc.factor.solve(-disc.from_flux(F))
        cmap.insert_many(chunk, X)
        out[start : start + len(chunk)] = X
    return out


def taylor_step(cmap: CoefficientMap, nu: MultiIndex) -> np.ndarray:
    return taylor_batch(cmap, [nu])[0]


def margin_bounds(disc: DiscreteField, bounds: RowStore, nus: list[MultiIndex], weights=None) -> np.ndarray:
    """Upper bounds ``sum_{j in supp mu} w * B[mu - e_j, j]`` for margin indices.

    ``bounds`` holds ``DiscreteField.coupling_bounds`` rows of the members;
    ``weights(j, mu)`` scales each term (Legendre couplings), default 1.
    """
    cand, rows, cols, wts = [], [], [], []
    for c, mu in enumerate(nus):
        for j, parent in mu.backward_neighbors():
            cand.append(c)
            rows.append(bounds.row[parent])
            cols.append(j - 1)
            if weights is not None:
                wts.append(weights(j, mu))
    out = np.zeros(len(nus))
    if cand:
        vals = bounds.data[np.array(rows), np.array(cols)]
        if weights is not None:
            vals = vals * np.array(wts)
        np.add.at(out, np.array(cand), vals)
    return out


def greedy_expand(
    disc: DiscreteField,
    load: np.ndarray,
    N_target: int,
    bulk: float = 0.2,
    selection: str = "bounded",
    final_margin: bool = False,
) -> tuple[CoefficientMap, DownwardClosedSet]:
    """Greedy bulk-chasing Taylor exploration over downward-closed sets.

    ``selection="margin"``: every sweep computes the whole reduced margin and
    moves its ``ceil(bulk * |margin|)`` largest coefficients into the set.

    ``selection="bounded"``: every sweep moves the ``ceil(bulk * |set|)``
    largest margin coefficients. Margin entries start with the a-priori bound
    ``||t_mu||_abar <= sum_j ||psi_j t_{mu-e_j}' / sqrt(abar)||`` and are only
    computed once the bound reaches the current top ``K``; the chosen indices
    are the same as with the full margin computed, at a fraction of the solves.

    Moves never overshoot ``N_target``; ties use canonical order. With
    ``final_margin`` the whole margin of the final set is computed too.
    """
    if N_target < 1:
        raise ValueError("N_target must be >= 1")
    if not 0 < bulk <= 1:
        raise ValueError("bulk must lie in (0, 1]")
    if selection not in ("bounded", "margin"):
        raise ValueError(f"unknown selection {selection!r}")
    cmap = new_map(disc, load)
    lam = DownwardClosedSet(disc.field.J)
    scale = (1 + 1e-10) / math.sqrt(disc.field.abar_min)
    bounds = RowStore(disc.field.J)
    bounds.add([ZERO], disc.coupling_bounds(cmap[ZERO]))
    front = Frontier()
    first = sorted(lam.reduced_margin, key=MultiIndex.sort_key)
    front.add(first, scale * margin_bounds(disc, bounds, first))

    def evaluate(nus):
        if nus:
            taylor_batch(cmap, nus)
            front.set_exact(nus, cmap.v_norms(nus))

    while True:
        if selection == "margin":
            evaluate(front.pending())
        if len(lam) >= N_target or len(front) == 0:
            break
        if selection == "margin":
            K = math.ceil(bulk * len(front))
        else:
            K = math.ceil(bulk * len(lam))
        K = min(K, N_target - len(lam))
        while True:
            chosen = front.top(K)
            todo = [m for m in chosen if m not in cmap]
            if not todo:
                break
            evaluate(todo)
        new = []
        for m in chosen:
            new.extend(lam.add(m))
            cmap.members.add(m)
        front.remove(chosen)
        bounds.add(chosen, disc.coupling_bounds(cmap.vectors[cmap.rows(chosen)]))
        new.sort(key=MultiIndex.sort_key)
        front.add(new, scale * margin_bounds(disc, bounds, new))
    if final_margin:
        evaluate(front.pending())
    cmap.frontier_size = len(front)
    return cmap, lam


def layerwise(disc: DiscreteField, load: np.ndarray, max_order: int) -> CoefficientMap:
    """All ``t_nu`` with ``|nu| <= max_order`` over the field's ``J`` coordinates."""
    cmap = new_map(disc, load)
    layer = [ZERO]
    for _ in range(max_order):
        nxt = set()
        for nu in layer:
            first = nu.max_coordinate or 1
            for j in range(first, disc.field.J + 1):
                nxt.add(nu.add(j))
        layer = sorted(nxt, key=MultiIndex.sort_key)
        taylor_batch(cmap, layer)
        cmap.members.update(layer)
    return cmap


def layer_size(J: int, k: int) -> int:
    return math.comb(J + k - 1, k)


def layer_energy(cmap: CoefficientMap, k: int, J: int | None = None) -> float:
    """``sum_{|nu| = k} ||t_nu||_abar^2``; raises if the layer is incomplete."""
    J = cmap.disc.field.J if J is None else J
    nus = [n for n in cmap.keys if n.total_order == k]
    if len(nus) != layer_size(J, k):
        raise IncompleteLayerError(f"layer {k} has {len(nus)} of {layer_size(J, k)} indices")
    a = cmap.a_norms(nus)
    return float(np.sum(a * a))


def closed_form_constant(t0: np.ndarray, b, nu: MultiIndex) -> np.ndarray:
    """``(-1)^|nu| |nu|!/nu! b^nu t_0`` for spatially constant ``psi_j = b_j``."""
    n = nu.total_order
    coef = math.factorial(n) / math.prod(math.factorial(k) for _, k in nu)
    coef *= math.prod(b[j - 1] ** k for j, k in nu)
    return (-1) ** n * coef * t0
