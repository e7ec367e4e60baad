"""Legendre coefficients ``u_nu`` by adaptive stochastic Galerkin on
downward-closed index sets, plus a tensor Gauss-Legendre oracle.

With orthonormal Legendre polynomials (w.r.t. ``dt/2``) the three-term
recurrence ``t L_k = c(k+1) L_{k+1} + c(k) L_{k-1}`` with
``c(k) = k / sqrt(4k^2 - 1)`` turns the parametric problem on ``Lambda`` into
the block system

    A_abar U_nu + sum_j A_psi_j (c(nu_j + 1) U_{nu+e_j} + c(nu_j) U_{nu-e_j}) = delta_{nu,0} f.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientMap
from .fields import DiscreteField
from .multiindex import DownwardClosedSet, MultiIndex

ZERO = MultiIndex.zero()
_CHUNK = 1024
_DENSE_LOCAL = 64


class ConvergenceError(RuntimeError):
    pass


def coupling(k: int) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    return k / math.sqrt(4.0 * k * k - 1.0) if k else 0.0


def legendre_orthonormal(k: int, t) -> np.ndarray:
    """``sqrt(2k+1) P_k(t)``, orthonormal on [-1, 1] w.r.t. ``dt/2``."""
    c = np.zeros(k + 1)
    c[k] = 1.0
    return math.sqrt(2 * k + 1) * np.polynomial.legendre.legval(t, c)


def _right_mul(X: np.ndarray, K) -> np.ndarray:
    """``X @ K`` for symmetric dense or sparse ``K``."""
    if isinstance(K, np.ndarray):
        return X @ K
    return (K @ X.T).T


class GalerkinSystem:
    """Matrix-free stochastic Galerkin operator on an index list.

    Rows of a block vector follow ``self.indices`` (insertion order); appending
    indices keeps existing rows in place.
    """

    def __init__(self, disc: DiscreteField, indices=(ZERO,)):
        self.disc = disc
        self.indices: list[MultiIndex] = []
        self.pos: dict[MultiIndex, int] = {}
        self._pairs: dict[int, list[tuple[int, int, float]]] = {}
        self._local = None
        self.extend(list(indices))

    def __len__(self):
        return len(self.indices)

    @property
    def shape(self):
        return (len(self.indices), self.disc.space.dof_count)

    def extend(self, nus: list[MultiIndex]) -> None:
        """Append indices; the enlarged list must stay downward closed, so every
        coupled pair is recorded once from its upper index."""
        for nu in nus:
            if nu in self.pos:
                raise ValueError(f"{nu!r} already in the system")
            self.pos[nu] = len(self.indices)
            self.indices.append(nu)
        for nu in nus:
            r = self.pos[nu]
            for j, lo in nu.backward_neighbors():
                if lo not in self.pos:
                    raise ValueError(f"index set not downward closed: {lo!r} missing below {nu!r}")
                self._pairs.setdefault(j, []).append((self.pos[lo], r, coupling(nu[j])))
        self._arrays = None

    def pair_arrays(self):
        if self._arrays is None:
            self._arrays = {
                j: tuple(np.array(col, dtype=float if k == 2 else np.intp) for k, col in enumerate(zip(*v)))
                for j, v in sorted(self._pairs.items())
            }
        return self._arrays

    def local_blocks(self):
        """Per-coordinate ``(dofs_j, K_j)`` with ``K_j`` the restriction of
        ``A_psi_j`` to the dofs its support touches (dense when small).
        Full-support blocks share the index arrays of one pattern matrix."""
        if self._local is None:
            d = self.disc
            G = d.G.tocsr()
            all_dofs = np.arange(d.space.dof_count)
            pattern = None
            out = []
            for idx, w in zip(d.psi_idx, d.psi_w):
                if isinstance(idx, slice):
                    K = (d.GT @ sp.diags(w) @ G).tocsr()
                    K.sort_indices()
                    if pattern is None:
                        pattern = K
                    elif K.nnz == pattern.nnz and np.array_equal(K.indptr, pattern.indptr) and np.array_equal(K.indices, pattern.indices):
                        K = sp.csr_matrix((K.data, pattern.indices, pattern.indptr), shape=K.shape, copy=False)
                    out.append((all_dofs, K))
                    continue
                Gj = G[idx]
                dofs = np.unique(Gj.indices)
                Gj = Gj[:, dofs]
                K = (Gj.T @ sp.diags(w) @ Gj).tocsr()
                out.append((dofs, K.toarray() if len(dofs) <= _DENSE_LOCAL else K))
            self._local = out
        return self._local

    def apply(self, U: np.ndarray) -> np.ndarray:
        A = self.disc.A_abar
        out = np.empty_like(U)
        for s0 in range(0, len(U), _CHUNK):
            out[s0 : s0 + _CHUNK] = (A @ U[s0 : s0 + _CHUNK].T).T
        blocks = self.local_blocks()
        full = U.shape[1]
        for j, (lo_all, hi_all, c_all) in self.pair_arrays().items():
            dofs, K = blocks[j - 1]
            # chunks bound the temporaries; lo and hi rows are distinct within a chunk
            for s0 in range(0, len(c_all), _CHUNK):
                lo, hi = lo_all[s0 : s0 + _CHUNK], hi_all[s0 : s0 + _CHUNK]
                cc = c_all[s0 : s0 + _CHUNK, None]
                if dofs.size == full:
                    out[lo] += cc * _right_mul(U[hi], K)
                    out[hi] += cc * _right_mul(U[lo], K)
                else:
                    cols = dofs[None, :]
                    out[lo[:, None], cols] += cc * _right_mul(U[hi[:, None], cols], K)
                    out[hi[:, None], cols] += cc * _right_mul(U[lo[:, None], cols], K)
        return out

    def precondition(self, R: np.ndarray) -> np.ndarray:
        return self.disc.factor.solve(R)

    def rhs(self, load: np.ndarray) -> np.ndarray:
        F = np.zeros(self.shape)
        F[self.pos[ZERO]] = load
        return F

    def as_sparse(self) -> sp.csr_matrix:
        """Assembled system matrix (small problems and tests only)."""
        d = self.disc
        n = len(self.indices)
        blocks = sp.kron(sp.identity(n), d.A_abar, format="csr")
        for j, (lo, hi, c) in self.pair_arrays().items():
            M = sp.coo_matrix((c, (lo, hi)), shape=(n, n))
            blocks = blocks + sp.kron(M + M.T, d.psi_stiffness(j), format="csr")
        return blocks.tocsr()


def apply_operator(system: GalerkinSystem, U: np.ndarray) -> np.ndarray:
    return system.apply(U)


def _energy(system: GalerkinSystem, R: np.ndarray) -> float:
    """``R . A_abar^{-1} R`` in row chunks."""
    return math.fsum(float(np.vdot(R[s0 : s0 + _CHUNK], system.precondition(R[s0 : s0 + _CHUNK]))) for s0 in range(0, len(R), _CHUNK))


def solve_cg(system: GalerkinSystem, rhs: np.ndarray, tol: float = 1e-10, x0=None, maxiter=None):
    """Block-diagonal ``A_abar^{-1}``-preconditioned CG.

    Stops when the preconditioned residual norm ``sqrt(r.z)`` drops below
    ``tol`` times its reference value (initial residual, or ``rhs`` when
    warm-started); returns ``(U, iterations)``. A float64 ``x0`` of the right
    shape is updated in place.
    """
    n = len(system)
    maxiter = 10 * n + 1000 if maxiter is None else maxiter
    if x0 is None:
        x = np.zeros(system.shape)
        r = rhs.copy()
    else:
        x = np.asarray(x0, dtype=float)
        r = system.apply(x)
        np.subtract(rhs, r, out=r)
    z = system.precondition(r)
    rz = float(np.vdot(r, z))
    ref = rz if x0 is None else _energy(system, rhs)
    if ref <= 0 or rz <= (tol * tol) * ref:
        return x, 0
    p = z
    del z
    for it in range(1, maxiter + 1):
        q = system.apply(p)
        alpha = rz / float(np.vdot(p, q))
        x += alpha * p
        q *= alpha
        r -= q
        del q
        z = system.precondition(r)
        rz_new = float(np.vdot(r, z))
        if rz_new <= (tol * tol) * ref:
            return x, it
        p *= rz_new / rz
        p += z
        del z
        rz = rz_new
    raise ConvergenceError(f"CG did not reach tol={tol} in {maxiter} iterations")


def margin_residuals(system: GalerkinSystem, U: np.ndarray, nus: list[MultiIndex]) -> tuple[np.ndarray, np.ndarray]:
    """Residual blocks ``r_mu = -sum_j c(mu_j) A_psi_j U_{mu-e_j}`` for indices
    outside the system, and their preconditioned versions ``A_abar^{-1} r_mu``."""
    R = np.zeros((len(nus), system.shape[1]))
    blocks = system.local_blocks()
    for s0 in range(0, len(nus), _CHUNK):
        by_j: dict[int, list[tuple[int, int, float]]] = {}
        for r, mu in enumerate(nus[s0 : s0 + _CHUNK], start=s0):
            for j, lo in mu.backward_neighbors():
                if lo in system.pos:
                    by_j.setdefault(j, []).append((r, system.pos[lo], coupling(mu[j])))
        for j in sorted(by_j):
            rr, pp, cc = (np.array(col) for col in zip(*by_j[j]))
            dofs, K = blocks[j - 1]
            if dofs.size == R.shape[1]:
                R[rr] -= cc[:, None] * _right_mul(U[pp], K)
            else:
                cols = dofs[None, :]
                R[rr[:, None], cols] -= cc[:, None] * _right_mul(U[pp[:, None], cols], K)
    return R, system.precondition(R)


def margin_indicators(system: GalerkinSystem, U: np.ndarray, nus: list[MultiIndex] | None = None) -> dict:
    """``eta_mu = ||r_mu||_{A_abar^{-1}}`` over the reduced margin (or ``nus``)."""
    if nus is None:
        lam = DownwardClosedSet.from_indices(system.indices, system.disc.field.J)
        nus = sorted(lam.reduced_margin, key=MultiIndex.sort_key)
    if not nus:
        return {}
    R, Z = margin_residuals(system, U, nus)
    eta = np.sqrt(np.maximum(np.einsum("ij,ij->i", R, Z), 0.0))
    return dict(zip(nus, eta))


class _Margin:
    """Reduced-margin candidates with vectorised indicator bounds
    ``sum_j c(mu_j) B[row(mu - e_j), j]``; ids follow insertion order."""

    def __init__(self):
        self.items: list[MultiIndex] = []
        self.id: dict[MultiIndex, int] = {}
        self.alive = np.zeros(0, dtype=bool)
        self._parts: list[tuple] = []
        self._pairs = None

    def add(self, system: GalerkinSystem, nus: list[MultiIndex]) -> None:
        cand, row, col, w = [], [], [], []
        for mu in nus:
            k = len(self.items)
            self.id[mu] = k
            self.items.append(mu)
            for j, lo in mu.backward_neighbors():
                cand.append(k)
                row.append(system.pos[lo])
                col.append(j - 1)
                w.append(coupling(mu[j]))
        self.alive = np.concatenate([self.alive, np.ones(len(nus), dtype=bool)])
        self._parts.append((np.array(cand, dtype=np.intp), np.array(row, dtype=np.intp), np.array(col, dtype=np.intp), np.array(w)))
        self._pairs = None

    def remove(self, nus) -> None:
        for mu in nus:
            self.alive[self.id.pop(mu)] = False

    def bounds(self, B: np.ndarray) -> np.ndarray:
        if self._pairs is None:
            self._pairs = tuple(np.concatenate(c) for c in zip(*self._parts))
            self._parts = [self._pairs]
        cand, row, col, w = self._pairs
        return np.bincount(cand, weights=w * B[row, col], minlength=len(self.items))


def _coupling_bounds(disc: DiscreteField, U: np.ndarray) -> np.ndarray:
    return np.vstack([disc.coupling_bounds(U[s0 : s0 + _CHUNK]) for s0 in range(0, len(U), _CHUNK)])


def _dorfler_prefix(ids: np.ndarray, score: np.ndarray, fraction: float) -> np.ndarray:
    """Smallest prefix of ``ids`` by decreasing score (ties: smaller id first)
    carrying ``fraction`` of the total squared score."""
    s = score[ids]
    order = np.lexsort((ids, -s))
    mass = np.cumsum(s[order] ** 2)
    n = min(int(np.searchsorted(mass, fraction * mass[-1] * (1 - 1e-14))) + 1, len(ids))
    return ids[order[:n]]


def adaptive_solve(
    disc: DiscreteField,
    load: np.ndarray,
    N_target: int,
    dorfler: float = 0.5,
    tol: float = 1e-10,
    max_degree: int = 30,
    exact_indicators: bool = True,
    callback=None,
) -> tuple[CoefficientMap, GalerkinSystem]:
    """Adaptive stochastic Galerkin: solve on ``Lambda``, mark the smallest
    reduced-margin prefix (by decreasing ``eta``) carrying ``dorfler`` of the
    total ``eta^2`` mass, enlarge ``Lambda`` and repeat until
    ``|Lambda| >= N_target`` (additions are capped at the target).

    Margin indicators start from the bound
    ``eta_mu <= sum_j c(mu_j) ||psi_j U_{mu-e_j}' / sqrt(abar)||`` and are
    computed exactly for every index that lands in the marked prefix, until
    the prefix consists of exact values only. With ``exact_indicators=False``
    the bound itself serves as the indicator.
    """
    if not 0 < dorfler <= 1:
        raise ValueError("dorfler must lie in (0, 1]")
    if N_target < 1:
        raise ValueError("N_target must be >= 1")
    lam = DownwardClosedSet(disc.field.J, max_degree=max_degree)
    system = GalerkinSystem(disc, [ZERO])
    U = None
    margin = _Margin()
    margin.add(system, sorted(lam.reduced_margin, key=MultiIndex.sort_key))
    history = []
    while True:
        U, its = solve_cg(system, system.rhs(load), tol=tol, x0=U)
        history.append((len(system), its))
        if callback is not None:
            callback(system, U, its)
        ids = np.flatnonzero(margin.alive)
        if len(system) >= N_target or len(ids) == 0:
            break
        score = margin.bounds(_coupling_bounds(disc, U)) * (1 + 1e-10)
        if not np.any(score[ids] > 0):
            break
        exact = np.zeros(len(score), dtype=bool)
        init = {}
        while True:
            marked = _dorfler_prefix(ids, score, dorfler)
            if not exact_indicators:
                break
            todo = marked[~exact[marked]]
            if len(todo) == 0:
                break
            nus = [margin.items[k] for k in todo]
            R, Zp = margin_residuals(system, U, nus)
            score[todo] = np.sqrt(np.maximum(np.einsum("ij,ij->i", R, Zp), 0.0))
            exact[todo] = True
            init.update(zip(todo.tolist(), Zp))
            del R, Zp
            # row views pin whole blocks; keep copies of rows still in the prefix
            keep = set(marked.tolist())
            init = {k: v.copy() for k, v in init.items() if k in keep}
        room = N_target - len(system)
        if len(marked) > room:
            marked = marked[np.lexsort((marked, -score[marked]))[:room]]
        chosen = sorted((margin.items[k] for k in marked), key=MultiIndex.sort_key)
        fresh = []
        for m in chosen:
            fresh.extend(lam.add(m))
        margin.remove(chosen)
        system.extend(chosen)
        margin.add(system, sorted(fresh, key=MultiIndex.sort_key))
        U0 = np.zeros(system.shape)
        U0[: len(U)] = U
        if init:
            # one block-Jacobi step from the computed residual blocks
            # an index that re-entered the prefix after being dropped starts from zero
            for k in marked.tolist():
                if k in init:
                    U0[system.pos[margin.items[k]]] = init[k]
        U = U0
    cmap = CoefficientMap(disc, kind="legendre", capacity=len(system))
    cmap.insert_many(list(system.indices), U)
    cmap.members.update(system.indices)
    cmap.load = load
    cmap.history = history
    return cmap, system


def solve_on(disc: DiscreteField, load: np.ndarray, indices, tol: float = 1e-10) -> tuple[CoefficientMap, GalerkinSystem]:
    """Galerkin solution on a fixed (downward-closed) index set."""
    system = GalerkinSystem(disc, sorted(indices, key=MultiIndex.sort_key))
    U, _ = solve_cg(system, system.rhs(load), tol=tol)
    cmap = CoefficientMap(disc, kind="legendre", capacity=len(system))
    cmap.insert_many(list(system.indices), U)
    cmap.members.update(system.indices)
    cmap.load = load
    return cmap, system


def _legendre_ld(n: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``P_n(t)`` and ``P_n'(t)`` by the three-term recurrence in ``t``'s dtype."""
    p0, p1 = np.ones_like(t), t.copy()
    for k in range(1, n):
        p0, p1 = p1, ((2 * k + 1) * t * p1 - k * p0) / (k + 1)
    return p1, n * (t * p1 - p0) / (t * t - 1)


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights for ``dt/2`` on [-1, 1], Newton-refined
    in extended precision: high-degree coefficients are small differences of
    O(1) terms, so double-precision nodes alone limit them to ~1e-8 relative."""
    t0, _ = np.polynomial.legendre.leggauss(n)
    t = t0.astype(np.longdouble)
    for _ in range(3):
        p, dp = _legendre_ld(n, t)
        t = t - p / dp
    _, dp = _legendre_ld(n, t)
    return t, 1 / ((1 - t * t) * dp * dp)


def _orthonormal_ld(kmax: int, t: np.ndarray) -> np.ndarray:
    out = np.empty((kmax, len(t)), dtype=t.dtype)
    p0, p1 = np.ones_like(t), t.copy()
    out[0] = p0
    if kmax > 1:
        out[1] = p1
    for k in range(1, kmax - 1):
        p0, p1 = p1, ((2 * k + 1) * t * p1 - k * p0) / (k + 1)
        out[k + 1] = p1
    return out * np.sqrt(2 * np.arange(kmax, dtype=t.dtype) + 1)[:, None]


def quadrature_coefficients(disc: DiscreteField, load: np.ndarray, nus, nodes_per_dim: int = 40, max_dim: int = 3) -> dict:
    """``u_nu = int u(y) L_nu(y) dmu(y)`` by tensor Gauss-Legendre quadrature,
    one spatial solve per node; weights and sums in extended precision."""
    from .fem1d import BandedCholesky

    J = disc.field.J
    if J > max_dim:
        raise ValueError(f"tensor quadrature limited to J <= {max_dim}, got {J}")
    nus = list(nus)
    need = max((k for nu in nus for _, k in nu), default=0) + 2
    if nodes_per_dim < need:
        raise ValueError(f"need at least {need} nodes per dimension")
    t, w = gauss_legendre(nodes_per_dim)
    Lvals = _orthonormal_ld(need, t)  # (k, node)
    A_psi = [disc.psi_stiffness(j) for j in range(1, J + 1)]
    acc = {nu: np.zeros(disc.space.dof_count, dtype=np.longdouble) for nu in nus}
    for node in itertools.product(range(nodes_per_dim), repeat=J):
        A = disc.A_abar.copy()
        for j, q in enumerate(node):
            A = A + float(t[q]) * A_psi[j]
        u = BandedCholesky(A).solve(load).astype(np.longdouble)
        wt = np.prod([w[q] for q in node])
        for nu in nus:
            L = np.prod([Lvals[nu[j + 1], q] for j, q in enumerate(node)])
            acc[nu] += (wt * L) * u
    return {nu: v.astype(float) for nu, v in acc.items()}


def quadrature_oracle(disc: DiscreteField, load: np.ndarray, nu: MultiIndex, nodes_per_dim: int = 40) -> float:
    """``||u_nu||_V`` from tensor quadrature."""
    return float(disc.v_norms(quadrature_coefficients(disc, load, [nu], nodes_per_dim)[nu])[0])


def mean_square_norm(disc: DiscreteField, load: np.ndarray, nodes_per_dim: int = 40) -> float:
    """``int ||u(y)||_V^2 dmu(y)`` by tensor quadrature (Parseval cross-check)."""
    from .fem1d import BandedCholesky

    J = disc.field.J
    t, w = np.polynomial.legendre.leggauss(nodes_per_dim)
    w = w / 2
    A_psi = [disc.psi_stiffness(j) for j in range(1, J + 1)]
    total = 0.0
    for node in itertools.product(range(nodes_per_dim), repeat=J):
        A = disc.A_abar.copy()
        for j, q in enumerate(node):
            A = A + t[q] * A_psi[j]
        u = BandedCholesky(A).solve(load)
        total += math.prod(w[q] for q in node) * float(disc.v_norms(u)[0] ** 2)
    return total
