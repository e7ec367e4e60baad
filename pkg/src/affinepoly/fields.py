"""Affine coefficient families ``a(y) = abar + sum_j y_j psi_j`` and their
ellipticity constants and weight sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.integrate as si
import scipy.sparse as sp
import scipy.special as ss

from .fem1d import (
    BandedCholesky,
    Constant,
    FemSpace,
    PiecewiseConstant,
    Sine,
    Sum,
    WeightFn,
)


_ROWS = 512  # rows per block when evaluating norms at quadrature points


class EllipticityError(ValueError):
    """Raised when the (weighted) uniform ellipticity constant is >= 1."""


@dataclass
class CoefficientField:
    psis: list
    abar: WeightFn = dc_field(default_factory=lambda: Constant(1.0))
    family: dict = dc_field(default_factory=lambda: {"family": "custom"})
    check: bool = True

    def __post_init__(self):
        self.psis = list(self.psis)
        if self.check:
            th = compute_theta(self)
            if th >= 1.0:
                raise EllipticityError(f"theta = {th!r} >= 1 violates uniform ellipticity")

    @property
    def J(self) -> int:
        return len(self.psis)

    @property
    def is_piecewise_constant(self) -> bool:
        return self.abar.is_piecewise_constant and all(p.is_piecewise_constant for p in self.psis)

    @property
    def abar_min(self) -> float:
        return float(_min_of(self.abar))

    @property
    def abar_max(self) -> float:
        return float(self.abar.sup_abs())

    @property
    def theta(self) -> float:
        return compute_theta(self)

    def sup_norms(self) -> np.ndarray:
        return np.array([p.sup_abs() for p in self.psis])

    def breakpoints(self) -> np.ndarray:
        pts = set(self.abar.breakpoints())
        for p in self.psis:
            pts.update(p.breakpoints())
        return np.array(sorted(pts))


def _min_of(w: WeightFn) -> float:
    if isinstance(w, Constant):
        return w.value
    if w.is_piecewise_constant:
        cells = np.unique(np.concatenate([[0.0, 1.0], w.breakpoints()]))
        return float(np.min(w(0.5 * (cells[:-1] + cells[1:]))))
    return float(np.min(w(np.linspace(0, 1, 10001))))


@dataclass
class WeightSequence:
    rho: np.ndarray
    delta: float
    summability_exponent: float = float("nan")
    in_lq: bool | None = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if np.any(self.rho < 1.0):
            raise ValueError("weights must satisfy rho_j >= 1")


# --------------------------------------------------------------------------
# families


@lru_cache(maxsize=None)
def inclusion_normalizer(n_direct: int = 10**6) -> float:
    """``sum_{k>=1} 1/(k log^2(1+k))``: direct sum to ``n_direct`` plus the
    Euler-Maclaurin tail (integral + half endpoint + derivative term)."""
    k = np.arange(1, n_direct + 1, dtype=float)
    head = math.fsum(1.0 / (k * np.log1p(k) ** 2))
    N = float(n_direct)

    def f(x):
        return 1.0 / (x * math.log1p(x) ** 2)

    def fp(x):
        L = math.log1p(x)
        return -1.0 / (x * x * L * L) - 2.0 / (x * (1 + x) * L**3)

    # int_N^inf f = 1/log(1+N) + int_N^inf 1/(x(1+x)log^2(1+x))
    # substitute x = 1/u
    rest, _ = si.quad(lambda u: 1.0 / ((1 + u) * math.log1p(1.0 / u) ** 2) if u > 0 else 0.0, 0.0, 1.0 / N, epsrel=1e-10)
    tail = 1.0 / math.log1p(N) + rest - 0.5 * f(N) - fp(N) / 12.0
    return head + tail


def inclusion_breakpoints(J: int) -> np.ndarray:
    """``x_0 = 0, x_j = c sum_{k<=j} k^-1 log^-2(1+k)`` with ``x_j -> 1``."""
    k = np.arange(1, J + 1, dtype=float)
    x = np.concatenate([[0.0], np.cumsum(1.0 / (k * np.log1p(k) ** 2))])
    return x / inclusion_normalizer()


def make_disjoint_inclusions(beta: float, theta: float, J: int) -> CoefficientField:
    if J < 1:
        raise ValueError("J must be >= 1")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    x = inclusion_breakpoints(J)
    psis = [PiecewiseConstant((x[j - 1], x[j]), (theta * j ** (-beta),)) for j in range(1, J + 1)]
    return CoefficientField(psis, family={"family": "inclusions", "beta": beta, "theta": theta, "J": J})


def make_fourier(beta: float, theta: float, J: int) -> CoefficientField:
    if beta <= 1:
        raise ValueError("Fourier family needs beta > 1")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    c = 1.0 / float(ss.zeta(beta, 1))
    psis = [Sine(theta * c * j ** (-beta), j) for j in range(1, J + 1)]
    return CoefficientField(psis, family={"family": "fourier", "beta": beta, "theta": theta, "J": J})


def haar_level_amplitude(alpha: float, theta: float, level: int) -> float:
    return theta * (1 - 2.0 ** (-alpha)) * 2.0 ** (-alpha * level)


def make_haar(alpha: float, theta: float, L_max: int) -> CoefficientField:
    """Haar wavelets ``c_l h(2^l x - k)``, ordered level-major then shift."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    psis = []
    levels = []
    for l in range(L_max + 1):
        c = haar_level_amplitude(alpha, theta, l)
        w = 2.0 ** (-l)
        for k in range(2**l):
            psis.append(PiecewiseConstant((k * w, (k + 0.5) * w, (k + 1) * w), (c, -c)))
            levels.append(l)
    return CoefficientField(
        psis, family={"family": "haar", "alpha": alpha, "theta": theta, "L_max": L_max, "levels": levels}
    )


def make_constant(b: Sequence[float]) -> CoefficientField:
    """Spatially constant ``psi_j = b_j`` (closed-form Taylor coefficients)."""
    return CoefficientField([Constant(float(v)) for v in b], family={"family": "constant", "b": list(map(float, b))})


def make_half_inclusions(D_edges: Sequence[float], b: Sequence[float]) -> CoefficientField:
    """``psi_j = b_j chi_[l_j, m_j]`` on the left half of ``D_j = ]l_j, r_j[``."""
    e = np.asarray(D_edges, dtype=float)
    psis = []
    for j, bj in enumerate(b):
        l, r = e[j], e[j + 1]
        psis.append(PiecewiseConstant((l, 0.5 * (l + r)), (float(bj),)))
    return CoefficientField(psis, family={"family": "half_inclusions"})


def family_from_config(cfg: dict) -> CoefficientField:
    """Build a field from ``{family, beta|alpha, theta, J|L_max}``; custom
    ``constant`` (``b``) and ``half_inclusions`` (``edges``, ``b``) fields too."""
    fam = cfg["family"]
    if fam == "constant":
        return make_constant(tuple(float(v) for v in cfg["b"]))
    if fam == "half_inclusions":
        return make_half_inclusions(cfg["edges"], cfg["b"])
    theta = float(cfg["theta"])
    if fam == "inclusions":
        return make_disjoint_inclusions(float(cfg["beta"]), theta, int(cfg.get("J", 256)))
    if fam == "fourier":
        return make_fourier(float(cfg["beta"]), theta, int(cfg.get("J", 256)))
    if fam == "haar":
        return make_haar(float(cfg["alpha"]), theta, int(cfg.get("L_max", 7)))
    raise ValueError(f"unknown family {fam!r}")


# --------------------------------------------------------------------------
# ellipticity constants


def _weighted_sum_piecewise(field: CoefficientField, rho: np.ndarray) -> float:
    cells = np.unique(np.concatenate([[0.0, 1.0], field.breakpoints()]))
    mids = 0.5 * (cells[:-1] + cells[1:])
    acc = np.zeros(len(mids))
    for r, p in zip(rho, field.psis):
        if isinstance(p, PiecewiseConstant):
            lo, hi = np.searchsorted(mids, p.edges[0]), np.searchsorted(mids, p.edges[-1])
            acc[lo:hi] += r * np.abs(p(mids[lo:hi]))
        else:
            acc += r * np.abs(p(mids))
    return float(np.max(acc / field.abar(mids)))


def weighted_ellipticity_bounds(field: CoefficientField, rho=None, n_samples: int = 10**4) -> tuple[float, float]:
    """(lower, upper) bounds on ``|| sum rho_j |psi_j| / abar ||_inf``.

    Exact (lower == upper) for piecewise-constant fields; otherwise a grid
    sample gives the lower bound and ``sum rho_j ||psi_j|| / abar_min`` the upper.
    """
    rho = np.ones(field.J) if rho is None else np.asarray(rho, dtype=float)
    if len(rho) != field.J:
        raise ValueError("rho must have one entry per psi")
    if field.J == 0:
        return 0.0, 0.0
    if field.is_piecewise_constant:
        v = _weighted_sum_piecewise(field, rho)
        return v, v
    x = np.linspace(0.0, 1.0, n_samples)
    acc = np.zeros(n_samples)
    for r, p in zip(rho, field.psis):
        acc += r * np.abs(p(x))
    lower = float(np.max(acc / field.abar(x)))
    upper = float(np.sum(rho * field.sup_norms()) / field.abar_min)
    return lower, upper


def compute_theta(field: CoefficientField) -> float:
    return weighted_ellipticity_bounds(field)[1]


def compute_delta(field: CoefficientField, rho) -> float:
    return weighted_ellipticity_bounds(field, rho)[1]


def _decay_exponent(v: np.ndarray) -> float:
    """Least-squares slope ``s`` of ``v_j ~ j^-s`` over the upper half of ``j``."""
    n = len(v)
    if n < 4:
        return float("nan")
    j = np.arange(n // 2, n) + 1
    A = np.vstack([np.log(j), np.ones(len(j))]).T
    slope = np.linalg.lstsq(A, np.log(v[n // 2 :]), rcond=None)[0][0]
    return float(-slope)


def q_of_p(p: float) -> float:
    return 2 * p / (2 - p)


def weights_finite_overlap(field: CoefficientField, M: int = 1, p: float = 1.0) -> WeightSequence:
    """``rho_j = 1 + abar_min (1 - theta) / (2 M ||psi_j||_inf)``."""
    theta = compute_theta(field)
    if theta >= 1:
        raise EllipticityError("theta >= 1")
    norms = field.sup_norms()
    rho = 1.0 + field.abar_min * (1 - theta) / (2 * M * norms)
    delta = compute_delta(field, rho)
    if delta >= 1:
        raise EllipticityError(f"delta = {delta!r} >= 1; is M below the support overlap?")
    s = _decay_exponent(1.0 / rho)
    return WeightSequence(rho, delta, s, bool(s * q_of_p(p) > 1))


def weights_wavelet(field: CoefficientField, beta: float) -> WeightSequence:
    """``rho_l = 1 + abar_min (1 - theta) (1 - 2^(beta - alpha)) 2^(beta l) / (2 C M)``
    with ``M = 1`` and ``C = theta_param (1 - 2^-alpha)``.

    The factor ``1 - 2^(beta - alpha)`` sits in the numerator so that the
    level sum ``sum_l C 2^(-alpha l) (rho_l - 1)`` stays below ``abar_min (1 - theta) / 2``.
    """
    fam = field.family
    if fam.get("family") != "haar":
        raise ValueError("wavelet weights need a Haar field")
    alpha = fam["alpha"]
    if not 0 <= beta < alpha:
        raise ValueError("need 0 <= beta < alpha")
    theta = compute_theta(field)
    C = fam["theta"] * (1 - 2.0 ** (-alpha))
    M = 1
    levels = np.asarray(fam["levels"], dtype=float)
    rho = 1.0 + field.abar_min * (1 - theta) * (1 - 2.0 ** (beta - alpha)) * 2.0 ** (beta * levels) / (2 * C * M)
    delta = compute_delta(field, rho)
    if delta >= 1:
        raise EllipticityError(f"delta = {delta!r} >= 1")
    s = _decay_exponent(1.0 / rho)
    return WeightSequence(rho, delta, s, None)


# --------------------------------------------------------------------------
# meshes


def mesh_for_field(field: CoefficientField, min_elements: int = 0, dyadic_level: int | None = None) -> np.ndarray:
    """Mesh containing every jump of the field, refined uniformly so that it
    has at least ``min_elements`` elements (or dyadic with ``2**dyadic_level``)."""
    if dyadic_level is not None:
        pts = np.linspace(0.0, 1.0, 2**dyadic_level + 1)
        extra = field.breakpoints()
        if extra.size:
            pts = np.union1d(pts, extra)
        return _dedupe(pts)
    pts = np.union1d([0.0, 1.0], field.breakpoints())
    if min_elements and len(pts) - 1 < min_elements:
        pts = _dedupe(np.union1d(pts, np.linspace(0.0, 1.0, min_elements + 1)), keep=field.breakpoints())
    return pts


def _dedupe(pts: np.ndarray, keep=(), tol: float = 1e-9) -> np.ndarray:
    pts = np.sort(np.asarray(pts, dtype=float))
    keep = set(np.asarray(keep, dtype=float).tolist()) | {0.0, 1.0}
    out = [pts[0]]
    for x in pts[1:]:
        if x - out[-1] > tol:
            out.append(x)
        elif x in keep and out[-1] not in keep:
            out[-1] = x
    return np.array(out)


def default_space(field: CoefficientField, elements: int | None = None, extra: Sequence[float] = ()) -> FemSpace:
    """Family-specific P2 mesh: dyadic at level ``L_max + 1`` for Haar, uniform
    with one element per sine mode (at least 512) for Fourier, otherwise the
    field's jumps refined to at least 512 elements. ``extra`` breakpoints
    (e.g. load knots) are merged in."""
    fam = field.family.get("family")
    if fam == "haar":
        level = field.family["L_max"] + 1
        if elements:
            level = max(level, int(math.ceil(math.log2(elements))))
        pts = mesh_for_field(field, dyadic_level=level)
    elif fam == "fourier":
        n = elements or max(512, field.J)
        pts = np.linspace(0.0, 1.0, n + 1)
    else:
        pts = mesh_for_field(field, min_elements=elements if elements is not None else 512)
    extra = np.asarray(extra, dtype=float)
    if extra.size:
        pts = _dedupe(np.union1d(pts, extra), keep=np.concatenate([field.breakpoints(), extra]))
    return FemSpace(pts)


# --------------------------------------------------------------------------
# discretized field


class DiscreteField:
    """A coefficient field evaluated on a P2 space.

    Every bilinear form is applied through derivatives at quadrature points:
    ``A_w x = G^T (qw * w(xq) * (G x))``. Piecewise-constant fields use a
    2-point rule (exact), fields with sines the space's rule.
    """

    def __init__(self, field: CoefficientField, space: FemSpace, order: int | None = None):
        self.field = field
        self.space = space
        if order is None:
            order = 2 if field.is_piecewise_constant else space.quad_order
        self.order = order
        self.G = space.gradient_operator(order)
        self.GT = self.G.T.tocsr()
        self.xq, self.wq = space.quadrature(order)
        self.nq = len(self.wq)
        self.abar_q = space.weight_at_quadrature(field.abar, order)
        self.psi_idx: list = []
        self.psi_w: list = []  # quadrature weight * psi value on psi_idx
        for p in field.psis:
            vals = space.weight_at_quadrature(p, order)
            nz = np.flatnonzero(vals)
            if len(nz) > self.nq // 2:
                self.psi_idx.append(slice(None))
                self.psi_w.append(self.wq * vals)
            else:
                self.psi_idx.append(nz)
                self.psi_w.append(self.wq[nz] * vals[nz])
        self.A_abar = self.stiffness_from_quadrature(self.wq * self.abar_q)
        self.A_unit = self.stiffness_from_quadrature(self.wq)
        self.factor = BandedCholesky(self.A_abar)
        self._unit_factor = None
        self._psi_energy = None

    @property
    def unit_factor(self) -> BandedCholesky:
        if self._unit_factor is None:
            self._unit_factor = BandedCholesky(self.A_unit)
        return self._unit_factor

    def stiffness_from_quadrature(self, d: np.ndarray) -> sp.csr_matrix:
        A = (self.GT @ sp.diags(d) @ self.G).tocsr()
        A.sum_duplicates()
        return A

    def psi_stiffness(self, j: int) -> sp.csr_matrix:
        """Assembled ``A_{psi_j}`` (1-based ``j``)."""
        d = np.zeros(self.nq)
        d[self.psi_idx[j - 1]] = self.psi_w[j - 1]
        return self.stiffness_from_quadrature(d)

    def grads(self, X: np.ndarray) -> np.ndarray:
        """Derivatives at quadrature points of each row of ``X``."""
        if X.ndim == 1:
            return self.G @ X
        return np.ascontiguousarray((self.G @ X.T).T)

    def from_flux(self, F: np.ndarray) -> np.ndarray:
        """``G^T F`` row-wise: load vectors from weighted fluxes."""
        if F.ndim == 1:
            return self.GT @ F
        return np.ascontiguousarray((self.GT @ F.T).T)

    @property
    def psi_energy(self):
        """(nq, J) matrix with entries ``qw psi_j(xq)^2 / abar(xq)``; dense
        when most psi_j cover most quadrature points, CSR otherwise."""
        if self._psi_energy is None:
            full = np.arange(self.nq)
            nnz = sum(self.nq if isinstance(i, slice) else len(i) for i in self.psi_idx)
            if nnz > 0.25 * self.nq * max(self.field.J, 1):
                E = np.zeros((self.nq, self.field.J))
                for j, (idx, w) in enumerate(zip(self.psi_idx, self.psi_w)):
                    E[idx, j] = w * w / (self.wq[idx] * self.abar_q[idx])
                self._psi_energy = E
            else:
                rows, cols, vals = [], [], []
                for j, (idx, w) in enumerate(zip(self.psi_idx, self.psi_w)):
                    q = full[idx]
                    rows.append(q)
                    cols.append(np.full(len(q), j))
                    vals.append(w * w / (self.wq[q] * self.abar_q[q]))
                self._psi_energy = sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.nq, self.field.J)
                )
        return self._psi_energy

    def _rowwise(self, X: np.ndarray, fn) -> np.ndarray:
        X = np.atleast_2d(X)
        parts = [fn(self.grads(X[s0 : s0 + _ROWS])) for s0 in range(0, len(X), _ROWS)]
        return np.concatenate(parts) if parts else np.zeros((0,) + fn(self.grads(X[:1])).shape[1:])

    def coupling_bounds(self, X: np.ndarray) -> np.ndarray:
        """``B[i, j] = || psi_j x_i' / sqrt(abar) ||_{L^2}`` for each row ``x_i``.

        Bounds the abar-energy of the response to one coupling term:
        ``|| A_abar^{-1} A_{psi_j} x ||_abar <= B[., j]``.
        """
        E = self.psi_energy
        if isinstance(E, np.ndarray):
            return self._rowwise(X, lambda g: np.sqrt((g * g) @ E))
        return self._rowwise(X, lambda g: np.sqrt(np.asarray((E.T @ (g * g).T).T)))

    def v_norms(self, X: np.ndarray) -> np.ndarray:
        return self._rowwise(X, lambda g: np.sqrt(np.maximum(g * g @ self.wq, 0.0)))

    def a_norms(self, X: np.ndarray) -> np.ndarray:
        w = self.wq * self.abar_q
        return self._rowwise(X, lambda g: np.sqrt(np.maximum(g * g @ w, 0.0)))

    def dual_norm(self, b: np.ndarray) -> float:
        return float(np.sqrt(max(b @ self.unit_factor.solve(b), 0.0)))
