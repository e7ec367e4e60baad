"""P2 Lagrange finite elements on ]0,1[ with homogeneous Dirichlet conditions.

Dofs are numbered left to right, alternating element midpoints and interior
vertices: ``m_0, v_1, m_1, v_2, ..., v_{n-1}, m_{n-1}``. All bilinear forms are
evaluated through the gradient-at-quadrature-points operator ``G`` so that
``A_w = G^T diag(qw * w(xq)) G``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

ALIGN_TOL = 1e-12


class AlignmentError(ValueError):
    """Raised when a piecewise weight has a jump inside a mesh element."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, index: int | None, msg: str = ""):
        self.index = index
        super().__init__(msg or f"matrix not positive definite (pivot {index})")


# --------------------------------------------------------------------------
# Weight functions


class WeightFn:
    def __call__(self, x):
        raise NotImplementedError

    def __add__(self, other: "WeightFn") -> "WeightFn":
        return Sum((self, other))

    def breakpoints(self) -> tuple[float, ...]:
        """Interior jump locations (empty for smooth weights)."""
        return ()

    @property
    def is_piecewise_constant(self) -> bool:
        return False

    def sup_abs(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(WeightFn):
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    @property
    def is_piecewise_constant(self):
        return True

    def sup_abs(self):
        return abs(float(self.value))


@dataclass(frozen=True)
class PiecewiseConstant(WeightFn):
    """``values[i]`` on ``[edges[i], edges[i+1][``; zero outside ``[edges[0], edges[-1]]``."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if len(e) != len(self.values) + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
        if e[0] < 0 or e[-1] > 1:
            raise ValueError("edges must lie within [0, 1]")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        e = np.asarray(self.edges)
        v = np.asarray(self.values, dtype=float)
        idx = np.searchsorted(e, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(v))
        out = np.zeros(x.shape)
        out[inside] = v[idx[inside]]
        return out

    def breakpoints(self):
        return tuple(b for b in self.edges if 0.0 < b < 1.0)

    @property
    def is_piecewise_constant(self):
        return True

    @property
    def support(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def sup_abs(self):
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class Sine(WeightFn):
    """``amplitude * sin(frequency * pi * x)``."""

    amplitude: float
    frequency: float

    def __call__(self, x):
        return self.amplitude * np.sin(self.frequency * np.pi * np.asarray(x, dtype=float))

    def sup_abs(self):
        return abs(self.amplitude) if self.frequency >= 0.5 else abs(self.amplitude * np.sin(self.frequency * np.pi))


@dataclass(frozen=True)
class Sum(WeightFn):
    terms: tuple

    def __call__(self, x):
        out = np.zeros(np.shape(x))
        for t in self.terms:
            out = out + t(x)
        return out

    def breakpoints(self):
        return tuple(sorted({b for t in self.terms for b in t.breakpoints()}))

    @property
    def is_piecewise_constant(self):
        return all(t.is_piecewise_constant for t in self.terms)

    def sup_abs(self):
        return sum(t.sup_abs() for t in self.terms)


# --------------------------------------------------------------------------
# Spaces

# reference P2 basis on [0, 1]: left vertex, midpoint bubble, right vertex
def _ref_grads(s):
    s = np.asarray(s)
    return np.stack([4 * s - 3, 4 - 8 * s, 4 * s - 1], axis=-1)


def _ref_values(s):
    s = np.asarray(s)
    return np.stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)], axis=-1)


def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


class FemSpace:
    """P2 space on a mesh of ]0,1[ with homogeneous Dirichlet conditions."""

    def __init__(self, breakpoints: Sequence[float], quad_order: int = 5):
        x = np.asarray(breakpoints, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise ValueError("need at least two breakpoints")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("mesh must start at 0 and end at 1")
        if np.any(np.diff(x) <= 1e-12):
            raise ValueError("breakpoints must be strictly increasing with width > 1e-12")
        self.breakpoints = x
        self.h = np.diff(x)
        self.n_elements = len(self.h)
        self.dof_count = 2 * self.n_elements - 1
        self.quad_order = int(quad_order)

    def __repr__(self):
        return f"FemSpace(n_elements={self.n_elements}, dof_count={self.dof_count})"

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """(n_elements, 3) global dof of (left, mid, right); -1 marks a boundary node."""
        e = np.arange(self.n_elements)
        d = np.stack([2 * e - 1, 2 * e, 2 * e + 1], axis=1)
        d[d >= self.dof_count] = -1
        return d

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        x = np.empty(self.dof_count)
        x[0::2] = 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])
        x[1::2] = self.breakpoints[1:-1]
        return x

    def quadrature(self, order: int | None = None):
        """Quadrature points and weights, shape (n_elements * order,)."""
        order = self.quad_order if order is None else order
        s, w = gauss01(order)
        xq = self.breakpoints[:-1, None] + self.h[:, None] * s[None, :]
        wq = self.h[:, None] * w[None, :]
        return xq.ravel(), wq.ravel()

    def gradient_operator(self, order: int | None = None) -> sp.csr_matrix:
        """Sparse ``G`` mapping dof vectors to derivatives at quadrature points."""
        order = self.quad_order if order is None else order
        s, _ = gauss01(order)
        g = _ref_grads(s)  # (order, 3)
        vals = g[None, :, :] / self.h[:, None, None]  # (ne, order, 3)
        dofs = self.element_dofs
        rows = np.repeat(np.arange(self.n_elements * order), 3)
        cols = np.broadcast_to(dofs[:, None, :], vals.shape).ravel()
        vals = vals.ravel()
        keep = cols >= 0
        return sp.csr_matrix(
            (vals[keep], (rows[keep], cols[keep])), shape=(self.n_elements * order, self.dof_count)
        )

    def value_operator(self, order: int | None = None) -> sp.csr_matrix:
        order = self.quad_order if order is None else order
        s, _ = gauss01(order)
        v = np.broadcast_to(_ref_values(s)[None], (self.n_elements, order, 3))
        dofs = self.element_dofs
        rows = np.repeat(np.arange(self.n_elements * order), 3)
        cols = np.broadcast_to(dofs[:, None, :], v.shape).ravel()
        keep = cols >= 0
        return sp.csr_matrix(
            (v.ravel()[keep], (rows[keep], cols[keep])), shape=(self.n_elements * order, self.dof_count)
        )

    def check_alignment(self, w: WeightFn) -> None:
        bps = np.asarray(w.breakpoints(), dtype=float)
        if bps.size == 0:
            return
        pos = np.searchsorted(self.breakpoints, bps)
        pos = pos.clip(1, len(self.breakpoints) - 1)
        dist = np.minimum(np.abs(self.breakpoints[pos] - bps), np.abs(self.breakpoints[pos - 1] - bps))
        bad = dist > ALIGN_TOL
        if np.any(bad):
            raise AlignmentError(f"weight breakpoint {bps[bad][0]!r} is not a mesh breakpoint")

    def weight_at_quadrature(self, w: WeightFn, order: int | None = None) -> np.ndarray:
        """``w`` at quadrature points; piecewise terms are evaluated at element
        midpoints so jumps exactly on a breakpoint cannot leak across it."""
        order = self.quad_order if order is None else order
        xq, _ = self.quadrature(order)
        if isinstance(w, Sum):
            return sum(self.weight_at_quadrature(t, order) for t in w.terms)
        if w.is_piecewise_constant:
            self.check_alignment(w)
            mids = 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])
            return np.repeat(w(mids), order)
        return w(xq)

    def interpolate(self, fn) -> np.ndarray:
        return np.asarray(fn(self.dof_coordinates), dtype=float)

    def to_csv_rows(self, x: np.ndarray) -> list[tuple[float, float]]:
        """(coordinate, value) pairs including the Dirichlet endpoints."""
        coords = np.concatenate([[0.0], self.dof_coordinates, [1.0]])
        vals = np.concatenate([[0.0], x, [0.0]])
        order = np.argsort(coords, kind="stable")
        return [(float(coords[i]), float(vals[i])) for i in order]


def build_space(breakpoints: Sequence[float], quad_order: int = 5) -> FemSpace:
    return FemSpace(breakpoints, quad_order=quad_order)


def uniform_space(n_elements: int, quad_order: int = 5) -> FemSpace:
    return FemSpace(np.linspace(0.0, 1.0, n_elements + 1), quad_order=quad_order)


# --------------------------------------------------------------------------
# Assembly and solves


def assemble_weighted_stiffness(space: FemSpace, w: WeightFn, order: int = 5) -> sp.csr_matrix:
    """``A[i, j] = int w phi_i' phi_j' dx``.

    Piecewise-constant weights must be aligned with the mesh (exact with any
    rule of order >= 2); smooth weights use ``order``-point Gauss per element.
    """
    G = space.gradient_operator(order)
    _, wq = space.quadrature(order)
    d = wq * space.weight_at_quadrature(w, order)
    A = (G.T @ sp.diags(d) @ G).tocsr()
    A.sum_duplicates()
    return A


def unit_stiffness(space: FemSpace) -> sp.csr_matrix:
    return assemble_weighted_stiffness(space, Constant(1.0), order=2)


def to_banded(A: sp.spmatrix, bandwidth: int = 2) -> np.ndarray:
    """Upper banded storage as used by ``scipy.linalg.cholesky_banded``."""
    A = sp.dia_matrix(A)
    n = A.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    for off, row in zip(A.offsets, A.data):
        if 0 <= off <= bandwidth:
            ab[bandwidth - off, off:] = row[off:]
        elif off > bandwidth and np.any(row != 0):
            raise ValueError(f"matrix bandwidth exceeds {bandwidth}")
    return ab


class BandedCholesky:
    """Reusable banded Cholesky factor of an SPD stiffness matrix."""

    def __init__(self, A: sp.spmatrix, bandwidth: int = 2):
        self.n = A.shape[0]
        try:
            self.cb = sla.cholesky_banded(to_banded(A, bandwidth), lower=False)
        except np.linalg.LinAlgError as exc:
            idx = None
            for tok in str(exc).split():
                if tok.rstrip("-th").isdigit():
                    idx = int(tok.rstrip("-th")) - 1
                    break
            raise NotPositiveDefiniteError(idx, f"Cholesky failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve for one rhs of shape (n,) or many stacked as rows, shape (m, n)."""
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            return sla.cho_solve_banded((self.cb, False), b, check_finite=False)
        return sla.cho_solve_banded((self.cb, False), b.T, check_finite=False).T


def factorize(A: sp.spmatrix) -> BandedCholesky:
    return BandedCholesky(A)


def solve_dirichlet(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    return BandedCholesky(A).solve(b)


def load_constant(space: FemSpace, c: float) -> np.ndarray:
    """``b_i = c * int phi_i``, exact: vertices get ``h/6`` per adjacent
    element, midpoints ``2h/3``."""
    b = np.zeros(space.dof_count)
    b[0::2] = 2.0 * space.h / 3.0
    b[1::2] = (space.h[:-1] + space.h[1:]) / 6.0
    return c * b


def load_from_energy_pair(space: FemSpace, knots: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """``b_i = int g' phi_i'`` for a continuous piecewise-linear ``g``.

    ``g'`` is constant per element, so a 2-point rule is exact once every knot
    is a mesh breakpoint.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    slopes = np.diff(values) / np.diff(knots)
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing")
    slope_fn = PiecewiseConstant(tuple(knots), tuple(slopes))
    space.check_alignment(slope_fn)
    G = space.gradient_operator(2)
    _, wq = space.quadrature(2)
    mids = 0.5 * (space.breakpoints[:-1] + space.breakpoints[1:])
    gprime = np.repeat(slope_fn(mids), 2)
    return G.T @ (wq * gprime)


def quadratic_form(A: sp.spmatrix, x: np.ndarray) -> float:
    q = float(x @ (A @ x))
    if q < 0:
        if q < -1e-13 * max(1.0, float(np.abs(x) @ (abs(A) @ np.abs(x)))):
            raise ValueError(f"negative quadratic form {q!r}")
        q = 0.0
    return q


def v_norm(space: FemSpace, x: np.ndarray, A_unit: sp.spmatrix | None = None) -> float:
    """``||x'||_{L^2}``."""
    if A_unit is None:
        A_unit = unit_stiffness(space)
    return float(np.sqrt(quadratic_form(A_unit, x)))


def a_norm(space: FemSpace, A_abar: sp.spmatrix, x: np.ndarray) -> float:
    return float(np.sqrt(quadratic_form(A_abar, x)))


def dual_norm(factor_unit: BandedCholesky, b: np.ndarray) -> float:
    """Discrete ``||f||_{V'} = sup_{v in V_h} <f, v> / ||v||_V = sqrt(b^T A^{-1} b)``."""
    return float(np.sqrt(max(b @ factor_unit.solve(b), 0.0)))
