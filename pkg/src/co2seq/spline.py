"""One-dimensional B-spline spaces on [0, 1], Gauss quadrature, mass matrices
and banded solves.

All spaces use an open uniform knot vector: the end knots are repeated
``degree + 1`` times and the interior knots are equally spaced, which gives
``C^{degree-1}`` continuity everywhere inside the interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels

PIVOT_RTOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a banded factorization meets a (near-)zero pivot."""


@dataclass(frozen=True)
class SplineSpace1D:
    degree: int
    n_elements: int
    knots: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.n_elements + self.degree

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_elements + 1)

    def __eq__(self, other):
        if not isinstance(other, SplineSpace1D):
            return NotImplemented
        return self.degree == other.degree and self.n_elements == other.n_elements

    def __hash__(self):
        return hash((self.degree, self.n_elements))


def build_space(n_elements: int, degree: int) -> SplineSpace1D:
    """Open uniform B-spline space on [0, 1].

    >>> build_space(4, 2).knots.tolist()
    [0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
    """
    if int(n_elements) != n_elements or n_elements < 1:
        raise ValueError(f"n_elements must be a positive integer, got {n_elements!r}")
    if int(degree) != degree or degree < 1:
        raise ValueError(f"degree must be a positive integer, got {degree!r}")
    n_elements, degree = int(n_elements), int(degree)
    interior = np.arange(1, n_elements) / n_elements
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    knots.setflags(write=False)
    return SplineSpace1D(degree=degree, n_elements=n_elements, knots=knots)


def _check_unit(x, what="x"):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{what} must lie in [0, 1]")
    return x


def eval_basis(space: SplineSpace1D, x: float) -> list[tuple[int, float, float]]:
    """Return ``(index, value, derivative)`` for the ``degree + 1`` basis
    functions that may be nonzero at ``x``."""
    x = float(_check_unit(x))
    spans, vals, ders = kernels.basis_funs_ders(
        np.ascontiguousarray(space.knots), space.degree, np.array([x]))
    first = int(spans[0]) - space.degree
    return [(first + r, float(vals[0, r]), float(ders[0, r]))
            for r in range(space.degree + 1)]


def basis_at(space: SplineSpace1D, xs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`eval_basis`.

    Returns ``(first, vals, ders)`` where ``first[q]`` is the index of the first
    nonzero basis function at ``xs[q]`` and ``vals``/``ders`` have shape
    ``(len(xs), degree + 1)``.
    """
    xs = np.ascontiguousarray(_check_unit(np.atleast_1d(xs)).ravel())
    spans, vals, ders = kernels.basis_funs_ders(
        np.ascontiguousarray(space.knots), space.degree, xs)
    return np.asarray(spans) - space.degree, np.asarray(vals), np.asarray(ders)


def collocation_matrices(space: SplineSpace1D, xs) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse ``(len(xs), n_basis)`` matrices of basis values and derivatives."""
    first, vals, ders = basis_at(space, xs)
    npts, width = vals.shape
    rows = np.repeat(np.arange(npts), width)
    cols = (first[:, None] + np.arange(width)[None, :]).ravel()
    shape = (npts, space.n_basis)
    b = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=shape)
    d = sp.csr_matrix((ders.ravel(), (rows, cols)), shape=shape)
    return b, d


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference element [0, 1]."""

    points_per_element: int
    abscissae: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def exactness(self) -> int:
        return 2 * self.points_per_element - 1


def gauss_rule(points_per_element: int) -> QuadratureRule:
    if points_per_element < 1:
        raise ValueError("need at least one quadrature point per element")
    xi, w = np.polynomial.legendre.leggauss(points_per_element)
    return QuadratureRule(points_per_element, 0.5 * (xi + 1.0), 0.5 * w)


def default_rule(space: SplineSpace1D) -> QuadratureRule:
    """``degree + 1`` points: exact for products of two basis functions."""
    return gauss_rule(space.degree + 1)


@dataclass(frozen=True)
class QuadGrid1D:
    """Quadrature points of a rule mapped to every element of a space,
    together with the basis data at those points."""

    space: SplineSpace1D
    rule: QuadratureRule
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    first: np.ndarray = field(repr=False)
    vals: np.ndarray = field(repr=False)
    ders: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        npts, width = self.vals.shape
        rows = np.repeat(np.arange(npts), width)
        cols = (self.first[:, None] + np.arange(width)[None, :]).ravel()
        shape = (npts, self.space.n_basis)
        return (sp.csr_matrix((self.vals.ravel(), (rows, cols)), shape=shape),
                sp.csr_matrix((self.ders.ravel(), (rows, cols)), shape=shape))


def quad_grid(space: SplineSpace1D, rule: QuadratureRule | None = None) -> QuadGrid1D:
    rule = rule or default_rule(space)
    h = 1.0 / space.n_elements
    e = np.arange(space.n_elements)
    pts = ((e[:, None] + rule.abscissae[None, :]) * h).ravel()
    wts = np.tile(rule.weights * h, space.n_elements)
    # pin each point to its own element so spans are unambiguous at breakpoints
    spans, vals, ders = kernels.basis_funs_ders(
        np.ascontiguousarray(space.knots), space.degree, np.ascontiguousarray(pts))
    elem = np.repeat(e, rule.points_per_element)
    assert np.all(np.asarray(spans) - space.degree == elem)
    return QuadGrid1D(space, rule, pts, wts, elem, np.asarray(vals), np.asarray(ders))


@dataclass
class BandedMatrix:
    """Square matrix with ``bandwidth`` sub- and super-diagonals.

    ``bands[bandwidth + i - j, j] == A[i, j]`` (the LAPACK general band layout).
    The LDL^T factor is computed on first solve and cached.
    """

    bands: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.bands.shape[1]

    @property
    def bandwidth(self) -> int:
        return (self.bands.shape[0] - 1) // 2

    @classmethod
    def from_dense(cls, a, bandwidth: int) -> "BandedMatrix":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        bands = np.zeros((2 * bandwidth + 1, n))
        for k in range(-bandwidth, bandwidth + 1):
            d = np.diagonal(a, offset=k)
            if d.size:  # diagonals beyond the matrix stay zero
                bands[bandwidth - k, max(k, 0):max(k, 0) + d.size] = d
        return cls(bands)

    @classmethod
    def identity(cls, n: int) -> "BandedMatrix":
        return cls(np.ones((1, n)))

    def to_dense(self) -> np.ndarray:
        n, b = self.size, self.bandwidth
        a = np.zeros((n, n))
        for k in range(-b, b + 1):
            if k >= 0:
                idx = np.arange(n - k)
                a[idx, idx + k] = self.bands[b - k, k:]
            else:
                idx = np.arange(n + k)
                a[idx - k, idx] = self.bands[b - k, :n + k]
        return a

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n, b = self.size, self.bandwidth
        x2 = x.reshape(n, -1)
        y = np.zeros_like(x2)
        for k in range(-b, b + 1):
            if k >= 0:
                y[:n - k] += self.bands[b - k, k:, None] * x2[k:]
            else:
                y[-k:] += self.bands[b - k, :n + k, None] * x2[:n + k]
        return y.reshape(x.shape)

    def norm_inf(self) -> float:
        return float(np.max(np.sum(np.abs(self.to_dense()), axis=1)))

    def lower(self) -> np.ndarray:
        """``lower[k, j] = A[j + k, j]`` for k = 0..bandwidth."""
        b = self.bandwidth
        return np.ascontiguousarray(self.bands[b:])

    def is_symmetric(self, rtol=1e-13) -> bool:
        b, n = self.bandwidth, self.size
        scale = np.max(np.abs(self.bands)) if self.bands.size else 0.0
        for k in range(1, b + 1):
            upper = self.bands[b - k, k:]
            lower = self.bands[b + k, :n - k]
            if np.any(np.abs(upper - lower) > rtol * scale):
                return False
        return True

    def factor(self) -> np.ndarray:
        if self._factor is None:
            if not self.is_symmetric():
                raise ValueError("banded LDL^T needs a symmetric matrix")
            fac, bad = kernels.banded_ldl_factor(self.lower(), PIVOT_RTOL)
            if bad >= 0:
                raise SingularMatrixError(
                    f"pivot {bad} of a {self.size}x{self.size} banded matrix is "
                    f"below {PIVOT_RTOL:g} of the largest diagonal entry")
            self._factor = np.asarray(fac)
        return self._factor


def mass_matrix_1d(space: SplineSpace1D, quad: QuadratureRule | None = None) -> BandedMatrix:
    """Banded Gram matrix ``M[i, k] = int B_i B_k dx`` with bandwidth = degree."""
    quad = quad or default_rule(space)
    if quad.exactness < 2 * space.degree:
        raise ValueError(
            f"quadrature exact to degree {quad.exactness} cannot integrate "
            f"products of degree-{space.degree} splines")
    qg = quad_grid(space, quad)
    p, n = space.degree, space.n_basis
    bands = np.zeros((2 * p + 1, n))
    wv = qg.weights[:, None] * qg.vals
    for a in range(p + 1):
        for c in range(p + 1):
            contrib = wv[:, a] * qg.vals[:, c]
            i = qg.first + a
            k = qg.first + c
            np.add.at(bands, (p + i - k, k), contrib)
    return BandedMatrix(bands)


def banded_solve(m: BandedMatrix, rhs) -> np.ndarray:
    """Solve ``m x = rhs`` by band LDL^T (Thomas' algorithm when bandwidth is 1).

    ``rhs`` may be a vector or an ``(n, k)`` matrix of right-hand sides. Cost is
    linear in ``n`` for a fixed bandwidth.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != m.size:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has size {m.size}")
    fac = m.factor()
    vec = rhs.ndim == 1
    r = np.ascontiguousarray(rhs.reshape(m.size, -1))
    x = np.asarray(kernels.banded_ldl_solve(fac, r))
    return x.ravel() if vec else x.reshape(rhs.shape)
