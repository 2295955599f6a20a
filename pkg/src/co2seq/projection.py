"""Tensor-product L2 projection with the Kronecker-factored mass matrix.

The 2D Gram matrix of ``B_i(x) B_j(y)`` factors as ``Mx (x) My``, so a
projection is two sweeps of 1D banded solves: one along x for every column of
the load, one along y for every row. Cost is linear in the number of unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spline import (BandedMatrix, QuadratureRule, QuadGrid1D, SplineSpace1D,
                     _check_unit, banded_solve, basis_at, collocation_matrices,
                     default_rule, mass_matrix_1d, quad_grid)

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class TensorSplineField:
    """``f(x, y) = sum_ij coeffs[i, j] B_i(x) B_j(y)`` on the reference square."""

    space_x: SplineSpace1D
    space_y: SplineSpace1D
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        want = (self.space_x.n_basis, self.space_y.n_basis)
        if self.coeffs.shape != want:
            raise ValueError(f"coeffs shape {self.coeffs.shape} does not match spaces {want}")

    @classmethod
    def zeros(cls, space_x, space_y):
        return cls(space_x, space_y, np.zeros((space_x.n_basis, space_y.n_basis)))

    @classmethod
    def constant(cls, space_x, space_y, value):
        return cls(space_x, space_y, np.full((space_x.n_basis, space_y.n_basis), float(value)))

    def copy(self):
        return TensorSplineField(self.space_x, self.space_y, self.coeffs.copy())

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.coeffs.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask


class TensorQuad:
    """Tensor Gauss grid over both spaces with cached collocation matrices."""

    def __init__(self, space_x: SplineSpace1D, space_y: SplineSpace1D,
                 quad: QuadratureRule | tuple[QuadratureRule, QuadratureRule] | None = None):
        if isinstance(quad, tuple):
            qx, qy = quad
        else:
            qx = quad or default_rule(space_x)
            qy = quad or default_rule(space_y)
        self.gx: QuadGrid1D = quad_grid(space_x, qx)
        self.gy: QuadGrid1D = quad_grid(space_y, qy)
        self.space_x, self.space_y = space_x, space_y
        self.bx, self.dbx = self.gx.matrices()
        self.by, self.dby = self.gy.matrices()
        self.weights = np.outer(self.gx.weights, self.gy.weights)
        self.X, self.Y = np.meshgrid(self.gx.points, self.gy.points, indexing="ij")

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(self.bx @ (self.by @ coeffs.T).T)

    def gradients(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gx = np.asarray(self.dbx @ (self.by @ coeffs.T).T)
        gy = np.asarray(self.bx @ (self.dby @ coeffs.T).T)
        return gx, gy

    def test_values(self, g: np.ndarray) -> np.ndarray:
        """``out[k, l] = sum_q g_q B_k(x_q) B_l(y_q)`` for a weighted integrand ``g``."""
        return np.asarray(self.bx.T @ (self.by.T @ g.T).T)

    def test_dx(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self.dbx.T @ (self.by.T @ g.T).T)

    def test_dy(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self.bx.T @ (self.dby.T @ g.T).T)


def assemble_load(space_x: SplineSpace1D, space_y: SplineSpace1D,
                  quad: QuadratureRule | None, f: Evaluator,
                  tq: TensorQuad | None = None) -> np.ndarray:
    """``load[k, l] = int int f(x, y) B_k(x) B_l(y) dx dy`` by tensor Gauss quadrature.

    ``f`` is called once with the full arrays of quadrature coordinates.
    """
    tq = tq or TensorQuad(space_x, space_y, quad)
    fq = np.broadcast_to(np.asarray(f(tq.X, tq.Y), dtype=float), tq.X.shape)
    return tq.test_values(fq * tq.weights)


def solve_kronecker(mass_x: BandedMatrix, mass_y: BandedMatrix, load) -> np.ndarray:
    """Solve ``(Mx (x) My) vec(C) = vec(load)``, i.e. ``Mx C My^T = load``."""
    load = np.asarray(load, dtype=float)
    if load.shape != (mass_x.size, mass_y.size):
        raise ValueError(f"load shape {load.shape} != ({mass_x.size}, {mass_y.size})")
    tmp = banded_solve(mass_x, load)          # x sweep, every column at once
    return banded_solve(mass_y, tmp.T).T      # y sweep, every row at once


class Projector:
    """Reusable L2 projector: mass factors and quadrature built once."""

    def __init__(self, space_x: SplineSpace1D, space_y: SplineSpace1D,
                 quad: QuadratureRule | None = None, load_quad: QuadratureRule | None = None):
        self.space_x, self.space_y = space_x, space_y
        self.mass_x = mass_matrix_1d(space_x, quad)
        self.mass_y = mass_matrix_1d(space_y, quad)
        self.mass_x.factor()
        self.mass_y.factor()
        self.tq = TensorQuad(space_x, space_y, load_quad or quad)

    def solve(self, load) -> np.ndarray:
        return solve_kronecker(self.mass_x, self.mass_y, load)

    def project(self, f: Evaluator) -> TensorSplineField:
        load = assemble_load(self.space_x, self.space_y, None, f, tq=self.tq)
        return TensorSplineField(self.space_x, self.space_y, self.solve(load))

    def project_values(self, values_at_quad: np.ndarray) -> TensorSplineField:
        load = self.tq.test_values(values_at_quad * self.tq.weights)
        return TensorSplineField(self.space_x, self.space_y, self.solve(load))


def project_l2(f: Evaluator, spaces: tuple[SplineSpace1D, SplineSpace1D],
               quad: QuadratureRule | None = None) -> TensorSplineField:
    """Best L2 approximation of ``f`` in the tensor spline space."""
    return Projector(spaces[0], spaces[1], quad).project(f)


def eval_field(field: TensorSplineField, x: float, y: float) -> tuple[float, tuple[float, float]]:
    """Value and ``(d/dx, d/dy)`` of a field at one reference point."""
    v, gx, gy = eval_points(field, np.array([x], dtype=float), np.array([y], dtype=float))
    return float(v[0]), (float(gx[0]), float(gy[0]))


def eval_points(field: TensorSplineField, xs, ys):
    """Values and gradients at scattered points (arrays of equal length)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float)).ravel()
    ys = np.atleast_1d(np.asarray(ys, dtype=float)).ravel()
    _check_unit(xs)
    _check_unit(ys, "y")
    fx, vx, dx = basis_at(field.space_x, xs)
    fy, vy, dy = basis_at(field.space_y, ys)
    px, py = field.space_x.degree + 1, field.space_y.degree + 1
    ix = fx[:, None] + np.arange(px)[None, :]
    iy = fy[:, None] + np.arange(py)[None, :]
    local = field.coeffs[ix[:, :, None], iy[:, None, :]]
    val = np.einsum("qa,qab,qb->q", vx, local, vy)
    gx = np.einsum("qa,qab,qb->q", dx, local, vy)
    gy = np.einsum("qa,qab,qb->q", vx, local, dy)
    return val, gx, gy


def eval_grid(field: TensorSplineField, xs, ys) -> np.ndarray:
    """Values on the tensor grid ``xs x ys``; result indexed ``[ix, iy]``."""
    bx, _ = collocation_matrices(field.space_x, xs)
    by, _ = collocation_matrices(field.space_y, ys)
    return np.asarray(bx @ (by @ field.coeffs.T).T)
