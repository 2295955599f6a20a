"""Baseline pressure solve: full Galerkin system on the tensor spline space
and Jacobi-preconditioned conjugate gradients.

The pressure equation ``div(alpha grad p) = div(g K lambda_rho) - q`` tested
with ``v = B_k(x) B_l(y)`` reads

    (alpha grad p, grad v) = (g K lambda_rho, grad v) + (q_w + q_g, v)

with ``g = (0, -g)``, ``alpha = ((1 - S)/mu_w + S/mu_g) K`` and
``lambda_rho = (1 - S) rho_w / mu_w + S rho_g / mu_g``. Homogeneous Dirichlet
conditions are imposed on all four sides.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .projection import TensorQuad, TensorSplineField
from .reservoir import Reservoir, alpha_at, gravity_coefficient
from .spline import QuadratureRule, SplineSpace1D

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SparseSystem:
    """Symmetric system on all ``nx * ny`` coefficients (row-major ``i * ny + j``).

    Dirichlet rows and columns are replaced by identity rows with zero load,
    which keeps the matrix symmetric positive definite.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    space_x: SplineSpace1D
    space_y: SplineSpace1D
    fixed: np.ndarray          # boolean mask over the flattened unknowns

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed


def _local_indices(tq: TensorQuad):
    """Global basis indices touched by each quadrature point along each axis."""
    px = tq.space_x.degree + 1
    py = tq.space_y.degree + 1
    ix = tq.gx.first[:, None] + np.arange(px)[None, :]
    iy = tq.gy.first[:, None] + np.arange(py)[None, :]
    return ix, iy


def assemble_stiffness(tq: TensorQuad, alpha_q: np.ndarray) -> sp.csr_matrix:
    """``A[(i,j),(k,l)] = int alpha grad(B_i B_j) . grad(B_k B_l)`` on the reference square.

    ``alpha_q`` holds the coefficient at the tensor quadrature points. The
    assembly loops over elements in a fixed order, so results are
    reproducible bit for bit.
    """
    sx, sy = tq.space_x, tq.space_y
    px, py = sx.degree + 1, sy.degree + 1
    qx, qy = tq.gx.rule.points_per_element, tq.gy.rule.points_per_element
    ex, ey = sx.n_elements, sy.n_elements
    # per-element arrays: (element, point-in-element, local basis)
    vx = tq.gx.vals.reshape(ex, qx, px)
    dx = tq.gx.ders.reshape(ex, qx, px)
    vy = tq.gy.vals.reshape(ey, qy, py)
    dy = tq.gy.ders.reshape(ey, qy, py)
    wa = (tq.weights * alpha_q).reshape(ex, qx, ey, qy)
    # K[ex, ey, a, b, c, d] for test (a,b) / trial (c,d)
    kxx = np.einsum("epa,epc->epac", dx, dx)
    kvv = np.einsum("epa,epc->epac", vx, vx)
    lyy = np.einsum("fqb,fqd->fqbd", dy, dy)
    lvv = np.einsum("fqb,fqd->fqbd", vy, vy)
    local = (np.einsum("epfq,epac,fqbd->efabcd", wa, kxx, lvv, optimize=True)
             + np.einsum("epfq,epac,fqbd->efabcd", wa, kvv, lyy, optimize=True))
    first_x = tq.gx.first.reshape(ex, qx)[:, 0]
    first_y = tq.gy.first.reshape(ey, qy)[:, 0]
    gi = first_x[:, None] + np.arange(px)[None, :]          # (ex, px)
    gj = first_y[:, None] + np.arange(py)[None, :]          # (ey, py)
    ny = sy.n_basis
    row = (gi[:, None, :, None] * ny + gj[None, :, None, :])  # (ex, ey, px, py)
    rows = np.broadcast_to(row[:, :, :, :, None, None], local.shape)
    cols = np.broadcast_to(row[:, :, None, None, :, :], local.shape)
    n = sx.n_basis * sy.n_basis
    a = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return a.tocsr()


def dirichlet_mask(space_x: SplineSpace1D, space_y: SplineSpace1D) -> np.ndarray:
    mask = np.zeros((space_x.n_basis, space_y.n_basis), dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    return mask.ravel()


def apply_dirichlet(matrix: sp.csr_matrix, rhs: np.ndarray, fixed: np.ndarray):
    """Symmetric elimination of zero-valued Dirichlet unknowns."""
    keep = sp.diags((~fixed).astype(float))
    ident = sp.diags(fixed.astype(float))
    a = (keep @ matrix @ keep + ident).tocsr()
    a.eliminate_zeros()
    b = np.where(fixed, 0.0, rhs)
    return a, b


def build_system(tq: TensorQuad, alpha_q: np.ndarray, load: np.ndarray) -> SparseSystem:
    """Stiffness with coefficient ``alpha_q`` plus a load matrix ``(nx, ny)``."""
    fixed = dirichlet_mask(tq.space_x, tq.space_y)
    a, b = apply_dirichlet(assemble_stiffness(tq, alpha_q), np.asarray(load).ravel(), fixed)
    return SparseSystem(a, b, tq.space_x, tq.space_y, fixed)


def assemble_pressure_system(s_g: TensorSplineField, reservoir: Reservoir,
                             quad: QuadratureRule | None = None,
                             tq: TensorQuad | None = None) -> SparseSystem:
    """Galerkin pressure system in Pa for the saturation ``s_g``.

    The weak form is integrated in reference coordinates; the ``1/L`` factors
    from the map ``x_phys = L x_ref`` are folded into the flux and source
    terms so the solution comes out in physical units.
    """
    tq = tq or TensorQuad(s_g.space_x, s_g.space_y, quad)
    f = reservoir.fluids
    lx, ly = reservoir.domain.length_x, reservoir.domain.length_y
    if abs(lx - ly) > 1e-12 * max(lx, ly):
        raise ValueError("pressure assembly assumes a square domain")
    s = np.clip(tq.values(s_g.coeffs), 0.0, 1.0)
    k = np.asarray(reservoir.k(tq.X, tq.Y))
    alpha = alpha_at(s, k, f)
    # (F, grad v) with F = (0, -g K lambda_rho): only the y-derivative survives
    flux_y = -f.gravity * gravity_coefficient(s, k, f)
    q = reservoir.rate(tq.X, tq.Y, "gas") + reservoir.rate(tq.X, tq.Y, "water")
    w = tq.weights
    load = ly * tq.test_dy(w * flux_y) + lx * ly * tq.test_values(w * q)
    return build_system(tq, alpha, load)


def pcg(matrix, rhs, tol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||r|| <= tol * ||b||``. Returns ``(x, iterations, relres)``;
    raises :class:`ConvergenceError` if ``maxiter`` (default ``10 n``) is hit.
    """
    n = matrix.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    b = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    dinv = 1.0 / matrix.diagonal()
    r = b - matrix @ x
    z = dinv * r
    d = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        ad = matrix @ d
        step = rz / (d @ ad)
        x += step * d
        r -= step * ad
        relres = np.linalg.norm(r) / bnorm
        if relres <= tol:
            return x, it, relres
        z = dinv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise ConvergenceError(f"CG did not converge in {maxiter} iterations "
                           f"(relative residual {relres:.3e})", relres, maxiter)


def solve_pressure_direct(system: SparseSystem, tol: float = 1e-10) -> TensorSplineField:
    """Solve the assembled system; boundary coefficients come out exactly 0."""
    x, it, relres = pcg(system.matrix, system.rhs, tol=tol)
    log.debug("pressure CG: %d iterations, relative residual %.2e", it, relres)
    x[system.fixed] = 0.0
    coeffs = x.reshape(system.space_x.n_basis, system.space_y.n_basis)
    return TensorSplineField(system.space_x, system.space_y, coeffs)


def solve_poisson(tq: TensorQuad, alpha: Callable | float, source: Callable) -> TensorSplineField:
    """``-div(alpha grad u) = source`` with ``u = 0`` on the boundary (reference square)."""
    a = alpha(tq.X, tq.Y) if callable(alpha) else np.full(tq.X.shape, float(alpha))
    load = tq.test_values(tq.weights * source(tq.X, tq.Y))
    return solve_pressure_direct(build_system(tq, a, load))
