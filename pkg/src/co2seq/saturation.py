"""Explicit gas-saturation update as one isogeometric L2 projection per step.

For every test function ``v = B_k(x) B_l(y)`` the new coefficients solve

    (S^{n+1}, v) = (S^n, v)
        + (tau/phi) ((S^n/mu_g) K (rho_g g dv/dy - grad p . grad v) + q_g v)

with the integral taken by tensor Gauss quadrature in reference coordinates.
The mass matrix on the left is Kronecker-factored, so each step costs a load
assembly plus two sweeps of banded solves.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .projection import Projector, TensorQuad, TensorSplineField, eval_points
from .reservoir import Reservoir
from .spline import QuadratureRule, basis_at

log = logging.getLogger(__name__)

CFL_WARN = 0.5


@dataclass
class SaturationState:
    """Gas saturation field plus step counter and elapsed time (s).

    Brine saturation is ``1 - s_g`` and is never stored. The spline holds the
    raw projection; consumers clamp its values to [0, 1] (clipping the
    coefficients instead would inject mass through the sign-alternating tails
    that the projection of a sharp source produces). ``clamped`` counts the
    quadrature values that needed clamping in the step that produced it.
    """

    s_g: TensorSplineField
    step_index: int = 0
    time: float = 0.0
    clamped: int = 0

    def copy(self):
        return SaturationState(self.s_g.copy(), self.step_index, self.time, self.clamped)


def _test_function(field, x, y, k, l):
    """Value and reference gradient of ``B_k(x) B_l(y)`` at one point."""
    fx, vx, dx = basis_at(field.space_x, [x])
    fy, vy, dy = basis_at(field.space_y, [y])
    ax, ay = k - int(fx[0]), l - int(fy[0])
    px, py = field.space_x.degree, field.space_y.degree
    if not (0 <= ax <= px and 0 <= ay <= py):
        return 0.0, 0.0, 0.0
    bx, dbx = vx[0, ax], dx[0, ax]
    by, dby = vy[0, ay], dy[0, ay]
    return bx * by, dbx * by, bx * dby


def saturation_rhs_integrand(s_n: TensorSplineField, p_n: TensorSplineField,
                             reservoir: Reservoir, x: float, y: float, k: int, l: int,
                             tau: float | None = None) -> float:
    """Pointwise integrand of the saturation update tested against ``B_k B_l``.

    ``(x, y)`` are reference coordinates; the value is per unit reference
    area, i.e. the physical integrand with the Jacobian ``Lx Ly`` divided out
    on both sides of the projection.
    """
    tau = reservoir.tau if tau is None else tau
    f = reservoir.fluids
    lx, ly = reservoir.domain.length_x, reservoir.domain.length_y
    s, _, _ = eval_points(s_n, [x], [y])
    _, px, py = eval_points(p_n, [x], [y])
    s, px, py = float(s[0]), float(px[0]), float(py[0])
    s_mob = min(max(s, 0.0), 1.0)
    v, vx, vy = _test_function(s_n, x, y, k, l)
    phi = float(reservoir.phi(x, y))
    kk = float(reservoir.k(x, y))
    strength = float(reservoir.strength(x, y))
    mob = s_mob / f.mu_g * kk
    drift = mob * (f.rho_g * f.gravity * vy / ly - (px * vx / lx ** 2 + py * vy / ly ** 2))
    return s * v + tau / phi * drift + strength * v


class SaturationStepper:
    """Caches rock properties and basis data at the quadrature points."""

    def __init__(self, reservoir: Reservoir, space_x, space_y,
                 quad: QuadratureRule | None = None, load_quad: QuadratureRule | None = None,
                 cfl_warn: float = CFL_WARN):
        self.reservoir = reservoir
        self.projector = Projector(space_x, space_y, quad, load_quad)
        tq: TensorQuad = self.projector.tq
        self.tq = tq
        self.phi = np.asarray(reservoir.phi(tq.X, tq.Y))
        self.k = np.asarray(reservoir.k(tq.X, tq.Y))
        self.strength = reservoir.strength(tq.X, tq.Y)
        self.cfl_warn = cfl_warn
        self._p_last = None
        self._grad_p = None

    def _pressure_gradient(self, p: TensorSplineField):
        # fields are treated as immutable once handed to the stepper
        if p is not self._p_last:
            self._grad_p = self.tq.gradients(p.coeffs)
            self._p_last = p
        return self._grad_p

    def cfl_number(self, p: TensorSplineField, tau: float) -> float:
        """``tau * max|u_gas| / h`` with ``u_gas = K/(phi mu_g) (|grad p| + rho_g g)``."""
        f = self.reservoir.fluids
        lx, ly = self.reservoir.domain.length_x, self.reservoir.domain.length_y
        gx, gy = self._pressure_gradient(p)
        speed = self.k / (self.phi * f.mu_g) * (np.hypot(gx / lx, gy / ly) + f.rho_g * f.gravity)
        h = min(lx / self.tq.space_x.n_elements, ly / self.tq.space_y.n_elements)
        return float(tau * speed.max() / h)

    def load(self, s: TensorSplineField, p: TensorSplineField, tau: float) -> tuple[np.ndarray, int]:
        """Right-hand side of the projection and the number of clamped values."""
        f = self.reservoir.fluids
        lx, ly = self.reservoir.domain.length_x, self.reservoir.domain.length_y
        tq = self.tq
        w = tq.weights
        sq = tq.values(s.coeffs)
        s_mob = np.clip(sq, 0.0, 1.0)
        n_clamped = int(np.count_nonzero(s_mob != sq))
        gx, gy = self._pressure_gradient(p)
        c = tau / self.phi * s_mob / f.mu_g * self.k
        cx = -c * gx / lx ** 2
        cy = c * (f.rho_g * f.gravity / ly - gy / ly ** 2)
        rhs = (tq.test_values(w * (sq + self.strength))
               + tq.test_dx(w * cx) + tq.test_dy(w * cy))
        return rhs, n_clamped

    def step(self, state: SaturationState, p: TensorSplineField,
             tau: float | None = None) -> SaturationState:
        tau = self.reservoir.tau if tau is None else tau
        if not tau > 0:
            raise ValueError("time step must be positive")
        cfl = self.cfl_number(p, tau)
        if cfl > self.cfl_warn:
            warnings.warn(f"explicit saturation step has CFL number {cfl:.3g} "
                          f"(> {self.cfl_warn}); results may be unstable", stacklevel=2)
        rhs, n_bad = self.load(state.s_g, p, tau)
        if n_bad:
            log.debug("step %d: clamped %d saturation values", state.step_index + 1, n_bad)
        coeffs = self.projector.solve(rhs)
        coeffs[0, :] = coeffs[-1, :] = coeffs[:, 0] = coeffs[:, -1] = 0.0
        field = TensorSplineField(state.s_g.space_x, state.s_g.space_y, coeffs)
        return SaturationState(field, state.step_index + 1, state.time + tau, n_bad)


def step_saturation(state: SaturationState, p_n: TensorSplineField, reservoir: Reservoir,
                    tau: float | None = None, quad: QuadratureRule | None = None,
                    stepper: SaturationStepper | None = None) -> SaturationState:
    """Advance the saturation by one forward-Euler step under pressure ``p_n``."""
    if stepper is None:
        stepper = SaturationStepper(reservoir, state.s_g.space_x, state.s_g.space_y, quad)
    return stepper.step(state, p_n, tau)


def total_gas_mass(state: SaturationState | TensorSplineField, porosity=None,
                   tq: TensorQuad | None = None) -> float:
    """``int phi S_g dOmega`` over the reference square (``phi = 1`` when omitted).

    Multiply by ``Lx * Ly`` for physical pore volume in m^3.
    """
    field = state.s_g if isinstance(state, SaturationState) else state
    if tq is None:
        from .spline import gauss_rule
        rule = gauss_rule(field.space_x.degree + 2)
        tq = TensorQuad(field.space_x, field.space_y, rule)
    s = tq.values(field.coeffs)
    phi = 1.0 if porosity is None else np.asarray(porosity(tq.X, tq.Y), dtype=float)
    return float(np.sum(tq.weights * phi * s))
