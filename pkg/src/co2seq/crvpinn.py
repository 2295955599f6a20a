"""Collocation-based robust variational PINN for the pressure equation.

The network ``net(x, y)`` is multiplied by the cutoff ``16 x(1-x) y(1-y)`` so
the Dirichlet condition holds exactly. On the lattice ``(ih, jh)``,
``0 <= i, j <= N``, testing the weak form with Kronecker deltas gives, for
every interior node ``(k, l)``,

    RES_kl = a[k-1,l](u_kl - u_{k-1,l}) + a[k,l-1](u_kl - u_{k,l-1})
           - a[k,l](u_{k+1,l} - u_kl) - a[k,l](u_{k,l+1} - u_kl) - h^2 rhs_kl

and the robust loss ``RES^T G^{-1} RES`` uses the Gram matrix of the deltas
in the discrete H^1_0 product (the scaled five-point Laplacian), factorised
once per grid size.

Everything here is nondimensional: coordinates on [0, 1]^2, ``alpha`` and
``rhs`` scaled so the unknown is O(1). See :func:`pressure_problem`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .reservoir import Reservoir, alpha_at, gravity_coefficient

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "co2seq-crvpinn-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite; carries the last finite state."""

    def __init__(self, message, mlp=None, adam=None, history=None):
        super().__init__(message)
        self.mlp = mlp
        self.adam = adam
        self.history = history


@dataclass(frozen=True)
class CollocationGrid:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("collocation grid needs N >= 2")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``X[i, j] = i h``, ``Y[i, j] = j h``."""
        c = self.coords
        return np.meshgrid(c, c, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])

    def interior_mask(self) -> np.ndarray:
        m = np.zeros((self.n + 1, self.n + 1), dtype=bool)
        m[1:-1, 1:-1] = True
        return m


# -- network -------------------------------------------------------------------

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, z: 1.0 - a * a),
    "sin": (np.sin, lambda a, z: np.cos(z)),
}


@dataclass
class MlpParams:
    """Dense network ``2 -> hidden... -> 1``. ``weights[i]`` has shape (in, out).

    Inputs in [0, 1]^2 are mapped affinely onto ``[-input_scale, input_scale]``
    before the first layer, so tanh units start in their nonlinear range.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    input_scale: float = 3.0

    def __post_init__(self):
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input width does not match previous output")
        if self.weights[0].shape[0] != 2 or self.weights[-1].shape[1] != 1:
            raise ValueError("network must map 2 inputs to 1 output")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation, self.input_scale)

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def init_mlp(widths=(2, 64, 64, 64, 1), seed=0, activation="tanh",
             input_scale: float = 3.0) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpParams(ws, bs, activation, input_scale)


def net_forward(mlp: MlpParams, xy: np.ndarray):
    """Raw network output for points ``xy`` (P, 2); returns ``(out, cache)``."""
    act, _ = _ACTIVATIONS[mlp.activation]
    a = mlp.input_scale * (2.0 * np.asarray(xy, dtype=float) - 1.0)
    cache = [(a, None)]
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        a = z if i == last else act(z)
        cache.append((a, z))
    return a[:, 0], cache


def net_backward(mlp: MlpParams, cache, dout: np.ndarray) -> list[np.ndarray]:
    """Reverse pass; ``dout`` is dLoss/d(output) per point. Returns grads like ``params()``."""
    _, dact = _ACTIVATIONS[mlp.activation]
    grads_w = [None] * len(mlp.weights)
    grads_b = [None] * len(mlp.weights)
    delta = dout[:, None]
    for i in range(len(mlp.weights) - 1, -1, -1):
        a_prev = cache[i][0]
        grads_w[i] = a_prev.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            a, z = cache[i]
            delta = (delta @ mlp.weights[i].T) * dact(a, z)
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out += [gw, gb]
    return out


def cutoff(x, y):
    """``16 x(1-x) y(1-y)``: zero on the boundary, 1 at the centre."""
    return 16.0 * x * (1.0 - x) * y * (1.0 - y)


def forward(mlp: MlpParams, grid: CollocationGrid, scale: float = 1.0) -> np.ndarray:
    """Hard-constrained network values ``u[i, j]`` on the whole lattice."""
    pts = grid.points()
    out, _ = net_forward(mlp, pts)
    u = scale * cutoff(pts[:, 0], pts[:, 1]) * out
    if not np.all(np.isfinite(u)):
        raise TrainingDiverged("network produced non-finite values", mlp)
    u = u.reshape(grid.n + 1, grid.n + 1)
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 0.0
    return u


def evaluate(mlp: MlpParams, x, y, scale: float = 1.0) -> np.ndarray:
    """Continuous surrogate ``scale * cutoff * net`` at arbitrary points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pts = np.column_stack([x.ravel(), y.ravel()])
    out, _ = net_forward(mlp, pts)
    return (scale * cutoff(pts[:, 0], pts[:, 1]) * out).reshape(x.shape)


# -- discrete operators --------------------------------------------------------

def discrete_gradient_forward(u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences; both outputs have shape ``(N, N)`` (indices 0..N-1)."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] < 2 or u.shape[1] < 2:
        raise ValueError("grid must be at least 2x2")
    gx = (u[1:, :-1] - u[:-1, :-1]) / h
    gy = (u[:-1, 1:] - u[:-1, :-1]) / h
    return gx, gy


def residual(u: np.ndarray, alpha: np.ndarray, rhs: np.ndarray, h: float) -> np.ndarray:
    """Weak residual against every interior Kronecker delta, shape ``(N-1, N-1)``."""
    u = np.ascontiguousarray(u, dtype=float)
    alpha = np.ascontiguousarray(alpha, dtype=float)
    return np.asarray(kernels.stencil_apply(u, alpha)) - h * h * np.asarray(rhs)[1:-1, 1:-1]


def residual_adjoint(w: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Transpose of ``u -> residual(u, alpha, 0, h)``; returns a full-lattice array."""
    return np.asarray(kernels.stencil_adjoint(np.ascontiguousarray(w, dtype=float),
                                              np.ascontiguousarray(alpha, dtype=float)))


class GramOperator:
    """Factorised Gram matrix of the interior deltas in the discrete H^1_0 product.

    ``G = h^-2 * (4 on the diagonal, -1 for each of the four lattice
    neighbours)``, ordered row-major over ``(k, l)``.
    """

    def __init__(self, n: int):
        self.n = n
        self.h = 1.0 / n
        self.matrix = gram_matrix(n)
        self._lu = spla.splu(self.matrix.tocsc())

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Forward then backward substitution with the stored LU factors."""
        r = np.asarray(r, dtype=float)
        return self._lu.solve(r.ravel()).reshape(r.shape)


def gram_matrix(n: int) -> sp.csr_matrix:
    m = n - 1
    h2 = float(n * n)
    main = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m))
    eye = sp.identity(m)
    return (h2 * (sp.kron(main, eye) + sp.kron(eye, main))).tocsr()


@lru_cache(maxsize=8)
def gram_operator(n: int) -> GramOperator:
    """One factorisation per grid size for the lifetime of the process."""
    return GramOperator(n)


def loss(res: np.ndarray, gram: GramOperator) -> float:
    """Robust loss ``RES^T G^{-1} RES``."""
    q = gram.solve(res)
    return float(np.sum(res * q))


# -- problem data --------------------------------------------------------------

def compute_rhs_grid(s_grid: np.ndarray, reservoir: Reservoir, grid: CollocationGrid,
                     alpha_ref: float | None = None) -> np.ndarray:
    """Nondimensional ``div_+(g K lambda_rho) - (q_w + q_g)`` on the lattice.

    The buoyancy flux is scaled by ``alpha_ref rho_w g`` and the source by
    ``alpha_ref p_ref / L^2`` with ``p_ref = rho_w g L``. Entries with
    ``i = N`` or ``j = N`` (where the forward divergence is undefined) are 0.
    """
    f = reservoir.fluids
    alpha_ref = reference_alpha(reservoir) if alpha_ref is None else alpha_ref
    X, Y = grid.mesh()
    s = np.clip(np.asarray(s_grid, dtype=float), 0.0, 1.0)
    k = np.asarray(reservoir.k(X, Y))
    out = np.zeros_like(X)
    if f.gravity > 0:
        flux_y = -gravity_coefficient(s, k, f) / (alpha_ref * f.rho_w)
        out[:-1, :-1] = (flux_y[:-1, 1:] - flux_y[:-1, :-1]) / grid.h
    length = reservoir.domain.length_y
    q = reservoir.rate(X, Y, "gas") + reservoir.rate(X, Y, "water")
    q_scale = alpha_ref * reference_pressure(reservoir) / length ** 2
    out[:-1, :-1] -= (q / q_scale)[:-1, :-1]
    return out


def reference_pressure(reservoir: Reservoir) -> float:
    """``rho_w g L`` in Pa, or 1 Pa without gravity (``u_scale`` absorbs the rest)."""
    p = reservoir.pressure_scale
    return p if p > 0 else 1.0


def reference_alpha(reservoir: Reservoir) -> float:
    return float(np.mean(reservoir.permeability.values)) / reservoir.fluids.mu_w


@dataclass
class PressureProblem:
    """Lattice data for one pressure solve.

    ``rhs`` is already divided by ``u_scale`` so the trained unknown is O(1);
    physical pressure is ``p_ref * u_scale * u``. Keeping the target O(1)
    matters for Adam: with raw magnitudes the gradients sink below its
    ``eps`` and the effective step collapses.

    ``load`` is the term actually subtracted in :func:`residual`: integrating
    ``div(alpha grad p) = f`` by parts against a test function moves ``f``
    to the other side with a minus sign, so ``load = -rhs``.
    """

    grid: CollocationGrid
    alpha: np.ndarray
    rhs: np.ndarray
    p_ref: float
    u_scale: float = 1.0
    gram: GramOperator = field(default=None, repr=False)

    def __post_init__(self):
        if self.gram is None:
            self.gram = gram_operator(self.grid.n)

    @property
    def load(self) -> np.ndarray:
        return -self.rhs

    @property
    def pressure_unit(self) -> float:
        """Pa per unit of network output."""
        return self.p_ref * self.u_scale


def pressure_problem(s_grid: np.ndarray, reservoir: Reservoir, grid: CollocationGrid,
                     u_scale: float | None = None) -> PressureProblem:
    """Assemble nondimensional ``alpha``/``rhs`` lattices from a saturation lattice.

    When ``u_scale`` is omitted it is set to the peak of the constant-coefficient
    solution ``G^{-1} load / mean(alpha)``, which only fixes the magnitude the
    network has to represent.
    """
    X, Y = grid.mesh()
    a_ref = reference_alpha(reservoir)
    s = np.clip(np.asarray(s_grid, dtype=float), 0.0, 1.0)
    alpha = alpha_at(s, reservoir.k(X, Y), reservoir.fluids) / a_ref
    rhs = compute_rhs_grid(s, reservoir, grid, a_ref)
    gram = gram_operator(grid.n)
    if u_scale is None:
        est = gram.solve(-rhs[1:-1, 1:-1]) / np.mean(alpha)
        peak = float(np.max(np.abs(est)))
        u_scale = peak if peak > 0 else 1.0
    return PressureProblem(grid, alpha, rhs / u_scale, reference_pressure(reservoir), u_scale, gram)


# -- loss gradient and training ------------------------------------------------

def loss_and_grad(mlp: MlpParams, grid: CollocationGrid, alpha, rhs, gram: GramOperator,
                  scale: float = 1.0):
    """Robust loss and its gradient with respect to every network parameter.

    The residual is affine in the lattice values, so ``dLOSS/du`` is the
    transposed stencil applied to ``2 G^{-1} RES``; the network part is plain
    reverse-mode through ``scale * cutoff * net``.
    """
    pts = grid.points()
    out, cache = net_forward(mlp, pts)
    c = scale * cutoff(pts[:, 0], pts[:, 1])
    u = (c * out).reshape(grid.n + 1, grid.n + 1)
    if not np.all(np.isfinite(u)):
        raise TrainingDiverged("network produced non-finite values", mlp)
    res = residual(u, alpha, rhs, grid.h)
    q = gram.solve(res)
    value = float(np.sum(res * q))
    du = residual_adjoint(2.0 * q, alpha)
    grads = net_backward(mlp, cache, c * du.ravel())
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDiverged("non-finite gradient", mlp)
    return value, grads


def grad_loss(mlp: MlpParams, grid: CollocationGrid, alpha, rhs, gram: GramOperator,
              scale: float = 1.0) -> list[np.ndarray]:
    return loss_and_grad(mlp, grid, alpha, rhs, gram, scale)[1]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, mlp: MlpParams, **kw) -> "AdamState":
        ps = mlp.params()
        return cls([np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps], **kw)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.beta1, self.beta2, self.eps)


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], adam: AdamState, lr: float):
    """In-place Adam step with bias correction."""
    adam.step += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** adam.step
    c2 = 1.0 - b2 ** adam.step
    for p, g, m, v in zip(params, grads, adam.m, adam.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)


def train(mlp: MlpParams, adam: AdamState, problem: PressureProblem, epochs: int,
          lr: float = 1e-4, callback=None):
    """Full-batch Adam on the robust loss.

    Returns ``(mlp, adam, history)`` with one loss value per epoch (the loss
    at the parameters entering that epoch). The inputs are not modified.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    mlp = mlp.copy()
    adam = adam.copy()
    params = mlp.params()
    history = np.empty(epochs)
    last_finite = (mlp.copy(), adam.copy())
    for epoch in range(epochs):
        try:
            # overflow is caught by the finiteness checks below, not by numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = loss_and_grad(mlp, problem.grid, problem.alpha, problem.load,
                                             problem.gram)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", *last_finite,
                                   history[:epoch]) from None
        if not np.isfinite(value):
            raise TrainingDiverged(f"epoch {epoch}: loss is {value}", *last_finite,
                                   history[:epoch])
        history[epoch] = value
        last_finite = (mlp.copy(), adam.copy())
        adam_update(params, grads, adam, lr)
        if callback is not None:
            callback(epoch, value)
    return mlp, adam, history


# -- checkpoints ---------------------------------------------------------------
#
# Plain text, stable across runs:
#
#   co2seq-crvpinn-checkpoint 1
#   activation tanh
#   input_scale <f>
#   widths 2 64 64 64 1
#   adam step <int> beta1 <f> beta2 <f> eps <f>
#   then, for every parameter array in the order W0 b0 W1 b1 ...:
#     param <name> <rows> <cols>          (cols = 1 for biases)
#     one line per row, values in row-major order, repr() precision
#   followed by the same blocks for Adam's first (m_*) and second (v_*) moments.

def _write_array(fh, name, a):
    a2 = a.reshape(a.shape[0], -1)
    fh.write(f"param {name} {a2.shape[0]} {a2.shape[1]}\n")
    for row in a2:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_checkpoint(path, mlp: MlpParams, adam: AdamState | None = None):
    adam = adam or AdamState.for_params(mlp)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(f"activation {mlp.activation}\n")
        fh.write(f"input_scale {mlp.input_scale!r}\n")
        fh.write("widths " + " ".join(str(w) for w in mlp.widths) + "\n")
        fh.write(f"adam step {adam.step} beta1 {adam.beta1!r} beta2 {adam.beta2!r} eps {adam.eps!r}\n")
        names = []
        for i in range(len(mlp.weights)):
            names += [f"W{i}", f"b{i}"]
        for prefix, arrays in (("", mlp.params()), ("m_", adam.m), ("v_", adam.v)):
            for name, a in zip(names, arrays):
                _write_array(fh, prefix + name, a)


def load_checkpoint(path) -> tuple[MlpParams, AdamState]:
    path = Path(path)
    lines = path.read_text().splitlines()
    it = iter(enumerate(lines, 1))

    def nxt():
        try:
            return next(it)
        except StopIteration:
            raise ValueError(f"{path}: truncated checkpoint") from None

    _, head = nxt()
    parts = head.split()
    if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a CRVPINN checkpoint")
    if int(parts[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {parts[1]}")
    activation = nxt()[1].split()[1]
    input_scale = float(nxt()[1].split()[1])
    widths = [int(t) for t in nxt()[1].split()[1:]]
    tok = nxt()[1].split()
    step, beta1, beta2, eps = int(tok[2]), float(tok[4]), float(tok[6]), float(tok[8])
    n_layers = len(widths) - 1

    def read_block():
        lineno, line = nxt()
        tok = line.split()
        if tok[0] != "param":
            raise ValueError(f"{path}:{lineno}: expected 'param', got {line!r}")
        rows, cols = int(tok[2]), int(tok[3])
        data = [[float(v) for v in nxt()[1].split()] for _ in range(rows)]
        a = np.array(data, dtype=float).reshape(rows, cols)
        return a

    arrays = [read_block() for _ in range(3 * 2 * n_layers)]
    p, m, v = (arrays[:2 * n_layers], arrays[2 * n_layers:4 * n_layers],
               arrays[4 * n_layers:])

    def split(arrs):
        return [arrs[2 * i] for i in range(n_layers)], [arrs[2 * i + 1][:, 0] for i in range(n_layers)]

    ws, bs = split(p)
    mlp = MlpParams(ws, bs, activation, input_scale)
    if list(mlp.widths) != widths:
        raise ValueError(f"{path}: layer shapes disagree with header widths {widths}")
    mw, mb = split(m)
    vw, vb = split(v)
    adam = AdamState([a for pair in zip(mw, mb) for a in pair],
                     [a for pair in zip(vw, vb) for a in pair], step, beta1, beta2, eps)
    return mlp, adam
