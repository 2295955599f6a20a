import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from co2seq import crvpinn as c
from co2seq.reservoir import FluidParams, MaterialField, Reservoir, SourceDisk, builtin_map


def stencil_matrix(alpha):
    """Independent assembly of the interior residual operator from its closed form."""
    n = alpha.shape[0] - 1
    m = n - 1
    idx = lambda k, l: (k - 1) * m + (l - 1)
    rows, cols, vals = [], [], []

    def add(k, l, i, j, v):
        if 1 <= i <= n - 1 and 1 <= j <= n - 1:   # boundary values are fixed at 0
            rows.append(idx(k, l))
            cols.append(idx(i, j))
            vals.append(v)

    for k in range(1, n):
        for l in range(1, n):
            a_w, a_s, a_c = alpha[k - 1, l], alpha[k, l - 1], alpha[k, l]
            add(k, l, k, l, a_w + a_s + 2 * a_c)
            add(k, l, k - 1, l, -a_w)
            add(k, l, k, l - 1, -a_s)
            add(k, l, k + 1, l, -a_c)
            add(k, l, k, l + 1, -a_c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m * m, m * m))


def five_point(u):
    return (4 * u[1:-1, 1:-1] - u[:-2, 1:-1] - u[2:, 1:-1] - u[1:-1, :-2] - u[1:-1, 2:])


def tiny_problem(rng, n=8, widths=(2, 8, 1)):
    grid = c.CollocationGrid(n)
    mlp = c.init_mlp(widths, seed=3)
    for p in mlp.params():
        p += 0.1 * rng.normal(size=p.shape)
    alpha = rng.uniform(0.5, 2.0, (n + 1, n + 1))
    rhs = rng.normal(size=(n + 1, n + 1))
    return grid, mlp, alpha, rhs


# -- grid and network --------------------------------------------------------

def test_grid_geometry():
    g = c.CollocationGrid(10)
    assert g.h * g.n == 1.0
    mask = g.interior_mask()
    assert mask.shape == (11, 11)
    assert mask.sum() == 81
    assert not mask[0].any() and not mask[:, -1].any()
    with pytest.raises(ValueError):
        c.CollocationGrid(1)


def test_forward_boundary_exactly_zero(rng):
    g = c.CollocationGrid(12)
    mlp = c.init_mlp((2, 16, 16, 1), seed=1)
    for p in mlp.params():
        p += rng.normal(size=p.shape)
    u = c.forward(mlp, g)
    assert np.all(u[0] == 0) and np.all(u[-1] == 0) and np.all(u[:, 0] == 0) and np.all(u[:, -1] == 0)
    assert np.any(u[1:-1, 1:-1] != 0)


def test_zero_last_layer_gives_zero():
    mlp = c.init_mlp((2, 8, 8, 1), seed=0)
    mlp.weights[-1][:] = 0
    mlp.biases[-1][:] = 0
    assert np.all(c.forward(mlp, c.CollocationGrid(6)) == 0)


def test_cutoff_normalisation():
    assert c.cutoff(0.5, 0.5) == 1.0
    assert c.cutoff(0.0, 0.3) == c.cutoff(0.7, 1.0) == 0.0


def test_init_is_glorot_and_seeded():
    a = c.init_mlp((2, 64, 64, 64, 1), seed=5)
    b = c.init_mlp((2, 64, 64, 64, 1), seed=5)
    for w1, w2, (fi, fo) in zip(a.weights, b.weights, [(2, 64), (64, 64), (64, 64), (64, 1)]):
        np.testing.assert_array_equal(w1, w2)
        assert np.abs(w1).max() <= np.sqrt(6 / (fi + fo))
    assert all(np.all(bias == 0) for bias in a.biases)


def test_mlp_rejects_bad_shapes():
    with pytest.raises(ValueError):
        c.MlpParams([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ValueError):
        c.init_mlp((2, 4, 1), activation="relu6")


def test_evaluate_matches_forward_on_lattice(rng):
    g = c.CollocationGrid(5)
    mlp = c.init_mlp((2, 8, 1), seed=2)
    X, Y = g.mesh()
    np.testing.assert_allclose(c.evaluate(mlp, X, Y, 2.0), c.forward(mlp, g, 2.0), atol=1e-15)


# -- discrete operators ------------------------------------------------------

def test_forward_gradient_constant_and_linear():
    n = 10
    x = np.arange(n + 1) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    gx, gy = c.discrete_gradient_forward(np.full((n + 1, n + 1), 3.0), 1 / n)
    assert np.all(gx == 0) and np.all(gy == 0)
    gx, gy = c.discrete_gradient_forward(X, 1 / n)
    np.testing.assert_allclose(gx, 1.0, atol=1e-13)
    assert np.all(gy == 0)


def test_forward_gradient_quadratic_bias():
    n = 10
    x = np.arange(n + 1) / n
    X, _ = np.meshgrid(x, x, indexing="ij")
    gx, _ = c.discrete_gradient_forward(X ** 2, 1 / n)
    # ((x + h)^2 - x^2) / h = 2x + h
    assert np.max(np.abs(gx - 2 * X[:-1, :-1])) == pytest.approx(1 / n, abs=1e-12)


def test_residual_unit_alpha_is_five_point(rng):
    n = 9
    u = rng.normal(size=(n + 1, n + 1))
    u[0] = u[-1] = u[:, 0] = u[:, -1] = 0
    rhs = rng.normal(size=(n + 1, n + 1))
    res = c.residual(u, np.ones((n + 1, n + 1)), rhs, 1 / n)
    np.testing.assert_allclose(res, five_point(u) - rhs[1:-1, 1:-1] / n ** 2, atol=1e-13)


def test_residual_of_zero_with_unit_rhs():
    n = 7
    res = c.residual(np.zeros((n + 1, n + 1)), np.ones((n + 1, n + 1)), np.ones((n + 1, n + 1)), 1 / n)
    np.testing.assert_allclose(res, -1 / n ** 2, rtol=1e-15)


def test_residual_matches_independent_matrix(backend, rng):
    n = 11
    alpha = rng.uniform(0.1, 3, (n + 1, n + 1))
    u = np.zeros((n + 1, n + 1))
    u[1:-1, 1:-1] = rng.normal(size=(n - 1, n - 1))
    res = c.residual(u, alpha, np.zeros_like(u), 1 / n)
    np.testing.assert_allclose(res.ravel(), stencil_matrix(alpha) @ u[1:-1, 1:-1].ravel(), atol=1e-12)


@pytest.mark.parametrize("n", [4, 16, 32])
def test_residual_vanishes_at_direct_solve(backend, rng, n):
    alpha = rng.uniform(0.2, 5.0, (n + 1, n + 1))
    load = rng.normal(size=(n + 1, n + 1))
    h = 1 / n
    u = np.zeros((n + 1, n + 1))
    u[1:-1, 1:-1] = spla.spsolve(stencil_matrix(alpha).tocsc(),
                                 h * h * load[1:-1, 1:-1].ravel()).reshape(n - 1, n - 1)
    res = c.residual(u, alpha, load, h)
    assert np.max(np.abs(res)) <= 1e-10
    assert c.loss(res, c.gram_operator(n)) <= 1e-18


def test_adjoint_identity(backend, rng):
    n = 13
    alpha = rng.uniform(0.5, 2, (n + 1, n + 1))
    u = rng.normal(size=(n + 1, n + 1))
    w = rng.normal(size=(n - 1, n - 1))
    lhs = np.sum(c.residual(u, alpha, np.zeros_like(u), 1 / n) * w)
    rhs = np.sum(u * c.residual_adjoint(w, alpha))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# -- Gram matrix and loss ----------------------------------------------------

@pytest.mark.parametrize("n", range(2, 11))
def test_gram_entries_exact(n):
    g = c.gram_matrix(n).toarray()
    m = n - 1
    want = np.zeros((m * m, m * m))
    for k in range(m):
        for l in range(m):
            i = k * m + l
            want[i, i] = 4 * n * n
            for dk, dl in [(-1, 0), (1, 0), (0, -1), (0, 1)]:
                if 0 <= k + dk < m and 0 <= l + dl < m:
                    want[i, (k + dk) * m + l + dl] = -n * n
    np.testing.assert_array_equal(g, want)


def test_loss_zero_residual():
    assert c.loss(np.zeros((7, 7)), c.gram_operator(8)) == 0.0


def test_loss_vs_dense_inverse(rng):
    gram = c.gram_operator(8)
    ginv = np.linalg.inv(c.gram_matrix(8).toarray())
    for _ in range(100):
        r = rng.normal(size=(7, 7))
        dense = r.ravel() @ ginv @ r.ravel()
        assert c.loss(r, gram) == pytest.approx(dense, rel=1e-10)


def test_loss_unit_vector_is_inverse_diagonal():
    gram = c.gram_operator(6)
    ginv = np.linalg.inv(c.gram_matrix(6).toarray())
    for k in (0, 7, 24):
        e = np.zeros(25)
        e[k] = 1
        val = c.loss(e.reshape(5, 5), gram)
        assert val == pytest.approx(ginv[k, k], rel=1e-12)
        assert val > 0


def test_loss_nonnegative(rng):
    gram = c.gram_operator(9)
    vals = [c.loss(rng.normal(size=(8, 8)) * 10.0 ** rng.uniform(-6, 3), gram) for _ in range(1000)]
    assert min(vals) > 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(1e-12, 1e6))
def test_loss_zero_only_at_zero(seed, scale):
    r = np.random.default_rng(seed).normal(size=(5, 5)) * scale
    assert c.loss(r, c.gram_operator(6)) > 0


# -- gradients ---------------------------------------------------------------

def test_gradient_vs_finite_differences(backend, rng):
    grid, mlp, alpha, rhs = tiny_problem(rng)
    gram = c.gram_operator(grid.n)
    grads = c.grad_loss(mlp, grid, alpha, rhs, gram)
    step = 1e-5
    for p, g in zip(mlp.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _ = c.loss_and_grad(mlp, grid, alpha, rhs, gram)
            flat[i] = old - step
            lm, _ = c.loss_and_grad(mlp, grid, alpha, rhs, gram)
            flat[i] = old
            fd = (lp - lm) / (2 * step)
            assert abs(gflat[i] - fd) <= 1e-4 * max(abs(fd), 1e-8)


def test_gradient_vanishes_at_zero_residual(rng):
    grid, mlp, alpha, _ = tiny_problem(rng)
    u = c.forward(mlp, grid)
    load = np.zeros_like(u)
    load[1:-1, 1:-1] = c.residual(u, alpha, load, grid.h) * grid.n ** 2
    value, grads = c.loss_and_grad(mlp, grid, alpha, load, c.gram_operator(grid.n))
    assert value <= 1e-25
    assert max(np.abs(g).max() for g in grads) <= 1e-10


def test_gradient_affine_in_rhs(rng):
    grid, mlp, alpha, r1 = tiny_problem(rng)
    r2 = rng.normal(size=r1.shape)
    gram = c.gram_operator(grid.n)
    g = lambda r: c.grad_loss(mlp, grid, alpha, r, gram)
    for a, b, ab, z in zip(g(r1), g(r2), g(r1 + r2), g(np.zeros_like(r1))):
        assert np.max(np.abs(a + b - ab - z)) <= 1e-10 * max(1.0, np.abs(ab).max())


# -- problem data ------------------------------------------------------------

def _reservoir(gravity=9.81, perm=None, poro=None, sources=()):
    return Reservoir(FluidParams(gravity=gravity), perm or MaterialField.constant(1e-15),
                     poro or MaterialField.constant(0.2, "porosity"), tuple(sources))


def test_rhs_zero_without_gravity_and_sources():
    g = c.CollocationGrid(8)
    assert np.all(c.compute_rhs_grid(np.zeros((9, 9)), _reservoir(0.0), g) == 0)


def test_rhs_uniform_is_minus_source():
    g = c.CollocationGrid(20)
    res = _reservoir(sources=[SourceDisk((25, 25), 6, 1e-6)])
    rhs = c.compute_rhs_grid(np.full((21, 21), 0.3), res, g)
    X, Y = g.mesh()
    q = res.rate(X, Y)
    a_ref = c.reference_alpha(res)
    want = -q / (a_ref * c.reference_pressure(res) / 50.0 ** 2)
    np.testing.assert_allclose(rhs[:-1, :-1], want[:-1, :-1], rtol=1e-12, atol=1e-15)
    assert rhs[10, 10] < 0
    assert np.all(rhs[-1] == 0) and np.all(rhs[:, -1] == 0)


def test_rhs_vs_independent_stencil(rng):
    n = 16
    g = c.CollocationGrid(n)
    res = _reservoir(perm=builtin_map("K2", "permeability"), poro=builtin_map("K2", "porosity"),
                     sources=[SourceDisk((25, 25), 3, 5e-6)])
    s = rng.uniform(0, 1, (n + 1, n + 1))
    got = c.compute_rhs_grid(s, res, g)
    f = res.fluids
    a_ref = np.mean(res.permeability.values) / f.mu_w
    p_ref = f.rho_w * f.gravity * 50.0
    want = np.zeros((n + 1, n + 1))
    for i in range(n):
        for j in range(n):
            x, y = i / n, j / n

            def fy(yy):
                k = res.k(x, yy)
                sat = s[i, j + 1] if yy != y else s[i, j]
                lam = (1 - sat) * f.rho_w / f.mu_w + sat * f.rho_g / f.mu_g
                return -f.gravity * k * lam       # physical flux, Pa/m times alpha units

            div = (fy((j + 1) / n) - fy(y)) * n / 50.0        # physical forward divergence
            q = res.rate(x, y)
            # nondimensional: divide by alpha_ref p_ref / L^2
            want[i, j] = (div - q) / (a_ref * p_ref / 50.0 ** 2)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12 * np.abs(want).max())


def test_pressure_problem_scaling():
    g = c.CollocationGrid(16)
    res = _reservoir(sources=[SourceDisk((25, 25), 6, 1e-6)])
    prob = c.pressure_problem(np.zeros((17, 17)), res, g)
    np.testing.assert_array_equal(prob.load, -prob.rhs)
    u = np.zeros((17, 17))
    u[1:-1, 1:-1] = prob.gram.solve(prob.load[1:-1, 1:-1]) / np.mean(prob.alpha)
    assert np.abs(u).max() == pytest.approx(1.0, rel=1e-12)
    assert prob.pressure_unit == pytest.approx(prob.p_ref * prob.u_scale)
    assert prob.p_ref == pytest.approx(1045 * 9.81 * 50)
    np.testing.assert_allclose(prob.alpha, 1.0, rtol=1e-13)


def test_reference_pressure_without_gravity():
    assert c.reference_pressure(_reservoir(0.0)) == 1.0


# -- training ----------------------------------------------------------------

def _manufactured_problem(n):
    g = c.CollocationGrid(n)
    X, Y = g.mesh()
    rhs = -2 * np.pi ** 2 * np.sin(np.pi * X) * np.sin(np.pi * Y)
    return c.PressureProblem(g, np.ones((n + 1, n + 1)), rhs, 1.0)


def test_train_history_length_and_changes_params():
    prob = _manufactured_problem(8)
    mlp = c.init_mlp((2, 8, 1), seed=0)
    new, adam, hist = c.train(mlp, c.AdamState.for_params(mlp), prob, 7, 1e-3)
    assert hist.shape == (7,)
    assert adam.step == 7
    assert any(np.any(a != b) for a, b in zip(mlp.params(), new.params()))


def test_train_does_not_mutate_inputs():
    prob = _manufactured_problem(8)
    mlp = c.init_mlp((2, 8, 1), seed=0)
    before = [p.copy() for p in mlp.params()]
    c.train(mlp, c.AdamState.for_params(mlp), prob, 3, 1e-3)
    for a, b in zip(before, mlp.params()):
        np.testing.assert_array_equal(a, b)


def test_train_rejects_zero_epochs():
    mlp = c.init_mlp((2, 4, 1))
    with pytest.raises(ValueError):
        c.train(mlp, c.AdamState.for_params(mlp), _manufactured_problem(4), 0)


def test_train_deterministic():
    prob = _manufactured_problem(10)
    runs = []
    for _ in range(2):
        mlp = c.init_mlp((2, 16, 16, 1), seed=4)
        runs.append(c.train(mlp, c.AdamState.for_params(mlp), prob, 20, 1e-3))
    for a, b in zip(runs[0][0].params(), runs[1][0].params()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(runs[0][2], runs[1][2])


def test_manufactured_training_reduces_loss():
    prob = _manufactured_problem(32)
    mlp = c.init_mlp((2, 64, 64, 64, 1), seed=0)
    _, _, hist = c.train(mlp, c.AdamState.for_params(mlp), prob, 2000, 1e-3)
    assert hist[-1] <= 1e-3 * hist[0]


def test_divergence_keeps_last_finite_state():
    prob = _manufactured_problem(8)
    mlp = c.init_mlp((2, 8, 1), seed=0)
    with pytest.raises(c.TrainingDiverged) as info:
        c.train(mlp, c.AdamState.for_params(mlp), prob, 5, 1e200)
    exc = info.value
    assert len(exc.history) >= 1 and np.all(np.isfinite(exc.history))
    assert all(np.all(np.isfinite(p)) for p in exc.mlp.params())
    assert exc.adam.step == len(exc.history) - 1


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -4.0, 1e-3])]
    adam = c.AdamState([np.zeros(3)], [np.zeros(3)])
    c.adam_update(p, g, adam, 0.01)
    np.testing.assert_allclose(p[0], [0.99, -1.99, 0.49], atol=1e-7)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    prob = _manufactured_problem(6)
    mlp = c.init_mlp((2, 5, 3, 1), seed=9, input_scale=2.5)
    mlp, adam, _ = c.train(mlp, c.AdamState.for_params(mlp), prob, 3, 1e-3)
    path = tmp_path / "ck.txt"
    c.save_checkpoint(path, mlp, adam)
    assert path.read_text().startswith(c.CHECKPOINT_MAGIC)
    mlp2, adam2 = c.load_checkpoint(path)
    assert mlp2.widths == mlp.widths and mlp2.activation == mlp.activation
    assert mlp2.input_scale == 2.5
    for a, b in zip(mlp.params() + adam.m + adam.v, mlp2.params() + adam2.m + adam2.v):
        np.testing.assert_array_equal(a, b)
    assert adam2.step == adam.step
    c.save_checkpoint(tmp_path / "again.txt", mlp2, adam2)
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ValueError):
        c.load_checkpoint(path)
