"""Full-order forward solve, adjoint sweep, cost and gradient."""

import numpy as np
import pytest

from fhnrom import (
    ControlGrid,
    FhnParams,
    control_inner,
    cost,
    eval_nonlinearity,
    gradient,
    solve_adjoint,
    solve_state,
)


def _random_problem(small_setup, rng, n_dirs=0):
    mesh, space, params, ops_y, ops_z = small_setup
    y0 = 0.1 * rng.standard_normal(space.N)
    z0 = 0.05 * rng.standard_normal(space.N)
    u = 0.01 * rng.standard_normal((params.n_steps, space.N))
    return space, params, ops_y, ops_z, y0, z0, ControlGrid(u, -1.0, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        FhnParams(lam=0.0)
    with pytest.raises(ValueError):
        FhnParams(T=1.0, dt=0.3)
    with pytest.warns(UserWarning):
        FhnParams(c1=25.0)
    p = FhnParams()
    assert p.n_steps == 20
    np.testing.assert_allclose(p.times(), np.linspace(0, 1, 21))


def test_zero_is_a_fixed_point(small_setup):
    _, space, params, ops_y, ops_z = small_setup
    grid = ControlGrid.zeros(params.n_steps, space.N, -1, 1)
    traj = solve_state(space, ops_y, ops_z, params, grid,
                       np.zeros(space.N), np.zeros(space.N))
    assert abs(traj.y).max() == 0.0
    assert abs(traj.z).max() == 0.0
    assert traj.newton_iters.max() == 0  # residual vanishes immediately


def test_forward_matches_dense_reimplementation(small_setup, rng):
    """Independent oracle: dense backward-Euler/Newton on the same operators."""
    space, params, ops_y, ops_z, y0, z0, grid = _random_problem(small_setup, rng)
    traj = solve_state(space, ops_y, ops_z, params, grid, y0, z0)

    M = ops_y.M.toarray()
    Ay = M / params.dt + params.D1 * ops_y.S.toarray() + ops_y.B.toarray()
    Az = (M / params.dt + params.D2 * ops_z.S.toarray() + ops_z.B.toarray()
          + params.eps * M)
    y, z = y0.copy(), z0.copy()
    for n in range(params.n_steps):
        rhs_y = M @ y / params.dt + M @ grid.u[n]
        rhs_z = M @ z / params.dt
        yk, zk = y.copy(), z.copy()
        for _ in range(50):
            ge = eval_nonlinearity(space, yk, params.c1, params.c2)
            Fy = Ay @ yk + ge.g + M @ zk - rhs_y
            Fz = Az @ zk - params.eps * params.c3 * (M @ yk) - rhs_z
            if np.hypot(np.linalg.norm(Fy), np.linalg.norm(Fz)) < 1e-12:
                break
            J = np.block([[Ay + ge.jac.toarray(), M],
                          [-params.eps * params.c3 * M, Az]])
            d = np.linalg.solve(J, -np.concatenate([Fy, Fz]))
            yk += d[:space.N]
            zk += d[space.N:]
        y, z = yk, zk
        np.testing.assert_allclose(traj.y[n + 1], y, atol=1e-8)
        np.testing.assert_allclose(traj.z[n + 1], z, atol=1e-8)


def test_inhibitor_stays_zero_when_decoupled(small_setup, rng):
    _, space, _, ops_y, ops_z = small_setup
    params = FhnParams(vmax=1.0, T=0.2, dt=0.05, eps=0.0)
    y0 = 0.2 * rng.standard_normal(space.N)
    grid = ControlGrid.zeros(params.n_steps, space.N, -1, 1)
    traj = solve_state(space, ops_y, ops_z, params, grid, y0, np.zeros(space.N))
    assert abs(traj.z).max() < 1e-12
    assert abs(traj.y).max() > 0  # the activator still evolves


def test_control_shape_checked(small_setup):
    _, space, params, ops_y, ops_z = small_setup
    bad = ControlGrid(np.zeros((params.n_steps + 1, space.N)), -1, 1)
    with pytest.raises(ValueError):
        solve_state(space, ops_y, ops_z, params, bad,
                    np.zeros(space.N), np.zeros(space.N))


def test_cost_regularization_term(small_setup):
    _, space, params, ops_y, ops_z = small_setup
    grid = ControlGrid(np.ones((params.n_steps, space.N)), -2, 2)
    traj = solve_state(space, ops_y, ops_z, params,
                       ControlGrid.zeros(params.n_steps, space.N, -1, 1),
                       np.zeros(space.N), np.zeros(space.N))
    # zero state, zero targets: only the penalty remains, and
    # 1^T M 1 = |domain| per step
    J = cost(params, traj, grid, np.zeros(space.N), np.zeros(space.N), ops_y)
    domain = space.mesh.L * space.mesh.H
    assert J == pytest.approx(0.5 * params.lam * params.T * domain)


def test_adjoint_gradient_matches_fd(small_setup, rng):
    space, params, ops_y, ops_z, y0, z0, grid = _random_problem(small_setup, rng)
    y_T = 0.1 * rng.standard_normal(space.N)
    z_T = 0.05 * rng.standard_normal(space.N)
    traj = solve_state(space, ops_y, ops_z, params, grid, y0, z0)
    adj = solve_adjoint(space, ops_y, ops_z, params, traj, y_T, z_T)
    g = gradient(adj, grid, params)

    def J(u):
        t = solve_state(space, ops_y, ops_z, params, grid.with_values(u), y0, z0)
        return cost(params, t, grid.with_values(u), y_T, z_T, ops_y)

    eps = 1e-6
    for _ in range(5):
        d = rng.standard_normal(grid.u.shape)
        fd = (J(grid.u + eps * d) - J(grid.u - eps * d)) / (2 * eps)
        an = control_inner(g, d, ops_y.M, params.dt)
        assert abs(fd - an) <= 1e-6 * max(1.0, abs(fd))


def test_adjoint_independent_of_regularization(small_setup, rng):
    space, params, ops_y, ops_z, y0, z0, grid = _random_problem(small_setup, rng)
    traj = solve_state(space, ops_y, ops_z, params, grid, y0, z0)
    y_T = rng.standard_normal(space.N)
    z_T = rng.standard_normal(space.N)
    a1 = solve_adjoint(space, ops_y, ops_z, params, traj, y_T, z_T)
    params2 = FhnParams(vmax=params.vmax, T=params.T, dt=params.dt, lam=10.0)
    a2 = solve_adjoint(space, ops_y, ops_z, params2, traj, y_T, z_T)
    np.testing.assert_allclose(a1.y, a2.y)
    np.testing.assert_allclose(a1.z, a2.z)


def test_first_order_in_time(small_setup):
    """Backward Euler: halving dt roughly halves the terminal error."""
    _, space, _, ops_y, ops_z = small_setup
    rng = np.random.default_rng(7)
    y0 = 0.3 * rng.standard_normal(space.N)
    z0 = 0.1 * rng.standard_normal(space.N)
    T = 0.2
    finals = []
    for dt in (0.05, 0.025, 0.0125, 0.00625):
        params = FhnParams(vmax=1.0, T=T, dt=dt)
        grid = ControlGrid.zeros(params.n_steps, space.N, -1, 1)
        traj = solve_state(space, ops_y, ops_z, params, grid, y0, z0)
        finals.append(traj.y[-1])
    errs = [np.linalg.norm(finals[i] - finals[-1]) for i in range(3)]
    ratio = errs[0] / errs[1]
    assert 1.5 < ratio < 2.7


def test_control_inner_is_an_inner_product(small_setup, rng):
    _, space, params, ops_y, _ = small_setup
    a = rng.standard_normal((params.n_steps, space.N))
    b = rng.standard_normal((params.n_steps, space.N))
    M = ops_y.M
    assert control_inner(a, b, M, params.dt) == pytest.approx(
        control_inner(b, a, M, params.dt)
    )
    assert control_inner(a, a, M, params.dt) > 0
