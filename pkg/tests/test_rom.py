"""Reduced-order solvers: projection consistency, exactness at full rank,
linearity of the DMD back-end, gradients and evaluation-count accounting."""

import numpy as np
import pytest

from fhnrom import (
    ControlGrid,
    SnapshotSet,
    build_deim,
    build_dmd,
    build_pod,
    control_inner,
    eval_nonlinearity,
    lift,
    project_state,
    reduce_operators,
    reduced_cost,
    reduced_cost_and_gradient,
    solve_state,
)
from fhnrom.rom import solve_reduced_state


@pytest.fixture(scope="module")
def reduced_setup(small_setup):
    """Uncontrolled snapshots and all three reduction artifacts."""
    mesh, space, params, ops_y, ops_z = small_setup
    rng = np.random.default_rng(3)
    y0 = 0.1 * rng.standard_normal(space.N)
    z0 = 0.05 * rng.standard_normal(space.N)
    grid0 = ControlGrid.zeros(params.n_steps, space.N, -1, 1)
    nat = solve_state(space, ops_y, ops_z, params, grid0, y0, z0)
    pod_y = build_pod(SnapshotSet(nat.y.T, nat.times), ops_y, k=5)
    pod_z = build_pod(SnapshotSet(nat.z.T, nat.times), ops_z, k=5)
    cols = np.column_stack(
        [eval_nonlinearity(space, y, params.c1, params.c2).g for y in nat.y]
    )
    gfull = SnapshotSet(cols, nat.times)
    deim = build_deim(gfull, pod_y, ops_y, m=4)
    dmd = build_dmd(SnapshotSet(cols[:, :-1], nat.times[:-1]),
                    SnapshotSet(cols[:, 1:], nat.times[1:]), params.dt, rank=4)
    return nat, y0, z0, pod_y, pod_z, deim, dmd


def _rops(small_setup, reduced_setup, backend):
    _, space, params, ops_y, ops_z = small_setup
    _, _, _, pod_y, pod_z, deim, dmd = reduced_setup
    model = {"pod": None, "pod-deim": deim, "pod-dmd": dmd}[backend]
    return reduce_operators(ops_y, ops_z, pod_y, pod_z, backend,
                            model=model, times=params.times())


def test_reduced_operators_are_congruences(small_setup, reduced_setup):
    _, space, params, ops_y, ops_z = small_setup
    rops = _rops(small_setup, reduced_setup, "pod")
    P = rops.psi_y
    np.testing.assert_allclose(rops.Sr_y, P.T @ (ops_y.S @ P), atol=1e-12)
    np.testing.assert_allclose(rops.Br_y, P.T @ (ops_y.B @ P), atol=1e-12)
    np.testing.assert_allclose(rops.Mr_y, np.eye(rops.k), atol=1e-10)
    np.testing.assert_allclose(rops.Mr_z, np.eye(rops.k), atol=1e-10)


def test_backend_validation(small_setup, reduced_setup):
    _, _, params, ops_y, ops_z = small_setup
    _, _, _, pod_y, pod_z, deim, dmd = reduced_setup
    with pytest.raises(ValueError):
        reduce_operators(ops_y, ops_z, pod_y, pod_z, "qr")
    with pytest.raises(ValueError):
        reduce_operators(ops_y, ops_z, pod_y, pod_z, "pod-deim")
    with pytest.raises(ValueError):
        reduce_operators(ops_y, ops_z, pod_y, pod_z, "pod-dmd", model=dmd)


def test_project_lift_roundtrip(small_setup, reduced_setup, rng):
    rops = _rops(small_setup, reduced_setup, "pod")
    y_r = rng.standard_normal(rops.k)
    z_r = rng.standard_normal(rops.k)
    y2, z2 = project_state(rops, rops.psi_y @ y_r, rops.psi_z @ z_r)
    np.testing.assert_allclose(y2, y_r, atol=1e-10)
    np.testing.assert_allclose(z2, z_r, atol=1e-10)


@pytest.mark.parametrize("backend", ["pod", "pod-deim"])
def test_full_rank_matches_fom(small_setup, reduced_setup, backend):
    """With the POD capturing the trajectory exactly, the reduced forward
    solve reproduces the full solve it was trained on."""
    mesh, space, params, ops_y, ops_z = small_setup
    nat, y0, z0, pod_y, pod_z, deim, dmd = reduced_setup
    # rebuild at snapshot-spanning rank so truncation error vanishes
    pod_y_f = build_pod(SnapshotSet(nat.y.T, nat.times), ops_y,
                        ric_threshold=1.0)
    pod_z_f = build_pod(SnapshotSet(nat.z.T, nat.times), ops_z,
                        ric_threshold=1.0)
    cols = np.column_stack(
        [eval_nonlinearity(space, y, params.c1, params.c2).g for y in nat.y]
    )
    model = None
    if backend == "pod-deim":
        rank = int(np.linalg.matrix_rank(cols, tol=1e-10))
        model = build_deim(SnapshotSet(cols, nat.times), pod_y_f, ops_y, m=rank)
    rops = reduce_operators(ops_y, ops_z, pod_y_f, pod_z_f, backend,
                            model=model, times=params.times())
    y0_r, z0_r = project_state(rops, y0, z0)
    traj_r = solve_reduced_state(rops, params,
                                 ControlGrid.zeros(params.n_steps, space.N, -1, 1),
                                 y0_r, z0_r, space=space)
    lifted = lift(rops, traj_r)
    scale = abs(nat.y).max()
    np.testing.assert_allclose(lifted.y, nat.y, atol=1e-7 * scale)
    np.testing.assert_allclose(lifted.z, nat.z, atol=1e-7 * scale)


def test_dmd_backend_is_linear_in_the_control(small_setup, reduced_setup, rng):
    """Superposition of control responses: the DMD back-end replaces the
    reaction by a precomputed time signal, so the state map is affine."""
    _, space, params, _, _ = small_setup
    _, y0, z0, *_ = reduced_setup
    rops = _rops(small_setup, reduced_setup, "pod-dmd")
    y0_r, z0_r = project_state(rops, y0, z0)

    def response(u):
        tr = solve_reduced_state(rops, params, ControlGrid(u, -1, 1),
                                 y0_r, z0_r, space=space)
        assert tr.newton_iters.max() == 0  # single linear solve per step
        return tr.y

    u1 = 0.01 * rng.standard_normal((params.n_steps, space.N))
    u2 = 0.01 * rng.standard_normal((params.n_steps, space.N))
    base = response(np.zeros_like(u1))
    lhs = response(u1 + u2) - base
    rhs = (response(u1) - base) + (response(u2) - base)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("backend", ["pod", "pod-deim", "pod-dmd"])
def test_reduced_gradient_matches_fd(small_setup, reduced_setup, backend, rng):
    _, space, params, ops_y, _ = small_setup
    _, y0, z0, *_ = reduced_setup
    rops = _rops(small_setup, reduced_setup, backend)
    y0_r, z0_r = project_state(rops, y0, z0)
    y_T_r = rng.standard_normal(rops.k)
    z_T_r = rng.standard_normal(rops.k)
    u = 0.005 * rng.standard_normal((params.n_steps, space.N))
    J, g, _ = reduced_cost_and_gradient(rops, params, ControlGrid(u, -1, 1),
                                        y_T_r, z_T_r, y0_r, z0_r, space=space)

    def cost_at(uu):
        tr = solve_reduced_state(rops, params, ControlGrid(uu, -1, 1),
                                 y0_r, z0_r, space=space)
        return reduced_cost(rops, params, tr, ControlGrid(uu, -1, 1),
                            y_T_r, z_T_r)

    eps = 1e-6
    for _ in range(3):
        d = rng.standard_normal(u.shape)
        fd = (cost_at(u + eps * d) - cost_at(u - eps * d)) / (2 * eps)
        an = control_inner(g, d, ops_y.M, params.dt)
        assert abs(fd - an) <= 1e-6 * max(1.0, abs(fd))


def test_deim_reduces_evaluation_count(small_setup, reduced_setup):
    """One sampled reaction evaluation costs m * n_p integrals instead of
    N * n_p, verified through the space's evaluation counter."""
    _, space, params, _, _ = small_setup
    _, y0, z0, _, _, deim, _ = reduced_setup
    grid = ControlGrid.zeros(params.n_steps, space.N, -1, 1)

    counts = {}
    for backend in ("pod", "pod-deim"):
        rops = _rops(small_setup, reduced_setup, backend)
        y0_r, z0_r = project_state(rops, y0, z0)
        space.reset_counter()
        solve_reduced_state(rops, params, grid, y0_r, z0_r, space=space)
        counts[backend] = space.nonlin_integral_count
    space.reset_counter()

    m = deim.m
    assert counts["pod"] % (space.N * space.n_p) == 0
    assert counts["pod-deim"] % (m * space.n_p) == 0
    evals = counts["pod-deim"] // (m * space.n_p)
    assert counts["pod-deim"] == evals * m * space.n_p < counts["pod"]
