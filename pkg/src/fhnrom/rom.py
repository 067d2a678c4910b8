"""Reduced state/adjoint solvers for the POD, POD-DEIM and POD-DMD back-ends.

States and adjoints live in the k-dimensional POD coordinates; the control
stays full-dimensional so the box projection remains exact.  The reduced
adjoint is the exact transpose of the reduced forward linearization, which
for the DMD back-end means the control-independent forcing drops out and no
reaction Jacobian appears at all.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import eval_nonlinearity, eval_nonlinearity_rows
from .fom import SolverError, Trajectory

BACKENDS = ("pod", "pod-deim", "pod-dmd")
NEWTON_TOL = 1e-11
NEWTON_MAXIT = 30


@dataclass
class ReducedOperators:
    """Offline-projected operators plus the back-end specific attachments."""

    backend: str
    space: object
    M: object  # full mass matrix (control penalty and projections)
    psi_y: np.ndarray
    psi_z: np.ndarray
    Sr_y: np.ndarray
    Br_y: np.ndarray
    Sr_z: np.ndarray
    Br_z: np.ndarray
    Mr_y: np.ndarray
    Mr_z: np.ndarray
    Mr_yz: np.ndarray
    Mr_zy: np.ndarray
    Anr_y: np.ndarray
    Anr_z: np.ndarray
    ell_y_r: np.ndarray
    ell_z_r: np.ndarray
    PsiM_y: np.ndarray  # (k, N) projected control map Psi_y^T M
    PsiM_z: np.ndarray
    deim: object = None
    dmd: object = None
    dmd_forcing: np.ndarray = None  # (n_steps + 1, k) table Psi_y^T g_dmd(t_n)

    @property
    def k(self):
        return self.psi_y.shape[1]


@dataclass
class ReducedTrajectory:
    kind: str
    times: np.ndarray
    y: np.ndarray  # (n_steps + 1, k)
    z: np.ndarray
    newton_iters: np.ndarray = None

    @property
    def mean_newton_iters(self):
        if self.newton_iters is None:
            return None
        return float(np.mean(self.newton_iters))


def reduce_operators(ops_y, ops_z, pod_y, pod_z, backend, model=None, times=None):
    """Project the assembled operators onto the POD bases (offline stage)."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown back-end {backend!r}")
    Py, Pz = pod_y.psi, pod_z.psi
    M = ops_y.M
    rops = ReducedOperators(
        backend=backend,
        space=None,
        M=M,
        psi_y=Py,
        psi_z=Pz,
        Sr_y=Py.T @ (ops_y.S @ Py),
        Br_y=Py.T @ (ops_y.B @ Py),
        Sr_z=Pz.T @ (ops_z.S @ Pz),
        Br_z=Pz.T @ (ops_z.B @ Pz),
        Mr_y=Py.T @ (M @ Py),
        Mr_z=Pz.T @ (M @ Pz),
        Mr_yz=Py.T @ (M @ Pz),
        Mr_zy=Pz.T @ (M @ Py),
        Anr_y=Py.T @ (ops_y.neumann_flux @ Py),
        Anr_z=Pz.T @ (ops_z.neumann_flux @ Pz),
        ell_y_r=Py.T @ ops_y.load,
        ell_z_r=Pz.T @ ops_z.load,
        PsiM_y=(M @ Py).T,
        PsiM_z=(M @ Pz).T,
    )
    if backend == "pod-deim":
        if model is None:
            raise ValueError("pod-deim requires a DeimModel")
        rops.deim = model
    elif backend == "pod-dmd":
        if model is None:
            raise ValueError("pod-dmd requires a DmdModel")
        if times is None:
            raise ValueError("pod-dmd requires the time grid for the forcing table")
        rops.dmd = model
        rops.dmd_forcing = np.array([Py.T @ model.evaluate(t) for t in times])
    return rops


def project_state(rops, y_full, z_full):
    """Reduced coordinates of full coefficient vectors: Psi^T M w."""
    return rops.PsiM_y @ y_full, rops.PsiM_z @ z_full


def lift(rops, traj_r):
    """Lift a reduced trajectory back to full coefficient vectors."""
    return Trajectory(
        traj_r.kind,
        traj_r.times,
        traj_r.y @ rops.psi_y.T,
        traj_r.z @ rops.psi_z.T,
        traj_r.newton_iters,
    )


def _reaction(rops, space, y_r, c1, c2, need_jac=True):
    """Back-end reduced reaction value (and Jacobian) at reduced state y_r."""
    if rops.backend == "pod":
        ge = eval_nonlinearity(space, rops.psi_y @ y_r, c1, c2)
        val = rops.psi_y.T @ ge.g
        jac = rops.psi_y.T @ (ge.jac @ rops.psi_y) if need_jac else None
        return val, jac
    if rops.backend == "pod-deim":
        g_rows, jac_rows = eval_nonlinearity_rows(
            space, rops.psi_y @ y_r, rops.deim.indices, c1, c2
        )
        val = rops.deim.Q @ g_rows
        jac = rops.deim.Q @ (jac_rows @ rops.psi_y) if need_jac else None
        return val, jac
    raise ValueError(f"no reaction evaluation for back-end {rops.backend!r}")


def solve_reduced_state(rops, params, control, y0_r, z0_r, space=None):
    """Backward Euler on the reduced coupled system.

    POD and POD-DEIM take Newton steps on the 2k block; POD-DMD is a single
    linear solve per step with the precomputed forcing table (zero Newton
    iterations by construction).
    """
    space = space if space is not None else rops.space
    p = params
    dt = p.dt
    n_steps = p.n_steps
    k, kz = rops.psi_y.shape[1], rops.psi_z.shape[1]
    u = control.u

    Ay = rops.Mr_y / dt + p.D1 * rops.Sr_y + rops.Br_y
    Az = rops.Mr_z / dt + p.D2 * rops.Sr_z + rops.Br_z + p.eps * rops.Mr_z

    ys = np.empty((n_steps + 1, k))
    zs = np.empty((n_steps + 1, kz))
    ys[0], zs[0] = y0_r, z0_r
    iters = np.zeros(n_steps, dtype=int)

    if rops.backend == "pod-dmd":
        A = np.block([[Ay, rops.Mr_yz], [-p.eps * p.c3 * rops.Mr_zy, Az]])
        lu_piv = sla.lu_factor(A)
        for n in range(1, n_steps + 1):
            rhs_y = (
                rops.Mr_y @ ys[n - 1] / dt
                + rops.ell_y_r
                + rops.PsiM_y @ u[n - 1]
                - rops.dmd_forcing[n]
            )
            rhs_z = rops.Mr_z @ zs[n - 1] / dt + rops.ell_z_r
            sol = sla.lu_solve(lu_piv, np.concatenate([rhs_y, rhs_z]))
            ys[n], zs[n] = sol[:k], sol[k:]
        return ReducedTrajectory("state", p.times(), ys, zs, iters)

    if space is None:
        raise ValueError("pod and pod-deim solves need the DgSpace for the reaction")

    for n in range(1, n_steps + 1):
        rhs_y = rops.Mr_y @ ys[n - 1] / dt + rops.ell_y_r + rops.PsiM_y @ u[n - 1]
        rhs_z = rops.Mr_z @ zs[n - 1] / dt + rops.ell_z_r
        yk, zk = ys[n - 1].copy(), zs[n - 1].copy()
        converged = False
        for it in range(NEWTON_MAXIT):
            gval, gjac = _reaction(rops, space, yk, p.c1, p.c2)
            Fy = Ay @ yk + gval + rops.Mr_yz @ zk - rhs_y
            Fz = Az @ zk - p.eps * p.c3 * (rops.Mr_zy @ yk) - rhs_z
            res = np.sqrt(Fy @ Fy + Fz @ Fz)
            if res <= NEWTON_TOL:
                converged = True
                iters[n - 1] = it
                break
            J = np.block([[Ay + gjac, rops.Mr_yz], [-p.eps * p.c3 * rops.Mr_zy, Az]])
            delta = np.linalg.solve(J, np.concatenate([-Fy, -Fz]))
            yk += delta[:k]
            zk += delta[k:]
            iters[n - 1] = it + 1
        if not converged:
            raise SolverError(f"reduced Newton stalled at step {n}", step=n, residual=res)
        ys[n], zs[n] = yk, zk

    return ReducedTrajectory("state", p.times(), ys, zs, iters)


def solve_reduced_adjoint(rops, params, reduced_state, y_T_r, z_T_r, space=None):
    """Linear backward sweep; exact transpose of the forward linearization.

    Terminal values are the reduced tracking misfits in the identity inner
    product.  For POD-DMD the forcing is control- and state-independent, so
    the adjoint carries no reaction term (and is independent of the DMD
    amplitudes by construction).
    """
    space = space if space is not None else rops.space
    p = params
    dt = p.dt
    n_steps = p.n_steps
    k, kz = rops.psi_y.shape[1], rops.psi_z.shape[1]

    Ay = rops.Mr_y / dt + p.D1 * rops.Sr_y + rops.Br_y + rops.Anr_y
    Az = rops.Mr_z / dt + p.D2 * rops.Sr_z + rops.Br_z + p.eps * rops.Mr_z + rops.Anr_z

    ps = np.empty((n_steps + 1, k))
    qs = np.empty((n_steps + 1, kz))
    ps[n_steps] = reduced_state.y[n_steps] - y_T_r
    qs[n_steps] = reduced_state.z[n_steps] - z_T_r

    for n in range(n_steps, 0, -1):
        if rops.backend == "pod-dmd":
            jac = np.zeros((k, k))
        else:
            _, jac = _reaction(rops, space, reduced_state.y[n], p.c1, p.c2)
        # transpose of the forward block matrix:
        #   [[Ay + jac, Mr_yz], [-eps c3 Mr_zy, Az]]^T
        J = np.block(
            [
                [(Ay + jac).T, -p.eps * p.c3 * rops.Mr_zy.T],
                [rops.Mr_yz.T, Az.T],
            ]
        )
        rhs = np.concatenate(
            [rops.Mr_y.T @ ps[n] / dt, rops.Mr_z.T @ qs[n] / dt]
        )
        try:
            sol = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"reduced adjoint singular at step {n}: {exc}", step=n)
        ps[n - 1] = sol[:k]
        qs[n - 1] = sol[k:]

    return ReducedTrajectory("adjoint", p.times(), ps, qs)


def reduced_cost(rops, params, reduced_state, control, y_T_r, z_T_r,
                 misfit_offset=0.0):
    """Reduced objective: identity-weighted misfits plus full control penalty.

    ``misfit_offset`` carries the constant misfit energy of the target
    components orthogonal to the basis, so the reduced objective is a
    faithful surrogate of the full objective at lifted states (the reduced
    state cannot influence that part, but dropping it would deflate J and
    distort any relative-decrease stopping rule).
    """
    ey = reduced_state.y[-1] - y_T_r
    ez = reduced_state.z[-1] - z_T_r
    track = 0.5 * float(ey @ ey) + 0.5 * float(ez @ ez)
    u = control.u
    reg = 0.5 * params.lam * params.dt * float(np.sum(u * (rops.M @ u.T).T))
    return track + reg + misfit_offset


def misfit_offset(rops, y_T, z_T):
    """Constant misfit energy of the targets outside the reduced subspaces."""
    M = rops.M
    y_T_r, z_T_r = project_state(rops, y_T, z_T)
    off_y = float(y_T @ (M @ y_T)) - float(y_T_r @ y_T_r)
    off_z = float(z_T @ (M @ z_T)) - float(z_T_r @ z_T_r)
    return 0.5 * max(off_y, 0.0) + 0.5 * max(off_z, 0.0)


def reduced_cost_and_gradient(
    rops, params, control, y_T_r, z_T_r, y0_r, z0_r, space=None, misfit_offset=0.0
):
    """Evaluate the reduced objective and its full-space gradient.

    Returns (J, gradient, reduced_state); the gradient rows are
    lam * u_n + Psi_y p_{r, n-1}, the Riesz representative in the
    M-weighted, dt-summed control inner product.
    """
    state_r = solve_reduced_state(rops, params, control, y0_r, z0_r, space=space)
    J = reduced_cost(rops, params, state_r, control, y_T_r, z_T_r,
                     misfit_offset=misfit_offset)
    adj_r = solve_reduced_adjoint(rops, params, state_r, y_T_r, z_T_r, space=space)
    grad = params.lam * control.u + adj_r.y[:-1] @ rops.psi_y.T
    return J, grad, state_r
