"""Full-order time stepping, adjoint sweep, cost and gradient.

The state system is advanced by backward Euler with a Newton solve on the
coupled activator/inhibitor block.  The adjoint sweep is the exact discrete
transpose of the state linearization, so the returned gradient matches
finite differences of the cost to solver accuracy: the adjoint convection
operator is B^T (reverse-flow upwinding plus the boundary flux terms that
the transpose carries), and the reaction Jacobian is frozen at the stored
state of the step being transposed.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import eval_nonlinearity

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 25


class SolverError(RuntimeError):
    """Raised when a time step fails (Newton stall or singular system)."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


@dataclass
class FhnParams:
    """Physical and discretization parameters of the control problem."""

    c1: float = 9.0
    c2: float = 0.02
    c3: float = 5.0
    eps: float = 0.1
    D1: float = 1.0
    D2: float = 1.0
    vmax: float = 128.0
    lam: float = 1e-3
    T: float = 1.0
    dt: float = 0.05

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("regularization weight lam must be positive")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        if not (0.0 < self.c1 < 20.0):
            warnings.warn(f"c1={self.c1} outside the monostable range (0, 20)")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def times(self):
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass
class Trajectory:
    """Time-indexed coefficient vectors.

    For kind "state" the pair is (y, z); for kind "adjoint" the fields hold
    (p, q) with the same layout.
    """

    kind: str
    times: np.ndarray
    y: np.ndarray  # (n_steps + 1, N)
    z: np.ndarray
    newton_iters: np.ndarray = None

    @property
    def mean_newton_iters(self):
        if self.newton_iters is None:
            return None
        return float(np.mean(self.newton_iters))


@dataclass
class ControlGrid:
    """Full-dimensional control coefficients for steps 1..n_steps with box bounds."""

    u: np.ndarray  # (n_steps, N)
    u_l: float
    u_r: float

    def __post_init__(self):
        if self.u_l > self.u_r:
            raise ValueError("u_l must not exceed u_r")

    @classmethod
    def zeros(cls, n_steps, N, u_l, u_r):
        return cls(np.zeros((n_steps, N)), u_l, u_r)

    def clipped(self):
        return ControlGrid(np.clip(self.u, self.u_l, self.u_r), self.u_l, self.u_r)

    def with_values(self, u):
        return ControlGrid(np.asarray(u, dtype=float), self.u_l, self.u_r)


def solve_state(space, ops_y, ops_z, params, control, y0, z0):
    """Backward-Euler/Newton forward solve of the coupled state system.

    Returns a Trajectory with per-step Newton iteration counts.
    """
    _check_space(space, ops_y)
    M, S, B = ops_y.M, ops_y.S, ops_y.B
    p = params
    dt = p.dt
    n_steps = p.n_steps
    N = M.shape[0]
    u = control.u
    if u.shape != (n_steps, N):
        raise ValueError(f"control shape {u.shape}, expected {(n_steps, N)}")

    Ay = (M / dt + p.D1 * S + B).tocsr()
    Az = (M / dt + p.D2 * S + B + p.eps * M).tocsr()

    ys = np.empty((n_steps + 1, N))
    zs = np.empty((n_steps + 1, N))
    ys[0], zs[0] = y0, z0
    iters = np.zeros(n_steps, dtype=int)

    for n in range(1, n_steps + 1):
        rhs_y = M @ ys[n - 1] / dt + ops_y.load + M @ u[n - 1]
        rhs_z = M @ zs[n - 1] / dt + ops_z.load
        yk, zk = ys[n - 1].copy(), zs[n - 1].copy()
        converged = False
        res_norm = np.inf
        for it in range(NEWTON_MAXIT):
            ge = eval_nonlinearity(space, yk, p.c1, p.c2)
            Fy = Ay @ yk + ge.g + M @ zk - rhs_y
            Fz = Az @ zk - p.eps * p.c3 * (M @ yk) - rhs_z
            res_norm = np.sqrt(Fy @ Fy + Fz @ Fz)
            if res_norm <= NEWTON_TOL:
                converged = True
                iters[n - 1] = it
                break
            J = sp.bmat(
                [[Ay + ge.jac, M], [-p.eps * p.c3 * M, Az]], format="csc"
            )
            try:
                delta = spla.splu(J).solve(np.concatenate([-Fy, -Fz]))
            except RuntimeError as exc:
                raise SolverError(f"Newton linear solve failed at step {n}: {exc}",
                                  step=n, residual=res_norm)
            yk += delta[:N]
            zk += delta[N:]
            iters[n - 1] = it + 1
        if not converged:
            raise SolverError(
                f"Newton stalled at step {n}: residual {res_norm:.3e}",
                step=n,
                residual=res_norm,
            )
        ys[n], zs[n] = yk, zk

    return Trajectory("state", p.times(), ys, zs, iters)


def solve_adjoint(space, ops_y, ops_z, params, state, y_T, z_T):
    """Backward adjoint sweep, the exact transpose of the state linearization.

    Terminal values are the tracking misfits p = y(T) - y_T, q = z(T) - z_T;
    each step solves one coupled sparse linear system with the transposed
    convection, the Neumann flux corrections, and the reaction Jacobian
    frozen at the stored state.  The regularization weight never enters.
    """
    _check_space(space, ops_y)
    M, S = ops_y.M, ops_y.S
    BT = ops_y.B.T.tocsr()
    A_N = ops_y.neumann_flux
    p = params
    dt = p.dt
    n_steps = p.n_steps
    N = M.shape[0]

    ps = np.empty((n_steps + 1, N))
    qs = np.empty((n_steps + 1, N))
    ps[n_steps] = state.y[n_steps] - y_T
    qs[n_steps] = state.z[n_steps] - z_T

    Ap0 = (M / dt + p.D1 * S + BT + A_N).tocsr()
    Aq = (M / dt + p.D2 * S + BT + A_N + p.eps * M).tocsr()

    for n in range(n_steps, 0, -1):
        ge = eval_nonlinearity(space, state.y[n], p.c1, p.c2)
        J = sp.bmat(
            [[Ap0 + ge.jac, -p.eps * p.c3 * M], [M, Aq]], format="csc"
        )
        rhs = np.concatenate([M @ ps[n] / dt, M @ qs[n] / dt])
        try:
            sol = spla.splu(J).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"adjoint solve failed at step {n}: {exc}", step=n)
        ps[n - 1] = sol[:N]
        qs[n - 1] = sol[N:]

    return Trajectory("adjoint", p.times(), ps, qs)


def cost(params, state, control, y_T, z_T, ops):
    """Tracking-plus-regularization objective with M-weighted norms.

    The time integral of the control penalty uses the right-endpoint
    rectangle rule, matching the backward-Euler discretization.
    """
    M = ops.M
    ey = state.y[-1] - y_T
    ez = state.z[-1] - z_T
    track = 0.5 * (ey @ (M @ ey)) + 0.5 * (ez @ (M @ ez))
    u = control.u
    reg = 0.5 * params.lam * params.dt * float(np.sum(u * (M @ u.T).T))
    return track + reg


def gradient(adjoint, control, params):
    """L2-Riesz gradient lam * u_n + p_{n-1}, one row per time step."""
    return params.lam * control.u + adjoint.y[:-1]


def control_inner(a, b, M, dt):
    """Inner product sum_n dt * a_n^T M b_n over step-indexed control arrays."""
    return dt * float(np.sum(np.asarray(a) * (M @ np.asarray(b).T).T))


def _check_space(space, ops):
    if 3 * space.n_e != ops.M.shape[0]:
        raise ValueError("space and operators have inconsistent dimensions")
