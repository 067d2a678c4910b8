"""SIPG assembly for piecewise-linear discontinuous elements.

Builds the mass, diffusion and upwinded convection matrices, boundary load
vectors, the Neumann flux correction used by the adjoint system, and the
cubic reaction vector with its block-diagonal Jacobian.

Conventions: the diffusion matrix S carries the penalty and consistency
terms but not the diffusion coefficient (the systems use D * S); the load
vector carries the coefficient on its diffusion part.  Across a boundary
edge the jump is v n and the gradient average is the one-sided trace.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from . import quadrature as quad
from .mesh import classify_flow, velocity

#: local mass block of the unit-coefficient P1 nodal basis, times area
LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

#: stability heuristic 3 p (p + 1) for p = 1
GAMMA_THRESHOLD = 6.0


@dataclass
class DgSpace:
    """Discontinuous P1 space: 3 nodal DoFs per triangle, disjoint supports.

    ``nonlin_integral_count`` tallies reaction-integral evaluations (one unit
    per requested row, times the local dimension); the hyper-reduction tests
    read it to verify the sampled evaluation cost.
    """

    mesh: object
    p: int = 1
    n_p: int = 3
    nonlin_integral_count: int = 0
    _coef: np.ndarray = field(default=None, repr=False)
    _grads: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        tris = self.mesh.triangles
        verts = self.mesh.vertices
        n_e = len(tris)
        vmat = np.concatenate(
            [np.ones((n_e, 3, 1)), verts[tris]], axis=2
        )  # rows [1, x_i, y_i]
        self._coef = np.transpose(np.linalg.inv(vmat), (0, 2, 1))
        self._grads = self._coef[:, :, 1:]

    @property
    def n_e(self):
        return self.mesh.n_triangles

    @property
    def N(self):
        return 3 * self.n_e

    def element_dofs(self, e):
        return np.arange(3 * e, 3 * e + 3)

    def basis_at(self, e, pts):
        """Values of the three local basis functions at physical points."""
        pts = np.atleast_2d(pts)
        aug = np.column_stack([np.ones(len(pts)), pts])
        return aug @ self._coef[e].T  # (n_pts, 3)

    def grads(self, e):
        """Constant basis gradients on element ``e``, shape (3, 2)."""
        return self._grads[e]

    def reset_counter(self):
        self.nonlin_integral_count = 0


@dataclass
class Operators:
    """Assembled SIPG operators for one field (fixed diffusion coefficient)."""

    M: sp.csr_matrix
    S: sp.csr_matrix
    B: sp.csr_matrix
    load: np.ndarray
    neumann_flux: sp.csr_matrix  # adjoint V.n surface term on the walls
    gamma: float
    D: float
    vmax: float
    warnings: list = field(default_factory=list)


@dataclass
class NonlinearEval:
    yhat: np.ndarray
    g: np.ndarray
    jac: sp.csr_matrix


def mass_matrix(space):
    areas = space.mesh.areas
    blocks = areas[:, None, None] * LOCAL_MASS[None, :, :]
    return _block_diag(space, blocks)


def _block_diag(space, blocks):
    """Sparse matrix from per-element 3x3 blocks."""
    n_e = space.n_e
    rows = np.repeat(np.arange(space.N).reshape(n_e, 3), 3, axis=1).ravel()
    cols = np.tile(np.arange(space.N).reshape(n_e, 1, 3), (1, 3, 1)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(space.N, space.N))


def assemble_operators(space, D, vmax, gamma, dirichlet_data=None):
    """Assemble mass, diffusion, convection, loads and the Neumann flux term.

    Parameters
    ----------
    space : DgSpace
    D : float
        Diffusion coefficient (enters the load vector; S itself is unscaled).
    vmax : float
        Peak channel velocity of the parabolic profile.
    gamma : float
        Interior penalty parameter.
    dirichlet_data : callable or None
        Boundary value function evaluated at (n, 2) point arrays; None means
        homogeneous data.
    """
    if gamma <= 0:
        raise ValueError("penalty parameter gamma must be positive")
    if D < 0:
        raise ValueError("diffusion coefficient must be non-negative")

    mesh = space.mesh
    H = mesh.H
    N = space.N
    warnings = []
    if gamma < GAMMA_THRESHOLD:
        warnings.append(
            f"gamma={gamma} below stability heuristic {GAMMA_THRESHOLD} for p=1"
        )

    M = mass_matrix(space)
    load = np.zeros(N)

    s_rows, s_cols, s_vals = [], [], []
    b_rows, b_cols, b_vals = [], [], []
    n_rows, n_cols, n_vals = [], [], []

    # volume terms
    for e in range(space.n_e):
        dofs = space.element_dofs(e)
        area = mesh.areas[e]
        g = space.grads(e)  # (3, 2)
        ke = area * (g @ g.T)
        _scatter(s_rows, s_cols, s_vals, dofs, dofs, ke)

        pts = quad.triangle_points(mesh.vertices[mesh.triangles[e]])
        vx = velocity(pts, vmax, H)[:, 0]
        # int_K V . grad(phi_j) phi_i = dphi_j/dx1 * int V_x1 phi_i
        lam = quad.TRI_BARY  # basis values at quad points
        int_v_phi = area * (quad.TRI_WEIGHTS * vx) @ lam  # (3,)
        be = np.outer(int_v_phi, g[:, 0])
        _scatter(b_rows, b_cols, b_vals, dofs, dofs, be)

    # face terms
    flow = classify_flow(mesh, vmax, H)
    for eid, edge in enumerate(mesh.edges):
        a, b = edge.vertices
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        pts, w = quad.edge_points(pa, pb)
        nrm = edge.normal
        h_e = edge.length
        vn = velocity(pts, vmax, H) @ nrm
        vn_mid = flow[eid].vn

        if edge.kind == "interior":
            k1, k2 = edge.tris
            d1, d2 = space.element_dofs(k1), space.element_dofs(k2)
            phi1 = space.basis_at(k1, pts)  # (q, 3)
            phi2 = space.basis_at(k2, pts)
            gn1 = space.grads(k1) @ nrm  # (3,)
            gn2 = space.grads(k2) @ nrm

            # SIPG: -({grad v}.[w] + {grad w}.[v]) + (gamma/h)[v].[w]
            # jump sign +1 on k1, -1 on k2
            for (di, phii, gni, si) in ((d1, phi1, gn1, 1.0), (d2, phi2, gn2, -1.0)):
                for (dj, phij, gnj, sj) in (
                    (d1, phi1, gn1, 1.0),
                    (d2, phi2, gn2, -1.0),
                ):
                    cons = -0.5 * si * np.outer(w @ phii, gnj)
                    symm = -0.5 * sj * np.outer(gni, w @ phij)
                    pen = (gamma / h_e) * si * sj * ((phii * w[:, None]).T @ phij)
                    _scatter(s_rows, s_cols, s_vals, di, dj, cons + symm + pen)

            # upwind convection: inflow side fixed by the midpoint sign
            if vn_mid < -1e-14:
                # edge inflow for k1 (normal is outward from k1)
                wphi1 = phi1 * (w * vn)[:, None]
                _scatter(b_rows, b_cols, b_vals, d1, d2, wphi1.T @ phi2)
                _scatter(b_rows, b_cols, b_vals, d1, d1, -(wphi1.T @ phi1))
            elif vn_mid > 1e-14:
                # edge inflow for k2 with outward normal -n
                wphi2 = phi2 * (w * vn)[:, None]
                _scatter(b_rows, b_cols, b_vals, d2, d1, -(wphi2.T @ phi1))
                _scatter(b_rows, b_cols, b_vals, d2, d2, wphi2.T @ phi2)
            continue

        (k1,) = edge.tris
        d1 = space.element_dofs(k1)
        phi1 = space.basis_at(k1, pts)
        gn1 = space.grads(k1) @ nrm

        if edge.kind == "dirichlet":
            cons = -np.outer(w @ phi1, gn1) - np.outer(gn1, w @ phi1)
            pen = (gamma / h_e) * ((phi1 * w[:, None]).T @ phi1)
            _scatter(s_rows, s_cols, s_vals, d1, d1, cons + pen)
            if dirichlet_data is not None:
                eta = np.asarray(dirichlet_data(pts), dtype=float)
                load[d1] += D * (
                    (gamma / h_e) * ((w * eta) @ phi1) - ((w * eta).sum() * gn1)
                )
                if vn_mid < -1e-14:
                    load[d1] += -((w * vn * eta) @ phi1)
            if vn_mid < -1e-14:
                # domain inflow boundary term of b_h: -int vn v w
                _scatter(
                    b_rows, b_cols, b_vals, d1, d1, -((phi1 * (w * vn)[:, None]).T @ phi1)
                )
        else:  # neumann wall: V.n surface term kept for the adjoint system
            _scatter(
                n_rows, n_cols, n_vals, d1, d1, (phi1 * (w * vn)[:, None]).T @ phi1
            )

    S = _from_coo(s_rows, s_cols, s_vals, N)
    B = _from_coo(b_rows, b_cols, b_vals, N)
    A_N = _from_coo(n_rows, n_cols, n_vals, N)
    return Operators(M, S, B, load, A_N, gamma, D, vmax, warnings)


def _from_coo(rows, cols, vals, N):
    if not rows:
        return sp.csr_matrix((N, N))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )


def _scatter(rows, cols, vals, dofs_i, dofs_j, block):
    ri, cj = np.meshgrid(dofs_i, dofs_j, indexing="ij")
    rows.append(ri.ravel())
    cols.append(cj.ravel())
    vals.append(np.asarray(block).ravel())


def cubic_reaction(y, c1, c2):
    return c1 * y * (y - c2) * (y - 1.0)


def cubic_reaction_deriv(y, c1, c2):
    return c1 * (3.0 * y**2 - 2.0 * (1.0 + c2) * y + c2)


def eval_nonlinearity(space, yhat, c1, c2):
    """Reaction vector g and its block-diagonal Jacobian for coefficients yhat."""
    yhat = np.asarray(yhat, dtype=float)
    if yhat.shape != (space.N,):
        raise ValueError(f"expected coefficient vector of length {space.N}")
    areas = space.mesh.areas
    lam = quad.TRI_BARY  # (q, 3) basis values at volume quad points
    wq = quad.TRI_WEIGHTS
    ynod = yhat.reshape(space.n_e, 3)
    yq = ynod @ lam.T  # (n_e, q)

    gq = cubic_reaction(yq, c1, c2)
    gvec = areas[:, None] * ((gq * wq) @ lam)  # (n_e, 3)

    gpq = cubic_reaction_deriv(yq, c1, c2)
    jblocks = areas[:, None, None] * np.einsum("eq,qi,qj->eij", gpq * wq, lam, lam)

    space.nonlin_integral_count += space.N * space.n_p
    return NonlinearEval(yhat, gvec.ravel(), _block_diag(space, jblocks))


def eval_nonlinearity_rows(space, yhat, rows, c1, c2):
    """Sampled reaction rows for hyper-reduction.

    Returns the requested entries of g and the matching Jacobian rows as an
    (m, N) sparse matrix; only the owning elements are visited.
    """
    yhat = np.asarray(yhat, dtype=float)
    rows = np.asarray(rows, dtype=np.int64)
    elems = rows // 3
    locs = rows % 3
    lam = quad.TRI_BARY
    wq = quad.TRI_WEIGHTS
    areas = space.mesh.areas[elems]
    ynod = yhat.reshape(space.n_e, 3)[elems]  # (m, 3)
    yq = ynod @ lam.T

    gq = cubic_reaction(yq, c1, c2)
    lam_rows = lam[:, locs].T  # (m, q) basis value of the sampled row
    g_rows = areas * np.sum(gq * wq * lam_rows, axis=1)

    gpq = cubic_reaction_deriv(yq, c1, c2)
    jac_blocks = areas[:, None] * np.einsum("mq,mq,qj->mj", gpq * wq, lam_rows, lam)
    m = len(rows)
    jr = np.repeat(np.arange(m), 3)
    jc = (3 * elems[:, None] + np.arange(3)[None, :]).ravel()
    jac_rows = sp.csr_matrix((jac_blocks.ravel(), (jr, jc)), shape=(m, space.N))

    space.nonlin_integral_count += m * space.n_p
    return g_rows, jac_rows


def project_initial(space, fieldfn, breaks_x=None):
    """L2-project a spatial function onto the discontinuous space.

    ``breaks_x`` lists x1 positions of vertical discontinuity lines; each
    triangle is clipped against them before quadrature, which makes the
    projection of axis-aligned indicator data exact.
    """
    mesh = space.mesh
    b = np.zeros((space.n_e, 3))
    for e in range(space.n_e):
        verts = mesh.vertices[mesh.triangles[e]]
        if breaks_x:
            pieces = quad.triangle_pieces(verts, breaks_x)
        else:
            pieces = [verts]
        for tri in pieces:
            area = abs(quad.polygon_area(tri))
            pts = quad.triangle_points(tri)
            vals = np.asarray(fieldfn(pts), dtype=float)
            lam = space.basis_at(e, pts)
            b[e] += area * ((vals * quad.TRI_WEIGHTS) @ lam)
    blocks = mesh.areas[:, None, None] * LOCAL_MASS[None, :, :]
    coeffs = np.linalg.solve(blocks, b[:, :, None])[:, :, 0]
    return coeffs.ravel()


def export_matrix_market(ops, directory):
    """Write the assembled matrices in Matrix Market coordinate format."""
    import os

    os.makedirs(directory, exist_ok=True)
    for name, mat in (
        ("mass", ops.M),
        ("diffusion", ops.S),
        ("convection", ops.B),
        ("neumann_flux", ops.neumann_flux),
    ):
        mmwrite(os.path.join(directory, f"{name}.mtx"), sp.coo_matrix(mat))
    np.savetxt(os.path.join(directory, "load.csv"), ops.load, delimiter=",")
