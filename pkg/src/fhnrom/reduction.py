"""Reduction artifacts built from full-order snapshot data.

Three builders: mass-weighted POD bases of the state snapshots, DEIM
interpolation of the reaction snapshots, and exact DMD of the time-shifted
reaction snapshot pair.  State POD works in the Cholesky-transformed
geometry (R^T R = M); the reaction snapshots stay in plain Euclidean
geometry for both DEIM and DMD.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ReductionError(ValueError):
    """Raised for inadmissible snapshot data or a failed greedy step."""


@dataclass
class SnapshotSet:
    """Columns of coefficient vectors at successive time instances."""

    data: np.ndarray  # (N, J)
    times: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.data.ndim != 2:
            raise ReductionError("snapshot data must be a 2-D matrix")
        if self.data.shape[1] != len(self.times):
            raise ReductionError("snapshot count and time stamps disagree")


@dataclass
class PodBasis:
    """M-orthonormal basis with its singular values and rank bookkeeping."""

    psi: np.ndarray  # (N, k)
    sigma: np.ndarray  # all singular values, non-increasing
    k: int
    ric: float  # relative information content at k
    chol: sp.csr_matrix = field(repr=False, default=None)  # R with R^T R = M

    def ric_at(self, k):
        energy = self.sigma**2
        return float(energy[:k].sum() / energy.sum())


@dataclass
class DeimModel:
    """Interpolatory projection of the reaction vector at m sampled rows."""

    W: np.ndarray  # (N, m) left singular vectors of the reaction snapshots
    indices: np.ndarray  # interpolation rows, distinct
    Q: np.ndarray  # (k, m) = Psi_y^T W (P^T W)^{-1}
    PtW_inv: np.ndarray = field(repr=False, default=None)  # (m, m)
    condition: float = np.nan

    @property
    def m(self):
        return self.W.shape[1]


@dataclass
class DmdModel:
    """Exact-DMD surrogate of the reaction time series (complex internals)."""

    modes: np.ndarray  # (N, r) complex
    eigvals: np.ndarray  # (r,) complex
    omega: np.ndarray  # (r,) complex continuous frequencies
    amplitudes: np.ndarray  # (r,) complex
    rank: int
    t0: float
    dt: float
    recon_residual: float  # max relative column error on the training data
    warnings: list = field(default_factory=list)

    def evaluate(self, t):
        """Real-valued surrogate at time t (vectorized over scalar t)."""
        phase = np.exp(self.omega * (t - self.t0))
        return np.real(self.modes @ (phase * self.amplitudes))


def mass_cholesky(M):
    """Sparse upper-triangular R with R^T R = M, per 3x3 mass block."""
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if n % 3:
        raise ReductionError("mass matrix is not block 3x3")
    blocks = []
    for e in range(n // 3):
        blk = M[3 * e : 3 * e + 3, 3 * e : 3 * e + 3].toarray()
        blocks.append(np.linalg.cholesky(blk).T)
    return sp.block_diag(blocks, format="csr")


def build_pod(snapshots, mass, ric_threshold=0.9999, k=None):
    """M-weighted POD basis of a snapshot set.

    The rank is the smallest k whose cumulative squared singular-value
    fraction reaches ``ric_threshold``, unless ``k`` is forced explicitly.

    ``mass`` may be an assembled Operators instance or a sparse matrix.
    """
    M = getattr(mass, "M", mass)
    Y = snapshots.data
    if not np.any(Y):
        raise ReductionError("zero snapshot matrix has no POD basis")
    R = mass_cholesky(M)
    Yhat = R @ Y
    zeta, sigma, _ = np.linalg.svd(Yhat, full_matrices=False)
    keep = sigma > 1e-14 * sigma[0]
    sigma = sigma[keep]
    zeta = zeta[:, keep]
    energy = np.cumsum(sigma**2) / np.sum(sigma**2)
    if k is None:
        k = int(np.searchsorted(energy, ric_threshold) + 1)
        k = min(k, len(sigma))
    elif k > len(sigma):
        raise ReductionError(f"requested rank {k} exceeds snapshot rank {len(sigma)}")
    psi = spla.spsolve_triangular(
        R.tocsr(), np.ascontiguousarray(zeta[:, :k]), lower=False
    )
    return PodBasis(psi, sigma, int(k), float(energy[k - 1]), R)


def build_deim(nonlinear_snapshots, pod_y, mass, m):
    """DEIM basis, greedy interpolation indices and precomputed projector."""
    G = nonlinear_snapshots.data
    if not np.any(G):
        raise ReductionError("zero reaction snapshot matrix")
    U, s, _ = np.linalg.svd(G, full_matrices=False)
    rank = int(np.sum(s > 1e-13 * s[0]))
    if m > rank:
        raise ReductionError(f"requested {m} DEIM modes, snapshot rank is {rank}")
    W = U[:, :m]

    indices = np.empty(m, dtype=np.int64)
    indices[0] = int(np.argmax(np.abs(W[:, 0])))
    for ell in range(1, m):
        Wl = W[:, :ell]
        P = indices[:ell]
        try:
            c = np.linalg.solve(Wl[P], W[P, ell])
        except np.linalg.LinAlgError:
            raise ReductionError(f"singular interpolation system at greedy step {ell}")
        residual = W[:, ell] - Wl @ c
        indices[ell] = int(np.argmax(np.abs(residual)))  # argmax takes lowest index on ties
    if len(set(indices.tolist())) != m:
        raise ReductionError("DEIM produced duplicate interpolation indices")

    PtW = W[indices]
    condition = float(np.linalg.cond(PtW))
    PtW_inv = np.linalg.inv(PtW)
    M = getattr(mass, "M", mass)
    Q = (pod_y.psi.T @ W) @ PtW_inv
    return DeimModel(W, indices, Q, PtW_inv, condition)


def deim_apply(model, sampled_values):
    """Full-space DEIM reconstruction W (P^T W)^{-1} of sampled row values."""
    return model.W @ (model.PtW_inv @ np.asarray(sampled_values))


def build_dmd(G, Gp, dt, rank):
    """Exact DMD of the time-shifted snapshot pair (G, G').

    Principal-branch logarithm for the continuous frequencies; amplitudes
    from the pseudoinverse applied to the first snapshot column.
    """
    X = G.data
    Xp = Gp.data
    if X.shape != Xp.shape:
        raise ReductionError("shifted snapshot matrices must share a shape")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    warnings = []
    usable = int(np.sum(s > 1e-13 * max(s[0], 1e-300)))
    if rank > usable:
        warnings.append(f"rank reduced from {rank} to {usable} (zero singular values)")
        rank = usable
    if rank == 0:
        raise ReductionError("reaction snapshots have rank zero")
    U = U[:, :rank]
    s = s[:rank]
    V = Vh[:rank].conj().T
    Atilde = U.conj().T @ Xp @ V @ np.diag(1.0 / s)
    lam, Wtil = np.linalg.eig(Atilde)
    modes = Xp @ V @ np.diag(1.0 / s) @ Wtil
    omega = np.log(lam.astype(complex)) / dt
    amplitudes = np.linalg.pinv(modes) @ X[:, 0]
    t0 = float(G.times[0])

    model = DmdModel(modes, lam, omega, amplitudes, rank, t0, dt, 0.0, warnings)
    recon = np.column_stack([model.evaluate(t) for t in G.times])
    scale = np.linalg.norm(X)
    model.recon_residual = float(np.linalg.norm(recon - X) / scale) if scale else 0.0
    return model


# serialization: CSV matrices plus a JSON manifest ---------------------------


def _write_matrix(path, A):
    np.savetxt(path, np.atleast_2d(A), delimiter=",")


def _read_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def save_pod(basis, directory):
    os.makedirs(directory, exist_ok=True)
    _write_matrix(os.path.join(directory, "psi.csv"), basis.psi)
    _write_matrix(os.path.join(directory, "sigma.csv"), basis.sigma)
    manifest = {"kind": "pod", "k": basis.k, "ric": basis.ric}
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_pod(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    psi = _read_matrix(os.path.join(directory, "psi.csv"))
    sigma = _read_matrix(os.path.join(directory, "sigma.csv")).ravel()
    return PodBasis(psi, sigma, manifest["k"], manifest["ric"])


def save_deim(model, directory):
    os.makedirs(directory, exist_ok=True)
    _write_matrix(os.path.join(directory, "w.csv"), model.W)
    _write_matrix(os.path.join(directory, "q.csv"), model.Q)
    manifest = {
        "kind": "deim",
        "indices": model.indices.tolist(),
        "condition": model.condition,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_deim(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    W = _read_matrix(os.path.join(directory, "w.csv"))
    Q = _read_matrix(os.path.join(directory, "q.csv"))
    indices = np.asarray(manifest["indices"], dtype=np.int64)
    return DeimModel(W, indices, Q, np.linalg.inv(W[indices]), manifest["condition"])


def save_dmd(model, directory):
    os.makedirs(directory, exist_ok=True)
    _write_matrix(os.path.join(directory, "modes_re.csv"), model.modes.real)
    _write_matrix(os.path.join(directory, "modes_im.csv"), model.modes.imag)
    manifest = {
        "kind": "dmd",
        "rank": model.rank,
        "t0": model.t0,
        "dt": model.dt,
        "recon_residual": model.recon_residual,
        "eigvals": [[v.real, v.imag] for v in model.eigvals],
        "omega": [[v.real, v.imag] for v in model.omega],
        "amplitudes": [[v.real, v.imag] for v in model.amplitudes],
        "warnings": model.warnings,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_dmd(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    re = _read_matrix(os.path.join(directory, "modes_re.csv"))
    im = _read_matrix(os.path.join(directory, "modes_im.csv"))

    def _cvec(pairs):
        arr = np.asarray(pairs, dtype=float)
        return arr[:, 0] + 1j * arr[:, 1]

    return DmdModel(
        re + 1j * im,
        _cvec(manifest["eigvals"]),
        _cvec(manifest["omega"]),
        _cvec(manifest["amplitudes"]),
        manifest["rank"],
        manifest["t0"],
        manifest["dt"],
        manifest["recon_residual"],
        manifest.get("warnings", []),
    )
