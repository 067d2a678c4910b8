"""Config-driven experiment pipeline.

Reproduces the benchmark protocol: uncontrolled run, desired states at T/2,
full-order optimization, snapshot collection, the three reductions, reduced
optimizations, and an accuracy/speed comparison report.  Stages are cached
by a hash of the physics/numerics part of the config.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .assembly import DgSpace, assemble_operators, eval_nonlinearity, project_initial
from .fom import (
    ControlGrid,
    FhnParams,
    control_inner,
    cost,
    gradient,
    solve_adjoint,
    solve_state,
)
from .mesh import build_uniform_mesh
from .optimize import ControlProblem, OptimizeConfig, minimize
from .reduction import SnapshotSet, build_deim, build_dmd, build_pod
from .rom import (
    project_state,
    reduce_operators,
    reduced_cost,
    reduced_cost_and_gradient,
    solve_reduced_state,
)

ROM_BACKENDS = ("pod", "pod-deim", "pod-dmd")

# fields that do not change the computed artifacts (excluded from the hash)
_NON_SEMANTIC = {"out_dir", "workers", "write_vtk", "use_cache"}


class ConfigError(ValueError):
    """Raised for unknown keys or inconsistent configuration values."""


@dataclass
class ExperimentConfig:
    # domain and mesh
    L: float = 65.0
    H: float = 4.0
    dx: float = 0.5
    # physics
    c1: float = 9.0
    c2: float = 0.02
    c3: float = 5.0
    eps: float = 0.1
    D1: float = 1.0
    D2: float = 1.0
    vmax: float = 128.0
    lam: float = 1e-3
    # time discretization
    T: float = 1.0
    dt: float = 0.05
    # dG and reduction
    gamma: float = 6.0
    ric_threshold: float = 0.9999
    pod_rank: int = None  # override RIC-based rank selection
    deim_rank: object = "pod"  # "pod" (match POD rank) or an int
    dmd_rank: object = "pod"
    # initial excitation strip and amplitude
    strip_lo: float = 2.0
    strip_hi: float = 2.2
    strip_value: float = 1.0
    # optimization
    u_l: float = -0.01
    u_r: float = 0.01
    stop_tol: float = 1e-3
    max_cg_iters: int = 100
    # harness
    backends: tuple = ROM_BACKENDS
    out_dir: str = "results"
    workers: int = 1
    write_vtk: bool = False
    use_cache: bool = True

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def validate(self):
        self.params()  # checks dt | T and lam > 0
        if self.L <= 0 or self.H <= 0 or self.dx <= 0:
            raise ConfigError("L, H, dx must be positive")
        if not 0 < self.ric_threshold <= 1:
            raise ConfigError("ric_threshold must lie in (0, 1]")
        bad = [b for b in self.backends if b not in ROM_BACKENDS]
        if bad:
            raise ConfigError(f"unknown back-ends: {bad}")
        for rank in (self.deim_rank, self.dmd_rank):
            if rank != "pod" and not isinstance(rank, int):
                raise ConfigError("deim_rank/dmd_rank must be 'pod' or an integer")

    def params(self):
        return FhnParams(
            c1=self.c1, c2=self.c2, c3=self.c3, eps=self.eps,
            D1=self.D1, D2=self.D2, vmax=self.vmax, lam=self.lam,
            T=self.T, dt=self.dt,
        )

    def optimize_config(self, variant="nonlinear-PR+"):
        return OptimizeConfig(
            stop_tol=self.stop_tol,
            max_cg_iters=self.max_cg_iters,
            u_l=self.u_l,
            u_r=self.u_r,
            variant=variant,
        )

    def semantic_dict(self):
        d = asdict(self)
        for key in _NON_SEMANTIC:
            d.pop(key)
        d["backends"] = sorted(self.backends)
        return d

    def config_hash(self):
        payload = json.dumps(self.semantic_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def coarse_preset(cfg=None):
    """The coarse acceptance configuration: identical physics, dx = 1.0."""
    cfg = cfg if cfg is not None else ExperimentConfig()
    return replace(cfg, dx=1.0)


@dataclass
class AssembledProblem:
    cfg: ExperimentConfig
    mesh: object
    space: DgSpace
    ops_y: object
    ops_z: object
    y0: np.ndarray
    z0: np.ndarray
    params: FhnParams


def setup_problem(cfg):
    """Mesh, space, operators and projected initial data for a config."""
    mesh = build_uniform_mesh(cfg.L, cfg.H, cfg.dx)
    space = DgSpace(mesh)
    ops_y = assemble_operators(space, cfg.D1, cfg.vmax, cfg.gamma)
    ops_z = assemble_operators(space, cfg.D2, cfg.vmax, cfg.gamma)

    lo, hi, val = cfg.strip_lo, cfg.strip_hi, cfg.strip_value

    def pulse(pts):
        x1 = np.asarray(pts)[:, 0]
        return np.where((x1 >= lo) & (x1 <= hi), val, 0.0)

    y0 = project_initial(space, pulse, breaks_x=[lo, hi])
    z0 = np.zeros(space.N)
    return AssembledProblem(cfg, mesh, space, ops_y, ops_z, y0, z0, cfg.params())


def zero_control(prob):
    return ControlGrid.zeros(
        prob.params.n_steps, prob.space.N, prob.cfg.u_l, prob.cfg.u_r
    )


def uncontrolled_run(prob, cache=None):
    """Forward solve with u = 0 (the natural dynamics); optionally cached."""
    if cache is not None:
        hit = cache.load_trajectory("uncontrolled")
        if hit is not None:
            return hit
    traj = solve_state(
        prob.space, prob.ops_y, prob.ops_z, prob.params,
        zero_control(prob), prob.y0, prob.z0,
    )
    if cache is not None:
        cache.store_trajectory("uncontrolled", traj)
    return traj


def desired_states(prob, natural):
    """Desired terminal fields: the uncontrolled solution at t nearest T/2."""
    n_half = int(round(0.5 * prob.params.T / prob.params.dt))
    n_half = min(n_half, prob.params.n_steps)
    return natural.y[n_half].copy(), natural.z[n_half].copy()


def state_snapshots(prob, traj, provenance="uncontrolled"):
    Y = SnapshotSet(traj.y.T, traj.times, provenance)
    Z = SnapshotSet(traj.z.T, traj.times, provenance)
    return Y, Z


def reaction_snapshots(prob, traj, provenance="uncontrolled"):
    """Time-shifted reaction snapshot pair (G, G') and the full series."""
    p = prob.params
    cols = np.column_stack(
        [eval_nonlinearity(prob.space, y, p.c1, p.c2).g for y in traj.y]
    )
    G = SnapshotSet(cols[:, :-1], traj.times[:-1], provenance)
    Gp = SnapshotSet(cols[:, 1:], traj.times[1:], provenance)
    full = SnapshotSet(cols, traj.times, provenance)
    return G, Gp, full


def _resolve_rank(setting, pod_rank, max_rank):
    rank = pod_rank if setting == "pod" else int(setting)
    return min(rank, max_rank)


@dataclass
class Reductions:
    pod_y: object
    pod_z: object
    deim: object
    dmd: object
    sigma_g: np.ndarray


def build_reductions(prob, natural, k=None):
    """POD bases, DEIM model and DMD model from the uncontrolled snapshots."""
    cfg = prob.cfg
    Y, Z = state_snapshots(prob, natural)
    G, Gp, Gfull = reaction_snapshots(prob, natural)
    pod_y = build_pod(Y, prob.ops_y, cfg.ric_threshold, k=k or cfg.pod_rank)
    pod_z = build_pod(Z, prob.ops_z, cfg.ric_threshold, k=k or cfg.pod_rank or pod_y.k)
    sigma_g = np.linalg.svd(G.data, compute_uv=False)
    rank_g = int(np.sum(sigma_g > 1e-13 * sigma_g[0])) if sigma_g.size else 0
    m = _resolve_rank(cfg.deim_rank, pod_y.k, rank_g)
    deim = build_deim(Gfull, pod_y, prob.ops_y, m)
    r = _resolve_rank(cfg.dmd_rank, pod_y.k, rank_g)
    dmd = build_dmd(G, Gp, prob.params.dt, r)
    return Reductions(pod_y, pod_z, deim, dmd, sigma_g)


def make_fom_problem(prob, y_T, z_T, stats=None):
    """ControlProblem callbacks around the full-order solvers."""
    space, ops_y, ops_z, p = prob.space, prob.ops_y, prob.ops_z, prob.params
    M = ops_y.M
    stats = stats if stats is not None else {}
    stats.setdefault("newton_iters", [])

    def _solve(u_arr):
        grid = ControlGrid(u_arr, prob.cfg.u_l, prob.cfg.u_r)
        traj = solve_state(space, ops_y, ops_z, p, grid, prob.y0, prob.z0)
        stats["newton_iters"].extend(traj.newton_iters.tolist())
        return grid, traj

    def fom_cost(u_arr):
        grid, traj = _solve(u_arr)
        return cost(p, traj, grid, y_T, z_T, ops_y)

    def fom_cost_and_grad(u_arr):
        grid, traj = _solve(u_arr)
        J = cost(p, traj, grid, y_T, z_T, ops_y)
        adj = solve_adjoint(space, ops_y, ops_z, p, traj, y_T, z_T)
        return J, gradient(adj, grid, p)

    def inner(a, b):
        return control_inner(a, b, M, p.dt)

    return ControlProblem(fom_cost, fom_cost_and_grad, inner), stats


def make_rom_problem(prob, rops, y_T, z_T, stats=None):
    """ControlProblem callbacks around the reduced solvers."""
    from .rom import misfit_offset

    p = prob.params
    M = prob.ops_y.M
    y_T_r, z_T_r = project_state(rops, y_T, z_T)
    y0_r, z0_r = project_state(rops, prob.y0, prob.z0)
    offset = misfit_offset(rops, y_T, z_T)
    stats = stats if stats is not None else {}
    stats.setdefault("newton_iters", [])

    def rom_cost(u_arr):
        grid = ControlGrid(u_arr, prob.cfg.u_l, prob.cfg.u_r)
        traj_r = solve_reduced_state(rops, p, grid, y0_r, z0_r, space=prob.space)
        stats["newton_iters"].extend(traj_r.newton_iters.tolist())
        return reduced_cost(rops, p, traj_r, grid, y_T_r, z_T_r,
                            misfit_offset=offset)

    def rom_cost_and_grad(u_arr):
        grid = ControlGrid(u_arr, prob.cfg.u_l, prob.cfg.u_r)
        J, grad, traj_r = reduced_cost_and_gradient(
            rops, p, grid, y_T_r, z_T_r, y0_r, z0_r, space=prob.space,
            misfit_offset=offset,
        )
        stats["newton_iters"].extend(traj_r.newton_iters.tolist())
        return J, grad

    def inner(a, b):
        return control_inner(a, b, M, p.dt)

    return ControlProblem(rom_cost, rom_cost_and_grad, inner), stats


def frobenius_error(full, reduced, basis, which="y"):
    """Relative space-time Frobenius error between full and lifted reduced fields."""
    W_full = np.asarray(getattr(full, which)).T  # (N, n_steps + 1)
    W_red = np.asarray(getattr(reduced, which)).T
    if W_full.shape[1] != W_red.shape[1]:
        raise ValueError("trajectories have different step counts")
    denom = np.linalg.norm(W_full)
    if denom == 0.0:
        raise ValueError("full trajectory is identically zero")
    return float(np.linalg.norm(W_full - basis.psi @ W_red) / denom)


def relative_frobenius(a, b):
    denom = np.linalg.norm(np.asarray(a))
    if denom == 0.0:
        raise ValueError("reference array is identically zero")
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


@dataclass
class BackendResult:
    backend: str
    k: int
    final_j: float
    cg_iterations: int
    line_search_trials: int
    mean_newton_iters: float
    online_seconds: float
    total_seconds: float  # includes the offline reduction share
    speedup: float
    err_u: float
    err_y: float
    err_z: float
    status: str


@dataclass
class ComparisonReport:
    cfg: ExperimentConfig
    config_hash: str
    fom_j: float
    fom_cg_iterations: int
    fom_line_search_trials: int
    fom_mean_newton_iters: float
    fom_seconds: float
    pod_k: int
    sigma_y: np.ndarray
    sigma_z: np.ndarray
    sigma_g: np.ndarray
    backends: dict = field(default_factory=dict)  # name -> BackendResult
    histories: dict = field(default_factory=dict)  # name -> J history


class StageCache:
    """Flat file cache keyed by the semantic config hash."""

    def __init__(self, root, cfg):
        self.dir = os.path.join(root, "cache", cfg.config_hash())
        os.makedirs(self.dir, exist_ok=True)

    def _path(self, name):
        return os.path.join(self.dir, f"{name}.npz")

    def load_trajectory(self, name):
        from .fom import Trajectory

        path = self._path(name)
        if not os.path.exists(path):
            return None
        data = np.load(path)
        return Trajectory(
            str(data["kind"]), data["times"], data["y"], data["z"],
            data["newton_iters"] if "newton_iters" in data else None,
        )

    def store_trajectory(self, name, traj):
        payload = {"kind": traj.kind, "times": traj.times, "y": traj.y, "z": traj.z}
        if traj.newton_iters is not None:
            payload["newton_iters"] = traj.newton_iters
        np.savez(self._path(name), **payload)

    def load_array(self, name):
        path = self._path(name)
        if not os.path.exists(path):
            return None
        return np.load(path)["arr"]

    def store_array(self, name, arr):
        np.savez(self._path(name), arr=np.asarray(arr))


def run_fom_optimization(prob, y_T, z_T, cache=None, log_path=None):
    """Full-order optimization from u = 0; returns (control, report, mean_newton)."""
    cfg = prob.cfg
    stats = {}
    problem, stats = make_fom_problem(prob, y_T, z_T, stats)
    ocfg = cfg.optimize_config()
    if log_path:
        ocfg.log_path = log_path
    if cache is not None:
        u_star = cache.load_array("fom_opt_u")
        meta = _load_json(os.path.join(cache.dir, "fom_opt_meta.json"))
        if u_star is not None and meta is not None:
            from .optimize import OptimizeReport

            return (
                ControlGrid(u_star, cfg.u_l, cfg.u_r),
                OptimizeReport(**meta),
                meta.get("mean_newton_iters"),
            )
    u0 = np.zeros((prob.params.n_steps, prob.space.N))
    t0 = time.perf_counter()
    u_star, report = minimize(problem, u0, ocfg)
    report.wall_seconds = time.perf_counter() - t0
    mean_newton = float(np.mean(stats["newton_iters"])) if stats["newton_iters"] else 0.0
    report.mean_newton_iters = mean_newton
    if cache is not None:
        cache.store_array("fom_opt_u", u_star)
        _dump_json(os.path.join(cache.dir, "fom_opt_meta.json"), _report_dict(report))
    return ControlGrid(u_star, cfg.u_l, cfg.u_r), report, mean_newton


def run_rom_optimization(prob, rops, y_T, z_T, log_path=None):
    """One reduced optimization from u = 0; returns (control, report, state)."""
    cfg = prob.cfg
    stats = {}
    problem, stats = make_rom_problem(prob, rops, y_T, z_T, stats)
    variant = "linear" if rops.backend == "pod-dmd" else "nonlinear-PR+"
    ocfg = cfg.optimize_config(variant)
    if log_path:
        ocfg.log_path = log_path
    u0 = np.zeros((prob.params.n_steps, prob.space.N))
    t0 = time.perf_counter()
    u_star, report = minimize(problem, u0, ocfg)
    report.wall_seconds = time.perf_counter() - t0
    if rops.backend == "pod-dmd":
        report.mean_newton_iters = None
    else:
        report.mean_newton_iters = (
            float(np.mean(stats["newton_iters"])) if stats["newton_iters"] else 0.0
        )
    grid = ControlGrid(u_star, cfg.u_l, cfg.u_r)
    y0_r, z0_r = project_state(rops, prob.y0, prob.z0)
    traj_r = solve_reduced_state(rops, prob.params, grid, y0_r, z0_r, space=prob.space)
    return grid, report, traj_r


def run_experiment(cfg):
    """Execute the full comparison pipeline and return a ComparisonReport."""
    prob = setup_problem(cfg)
    cache = StageCache(cfg.out_dir, cfg) if cfg.use_cache else None

    natural = _stage("uncontrolled", lambda: uncontrolled_run(prob, cache))
    y_T, z_T = _stage("desired-states", lambda: desired_states(prob, natural))

    u_fom, fom_report, fom_newton = _stage(
        "fom-optimization", lambda: run_fom_optimization(prob, y_T, z_T, cache)
    )
    fom_traj = solve_state(
        prob.space, prob.ops_y, prob.ops_z, prob.params, u_fom, prob.y0, prob.z0
    )

    t_off = time.perf_counter()
    red = _stage("reduction", lambda: build_reductions(prob, natural))
    offline_seconds = time.perf_counter() - t_off

    report = ComparisonReport(
        cfg=cfg,
        config_hash=cfg.config_hash(),
        fom_j=fom_report.final_j,
        fom_cg_iterations=fom_report.cg_iterations,
        fom_line_search_trials=fom_report.line_search_trials,
        fom_mean_newton_iters=fom_newton,
        fom_seconds=fom_report.wall_seconds,
        pod_k=red.pod_y.k,
        sigma_y=red.pod_y.sigma,
        sigma_z=red.pod_z.sigma,
        sigma_g=red.sigma_g,
    )
    report.histories["fom"] = fom_report.j_history

    for backend in cfg.backends:
        result = _stage(
            f"rom-{backend}",
            lambda b=backend: _run_backend(
                prob, red, b, y_T, z_T, u_fom, fom_traj, fom_report, offline_seconds
            ),
        )
        report.backends[backend] = result[0]
        report.histories[backend] = result[1]
    return report


def _run_backend(prob, red, backend, y_T, z_T, u_fom, fom_traj, fom_report, offline):
    model = {"pod": None, "pod-deim": red.deim, "pod-dmd": red.dmd}[backend]
    rops = reduce_operators(
        prob.ops_y, prob.ops_z, red.pod_y, red.pod_z, backend,
        model=model, times=prob.params.times(),
    )
    u_rom, rom_report, traj_r = run_rom_optimization(prob, rops, y_T, z_T)
    err_u = relative_frobenius(u_fom.u, u_rom.u)
    err_y = frobenius_error(fom_traj, traj_r, red.pod_y, "y")
    err_z = frobenius_error(fom_traj, traj_r, red.pod_z, "z")
    online = rom_report.wall_seconds
    result = BackendResult(
        backend=backend,
        k=red.pod_y.k,
        final_j=rom_report.final_j,
        cg_iterations=rom_report.cg_iterations,
        line_search_trials=rom_report.line_search_trials,
        mean_newton_iters=rom_report.mean_newton_iters,
        online_seconds=online,
        total_seconds=online + offline,
        speedup=fom_report.wall_seconds / online if online > 0 else np.inf,
        err_u=err_u,
        err_y=err_y,
        err_z=err_z,
        status=rom_report.status,
    )
    return result, rom_report.j_history


def mode_sweep(cfg, k_list, natural=None, u_fom=None, fom_traj=None, fom_report=None):
    """Reduced optimizations over a list of POD ranks; failures are recorded.

    Returns a list of row dicts (one per rank and back-end) suitable for CSV.
    """
    if not k_list:
        return []
    prob = setup_problem(cfg)
    cache = StageCache(cfg.out_dir, cfg) if cfg.use_cache else None
    if natural is None:
        natural = uncontrolled_run(prob, cache)
    y_T, z_T = desired_states(prob, natural)
    if u_fom is None:
        u_fom, fom_report, _ = run_fom_optimization(prob, y_T, z_T, cache)
    if fom_traj is None:
        fom_traj = solve_state(
            prob.space, prob.ops_y, prob.ops_z, prob.params, u_fom, prob.y0, prob.z0
        )

    def one_rank(k):
        rows = []
        try:
            red = build_reductions(prob, natural, k=k)
        except Exception as exc:  # record and continue the sweep
            return [{"k": k, "backend": b, "status": f"reduction-failed: {exc}"}
                    for b in cfg.backends]
        for backend in cfg.backends:
            try:
                result, _ = _run_backend(
                    prob, red, backend, y_T, z_T, u_fom, fom_traj, fom_report, 0.0
                )
                rows.append(
                    {
                        "k": k,
                        "backend": backend,
                        "status": result.status,
                        "J": result.final_j,
                        "err_u": result.err_u,
                        "err_y": result.err_y,
                        "err_z": result.err_z,
                        "cpu_seconds": result.online_seconds,
                    }
                )
            except Exception as exc:
                rows.append({"k": k, "backend": backend, "status": f"failed: {exc}"})
        return rows

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(one_rank, k_list))
    else:
        chunks = [one_rank(k) for k in k_list]
    return [row for chunk in chunks for row in chunk]


def write_report(report, out_dir):
    """Persist the comparison report as CSV files plus a JSON manifest."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w") as f:
        f.write(
            "backend,k,J,cg_iterations,line_search_trials,mean_newton_iters,"
            "online_seconds,total_seconds,speedup,err_u,err_y,err_z,status\n"
        )
        f.write(
            f"fom,,{report.fom_j!r},{report.fom_cg_iterations},"
            f"{report.fom_line_search_trials},{report.fom_mean_newton_iters!r},"
            f"{report.fom_seconds!r},{report.fom_seconds!r},1.0,,,,converged\n"
        )
        for name, r in report.backends.items():
            newton = "" if r.mean_newton_iters is None else repr(r.mean_newton_iters)
            f.write(
                f"{name},{r.k},{r.final_j!r},{r.cg_iterations},"
                f"{r.line_search_trials},{newton},{r.online_seconds!r},"
                f"{r.total_seconds!r},{r.speedup!r},{r.err_u!r},{r.err_y!r},"
                f"{r.err_z!r},{r.status}\n"
            )
    for name, sigma in (
        ("y", report.sigma_y), ("z", report.sigma_z), ("g", report.sigma_g)
    ):
        np.savetxt(
            os.path.join(out_dir, f"singular_values_{name}.csv"),
            np.column_stack([np.arange(1, len(sigma) + 1), sigma]),
            delimiter=",",
            header="mode,sigma",
            comments="",
        )
    with open(os.path.join(out_dir, "iters.csv"), "w") as f:
        f.write("run,iteration,J\n")
        for run, hist in report.histories.items():
            for i, j in enumerate(hist):
                f.write(f"{run},{i},{j!r}\n")
    manifest = {
        "config": report.cfg.semantic_dict(),
        "config_hash": report.config_hash,
        "version": __version__,
    }
    _dump_json(os.path.join(out_dir, "manifest.json"), manifest)


def write_sweep_csv(rows, path):
    cols = ["k", "backend", "status", "J", "err_u", "err_y", "err_z", "cpu_seconds"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(row.get(c)) for c in cols) + "\n")


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _stage(name, fn):
    try:
        return fn()
    except Exception as exc:
        raise RuntimeError(f"pipeline stage '{name}' failed: {exc}") from exc


def _report_dict(report):
    return {
        "final_j": report.final_j,
        "cg_iterations": report.cg_iterations,
        "line_search_trials": report.line_search_trials,
        "accepted_line_searches": report.accepted_line_searches,
        "wall_seconds": report.wall_seconds,
        "j_history": list(report.j_history),
        "status": report.status,
        "mean_newton_iters": report.mean_newton_iters,
    }


def _dump_json(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)


def _load_json(path):
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return json.load(f)
