"""Command line interface: solve, reduce, optimize, compare, sweep."""

import argparse
import os
import sys

import numpy as np

from . import harness
from .fom import solve_state
from .harness import ExperimentConfig, StageCache
from .io import write_trajectory_csv, write_vtk_trajectory
from .reduction import save_deim, save_dmd, save_pod


def _load_config(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_dir = args.out
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    if getattr(args, "k", None):
        cfg.pod_rank = args.k
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def cmd_solve(args):
    cfg = _load_config(args)
    prob = harness.setup_problem(cfg)
    cache = StageCache(cfg.out_dir, cfg) if cfg.use_cache else None
    traj = harness.uncontrolled_run(prob, cache)
    write_trajectory_csv(traj, os.path.join(cfg.out_dir, "uncontrolled.csv"))
    if cfg.write_vtk:
        write_vtk_trajectory(prob.space, traj, os.path.join(cfg.out_dir, "vtk"))
    print(f"uncontrolled solve: {prob.params.n_steps} steps, "
          f"{prob.space.N} DoFs, mean Newton iters "
          f"{traj.mean_newton_iters:.2f}")
    return 0


def cmd_reduce(args):
    cfg = _load_config(args)
    prob = harness.setup_problem(cfg)
    cache = StageCache(cfg.out_dir, cfg) if cfg.use_cache else None
    natural = harness.uncontrolled_run(prob, cache)
    red = harness.build_reductions(prob, natural, k=args.k)
    save_pod(red.pod_y, os.path.join(cfg.out_dir, "pod_y"))
    save_pod(red.pod_z, os.path.join(cfg.out_dir, "pod_z"))
    save_deim(red.deim, os.path.join(cfg.out_dir, "deim"))
    save_dmd(red.dmd, os.path.join(cfg.out_dir, "dmd"))
    np.savetxt(os.path.join(cfg.out_dir, "singular_values_g.csv"),
               red.sigma_g, delimiter=",")
    print(f"reduction: POD rank {red.pod_y.k} (RIC {red.pod_y.ric:.6f}), "
          f"DEIM modes {red.deim.m}, DMD rank {red.dmd.rank}")
    return 0


def cmd_optimize(args):
    cfg = _load_config(args)
    prob = harness.setup_problem(cfg)
    cache = StageCache(cfg.out_dir, cfg) if cfg.use_cache else None
    natural = harness.uncontrolled_run(prob, cache)
    y_T, z_T = harness.desired_states(prob, natural)
    log_path = os.path.join(cfg.out_dir, f"optimize_{args.backend}.csv")

    if args.backend == "fom":
        grid, report, _ = harness.run_fom_optimization(
            prob, y_T, z_T, cache=None, log_path=log_path
        )
        traj = solve_state(prob.space, prob.ops_y, prob.ops_z, prob.params,
                           grid, prob.y0, prob.z0)
        write_trajectory_csv(traj, os.path.join(cfg.out_dir, "optimal_state.csv"))
    else:
        from .rom import reduce_operators

        red = harness.build_reductions(prob, natural, k=args.k)
        model = {"pod": None, "pod-deim": red.deim, "pod-dmd": red.dmd}[args.backend]
        rops = reduce_operators(prob.ops_y, prob.ops_z, red.pod_y, red.pod_z,
                                args.backend, model=model,
                                times=prob.params.times())
        grid, report, _ = harness.run_rom_optimization(
            prob, rops, y_T, z_T, log_path=log_path
        )

    np.savez(os.path.join(cfg.out_dir, f"control_{args.backend}.npz"), u=grid.u)
    print(f"{args.backend}: J = {report.final_j:.6e}, "
          f"{report.cg_iterations} CG iterations, status {report.status}, "
          f"{report.wall_seconds:.2f} s")
    return 0


def cmd_compare(args):
    cfg = _load_config(args)
    report = harness.run_experiment(cfg)
    harness.write_report(report, cfg.out_dir)
    print(f"fom: J = {report.fom_j:.6e} in {report.fom_seconds:.2f} s "
          f"(POD rank {report.pod_k})")
    for name, r in report.backends.items():
        print(f"{name}: J = {r.final_j:.6e}, speedup {r.speedup:.1f}x, "
              f"err_y {r.err_y:.2e}, err_u {r.err_u:.2e}, status {r.status}")
    print(f"report written to {cfg.out_dir}/report.csv")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    k_list = sorted({int(k) for k in args.k_list.split(",")})
    rows = harness.mode_sweep(cfg, k_list)
    path = os.path.join(cfg.out_dir, "sweep.csv")
    harness.write_sweep_csv(rows, path)
    ok = sum(1 for r in rows if not str(r["status"]).startswith(("failed", "reduction")))
    print(f"sweep over k = {k_list}: {ok}/{len(rows)} runs completed; "
          f"results in {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fhnrom",
        description="Full- and reduced-order optimal control benchmark for a "
                    "convective excitable medium.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, backend=False, k=False, workers=False):
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        if backend:
            p.add_argument("--backend", default="fom",
                           choices=("fom", "pod", "pod-deim", "pod-dmd"))
        if k:
            p.add_argument("--k", type=int, default=None,
                           help="POD rank override")
        if workers:
            p.add_argument("--workers", type=int, default=None,
                           help="concurrent sweep workers")

    p = sub.add_parser("solve", help="uncontrolled full-order solve")
    common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("reduce", help="build and save POD/DEIM/DMD artifacts")
    common(p, k=True)
    p.set_defaults(fn=cmd_reduce)

    p = sub.add_parser("optimize", help="run one optimization back-end")
    common(p, backend=True, k=True)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("compare", help="full accuracy/speed comparison")
    common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="reduced runs over a list of POD ranks")
    common(p, workers=True)
    p.add_argument("--k-list", required=True,
                   help="comma-separated POD ranks, e.g. 4,8,12")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
