"""Experiment configuration, pipeline, caching, error metrics and the CLI."""

import json
import os

import numpy as np
import pytest

from fhnrom import ExperimentConfig, coarse_preset, frobenius_error, run_experiment
from fhnrom.cli import main as cli_main
from fhnrom.harness import (
    ConfigError,
    StageCache,
    desired_states,
    mode_sweep,
    setup_problem,
    uncontrolled_run,
    write_report,
)


def tiny_config(out_dir, **overrides):
    base = dict(
        L=6.0, H=2.0, dx=1.0, T=0.3, dt=0.05, vmax=8.0,
        strip_lo=1.0, strip_hi=1.5, max_cg_iters=15,
        out_dir=str(out_dir),
    )
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dxx": 0.5})
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, backends=("pod", "qr"))
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, ric_threshold=1.5)
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, deim_rank="all")


def test_json_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path)
    path = tmp_path / "cfg.json"
    d = cfg.semantic_dict()
    d["out_dir"] = str(tmp_path)
    path.write_text(json.dumps(d))
    cfg2 = ExperimentConfig.from_json(path)
    assert cfg2.config_hash() == cfg.config_hash()


def test_hash_ignores_non_semantic_fields(tmp_path):
    a = tiny_config(tmp_path / "a")
    b = tiny_config(tmp_path / "b", workers=4, write_vtk=True)
    c = tiny_config(tmp_path / "a", dt=0.03)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_coarse_preset():
    cfg = coarse_preset()
    assert cfg.dx == 1.0
    ref = ExperimentConfig()
    assert cfg.L == ref.L and cfg.dt == ref.dt and cfg.vmax == ref.vmax


def test_desired_states_at_half_horizon(tmp_path):
    cfg = tiny_config(tmp_path, T=0.4, dt=0.1)
    prob = setup_problem(cfg)
    nat = uncontrolled_run(prob)
    y_T, z_T = desired_states(prob, nat)
    np.testing.assert_array_equal(y_T, nat.y[2])  # t = T/2 is step 2 of 4
    np.testing.assert_array_equal(z_T, nat.z[2])


def test_frobenius_error_guards(small_setup, rng):
    from fhnrom import PodBasis

    class T:
        def __init__(self, y):
            self.y = y

    psi = np.eye(4)[:, :2]
    basis = PodBasis(psi, np.ones(2), 2, 1.0)
    full = T(rng.standard_normal((5, 4)))
    reduced = T(full.y @ psi)  # exact projection of a rank-2 field
    full_low = T(reduced.y @ psi.T)
    assert frobenius_error(full_low, reduced, basis) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        frobenius_error(T(np.zeros((5, 4))), reduced, basis)
    with pytest.raises(ValueError):
        frobenius_error(T(full.y[:3]), reduced, basis)


def test_run_experiment_and_report(tmp_path):
    cfg = tiny_config(tmp_path)
    report = run_experiment(cfg)
    assert set(report.backends) == {"pod", "pod-deim", "pod-dmd"}
    for r in report.backends.values():
        assert r.final_j > 0 and np.isfinite(r.err_y)
        assert r.online_seconds > 0
    assert report.pod_k >= 1
    assert len(report.sigma_y) >= report.pod_k

    write_report(report, cfg.out_dir)
    for name in ("report.csv", "iters.csv", "manifest.json",
                 "singular_values_y.csv", "singular_values_z.csv",
                 "singular_values_g.csv"):
        assert os.path.exists(os.path.join(cfg.out_dir, name))
    lines = open(os.path.join(cfg.out_dir, "report.csv")).read().splitlines()
    assert len(lines) == 5  # header + fom + three back-ends
    manifest = json.load(open(os.path.join(cfg.out_dir, "manifest.json")))
    assert manifest["config_hash"] == cfg.config_hash()


def test_cache_reuses_expensive_stages(tmp_path):
    cfg = tiny_config(tmp_path)
    r1 = run_experiment(cfg)
    cache_dir = StageCache(cfg.out_dir, cfg).dir
    assert os.path.exists(os.path.join(cache_dir, "uncontrolled.npz"))
    assert os.path.exists(os.path.join(cache_dir, "fom_opt_u.npz"))
    r2 = run_experiment(cfg)  # warm: identical full-order results
    assert r2.fom_j == r1.fom_j
    assert r2.fom_cg_iterations == r1.fom_cg_iterations
    for b in r1.backends:
        assert r2.backends[b].final_j == pytest.approx(r1.backends[b].final_j)


def test_mode_sweep_tolerates_failures(tmp_path):
    cfg = tiny_config(tmp_path)
    rows = mode_sweep(cfg, [2, 500])  # 500 exceeds any snapshot rank
    ks = {(r["k"], r["backend"]) for r in rows}
    assert len(ks) == 6
    good = [r for r in rows if r["k"] == 2]
    bad = [r for r in rows if r["k"] == 500]
    assert all("J" in r for r in good)
    assert all(str(r["status"]).startswith("reduction-failed") for r in bad)


def test_mode_sweep_workers(tmp_path):
    cfg = tiny_config(tmp_path, workers=2, backends=("pod",))
    rows = mode_sweep(cfg, [1, 2, 3])
    assert sorted(r["k"] for r in rows) == [1, 2, 3]
    assert all(np.isfinite(r["J"]) for r in rows)


def test_cli_solve_and_compare(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(
        L=4.0, H=2.0, dx=1.0, T=0.2, dt=0.05, vmax=8.0,
        strip_lo=1.0, strip_hi=1.5, max_cg_iters=5,
    )))
    out = tmp_path / "out"
    assert cli_main(["solve", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "uncontrolled_y.csv").exists()
    assert cli_main(["compare", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "report.csv").exists()
    assert cli_main(["reduce", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "pod_y" / "manifest.json").exists()
    text = capsys.readouterr().out
    assert "uncontrolled solve" in text and "report written" in text


def test_cli_optimize_and_sweep(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(
        L=4.0, H=2.0, dx=1.0, T=0.2, dt=0.05, vmax=8.0,
        strip_lo=1.0, strip_hi=1.5, max_cg_iters=5,
    )))
    out = tmp_path / "out"
    assert cli_main(["optimize", "--config", str(cfg_path), "--out", str(out),
                     "--backend", "pod-dmd"]) == 0
    assert (out / "control_pod-dmd.npz").exists()
    assert cli_main(["sweep", "--config", str(cfg_path), "--out", str(out),
                     "--k-list", "1,2"]) == 0
    assert (out / "sweep.csv").exists()


def test_cli_error_paths(tmp_path, capsys):
    assert cli_main(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error:" in capsys.readouterr().err
