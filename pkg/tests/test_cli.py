import json

import numpy as np

from cbo import cli


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def base_config(tmp_path, **overrides):
    cfg = {
        "objective": {"name": "quadratic", "dim": 1},
        "init": {"kind": "gaussian", "mean": [1.0], "variance": 0.5},
        "params": {
            "lambda": 1.0, "sigma": 0.5, "alpha": 10.0, "dt": 0.01,
            "steps": 25, "n_particles": 50, "dim": 1, "seed": 7,
        },
        "recording": {"stride": 1, "ball_radii": [0.5, 1.0]},
        "outputs": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


class TestConfigErrors:
    def test_malformed_json_exit_2_with_location(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "objective": {\n')
        assert cli.main(["run", str(path)]) == cli.EXIT_CONFIG
        err = capsys.readouterr().err
        assert "bad.json:" in err  # line-located diagnostic

    def test_missing_key_exit_2(self, tmp_path, capsys):
        cfg = base_config(tmp_path)
        del cfg["params"]["sigma"]
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_CONFIG
        assert "params" in capsys.readouterr().err

    def test_unknown_objective_exit_2(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["objective"]["name"] = "ackley"
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_CONFIG

    def test_dim_mismatch_exit_2(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["params"]["dim"] = 2
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_CONFIG

    def test_missing_file_exit_2(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


class TestRun:
    def test_zero_steps_single_data_row(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["params"]["steps"] = 0
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
        header, rows = cli.read_metrics_csv(tmp_path / "out" / "metrics.csv")
        assert len(rows) == 1
        assert header[:5] == ["t", "v_func", "variance", "w2_sq", "consensus_dist"]
        assert header[5] == "ball_mass_0.5"
        assert header[-1] == "moment4"

    def test_determinism_byte_identical(self, tmp_path):
        cfg = base_config(tmp_path)
        path = write_config(tmp_path, cfg)
        assert cli.main(["run", path]) == 0
        first = (tmp_path / "out" / "metrics.csv").read_bytes()
        assert cli.main(["run", path]) == 0
        second = (tmp_path / "out" / "metrics.csv").read_bytes()
        assert first == second

    def test_csv_round_trip_exact(self, tmp_path):
        from cbo import engine, metrics, objectives

        cfg = base_config(tmp_path)
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
        _, rows = cli.read_metrics_csv(tmp_path / "out" / "metrics.csv")
        params = cli.parse_params(cfg["params"])
        obj = objectives.quadratic(1)
        dist = engine.GaussianIsotropic((1.0,), 0.5)
        res = engine.simulate(dist, obj, params, metrics.RecordingPlan(1, (0.5, 1.0)))
        for row, rec in zip(rows, res.series.records):
            assert row[0] == rec.t
            assert row[1] == rec.v_func
            assert row[2] == rec.variance
            assert row[3] == rec.w2_sq
            assert row[4] == rec.consensus_dist
            assert row[5] == rec.ball_mass[0.5]
            assert row[6] == rec.ball_mass[1.0]
            assert row[7] == rec.moment4

    def test_ramp_h_variant_from_config(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["params"]["h"] = {"kind": "ramp_heaviside", "delta": 0.5}
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
        cfg["params"]["h"] = {"kind": "ramp_heaviside"}  # missing delta
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_CONFIG
        cfg["params"]["h"] = "heaviside"  # unknown spelling
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_CONFIG

    def test_summary_contains_endpoint_and_rate(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["params"]["steps"] = 60
        assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
        text = (tmp_path / "out" / "summary.txt").read_text()
        assert "endpoint_error = " in text
        assert "fitted_v_decay_rate = " in text
        assert "config_digest = " in text

    def test_divergence_exit_3_with_partial_series(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["init"] = {"kind": "uniform", "lo": [1e149], "hi": [1e150]}
        cfg["params"].update({"lambda": 1e308, "sigma": 0.0, "dt": 1.0, "alpha": 1e-8})
        assert cli.main(["run", write_config(tmp_path, cfg)]) == cli.EXIT_DIVERGENCE
        _, rows = cli.read_metrics_csv(tmp_path / "out" / "metrics.csv")
        assert len(rows) >= 1  # records up to the failure are persisted


class TestTheoryCommand:
    def test_report_values(self, tmp_path, capsys):
        cfg = base_config(tmp_path)
        cfg["theory"] = {"eps": 0.01, "tau": 0.1, "sample_n": 500}
        assert cli.main(["theory", write_config(tmp_path, cfg)]) == 0
        out = capsys.readouterr().out
        assert "c = 0.6180339887498949" in out
        assert "t_star = " in out
        assert "b1 = " in out
        assert "wellprep_cond1 = " in out

    def test_sigma_zero_reports_infinite_q(self, tmp_path, capsys):
        cfg = base_config(tmp_path)
        cfg["params"]["sigma"] = 0.0
        cfg["theory"] = {"eps": 0.01, "tau": 0.1, "sample_n": 200}
        assert cli.main(["theory", write_config(tmp_path, cfg)]) == 0
        assert "q = infinite (sigma=0)" in capsys.readouterr().out

    def test_non_contractive_exit_4(self, tmp_path):
        cfg = base_config(tmp_path)
        cfg["params"].update({"lambda": 0.1, "sigma": 1.0})
        cfg["theory"] = {"eps": 0.01, "tau": 0.1, "sample_n": 100}
        assert cli.main(["theory", write_config(tmp_path, cfg)]) == cli.EXIT_THEORY


class TestPresets:
    def test_fig_variance_smoke(self, tmp_path):
        out = tmp_path / "fv"
        code = cli.main([
            "preset", "fig-variance", "--scale", "0.001",
            "--steps", "40", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        for mu in (1, 2, 3, 4):
            header, rows = cli.read_metrics_csv(out / f"mu{mu}" / "metrics.csv")
            assert len(rows) == 41
        text = (out / "summary.txt").read_text()
        assert "theoretical_rate = 1.75" in text

    def test_fig_trajectories_smoke(self, tmp_path):
        out = tmp_path / "ft"
        code = cli.main([
            "preset", "fig-trajectories", "--runs", "2", "--n", "60",
            "--steps", "30", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        traj = (out / "trajectories.csv").read_text().splitlines()
        assert traj[0] == "run,agent,t,x,y"
        assert len(traj) == 1 + 2 * 3 * 31
        mean = (out / "mean_trajectories.csv").read_text().splitlines()
        assert mean[0] == "agent,t,x,y"
        assert len(mean) == 1 + 3 * 31
        assert "chord_deviation_agent0" in (out / "summary.txt").read_text()

    def test_fig_trajectories_needs_two_runs(self, tmp_path):
        code = cli.main([
            "preset", "fig-trajectories", "--runs", "1", "--out", str(tmp_path / "x"),
        ])
        assert code == cli.EXIT_CONFIG

    def test_mfa_sweep_smoke(self, tmp_path):
        cfg = {
            "objective": {"name": "quadratic", "dim": 1},
            "init": {"kind": "gaussian", "mean": [1.0], "variance": 1.0},
            "params": {
                "lambda": 1.0, "sigma": 0.5, "alpha": 2.0, "dt": 0.01,
                "steps": 10, "n_particles": 20, "dim": 1, "seed": 5,
            },
            "mfa": {"n_values": [20, 40, 80], "n_ref": 800, "n_seeds": 4},
            "outputs": str(tmp_path / "sweep"),
        }
        assert cli.main(["preset", "mfa-sweep", write_config(tmp_path, cfg)]) == 0
        lines = (tmp_path / "sweep" / "sweep.csv").read_text().splitlines()
        assert lines[0] == "n,err_sup,err_sup_conditional,exceed_fraction,seeds"
        assert len(lines) == 4
        assert "slope = " in (tmp_path / "sweep" / "summary.txt").read_text()

    def test_laplace_audit_smoke(self, tmp_path, capsys):
        cfg = {
            "audit": {"measures": 50, "seed": 1},
            "outputs": str(tmp_path / "audit"),
        }
        assert cli.main(["preset", "laplace-audit", write_config(tmp_path, cfg)]) == 0
        out = capsys.readouterr().out
        assert "violations = 0" in out

    def test_preset_determinism(self, tmp_path):
        args = ["preset", "fig-variance", "--scale", "0.0005", "--steps", "20",
                "--seed", "9"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(args + ["--out", str(out1)]) == 0
        assert cli.main(args + ["--out", str(out2)]) == 0
        for mu in (1, 2, 3, 4):
            a = (out1 / f"mu{mu}" / "metrics.csv").read_bytes()
            b = (out2 / f"mu{mu}" / "metrics.csv").read_bytes()
            assert a == b

    def test_results_independent_of_thread_count(self, tmp_path, monkeypatch):
        args = ["preset", "fig-variance", "--scale", "0.0005", "--steps", "20",
                "--seed", "9"]
        monkeypatch.setenv("CBO_THREADS", "1")
        out1 = tmp_path / "serial"
        assert cli.main(args + ["--out", str(out1)]) == 0
        monkeypatch.setenv("CBO_THREADS", "8")
        out2 = tmp_path / "pooled"
        assert cli.main(args + ["--out", str(out2)]) == 0
        for mu in (1, 2, 3, 4):
            a = (out1 / f"mu{mu}" / "metrics.csv").read_bytes()
            b = (out2 / f"mu{mu}" / "metrics.csv").read_bytes()
            assert a == b


class TestChordDeviation:
    def test_straight_line_zero(self):
        pts = np.linspace(0, 1, 11)[:, None] * np.array([[3.0, 4.0]])
        start = np.array([0.0, 0.0])
        # path from (0,0) to (3,4): measure against chord start->(3,4)
        assert cli.chord_deviation(pts, start, np.array([3.0, 4.0])) <= 1e-12

    def test_detour_measured(self):
        start = np.array([2.0, 0.0])
        target = np.array([0.0, 0.0])
        pts = np.array([[2.0, 0.0], [1.0, 0.5], [0.0, 0.0]])
        np.testing.assert_allclose(
            cli.chord_deviation(pts, start, target), 0.25
        )


def test_run_config_with_preset_dispatch(tmp_path):
    cfg = {
        "objective": {"name": "rastrigin", "dim": 1},
        "init": {"kind": "gaussian", "mean": [1.0], "variance": 0.8},
        "params": {
            "lambda": 1.0, "sigma": 0.5, "alpha": 1e15, "dt": 0.01,
            "steps": 20, "n_particles": 100, "dim": 1, "seed": 2,
        },
        "outputs": str(tmp_path / "fv"),
        "preset": "fig_variance",
        "fig_variance": {"scale": 0.0005},
    }
    assert cli.main(["run", write_config(tmp_path, cfg)]) == 0
    assert (tmp_path / "fv" / "mu1" / "metrics.csv").exists()
