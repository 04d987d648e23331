import json
import math

import numpy as np
import pytest

from pglqr.errors import ConfigError, NumericalError
from pglqr.lab import cli, experiments
from pglqr.lab.experiments import (
    SWEEP_COLUMNS,
    SweepConfig,
    SweepRow,
    evaluate_point,
    initial_states,
    rows_to_csv,
    run_bmag_sweep,
    run_learning_curves,
    run_rho_sweep,
    run_scatter,
    run_sigma_a_sweep,
    scatter_recipe,
)
from pglqr.lab.plots import CsvSchemaError, read_experiment_csv, render_plots
from pglqr.probgen import ProblemRecipe, random_lqr

SMALL = dict(num_s1=3, num_traj=5)


def small_cfg(experiment, **kw):
    base = dict(SMALL)
    if experiment in ("sigma_a", "b_mag"):
        base["grid"] = [0.1, 1.0, 10.0]
    if experiment == "rho":
        base["grid"] = [0.3, 0.9]
    if experiment == "b_mag":
        base["recipe"] = ProblemRecipe(3, 3, 5)
    base.update(kw)
    return SweepConfig(experiment=experiment, **base)


class TestConfig:
    def test_defaults(self):
        cfg = SweepConfig("sigma_a")
        assert (cfg.recipe.n, cfg.recipe.m, cfg.recipe.horizon) == (5, 3, 10)
        assert cfg.grid[0] == pytest.approx(1e-2) and cfg.grid[-1] == pytest.approx(1e2)
        assert len(cfg.grid) == 25
        assert cfg.scale_set == [0.1, 1.0, 10.0]
        assert (cfg.num_s1, cfg.num_traj) == (100, 30)
        assert (cfg.seeds, cfg.eval_every, cfg.problems) == (10, 10, 1000)

    @pytest.mark.parametrize("kw", [dict(grid=[]), dict(grid=[2.0, 1.0]), dict(num_s1=0), dict(num_traj=1),
                                    dict(threads=0), dict(scale_set=[])])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SweepConfig("sigma_a", **kw)

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            SweepConfig("nope")

    def test_bmag_requires_square_input(self):
        with pytest.raises(ConfigError):
            SweepConfig("b_mag")

    def test_rho_grid_inside_unit_interval(self):
        with pytest.raises(ConfigError):
            SweepConfig("rho", grid=[0.5, 1.0])


class TestRunners:
    def test_sigma_a_rows_sorted_and_complete(self):
        rows = run_sigma_a_sweep(small_cfg("sigma_a", scale_set=[10.0, 0.1]))
        assert len(rows) == 6
        keys = [(r.scale, r.sweep_value) for r in rows]
        assert keys == sorted(keys)
        assert all(not r.flagged and math.isfinite(r.bound_mean) for r in rows)
        assert len({r.rho_achieved for r in rows}) == 1

    def test_bmag(self):
        rows = run_bmag_sweep(small_cfg("b_mag"))
        assert len(rows) == 9
        assert all(math.isfinite(r.empirical_nu_mean) for r in rows)

    def test_rho_achieved(self):
        rows = run_rho_sweep(small_cfg("rho"))
        for r in rows:
            assert abs(r.rho_achieved - r.sweep_value) <= 1e-4

    def test_scatter_dimensions(self):
        cfg = small_cfg("scatter", problems=9, dims=[3, 10], horizons=[3])
        assert [scatter_recipe(cfg, i).m for i in range(2)] == [2, 5]
        assert scatter_recipe(SweepConfig("scatter", dims=[30]), 0).m == 15
        rows = run_scatter(cfg)
        assert [r.problem for r in rows] == list(range(9))
        assert all(r.bound_mean >= r.empirical_second_moment_mean for r in rows if not r.flagged)

    def test_curves(self):
        cfg = small_cfg("curves", recipe=ProblemRecipe(3, 2, 5), scale_set=[1.0], sigma_s_set=[0.1], seeds=2,
                        iterations=20, step_size=1e-6)
        rows = run_learning_curves(cfg)
        assert [r.iteration for r in rows] == [0, 10, 20]
        assert all(r.runs == 2 and r.step_size == 1e-6 for r in rows)
        assert math.isnan(rows[0].train_return_mean)

    def test_curve_repetitions_share_problem_and_initial_gain(self):
        cfg = small_cfg("curves", recipe=ProblemRecipe(3, 2, 5), scale_set=[1.0], sigma_s_set=[1.0], seeds=3,
                        iterations=10, step_size=1e-6)
        rows = run_learning_curves(cfg)
        # the first checkpoint is the untrained gain, identical across seeds
        assert rows[0].eval_return_std == 0.0

    def test_point_flags_non_finite(self):
        p, pol = random_lqr(ProblemRecipe(2, 1, 200, seed=0))
        p = p.replace(sigma_s=1e300 * np.eye(2))
        est = evaluate_point(p, pol, initial_states(2, 2, 0), 3, 0)
        assert est.flagged

    def test_thread_count_invariance(self):
        a = run_sigma_a_sweep(small_cfg("sigma_a", threads=1))
        b = run_sigma_a_sweep(small_cfg("sigma_a", threads=3))
        assert rows_to_csv("sigma_a", a) == rows_to_csv("sigma_a", b)


class TestCsvAndPlots:
    def write_sweep(self, tmp_path, rows=None):
        rows = rows or run_sigma_a_sweep(small_cfg("sigma_a"))
        path = tmp_path / "sweep.csv"
        path.write_text(rows_to_csv("sigma_a", rows))
        return path, rows

    def test_header_and_round_trip(self, tmp_path):
        path, rows = self.write_sweep(tmp_path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema=pglqr.sweep/1 experiment=sigma_a"
        assert lines[1].split(",") == SWEEP_COLUMNS
        schema, experiment, parsed = read_experiment_csv(path)
        assert (schema, experiment) == ("pglqr.sweep/1", "sigma_a")
        assert parsed[0]["bound_mean"] == rows[0].bound_mean
        assert parsed[0]["flagged"] is False

    def test_identical_csv_gives_identical_svg(self, tmp_path):
        path, _ = self.write_sweep(tmp_path)
        a = render_plots(path, tmp_path / "a.svg").read_bytes()
        b = render_plots(path, tmp_path / "b.svg").read_bytes()
        assert a == b
        assert a.startswith(b"<?xml")

    def test_single_scale(self, tmp_path):
        rows = [SweepRow(v, 1.0, 10 * v, v, v, 0.1, 0.5) for v in (0.1, 1.0, 10.0)]
        path, _ = self.write_sweep(tmp_path, rows)
        out = render_plots(path, log_y=False)
        assert out.suffix == ".svg" and out.exists()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(CsvSchemaError):
            render_plots(path)
        assert not (tmp_path / "empty.svg").exists()

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text(rows_to_csv("sigma_a", []))
        with pytest.raises(CsvSchemaError, match="no data rows"):
            read_experiment_csv(path)

    def test_error_locations(self, tmp_path):
        path, _ = self.write_sweep(tmp_path)
        lines = path.read_text().splitlines()
        cells = lines[3].split(",")
        cells[2] = "oops"
        lines[3] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CsvSchemaError, match=r"line 4, column 'bound_mean'"):
            read_experiment_csv(path)

    def test_wrong_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# schema=pglqr.sweep/1 experiment=sigma_a\na,b\n1,2\n")
        with pytest.raises(CsvSchemaError, match="line 2"):
            read_experiment_csv(path)

    def test_unknown_schema(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# schema=other/9\n")
        with pytest.raises(CsvSchemaError, match="line 1"):
            read_experiment_csv(path)

    @pytest.mark.parametrize("experiment", ["scatter", "curves"])
    def test_other_figures(self, tmp_path, experiment):
        if experiment == "scatter":
            rows = run_scatter(small_cfg("scatter", problems=4, dims=[3], horizons=[3, 10]))
        else:
            rows = run_learning_curves(small_cfg("curves", recipe=ProblemRecipe(3, 2, 5), scale_set=[0.1, 1.0],
                                                 sigma_s_set=[1.0], seeds=2, iterations=10, step_size=1e-6))
        path = tmp_path / f"{experiment}.csv"
        path.write_text(rows_to_csv(experiment, rows))
        assert render_plots(path).stat().st_size > 0


class TestCli:
    ARGS = ["--grid-points", "3", "--num-s1", "2", "--num-traj", "4"]

    def test_run_writes_csv_and_metadata(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path))
        assert cli.main(["--experiment", "sigma_a", "--seed", "3", *self.ARGS, "--render"]) == cli.EXIT_OK
        csv_path = tmp_path / "sigma_a.csv"
        assert csv_path.exists() and (tmp_path / "sigma_a.svg").exists()
        meta = json.loads((tmp_path / "sigma_a.csv.meta.json").read_text())
        assert meta["seed"] == 3
        assert meta["config"]["num_traj"] == 4
        assert meta["code_version"]
        assert meta["wall_time_s"] >= 0

    def test_rerun_is_byte_identical(self, tmp_path):
        out = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path, threads in zip(out, ("1", "4")):
            assert cli.main(["--experiment", "rho", *self.ARGS, "--threads", threads, "--out", str(path)]) == 0
        assert out[0].read_bytes() == out[1].read_bytes()

    def test_config_file_with_flag_override(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("# desk run\nexperiment = sigma_a\nnum-s1 = 2\nnum_traj = 9\ngrid_points = 2\n")
        out = tmp_path / "x.csv"
        assert cli.main(["--config", str(conf), "--num-traj", "3", "--out", str(out)]) == 0
        meta = json.loads(out.with_name("x.csv.meta.json").read_text())
        assert meta["config"]["num_s1"] == 2
        assert meta["config"]["num_traj"] == 3

    @pytest.mark.parametrize("argv", [
        [],
        ["--experiment", "b_mag", "--m", "2"],
        ["--experiment", "sigma_a", "--num-traj", "1"],
        ["--experiment", "sigma_a", "--grid-min", "0"],
        ["--experiment", "curves", "--step-size", "fast"],
    ])
    def test_config_errors(self, argv, tmp_path, capsys):
        assert cli.main([*argv, "--out", str(tmp_path / "x.csv")]) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("experiment = sigma_a\ncolour = blue\n")
        assert cli.main(["--config", str(conf)]) == cli.EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def boom(cfg):
            raise NumericalError("no convergence")

        monkeypatch.setitem(experiments.RUNNERS, "sigma_a", boom)
        assert cli.main(["--experiment", "sigma_a", "--out", str(tmp_path / "x.csv")]) == cli.EXIT_NUMERIC

    def test_flagged_rows(self, tmp_path, monkeypatch):
        def flagged(cfg):
            return [SweepRow(1.0, 1.0, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, True)]

        monkeypatch.setitem(experiments.RUNNERS, "sigma_a", flagged)
        out = tmp_path / "x.csv"
        assert cli.main(["--experiment", "sigma_a", "--out", str(out)]) == cli.EXIT_PARTIAL
        assert "true" in out.read_text()

    def test_auto_step_size_recorded(self, tmp_path):
        out = tmp_path / "c.csv"
        argv = ["--experiment", "curves", "--n", "3", "--m", "2", "--horizon", "5", "--seeds", "1",
                "--iterations", "10", "--scales", "1", "--sigma-s-scales", "1", "--step-size", "auto",
                "--out", str(out)]
        assert cli.main(argv) in (cli.EXIT_OK, cli.EXIT_PARTIAL)
        meta = json.loads(out.with_name("c.csv.meta.json").read_text())
        assert meta["step_size_source"] == "grid search"
        assert meta["step_size_used"] in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
