"""Config pipeline, artifact files, seed fanout, and the command-line surface."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from tdcurves.artifacts import (
    fit_loglog_slope,
    read_curve_csv,
    write_curve_csv,
    write_summary_csv,
)
from tdcurves.cli import main
from tdcurves.config import apply_override, load_config, with_sweep_value
from tdcurves.ensembles import DenseEnsemble, save_ensemble
from tdcurves.errors import ConfigurationError
from tdcurves.seeding import VARIANT_IDS, seed_for, seeds_for
from tdcurves.simulator import LearningCurve

TINY = [
    "ensemble.kind=powerlaw",
    "ensemble.n_features=6",
    "ensemble.n_transitions=4",
    "learner.n_steps=30",
    "learner.batch_size=5",
    "learner.eta0=0.5",
    "learner.seeds=2",
]


def run_cli(args, cwd):
    runner = CliRunner()
    import os

    old = os.getcwd()
    os.chdir(cwd)
    try:
        return runner.invoke(main, args, catch_exceptions=False)
    finally:
        os.chdir(old)


def tiny_args(out, extra=()):
    args = []
    for item in TINY:
        args += ["--set", item]
    for item in extra:
        args += ["--set", item]
    return args + ["--out", str(out)]


class TestConfigPipeline:
    def test_toml_round_trip(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(
            "[ensemble]\nkind = 'powerlaw'\nn_features = 12\n"
            "[learner]\ngamma = 0.8\neta0 = 0.25\nchi = 0.1\n"
            "[learner.shaping]\nmode = 'scale'\nbeta = 0.5\n"
            "[run]\nvariants = ['sim', 'dmft']\nmaster_seed = 99\n"
        )
        cfg = load_config(path)
        assert cfg.ensemble.n_features == 12
        assert cfg.learner.gamma == 0.8
        assert cfg.learner.shaping.mode == "scale"
        assert cfg.master_seed == 99
        rebuilt = cfg.to_dict()
        assert rebuilt["learner"]["shaping"]["beta"] == 0.5
        assert rebuilt["run"]["variants"] == ["sim", "dmft"]

    def test_overrides_parse_toml_scalars(self):
        data = {}
        apply_override(data, "learner.eta0=0.125")
        apply_override(data, "learner.n_steps=50")
        apply_override(data, "run.variants=['sim']")
        apply_override(data, "ensemble.kind=hypercube")
        apply_override(data, "learner.infinite_batch=true")
        assert data["learner"] == {"eta0": 0.125, "n_steps": 50, "infinite_batch": True}
        assert data["run"]["variants"] == ["sim"]
        assert data["ensemble"]["kind"] == "hypercube"

    def test_override_comma_list(self):
        data = {}
        apply_override(data, "sweep.values=5,10,20")
        assert data["sweep"]["values"] == [5, 10, 20]

    def test_override_without_equals(self):
        with pytest.raises(ConfigurationError, match="KEY=VALUE"):
            apply_override({}, "learner.eta0")

    def test_all_errors_reported_together(self):
        with pytest.raises(ConfigurationError) as exc:
            load_config(None, ["learner.gamma=1.5", "learner.eta0=-1",
                               "ensemble.kind=unknown"])
        msg = str(exc.value)
        assert "gamma" in msg and "eta0" in msg and "kind" in msg

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown field"):
            load_config(None, ["learner.step_size=0.1"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_config(tmp_path / "nope.toml")

    def test_sweep_validation(self):
        with pytest.raises(ConfigurationError, match="does not name"):
            load_config(None, ["sweep.parameter=learner.nothing", "sweep.values=[1]"])
        with pytest.raises(ConfigurationError, match="values"):
            load_config(None, ["sweep.parameter=learner.batch_size", "sweep.values=[]"])
        with pytest.raises(ConfigurationError, match="window_fraction"):
            load_config(None, ["sweep.parameter=learner.batch_size",
                               "sweep.values=[1]", "sweep.window_fraction=0"])

    def test_with_sweep_value_sets_field_and_revalidates(self):
        cfg = load_config(None, ["sweep.parameter=learner.batch_size",
                                 "sweep.values=[2,4]"])
        point = with_sweep_value(cfg, 4)
        assert point.learner.batch_size == 4
        assert point.sweep is None
        with pytest.raises(ConfigurationError, match="invalid sweep point"):
            with_sweep_value(cfg, -1)

    def test_closedform_preconditions_enumerated(self):
        with pytest.raises(ConfigurationError) as exc:
            load_config(None, ["run.variants=['closedform']", "learner.gamma=0.5"])
        assert "hypercube" in str(exc.value) and "gamma" in str(exc.value)

    def test_nongauss_gridworld_rejected(self):
        with pytest.raises(ConfigurationError, match="zero-mean"):
            load_config(None, ["ensemble.kind=gridworld", "run.variants=['nongauss']"])


class TestSeeding:
    def test_deterministic_and_distinct(self):
        a = seed_for(1234, "sim", 0)
        assert a == seed_for(1234, "sim", 0)
        assert a != seed_for(1234, "sim", 1)
        assert a != seed_for(1234, "surrogate", 0)
        assert a != seed_for(1235, "sim", 0)

    def test_seeds_for_prefix_stability(self):
        assert seeds_for(7, "sim", 3) == seeds_for(7, "sim", 5)[:3]

    def test_variant_ids_are_stable_contract(self):
        assert VARIANT_IDS["sim"] == 0
        assert VARIANT_IDS["dmft"] == 2
        assert len(set(VARIANT_IDS.values())) == len(VARIANT_IDS)


class TestArtifacts:
    def test_curve_csv_round_trip(self, tmp_path):
        per_seed = np.array([[1.0, np.pi / 7, 1e-17], [0.5, 0.25, np.nan]])
        curve = LearningCurve(variant="sim", seeds=[11, 22], per_seed=per_seed,
                              etas=np.array([0.0, 0.5, 0.5]), diverged=[False, True])
        path = tmp_path / "curves.csv"
        write_curve_csv(path, [curve])
        back = read_curve_csv(path)
        rows = back["sim"][11]
        assert rows[1] == (1, np.pi / 7, 0.5)  # %.17g round-trips doubles
        assert np.isnan(back["sim"][22][2][1])
        assert not list(tmp_path.glob("*.tmp"))

    def test_theory_rows_use_seed_minus_one(self, tmp_path):
        curve = LearningCurve(variant="dmft", seeds=[], per_seed=np.array([[1.0, 0.9]]),
                              etas=np.array([0.0, 0.1]), diverged=[False])
        write_curve_csv(tmp_path / "c.csv", [curve])
        back = read_curve_csv(tmp_path / "c.csv")
        assert list(back["dmft"]) == [-1]

    def test_summary_csv_accepts_string_values(self, tmp_path):
        write_summary_csv(tmp_path / "s.csv", [
            {"sweep_value": "bump", "plateau_or_final_loss": 0.5, "fit_slope": -1.0},
        ])
        assert "bump,0.5,-1" in (tmp_path / "s.csv").read_text()

    def test_loglog_slope_exact_power_law(self):
        its = np.arange(0, 400)
        vals = 3.0 * np.maximum(its, 1) ** -0.7
        assert fit_loglog_slope(its, vals) == pytest.approx(-0.7, abs=1e-12)

    def test_loglog_slope_degenerate_cases(self):
        assert np.isnan(fit_loglog_slope(np.arange(10), np.zeros(10)))
        assert np.isnan(fit_loglog_slope(np.array([5.0]), np.array([1.0])))


class TestEndToEnd:
    def test_compare_writes_schema_and_exit_zero(self, tmp_path):
        res = run_cli(["compare"] + tiny_args(tmp_path / "run"), tmp_path)
        assert res.exit_code == 0, res.output
        out = tmp_path / "run"
        header = (out / "curves.csv").read_text().splitlines()[0]
        assert header == "variant,seed,iteration,value_error,eta"
        agg_header = (out / "aggregate.csv").read_text().splitlines()[0]
        assert agg_header == "variant,iteration,mean,stderr"
        meta = json.loads((out / "meta.json").read_text())
        assert meta["kind"] == "single"
        assert set(meta["variants"]) == {"sim", "dmft"}
        back = read_curve_csv(out / "curves.csv")
        assert list(back["dmft"]) == [-1]
        assert len(back["sim"]) == 2  # learner.seeds
        assert all(s >= 0 for s in back["sim"])

    def test_reruns_byte_identical(self, tmp_path):
        run_cli(["compare"] + tiny_args(tmp_path / "a"), tmp_path)
        run_cli(["compare"] + tiny_args(tmp_path / "b"), tmp_path)
        for name in ("curves.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_simulate_and_theory_filter_variants(self, tmp_path):
        res = run_cli(["simulate"] + tiny_args(tmp_path / "s"), tmp_path)
        assert res.exit_code == 0
        assert set(read_curve_csv(tmp_path / "s" / "curves.csv")) == {"sim"}
        res = run_cli(["theory"] + tiny_args(tmp_path / "t"), tmp_path)
        assert res.exit_code == 0
        assert set(read_curve_csv(tmp_path / "t" / "curves.csv")) == {"dmft"}

    def test_seeds_flag_overrides_config(self, tmp_path):
        res = run_cli(["simulate", "--seeds", "3"] + tiny_args(tmp_path / "r"), tmp_path)
        assert res.exit_code == 0
        assert len(read_curve_csv(tmp_path / "r" / "curves.csv")["sim"]) == 3

    def test_sim_rows_invariant_to_extra_variants(self, tmp_path):
        """Theory variants never consume simulation seed entropy."""
        run_cli(["compare"] + tiny_args(tmp_path / "both", ["run.variants=['sim','dmft']"]),
                tmp_path)
        run_cli(["compare"] + tiny_args(tmp_path / "solo", ["run.variants=['sim']"]),
                tmp_path)
        both = read_curve_csv(tmp_path / "both" / "curves.csv")["sim"]
        solo = read_curve_csv(tmp_path / "solo" / "curves.csv")["sim"]
        assert both == solo

    def test_scalar_oracle_through_file_ensemble(self, tmp_path):
        second = np.array([[[[1.0]], [[0.5]]], [[[0.5]], [[1.0]]]])
        ens = DenseEnsemble(mean=np.zeros((2, 1)), second_moment=second)
        save_ensemble(ens, tmp_path / "scalar.ens.json",
                      reward_weights=np.array([0.75]))
        res = run_cli([
            "theory",
            "--set", "ensemble.kind=file",
            "--set", f"ensemble.path={tmp_path / 'scalar.ens.json'}",
            "--set", "learner.gamma=0.5",
            "--set", "learner.batch_size=1",
            "--set", "learner.eta0=0.1",
            "--set", "learner.n_steps=2",
            "--set", "run.variants=['dmft']",
            "--out", str(tmp_path / "run"),
        ], tmp_path)
        assert res.exit_code == 0, res.output
        rows = read_curve_csv(tmp_path / "run" / "curves.csv")["dmft"][-1]
        assert rows[0][1] == pytest.approx(1.0, abs=1e-12)
        assert rows[1][1] == pytest.approx(0.86125, abs=1e-12)

    def test_divergent_simulation_noted_but_exit_zero(self, tmp_path):
        res = run_cli(
            ["simulate"] + tiny_args(tmp_path / "r", ["learner.eta0=500.0",
                                                      "run.variants=['sim']"]),
            tmp_path,
        )
        assert res.exit_code == 0
        assert "divergence" in res.output

    def test_numerical_failure_exits_three(self, tmp_path):
        # duplicated feature -> singular A -> no TD fixed point
        second = np.einsum("ab,ij->abij", np.array([[1.0, 0.4], [0.4, 1.0]]),
                           np.ones((2, 2)))
        ens = DenseEnsemble(mean=np.zeros((2, 2)), second_moment=second)
        save_ensemble(ens, tmp_path / "bad.ens.json",
                      reward_weights=np.array([1.0, 0.5]))
        res = run_cli([
            "theory",
            "--set", "ensemble.kind=file",
            "--set", f"ensemble.path={tmp_path / 'bad.ens.json'}",
            "--set", "run.variants=['dmft']",
            "--out", str(tmp_path / "run"),
        ], tmp_path)
        assert res.exit_code == 3
        assert "numerical error" in res.output

    def test_config_error_exits_two(self, tmp_path):
        res = run_cli(["compare", "--set", "learner.gamma=2.0"], tmp_path)
        assert res.exit_code == 2
        assert "configuration error" in res.output


class TestSweepCommand:
    def test_single_value_sweep_matches_direct_run(self, tmp_path):
        extra = ["sweep.parameter=learner.batch_size", "sweep.values=[5]"]
        res = run_cli(["sweep"] + tiny_args(tmp_path / "sw", extra), tmp_path)
        assert res.exit_code == 0, res.output
        run_cli(["compare"] + tiny_args(tmp_path / "direct"), tmp_path)
        sweep_csv = (tmp_path / "sw" / "point_00" / "curves.csv").read_bytes()
        assert sweep_csv == (tmp_path / "direct" / "curves.csv").read_bytes()
        summary = (tmp_path / "sw" / "summary.csv").read_text().splitlines()
        assert summary[0] == "sweep_value,plateau_or_final_loss,fit_slope"
        assert len(summary) == 2
        assert summary[1].startswith("5,")

    def test_partial_failure_exits_four_and_keeps_good_points(self, tmp_path):
        extra = ["sweep.parameter=learner.batch_size", "sweep.values=[5,-2]"]
        res = run_cli(["sweep"] + tiny_args(tmp_path / "sw", extra), tmp_path)
        assert res.exit_code == 4
        assert "failed" in res.output
        assert (tmp_path / "sw" / "point_00" / "curves.csv").exists()
        summary = (tmp_path / "sw" / "summary.csv").read_text().splitlines()
        assert len(summary) == 3
        assert "nan" in summary[2]
        meta = json.loads((tmp_path / "sw" / "meta.json").read_text())
        assert len(meta["failures"]) == 1

    def test_parallel_jobs_match_serial(self, tmp_path):
        extra = ["sweep.parameter=learner.eta0", "sweep.values=[0.25,0.5]"]
        run_cli(["sweep"] + tiny_args(tmp_path / "ser", extra), tmp_path)
        run_cli(["sweep", "--jobs", "2"] + tiny_args(tmp_path / "par", extra), tmp_path)
        for point in ("point_00", "point_01"):
            assert (tmp_path / "ser" / point / "curves.csv").read_bytes() == \
                (tmp_path / "par" / point / "curves.csv").read_bytes()


class TestSpectralCommand:
    def test_writes_report(self, tmp_path):
        res = run_cli(["spectral"] + tiny_args(tmp_path / "sp"), tmp_path)
        assert res.exit_code == 0, res.output
        lines = (tmp_path / "sp" / "spectral.csv").read_text().splitlines()
        assert lines[0] == "k,re_lambda,im_lambda,timescale,power,cumulative_power"
        assert len(lines) == 7  # header + n_features rows
        assert float(lines[-1].split(",")[-1]) == pytest.approx(1.0, abs=1e-12)


class TestFixedPointCommand:
    def test_prints_json_and_writes_file(self, tmp_path):
        res = run_cli([
            "fixed-point",
            "--set", "ensemble.kind=powerlaw",
            "--set", "ensemble.n_features=6",
            "--set", "ensemble.n_transitions=4",
            "--set", "learner.eta0=0.2",
            "--out", str(tmp_path / "fp"),
        ], tmp_path)
        assert res.exit_code == 0, res.output
        report = json.loads(res.output[: res.output.rindex("}") + 1])
        assert set(report) >= {"eta", "gamma", "batch_size", "plateau_loss"}
        assert report["plateau_loss"] > 0
        saved = json.loads((tmp_path / "fp" / "fixed_point.json").read_text())
        assert saved["plateau_loss"] == report["plateau_loss"]


class TestPresetCommand:
    def test_unknown_name_exits_two_and_lists_presets(self, tmp_path):
        res = run_cli(["preset", "fig9"], tmp_path)
        assert res.exit_code == 2
        assert "fig1" in res.output and "fig4" in res.output

    def test_config_flag_rejected(self, tmp_path):
        cfg = tmp_path / "x.toml"
        cfg.write_text("")
        res = run_cli(["preset", "fig3", "--config", str(cfg)], tmp_path)
        assert res.exit_code == 2
