import csv
import io
import json

import numpy as np
import pytest

from crpsbench.cli import main
from crpsbench.config import ConfigError, bundled_config, load_config
from crpsbench.estimators import QuantileGrid, crps_quantile, crps_unbiased
from crpsbench.forecast import SamplePanel, gen_ackley
from crpsbench.harness import SAMPLE_METHODS, run_convergence
from crpsbench.io import (
    InputError,
    format_value,
    read_dataset,
    read_panel,
    read_samples,
    table_string,
    write_dataset,
    write_panel,
)
from crpsbench.kernquad import crps_kernquad, quantize


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def panel_12(tmp_path):
    p = tmp_path / "panel.csv"
    p.write_text("t,y_obs,s_1,s_2\n0,0,1,2\n")
    return p


class TestIo:
    def test_format_value(self):
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value(None) == ""
        assert format_value(3) == "3"
        assert float(format_value(np.pi)) == np.pi

    def test_dataset_round_trip(self):
        ds = gen_ackley(30, -2, 2, seed=1, n_train=5)
        buf = io.StringIO()
        write_dataset(buf, ds)
        back = read_dataset(io.StringIO(buf.getvalue()))
        np.testing.assert_array_equal(back.t, ds.t)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.train, ds.train)

    def test_panel_round_trip(self):
        rng = np.random.default_rng(0)
        panel = SamplePanel(rng.standard_normal((4, 7)), rng.standard_normal(4), t=np.arange(4.0))
        buf = io.StringIO()
        write_panel(buf, panel)
        back = read_panel(io.StringIO(buf.getvalue()))
        np.testing.assert_array_equal(back.draws, panel.draws)
        np.testing.assert_array_equal(back.observations, panel.observations)

    def test_missing_column_is_named(self):
        with pytest.raises(InputError, match="'y'"):
            read_dataset(io.StringIO("t,split\n0,train\n"), "d.csv")
        with pytest.raises(InputError, match="y_obs"):
            read_panel(io.StringIO("t,s_1,s_2\n0,1,2\n"), "p.csv")

    def test_line_numbers(self):
        with pytest.raises(InputError, match=r"p\.csv:3"):
            read_panel(io.StringIO("y_obs,s_1,s_2\n0,1,2\n0,1,oops\n"), "p.csv")

    def test_samples_reader(self):
        assert read_samples(io.StringIO("x\n1\n2\n3\n")).tolist() == [1, 2, 3]
        assert read_samples(io.StringIO("a,b\n1,5\n2,6\n"), column="b").tolist() == [5, 6]
        assert read_samples(io.StringIO("y_obs,s_1,s_2\n0,4,5\n")).tolist() == [4, 5]

    def test_json_table(self):
        out = json.loads(table_string(("a", "b"), [(1.5, None)], "json"))
        assert out == [{"a": 1.5, "b": None}]


class TestConfig:
    def test_bundled_configs_load(self):
        cfg = load_config(bundled_config("fig3.cfg"), "convergence")
        assert cfg.M == (10, 100, 1000, 10000, 100000)
        assert cfg.estimators == SAMPLE_METHODS
        assert cfg.seeds == 10 and cfg.problem.timesteps is None
        assert load_config(bundled_config("fig3_q.cfg"), "convergence").grid == "midpoint"
        assert load_config(bundled_config("slicewise.cfg"), "slicewise").seeds == 100
        rk = load_config(bundled_config("ranking.cfg"), "ranking")
        assert list(rk.datasets) == ["low", "high"] and list(rk.models) == ["short", "long"]
        assert rk.models["short"].lengthscale_steps == 5

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[convergence]\nM = 10\nbogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_config(p, "convergence")

    def test_unknown_section(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[convergence]\nM = 10\n[extra]\n")
        with pytest.raises(ConfigError, match="extra"):
            load_config(p, "convergence")

    def test_empty_list(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[convergence]\nM =\n")
        with pytest.raises(ConfigError, match="empty"):
            load_config(p, "convergence")

    def test_missing_bundled(self):
        with pytest.raises(ConfigError):
            bundled_config("nope.cfg")


class TestEstimate:
    def test_unbiased_hand_example(self, capsys, panel_12):
        code, out, _ = run(capsys, "estimate", panel_12, "--method", "unbiased")
        assert code == 0
        rows = rows_of(out)
        assert float(rows[0]["crps"]) == 1.0
        assert rows[-1]["t"] == "mean" and float(rows[-1]["crps"]) == 1.0

    def test_quantile_matches_library(self, capsys, panel_12):
        code, out, _ = run(capsys, "estimate", panel_12, "--method", "quantile", "--grid", "deciles")
        assert code == 0
        lib = crps_quantile(np.array([1.0, 2.0]), 0.0, QuantileGrid.deciles()).value
        assert rows_of(out)[0]["crps"] == format_value(lib)

    @pytest.mark.parametrize("method", ["pwm_plugin", "unbiased", "kernquad", "energy"])
    def test_bit_identical_to_library(self, capsys, tmp_path, method):
        rng = np.random.default_rng(1)
        panel = SamplePanel(rng.standard_normal((3, 120)), rng.standard_normal(3), t=np.arange(3.0))
        p = tmp_path / "p.csv"
        with open(p, "w", newline="") as fh:
            write_panel(fh, panel)
        code, out, _ = run(capsys, "estimate", p, "--method", method, "-n", 8, "--seed", 4)
        assert code == 0
        got = [float(r["crps"]) for r in rows_of(out)[:-1]]
        if method == "kernquad":
            ref = [crps_kernquad(panel.draws[l], panel.observations[l], n=8, seed=(4, l)).value for l in range(3)]
        elif method == "unbiased":
            ref = crps_unbiased(panel.draws, panel.observations).value.tolist()
        else:
            from crpsbench.estimators import crps_energy_form, crps_pwm_plugin
            fn = crps_energy_form if method == "energy" else lambda d, y: crps_pwm_plugin(d, y).value
            ref = np.atleast_1d(fn(panel.draws, panel.observations)).tolist()
        assert got == ref

    def test_missing_y_column(self, capsys, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("t,s_1,s_2\n0,1,2\n")
        code, _, err = run(capsys, "estimate", p, "--method", "unbiased")
        assert code == 2 and "y_obs" in err

    def test_custom_y_column(self, capsys, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("obs,s_1,s_2\n0,1,2\n")
        code, out, _ = run(capsys, "estimate", p, "--method", "unbiased", "--y-column", "obs")
        assert code == 0 and float(rows_of(out)[0]["crps"]) == 1.0

    def test_json_output(self, capsys, panel_12):
        code, out, _ = run(capsys, "estimate", panel_12, "--method", "unbiased", "--format", "json")
        assert code == 0 and json.loads(out)[0]["crps"] == 1.0

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "estimate", tmp_path / "none.csv", "--method", "unbiased")
        assert code == 2 and "cannot read" in err

    def test_usage_error(self, capsys, panel_12):
        assert run(capsys, "estimate", panel_12)[0] == 2
        assert run(capsys, "estimate", panel_12, "--method", "bogus")[0] == 2


class TestGenFit:
    def test_pipeline(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        assert run(capsys, "gen", "ackley", "-o", ds, "--seed", 2)[0] == 0
        panel = tmp_path / "panel.csv"
        assert run(capsys, "fit", ds, "-M", 50, "--seed", 1, "-o", panel)[0] == 0
        with open(panel, newline="") as fh:
            p = read_panel(fh)
        assert p.draws.shape == (200, 50)
        code, out, _ = run(capsys, "fit", ds)
        assert code == 0 and len(rows_of(out)) == 200

    def test_seed_determinism(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run(capsys, "gen", "multisin", "--L", 40, "--T", 10, "--noise-std", 0.1, "-o", ds, "--seed", 5)
        a = run(capsys, "fit", ds, "-M", 5, "--seed", 1)[1]
        b = run(capsys, "fit", ds, "-M", 5, "--seed", 1)[1]
        c = run(capsys, "fit", ds, "-M", 5, "--seed", 2)[1]
        assert a == b and a != c

    def test_numerical_failure_exit_code(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run(capsys, "gen", "ackley", "-o", ds)
        code, _, err = run(capsys, "fit", ds, "--signal-var", "-1")
        assert code in (2, 3) and err


class TestSweeps:
    def small_config(self, tmp_path, body):
        p = tmp_path / "c.cfg"
        p.write_text(body)
        return p

    def test_convergence_rerun_is_byte_identical(self, capsys, tmp_path):
        cfg = self.small_config(tmp_path, "[convergence]\nestimators = quantile, unbiased, kernquad\n"
                                          "M = 10, 100\nseeds = 2\nkernquad_n = 8\n[ackley]\ntimesteps = 10\n")
        a = run(capsys, "convergence", cfg)
        b = run(capsys, "convergence", cfg)
        assert a[0] == 0 and a[1] == b[1]
        rows = rows_of(a[1])
        assert {r["estimator"] for r in rows} == {"quantile", "unbiased", "kernquad"}
        assert "floor" in a[2]
        lib = run_convergence(load_config(cfg, "convergence"))
        assert float(rows[0]["abs_error"]) == lib.rows[0].abs_error

    def test_seed_override(self, capsys, tmp_path):
        cfg = self.small_config(tmp_path, "[convergence]\nestimators = unbiased\nM = 10\nseeds = 1\n"
                                          "[ackley]\ntimesteps = 5\n")
        assert run(capsys, "convergence", cfg, "--seed", 1)[1] != run(capsys, "convergence", cfg)[1]

    def test_empty_sweep_list(self, capsys, tmp_path):
        cfg = self.small_config(tmp_path, "[convergence]\nM =\n")
        code, _, err = run(capsys, "convergence", cfg)
        assert code == 2 and "M" in err

    def test_invalid_key(self, capsys, tmp_path):
        cfg = self.small_config(tmp_path, "[convergence]\nsedes = 3\n")
        code, _, err = run(capsys, "convergence", cfg)
        assert code == 2 and "sedes" in err

    def test_unknown_config(self, capsys):
        assert run(capsys, "convergence", "nope.cfg")[0] == 2

    def test_slicewise_and_ranking(self, capsys, tmp_path):
        sw = self.small_config(tmp_path, "[slicewise]\nestimators = unbiased\nM = 20\nseeds = 3\n"
                                         "[ackley]\ntimesteps = 5\n")
        code, out, _ = run(capsys, "slicewise", sw)
        assert code == 0 and len(rows_of(out)) == 5
        rk = tmp_path / "r.cfg"
        rk.write_text("[ranking]\nestimators = closed, unbiased\ndatasets = d\nmodels = a, b\nseeds = 1\nM = 20\n"
                      "[dataset.d]\nfreqs = 1, 2, 3, 4\nL = 50\nT = 10\n"
                      "[model.a]\nlengthscale_steps = 5\n[model.b]\nlengthscale_steps = 2\n")
        code, out, _ = run(capsys, "ranking", rk, "--format", "json")
        recs = json.loads(out)
        assert code == 0 and len(recs) == 4 and {"a", "b"} <= set(recs[0])


class TestQuantize:
    def write(self, tmp_path, values):
        p = tmp_path / "x.csv"
        p.write_text("x\n" + "\n".join(str(v) for v in values) + "\n")
        return p

    def test_three_samples_one_feature(self, capsys, tmp_path):
        code, out, err = run(capsys, "quantize", self.write(tmp_path, [1, 2, 3]), "--y-obs", 0, "-n", 1)
        rows = rows_of(out)
        assert code == 0 and len(rows) <= 2
        assert sum(float(r["weight"]) for r in rows) == pytest.approx(1.0, abs=1e-12)
        assert "moment_residual" in err

    def test_pass_through(self, capsys, tmp_path):
        code, out, _ = run(capsys, "quantize", self.write(tmp_path, [1, 2, 3, 4]), "--y-obs", 0, "-n", 3)
        rows = rows_of(out)
        assert code == 0 and len(rows) == 4
        assert {float(r["weight"]) for r in rows} == {0.25}

    def test_matches_library(self, capsys, tmp_path):
        x = np.random.default_rng(3).standard_normal(500)
        code, out, _ = run(capsys, "quantize", self.write(tmp_path, [format_value(v) for v in x]),
                           "--y-obs", 0.2, "-n", 10, "--seed", 7)
        sup = quantize(x, 0.2, n=10, seed=7)
        rows = rows_of(out)
        assert code == 0 and [int(r["index"]) for r in rows] == sup.indices.tolist()
        assert [float(r["weight"]) for r in rows] == sup.weights.tolist()

    def test_too_few_samples(self, capsys, tmp_path):
        code, _, err = run(capsys, "quantize", self.write(tmp_path, [1]), "--y-obs", 0)
        assert code == 2 and "at least 2" in err

    def test_malformed(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("x\n1\nnot-a-number\n")
        assert run(capsys, "quantize", p, "--y-obs", 0)[0] == 2
