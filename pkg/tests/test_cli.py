import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wishart_density import (
    ConfigError,
    DensityCurve,
    DomainError,
    EnsembleSpec,
    LambdaGrid,
    NoSupportDetected,
    Uniform,
    mp_density_curve,
    replica_density_curve,
)
from wishart_density.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERICAL,
    EXIT_OK,
    compare,
    estimate_support_edges,
    main,
    parse_config,
    read_curve_csv,
    read_curve_json,
    write_curve_csv,
    write_curve_json,
)

MP_DOC = {"ensemble": {"structure": "mp", "alpha": 4, "v": 3}}
ROW_DOC = {"command": "replica",
           "ensemble": {"structure": "row", "alpha": 4, "law_s": {"kind": "uniform", "min": 1, "max": 5}},
           "grid": {"lambda_min": 0.5, "lambda_max": 40, "n_points": 50}}


def config_error(doc):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    return info.value.key_path


def mp_curve(n=2000):
    return mp_density_curve(4.0, 3.0, LambdaGrid.linspace(0.5, 30, n))


def run(tmp_path, doc, *flags):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(doc))
    return main([doc.get("command", "replica"), "--config", str(cfg), *flags])


class TestParseConfig:
    def test_minimal_mp(self):
        cfg = parse_config(json.dumps(MP_DOC))
        assert cfg.command == "replica"
        assert cfg.ensemble.alpha == 4 and cfg.ensemble.v == pytest.approx(3.0)
        assert cfg.grid.n_points == 1000 and cfg.sampling.N == 500

    def test_negative_alpha(self):
        assert config_error({"ensemble": {"structure": "mp", "alpha": -1, "v": 3}}) == "ensemble.alpha"

    def test_kronecker_with_uniform_laws(self):
        cfg = parse_config({"ensemble": {"structure": "kronecker", "alpha": 4,
                                         "law_s": {"kind": "uniform", "min": 1, "max": 5},
                                         "law_t": {"kind": "uniform", "min": 0, "max": 2}}})
        assert cfg.ensemble == EnsembleSpec.kronecker(4, Uniform(1, 5), Uniform(0, 2))

    def test_bare_number_is_constant_law(self):
        cfg = parse_config({"ensemble": {"structure": "row", "alpha": 2, "law_s": 3}})
        assert cfg.ensemble.v == pytest.approx(3.0)

    @pytest.mark.parametrize("doc,path", [
        ({"ensemble": {"structure": "mp", "alpha": 4, "v": 3}, "colour": 1}, "colour"),
        ({"ensemble": {"structure": "mp", "alpha": 4, "v": 3, "extra": 0}}, "ensemble.extra"),
        ({"ensemble": {"structure": "row", "alpha": 4, "law_s": {"kind": "uniform", "min": 5, "max": 1}}},
         "ensemble.law_s"),
        ({**MP_DOC, "grid": {"lambda_min": 5, "lambda_max": 1}}, "grid.lambda_max"),
        ({**MP_DOC, "grid": {"n_points": 1}}, "grid.n_points"),
        ({**MP_DOC, "grid": {"epsilon": 0}}, "grid.epsilon"),
        ({**MP_DOC, "command": "bp", "sampling": {"N": 1}}, "sampling.N"),
        ({**MP_DOC, "output": {"format": "xml"}}, "output.format"),
        ({**MP_DOC, "compare": {"methods": ["replica", "magic"]}}, "compare.methods[1]"),
        ({**MP_DOC, "command": "plot"}, "command"),
        ({**MP_DOC, "threads": 0}, "threads"),
        ({"grid": {}}, "ensemble"),
    ])
    def test_errors_name_key_path(self, doc, path):
        assert config_error(doc) == path

    def test_malformed_json(self):
        with pytest.raises(ConfigError):
            parse_config("{not json")

    def test_echo_round_trips(self):
        cfg = parse_config({**ROW_DOC, "solver": {"damping": 0.3}})
        again = parse_config(cfg.echo())
        assert again == cfg
        assert again.solver.damping == 0.3

    def test_method_defaults(self):
        cfg = parse_config(MP_DOC)
        assert cfg.epsilon_for("bp") == 1e-3 and cfg.epsilon_for("replica") == 1e-6
        assert cfg.solver_for("bp").tolerance == 1e-10
        assert cfg.sampling.seeds[:3] == [0, 1, 2]


class TestSupportEdges:
    def test_mp_dense_grid(self):
        lo, hi = estimate_support_edges(mp_curve())
        assert lo == pytest.approx(3.0, abs=0.02) and hi == pytest.approx(27.0, abs=0.02)

    def test_all_zero(self):
        lam = np.linspace(0, 1, 20)
        c = DensityCurve(lam, np.zeros(20), np.zeros(20, complex), np.zeros(20, int), np.ones(20, bool), "replica")
        with pytest.raises(NoSupportDetected):
            estimate_support_edges(c)

    def test_too_few_points(self):
        with pytest.raises(NoSupportDetected):
            estimate_support_edges(mp_curve(5))

    def test_bad_threshold(self):
        with pytest.raises(DomainError):
            estimate_support_edges(mp_curve(), 0.0)

    def test_interpolated_crossing(self):
        lam = np.arange(12.0)
        rho = np.zeros(12)
        rho[3:9] = 1.0
        c = DensityCurve(lam, rho, np.zeros(12, complex), np.zeros(12, int), np.ones(12, bool), "replica")
        assert estimate_support_edges(c, 0.25) == (2.25, 8.75)


class TestCompare:
    def test_identical_curves(self):
        c = mp_curve(500)
        r = compare([c, c], LambdaGrid.linspace(0.5, 30, 500), ["a", "b"])
        assert r.distance("a", "b") == 0.0 and r.distance("b", "a", "l1") == 0.0
        assert r.masses["a"] == pytest.approx(1.0, abs=0.01)

    def test_replica_vs_closed_form(self):
        grid = LambdaGrid.linspace(0.5, 30, 1000, 1e-9)
        rep = replica_density_curve(EnsembleSpec.marchenko_pastur(4, 3), grid)
        r = compare([rep, mp_density_curve(4.0, 3.0, grid)], grid, ["replica", "mp"])
        assert r.distance("replica", "mp") <= 1e-4

    def test_distances_non_negative_and_bulk_restricted(self):
        grid = LambdaGrid.linspace(0.5, 30, 400, 1e-3)
        a = replica_density_curve(EnsembleSpec.marchenko_pastur(4, 3), grid)
        b = mp_curve(400)
        r = compare([a, b], grid, ["a", "b"])
        lo, hi = r.bulk[("a", "b")]
        assert lo > 3.0 and hi < 27.0
        assert r.sup_norm[("a", "b")] >= 0 and r.l1[("a", "b")] >= 0

    def test_disjoint_supports_reported(self):
        g1 = LambdaGrid.linspace(0.01, 3, 300)
        g2 = LambdaGrid.linspace(0.5, 30, 300)
        a = mp_density_curve(4.0, 0.1, g1)
        b = mp_density_curve(4.0, 3.0, g2)
        r = compare([a, b], g2, ["a", "b"])
        assert np.isnan(r.sup_norm[("a", "b")]) and r.bulk[("a", "b")] is None
        assert any("do not overlap" in n for n in r.notes)

    def test_needs_two_curves(self):
        with pytest.raises(ValueError):
            compare([mp_curve()], LambdaGrid.linspace(0, 1, 3))


class TestSerialization:
    def curve(self):
        spec = EnsembleSpec.row_variance(4, Uniform(1, 5))
        c = replica_density_curve(spec, LambdaGrid.linspace(0.5, 40, 60))
        c.converged[5] = False
        return DensityCurve(c.lambdas, c.rho, c.chi_w, c.iterations, c.converged, "replica", spec,
                            {"epsilon": 1e-6, "seed": 0})

    def test_csv_round_trip_bit_exact(self):
        c = self.curve()
        buf = io.StringIO()
        write_curve_csv(c, buf)
        buf.seek(0)
        back = read_curve_csv(buf)
        np.testing.assert_array_equal(back.lambdas, c.lambdas)
        np.testing.assert_array_equal(back.rho, c.rho)
        np.testing.assert_array_equal(back.chi_w, c.chi_w)
        np.testing.assert_array_equal(back.iterations, c.iterations)
        np.testing.assert_array_equal(back.converged, c.converged)

    def test_csv_header(self):
        buf = io.StringIO()
        write_curve_csv(self.curve(), buf)
        assert buf.getvalue().splitlines()[0] == "lambda,rho,re_chi_w,im_chi_w,iterations,converged"

    def test_json_round_trip_bit_exact(self):
        c = self.curve()
        buf = io.StringIO()
        write_curve_json(c, buf)
        buf.seek(0)
        back = read_curve_json(buf)
        np.testing.assert_array_equal(back.lambdas, c.lambdas)
        np.testing.assert_array_equal(back.rho, c.rho)
        np.testing.assert_array_equal(back.chi_w, c.chi_w)
        np.testing.assert_array_equal(back.converged, c.converged)
        assert back.ensemble == c.ensemble
        assert back.metadata["epsilon"] == 1e-6 and back.metadata["seed"] == 0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False, min_value=0, max_value=1e300))
    def test_any_float_survives_csv(self, x):
        lam = np.array([0.0, 1.0])
        c = DensityCurve(lam, np.array([x, 0.0]), np.array([complex(x, -x), 0j]), np.zeros(2, int),
                         np.ones(2, bool), "replica")
        buf = io.StringIO()
        write_curve_csv(c, buf)
        buf.seek(0)
        back = read_curve_csv(buf)
        assert back.rho[0] == x and back.chi_w[0] == complex(x, -x)


class TestMain:
    def test_replica_csv(self, tmp_path):
        out = tmp_path / "c.csv"
        assert run(tmp_path, ROW_DOC, "--out", str(out)) == EXIT_OK
        back = read_curve_csv(open(out))
        assert len(back) == 50 and back.converged.all()

    def test_flags_override_config(self, tmp_path):
        out = tmp_path / "c.json"
        assert run(tmp_path, ROW_DOC, "--out", str(out), "--format", "json", "--grid", "1:30:12",
                   "--epsilon", "1e-4") == EXIT_OK
        doc = json.load(open(out))
        assert len(doc["entries"]) == 12 and doc["entries"][0]["lambda"] == 1.0
        assert doc["metadata"]["epsilon"] == 1e-4
        assert doc["metadata"]["ensemble"]["structure"] == "row"

    def test_deterministic_sampled_output(self, tmp_path):
        doc = {**ROW_DOC, "command": "bp", "grid": {"lambda_min": 2, "lambda_max": 30, "n_points": 6},
               "sampling": {"N": 60, "n_samples": 2, "base_seed": 7}}
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(tmp_path, doc, "--out", str(a)) == EXIT_OK
        assert run(tmp_path, doc, "--out", str(b), "--threads", "2") == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_exact_records_seeds(self, tmp_path):
        doc = {**ROW_DOC, "command": "exact", "sampling": {"N": 40, "n_samples": 3, "base_seed": 5}}
        out = tmp_path / "e.json"
        assert run(tmp_path, doc, "--out", str(out), "--format", "json") == EXIT_OK
        assert json.load(open(out))["metadata"]["seeds"] == [5, 6, 7]

    def test_moments(self, tmp_path, capsys):
        assert run(tmp_path, {**ROW_DOC, "command": "moments"}, "--format", "json") == EXIT_OK
        vals = json.loads(capsys.readouterr().out)["values"]
        assert vals["inverse_first"] == pytest.approx(np.log(5) / 12, abs=1e-9)

    def test_compare(self, tmp_path, capsys):
        doc = {"command": "compare", "ensemble": {"structure": "mp", "alpha": 4, "v": 3},
               "grid": {"lambda_min": 0.5, "lambda_max": 30, "n_points": 600, "epsilon": 1e-9},
               "compare": {"methods": ["replica", "mp"]}}
        assert run(tmp_path, doc, "--format", "json") == EXIT_OK
        report = json.loads(capsys.readouterr().out)["report"]
        assert report["sup_norm"]["replica|mp"] <= 1e-4

    def test_config_error(self, tmp_path):
        assert run(tmp_path, {"ensemble": {"structure": "mp", "alpha": -1, "v": 3}}) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["replica", "--config", str(tmp_path / "nope.json")]) == EXIT_IO

    def test_unwritable_output(self, tmp_path):
        assert run(tmp_path, ROW_DOC, "--out", str(tmp_path / "no" / "dir.csv")) == EXIT_IO

    def test_non_convergence_exit(self, tmp_path):
        doc = {**ROW_DOC, "solver": {"max_iterations": 1, "anderson_depth": 0}}
        assert run(tmp_path, doc, "--out", str(tmp_path / "x.csv")) == EXIT_NUMERICAL

    def test_closed_form_needs_constant_laws(self, tmp_path):
        assert run(tmp_path, {**ROW_DOC, "command": "mp"}) == EXIT_CONFIG
