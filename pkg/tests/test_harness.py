from __future__ import annotations

import copy
import json

import numpy as np
import pytest

from conftest import config_doc
from timodecay.cli import main
from timodecay.errors import ConfigurationError, H1ViolationError, OutsideTheoremError, StepSizeError
from timodecay.harness import (
    CONFIG_SCHEMA,
    build_initial,
    canonical_json,
    config_digest,
    load_config,
    load_config_dict,
    read_trace_csv,
    refine,
    run_experiment,
    run_verify,
    simulate,
    sweep,
    validate_schema,
    verify_kernels,
)


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


class TestSchema:
    def test_schema_is_valid_draft(self):
        import jsonschema

        jsonschema.Draft202012Validator.check_schema(CONFIG_SCHEMA)

    def test_minimal_config_loads(self):
        cfg = load_config_dict(config_doc())
        assert cfg.sim.n == 4 and cfg.coeffs.xi == pytest.approx(1.0)
        assert [c.name for c in cfg.report] == [
            "schema", "kernel", "coefficients", "kernel_h1", "kernel_h2", "tau_over_dt", "rk4_stability", "initial",
        ]
        assert all(c.ok for c in cfg.report)

    @pytest.mark.parametrize(
        "mutate,path",
        [
            (lambda d: d["sim"].update(n=0), "$.sim.n"),
            (lambda d: d["sim"].update(dt=-1), "$.sim.dt"),
            (lambda d: d["kernel"].pop("rate"), "$.kernel"),
            (lambda d: d["kernel"].update(exponent=2), "$.kernel"),
            (lambda d: d.update(extra=1), "$"),
            (lambda d: d["initial"].update(preset="spiral"), "$.initial.preset"),
            (lambda d: d["theorem_inputs"].update(rho1="heavy"), "$.theorem_inputs.rho1"),
        ],
    )
    def test_field_paths(self, mutate, path):
        doc = config_doc()
        mutate(doc)
        with pytest.raises(ConfigurationError) as info:
            validate_schema(doc)
        assert info.value.path == path

    def test_exactly_one_coefficient_block(self):
        doc = config_doc()
        doc["coefficients"] = {}
        with pytest.raises(ConfigurationError, match="exactly one"):
            validate_schema(doc)
        del doc["coefficients"], doc["theorem_inputs"]
        with pytest.raises(ConfigurationError, match="exactly one"):
            validate_schema(doc)


class TestValidationGates:
    def test_non_integer_delay_ratio(self):
        with pytest.raises(StepSizeError, match="try dt"):
            load_config_dict(config_doc(sim={"dt": 0.03}))

    def test_outside_theorem_needs_exploratory(self):
        doc = config_doc(theorem_inputs={"mu1": 1, "mu2": 2})
        with pytest.raises(OutsideTheoremError, match="exploratory"):
            load_config_dict(doc)
        doc["exploratory"] = True
        cfg = load_config_dict(doc)
        assert cfg.coeffs.outside_theorem

    def test_h1_failure_in_theorem_mode(self):
        with pytest.raises(H1ViolationError):
            load_config_dict(config_doc(kernel={"family": "exponential", "g0": 5, "rate": 1}))

    def test_h2_failure_reported(self):
        doc = config_doc(kernel={"family": "exponential", "g0": 1, "rate": 2, "zeta": 3})
        with pytest.raises(ConfigurationError, match="h2=False"):
            load_config_dict(doc)

    def test_explicit_coefficients_block(self):
        doc = config_doc()
        del doc["theorem_inputs"]
        doc["coefficients"] = {"rho1": 1, "rho2": 1, "rho3": 1, "K": 1, "b": 2, "beta": 1, "gamma": 1,
                               "delta": 2, "mu1": 2, "mu2": 1, "tau": 0.5}
        cfg = load_config_dict(doc)
        assert cfg.coeffs.theorem_mode and cfg.coeffs.xi == pytest.approx(1.0)

    def test_missing_file_and_bad_json(self, tmp_path):
        with pytest.raises(ConfigurationError, match="does not exist"):
            load_config(tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigurationError, match="JSON"):
            load_config(bad)


class TestInitialPresets:
    @pytest.mark.parametrize("preset", ["sine-bump", "poly-bump", "thermal-cosine", "random-modes", "zero"])
    def test_boundary_conditions(self, preset):
        data = build_initial({"preset": preset, "amplitude": 1.0, "modes": 4, "history": "zero"}, 8, 3)
        ends = np.array([0.0, 1.0])
        for name in ("phi0", "psi0"):
            np.testing.assert_allclose(getattr(data, name)(ends), 0.0, atol=1e-14)

    def test_random_modes_seeded(self):
        spec = {"preset": "random-modes", "amplitude": 1.0, "modes": 4, "history": "zero"}
        x = np.linspace(0, 1, 7)
        a, b, c = (build_initial(spec, 8, s) for s in (1, 1, 2))
        np.testing.assert_array_equal(a.phi0(x), b.phi0(x))
        assert not np.allclose(a.phi0(x), c.phi0(x))

    def test_hold_history(self):
        spec = {"preset": "thermal-cosine", "amplitude": 1.0, "modes": 4, "history": "hold"}
        data = build_initial(spec, 4, 0)
        assert data.f0 is not None

    def test_csv_preset(self, tmp_path):
        x = np.linspace(0, 1, 201)
        rows = "\n".join(f"{v:.17g},{np.sin(np.pi * v):.17g},0" for v in x)
        (tmp_path / "init.csv").write_text("x,phi0,theta0\n" + rows + "\n")
        spec = {"preset": "csv", "csv": "init.csv", "amplitude": 1.0, "modes": 4, "history": "zero"}
        data = build_initial(spec, 4, 0, tmp_path)
        assert float(data.phi0(np.array([0.5]))[0]) == pytest.approx(1.0, abs=1e-4)

    def test_csv_preset_rejects_text(self, tmp_path):
        (tmp_path / "init.csv").write_text("x,phi0\n0,zero\n1,0\n")
        spec = {"preset": "csv", "csv": "init.csv", "amplitude": 1.0, "modes": 4, "history": "zero"}
        with pytest.raises(ConfigurationError, match="non-numeric"):
            build_initial(spec, 4, 0, tmp_path)


class TestDigest:
    def test_key_order_irrelevant(self):
        a = {"b": 1, "a": [1, 2]}
        b = json.loads(json.dumps({"a": [1, 2], "b": 1}))
        assert canonical_json(a) == canonical_json(b)
        assert config_digest(a) == config_digest(b)

    def test_defaults_enter_digest(self):
        d1 = load_config_dict(config_doc()).digest
        d2 = load_config_dict(config_doc(sim={"backend": "ringbuffer"})).digest
        d3 = load_config_dict(config_doc(sim={"backend": "transport"})).digest
        assert d1 == d2 != d3


class TestExperiments:
    def test_simulate_outputs(self, tmp_path):
        cfg = load_config_dict(config_doc())
        m = run_experiment(cfg, tmp_path)
        assert m.outputs == ["trace.csv", "summary.json"]
        assert (tmp_path / "trace.csv").read_text().startswith(f"# config_sha256={cfg.digest}\n")
        cols = read_trace_csv(tmp_path / "trace.csv")
        assert cols["t"].size == 21 and np.all(np.isfinite(cols["E"]))
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["digest"] == cfg.digest
        assert summary["monotone_violations"] == 0
        assert summary["equivalence"]["m_hat"] > 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["digest"] == cfg.digest and manifest["kind"] == "simulate"

    def test_outputs_are_deterministic(self, tmp_path):
        cfg = load_config_dict(config_doc())
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("trace.csv", "summary.json", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_exploratory_skips_constants(self):
        doc = config_doc(theorem_inputs={"mu1": 1, "mu2": 2})
        doc["exploratory"] = True
        res = simulate(load_config_dict(doc))
        assert res.summary["constants"] is None
        assert res.summary["constants_note"] == "exploratory coefficients"

    def test_refine_orders(self):
        cfg = load_config_dict(config_doc(sim={"n": 4, "dt": 0.01, "t_end": 1.0, "record_stride": 10}))
        rows = refine(cfg, levels=3)
        dt_rows = [r for r in rows if r["axis"] == "dt"]
        assert [r["dt"] for r in dt_rows] == [0.01, 0.005, 0.0025]
        assert dt_rows[2]["order"] == pytest.approx(2.0, abs=0.3)
        n_rows = [r for r in rows if r["axis"] == "n"]
        assert [r["n"] for r in n_rows] == [4, 8, 16]
        assert all(r["status"] == "ok" for r in rows)

    def test_sweep_serial_and_threaded_agree(self, monkeypatch):
        cfg = load_config_dict(config_doc())
        serial = sweep(cfg, "mu2", [0.0, 1.0, 2.0])
        monkeypatch.setenv("TIMODECAY_THREADS", "3")
        threaded = sweep(cfg, "mu2", [0.0, 1.0, 2.0])
        assert serial == threaded
        assert [r["status"] for r in serial] == ["ok", "ok", "ok"]
        assert all(r["monotone_violations"] == 0 for r in serial)

    def test_sweep_failed_cell_does_not_abort(self):
        cfg = load_config_dict(config_doc())
        rows = sweep(cfg, "mu2", [1.0, 3.0])
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"] == "failed" and "OutsideTheoremError" in rows[1]["error"]

    def test_sweep_keeps_integer_fields(self):
        cfg = load_config_dict(config_doc())
        rows = sweep(cfg, "sim.n", [2.0, 3.0])
        assert all(r["status"] == "ok" for r in rows)

    def test_sweep_needs_values(self):
        with pytest.raises(ConfigurationError):
            sweep(load_config_dict(config_doc()))

    def test_verify_kernels(self):
        rows = verify_kernels(seed=1, trials=6)
        assert len(rows) == 6 and all(r["pass"] for r in rows)
        assert [r["family"] for r in rows[:2]] == ["exponential", "power"]
        assert rows == verify_kernels(seed=1, trials=6)

    def test_run_verify_manifest(self, tmp_path):
        rows, m = run_verify(3, 2, tmp_path)
        assert m.outputs == ["verify.csv", "verify.json"]
        assert json.loads((tmp_path / "verify.json").read_text())["passed"] == sum(r["pass"] for r in rows)


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", config_doc())
        assert main(["-q", "simulate", "--config", path, "--out", str(tmp_path / "out")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["kind"] == "simulate" and (tmp_path / "out" / "manifest.json").exists()

    def test_fit(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", config_doc())
        main(["-q", "simulate", "--config", path, "--out", str(tmp_path / "out")])
        capsys.readouterr()
        assert main(["-q", "fit", "--trace", str(tmp_path / "out" / "trace.csv"), "--t0", "0.2"]) == 0
        fit = json.loads(capsys.readouterr().out)
        assert fit["omega"] > 0 and fit["t0"] == 0.2

    def test_config_error_exit_code(self, tmp_path, capsys):
        doc = copy.deepcopy(config_doc())
        doc["sim"]["n"] = -1
        path = write_cfg(tmp_path / "c.json", doc)
        assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "$.sim.n" in capsys.readouterr().err

    def test_step_error_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", config_doc(sim={"dt": 0.03}))
        assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "StepSizeError" in capsys.readouterr().err

    def test_verify_kernels(self, tmp_path, capsys):
        assert main(["-q", "verify-kernels", "--seed", "5", "--trials", "4", "--out", str(tmp_path)]) == 0
        assert "4/4" in capsys.readouterr().out

    def test_sweep_values_parse(self, tmp_path, capsys):
        path = write_cfg(tmp_path / "c.json", config_doc())
        assert main(["-q", "sweep", "--config", path, "--param", "mu2", "--values", "0,1",
                     "--out", str(tmp_path / "s")]) == 0
        assert (tmp_path / "s" / "cell-001" / "trace.csv").exists()
        with pytest.raises(SystemExit):
            main(["sweep", "--config", path, "--param", "mu2", "--values", "a,b"])
