import json

import numpy as np
import pytest

from gradphi.cli import run_cli
from gradphi.harness import (
    ConfigError,
    boundary_datum,
    fit_power_law,
    load_config,
    run_experiment,
)


def test_fit_power_law_exact_square():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_power_law(xs, xs**2)
    assert fit.exponent == pytest.approx(2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_power_law_constant():
    fit = fit_power_law([1.0, 2.0, 4.0], [3.0, 3.0, 3.0])
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_power_law_noisy_inverse_square():
    rng = np.random.default_rng(0)
    xs = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    ys = 3.0 * xs**-2 * (1.0 + 0.01 * rng.normal(size=len(xs)))
    fit = fit_power_law(xs, ys)
    assert abs(fit.exponent + 2.0) < 0.1


def test_fit_power_law_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_power_law([1.0, -2.0, 3.0], [1.0, 2.0, 3.0])


def test_boundary_datum_library():
    f = boundary_datum({"name": "sine_product"})
    pts = np.array([[0.5, 0.5], [0.0, 0.3]])
    vals = f(0.0, pts)
    assert vals[0] == pytest.approx(1.0)
    assert vals[1] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        boundary_datum({"name": "nope"})


def test_load_config_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))
    q = tmp_path / "list.json"
    q.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(q))


def _occupation_cfg():
    return {
        "schema_version": 1,
        "experiment": "occupation",
        "process": "brownian",
        "thresholds": [0.05, 0.1, 0.2],
        "replicas": 200,
        "dt": 1e-3,
        "seed": 11,
    }


def test_run_experiment_writes_csv_and_summary(tmp_path):
    out = tmp_path / "out"
    res = run_experiment("occupation", _occupation_cfg(), str(out))
    assert (out / "occupation.csv").exists()
    assert (out / "summary.json").exists()
    doc = json.loads((out / "summary.json").read_text())
    assert doc["experiment"] == "occupation"
    assert doc["seed"] == 11
    assert doc["config"]["thresholds"] == [0.05, 0.1, 0.2]
    assert "tool_version" in doc and "wall_clock_seconds" in doc
    assert set(doc["criteria"]) == set(res.criteria)
    assert all(isinstance(v, bool) for v in doc["criteria"].values())
    first = (out / "occupation.csv").read_text().splitlines()
    assert first[0] == "epsilon,mean_occupation,stderr,replicas"


def test_rerun_is_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    run_experiment("occupation", _occupation_cfg(), str(out1))
    run_experiment("occupation", _occupation_cfg(), str(out2), threads=4)
    csv1 = (out1 / "occupation.csv").read_bytes()
    csv2 = (out2 / "occupation.csv").read_bytes()
    assert csv1 == csv2


def test_seed_override_changes_results(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    run_experiment("occupation", _occupation_cfg(), str(out1))
    run_experiment("occupation", _occupation_cfg(), str(out2), seed=999)
    assert (out1 / "occupation.csv").read_bytes() != (out2 / "occupation.csv").read_bytes()


def test_unknown_experiment_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment("mystery", {}, str(tmp_path))


def test_experiment_name_mismatch_rejected(tmp_path):
    cfg = _occupation_cfg()
    cfg["experiment"] = "hydro"
    with pytest.raises(ConfigError):
        run_experiment("occupation", cfg, str(tmp_path))


# ---------------------------------------------------------------------------
# CLI surface
# ---------------------------------------------------------------------------

def test_cli_unknown_subcommand_exits_2(capsys):
    assert run_cli(["frobnicate", "--config", "x.json"]) == 2


def test_cli_missing_config_key_exits_2(tmp_path):
    cfg = tmp_path / "h.json"
    cfg.write_text(json.dumps({"schema_version": 1, "epsilons": [0.25]}))
    code = run_cli(["hydro", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_occupation_round_trip(tmp_path, capsys):
    cfg = tmp_path / "occ.json"
    cfg.write_text(json.dumps(_occupation_cfg()))
    out = tmp_path / "out"
    code = run_cli(["occupation", "--config", str(cfg), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert "pass" in captured.out
    assert (out / "occupation.csv").exists()


def test_cli_same_seed_byte_identical(tmp_path):
    cfg = tmp_path / "occ.json"
    cfg.write_text(json.dumps(_occupation_cfg()))
    outs = []
    for name, threads in [("o1", "1"), ("o2", "3")]:
        out = tmp_path / name
        assert run_cli(["occupation", "--config", str(cfg), "--out", str(out),
                        "--threads", threads]) == 0
        outs.append((out / "occupation.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_corrector_writes_named_csv(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "potential": {"kind": "quadratic"},
        "d": 2,
        "sizes": [4, 6, 8],
        "replicas": 64,
        "seed": 3,
    }))
    out = tmp_path / "out"
    code = run_cli(["corrector", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert (out / "corrector_fluct.csv").exists()
    assert (out / "summary.json").exists()


def test_hydro_zero_noise_consistency():
    # deterministic diagnostic: with the noise off and the identity
    # effective gradient, the microscopic and effective solvers coincide
    from gradphi.harness import hydro_limit_experiment

    cfg = {
        "potential": {"kind": "quadratic"},
        "d": 2,
        "epsilons": [0.25, 0.125],
        "replicas": 1,
        "f": {"name": "sine_product"},
        "zero_noise": True,
    }
    res = hydro_limit_experiment(cfg, seed=0)
    errs = np.asarray(res.summary["mean_error"])
    assert np.all(errs <= 1e-10)
    assert errs[1] <= errs[0] + 1e-10


def test_hydro_gradient_two_scale_diagnostic():
    from gradphi.harness import hydro_limit_experiment

    cfg = {
        "potential": {"kind": "quadratic"},
        "d": 2,
        "epsilons": [0.125],
        "replicas": 3,
        "f": {"name": "sine_product"},
        "gradient_diagnostic": {"epsilons": [0.125], "replicas": 3},
    }
    res = hydro_limit_experiment(cfg, seed=31)
    diag = res.summary["gradient_two_scale"]
    assert len(diag) == 3
    assert all(np.isfinite(row["error"]) and row["error"] > 0 for row in diag)
