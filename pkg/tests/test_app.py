from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd
import pytest

import app
from utils.config import config_from_text
from utils.observables import AlignmentTrace
from utils.records import read_record

TINY = """\
scenario = {scenario}
seed = 4
molecule.preset = no-dimer-droplet
field.fwhm_ps = 20
solver.j_max = 3
solver.dt_ps = 0.1
detection.mode = exact
validate.j_max_oracle = 3
validate.sampler_seeds = 3
"""


def _write_config(tmp_path, scenario="infield", extra=""):
    path = tmp_path / f"{scenario}.cfg"
    path.write_text(TINY.format(scenario=scenario) + extra, encoding="utf-8")
    return path


def _run(*argv):
    return app.main([str(a) for a in argv])


def test_levels(tmp_path, capsys):
    assert _run("levels", "--j-max", 2, "--out", tmp_path) == 0
    table = pd.read_csv(tmp_path / "levels.csv")
    assert list(table.columns) == ["J", "K", "E_cm1", "f_res_GHz"]
    assert len(pd.read_csv(tmp_path / "asymmetric_levels.csv")) == 1 + 3 + 5
    assert "f_res_GHz" in capsys.readouterr().out


def test_infield_outputs(tmp_path):
    cfg = _write_config(tmp_path, extra="delays.start_ps = -40\ndelays.stop_ps = 40\ndelays.step_ps = 10\n")
    out = tmp_path / "run"
    assert _run("infield", "--config", cfg, "--out", out, "--plot-data") == 0
    for name in ("trace.csv", "fit.txt", "populations.csv", "cos2_3d.csv", "plot_data.csv", "manifest.txt", "runs.db"):
        assert (out / name).exists(), name
    trace = pd.read_csv(out / "trace.csv")
    assert list(trace.columns) == ["delay_ps", "value", "stderr"]
    assert len(trace) == 9
    assert trace["value"].between(0.0, 1.0).all()
    populations = pd.read_csv(out / "populations.csv")
    assert populations["population"].sum() == pytest.approx(1.0, abs=1e-8)
    manifest = read_record(out / "manifest.txt")
    assert manifest["run.command"] == "infield"
    assert manifest["config.solver.j_max"] == "3"
    assert "diagnostics.dt_halving_delta" in manifest
    assert "fit.status" in read_record(out / "fit.txt")


def test_infield_is_reproducible(tmp_path):
    extra = (
        "delays.list_ps = -20, 0, 20\n"
        "detection.mode = sampled\n"
        "detection.n_ions = 100\n"
    )
    cfg = tmp_path / "sampled.cfg"
    cfg.write_text(TINY.format(scenario="infield").replace("detection.mode = exact\n", "") + extra)
    first, second, threaded = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert _run("infield", "--config", cfg, "--out", first) == 0
    assert _run("infield", "--config", cfg, "--out", second) == 0
    assert _run("infield", "--config", cfg, "--out", threaded, "--workers", 2) == 0
    expected = (first / "trace.csv").read_bytes()
    assert (second / "trace.csv").read_bytes() == expected
    assert (threaded / "trace.csv").read_bytes() == expected
    assert pd.read_csv(first / "trace.csv")["stderr"].gt(0).all()


def test_scan_outputs(tmp_path):
    cfg = _write_config(
        tmp_path,
        "scan",
        "scan.start_ghz = 6\nscan.stop_ghz = 12\nscan.points = 5\nscan.delay_ps = 60\n",
    )
    out = tmp_path / "scan"
    assert _run("scan", "--config", cfg, "--out", out) == 0
    scan = pd.read_csv(out / "scan.csv")
    assert list(scan.columns) == ["fcfg_ghz", "value", "stderr"]
    np.testing.assert_allclose(scan["fcfg_ghz"], [6.0, 7.5, 9.0, 10.5, 12.0])
    record = read_record(out / "fit.txt")
    assert float(record["expected.b_yz_cm1"]) == pytest.approx(0.092)


def test_decay_outputs(tmp_path):
    cfg = _write_config(
        tmp_path,
        "decay",
        "delays.start_ps = -60\ndelays.stop_ps = 400\ndelays.step_ps = 20\ndecay.fit_start_ps = 100\n",
    )
    out = tmp_path / "decay"
    assert _run("decay", "--config", cfg, "--out", out) == 0
    resonant = pd.read_csv(out / "decay_resonant.csv")
    reference = pd.read_csv(out / "decay_reference.csv")
    assert len(resonant) == len(reference) == 24
    record = read_record(out / "fit.txt")
    assert "decay.status" in record
    assert float(record["plateau.delay_ps"]) == 400.0
    assert "plateau.excess_sigma" not in record


def test_scenario_must_match_command(tmp_path, capsys):
    cfg = _write_config(tmp_path, "scan")
    assert _run("infield", "--config", cfg, "--out", tmp_path / "x") == 2
    assert "scenario" in capsys.readouterr().err


def test_missing_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("scenario = infield\n", encoding="utf-8")
    assert _run("infield", "--config", path, "--out", tmp_path / "x") == 2
    assert "molecule.preset" in capsys.readouterr().err


def test_unknown_key_is_usage_error(tmp_path):
    cfg = _write_config(tmp_path, extra="field.colour = red\n")
    assert _run("infield", "--config", cfg, "--out", tmp_path / "x") == 2


def test_config_required(tmp_path):
    assert _run("scan", "--out", tmp_path / "x") == 2


def test_unknown_flag():
    with pytest.raises(SystemExit) as err:
        app.main(["infield", "--bogus"])
    assert err.value.code == 2


def test_validate_reports_truncation_failure(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("solver.j_max = 3", "solver.j_max = 2"))
    out = tmp_path / "validate"
    assert _run("validate", "--config", cfg, "--out", out) == 1
    report = read_record(out / "validation.txt")
    for name in ("operator_oracle", "norm", "dt_halving", "jmax_convergence", "frame_equivalence", "perturbation_oracle", "sampler_coverage"):
        assert f"check.{name}.status" in report
    assert report["check.jmax_convergence.status"] == "fail"
    assert report["check.operator_oracle.status"] == "pass"
    assert report["check.norm.status"] == "pass"
    assert "jmax_convergence" in capsys.readouterr().err


def test_fit_sinusoid_trace(tmp_path, capsys):
    t = np.arange(0.0, 301.0)
    values = 0.5 + 0.1 * np.cos(2 * np.pi * 1e-3 * 17.0 * t + 0.2)
    path = tmp_path / "trace.csv"
    pd.DataFrame({"delay_ps": t, "value": values}).to_csv(path, index=False)
    assert _run("fit", path, "--out", tmp_path) == 0
    record = read_record(tmp_path / "fit.txt")
    assert float(record["fit.frequency_ghz"]) == pytest.approx(17.0, abs=1e-6)
    assert "fit.frequency_ghz" in capsys.readouterr().out


def test_fit_scan_peak(tmp_path):
    f = np.linspace(4.0, 14.0, 21)
    values = 0.5 + 0.1 * np.exp(-4 * np.log(2) * (f - 8.27) ** 2 / 4.0)
    path = tmp_path / "scan.csv"
    pd.DataFrame({"fcfg_ghz": f, "value": values, "stderr": 0.0}).to_csv(path, index=False)
    assert _run("fit", path, "--model", "gaussian", "--out", tmp_path) == 0
    record = read_record(tmp_path / "fit.txt")
    assert float(record["fit.center_ghz"]) == pytest.approx(8.27, abs=1e-6)
    assert float(record["fit.b_yz_cm1"]) == pytest.approx(0.092, abs=1e-4)


def test_fit_failure_exit_code(tmp_path):
    path = tmp_path / "flat.csv"
    pd.DataFrame({"delay_ps": np.arange(50.0), "value": 0.0}).to_csv(path, index=False)
    assert _run("fit", path) == 1


def test_zero_intensity_trace_is_flat(tmp_path):
    cfg = config_from_text(
        TINY.format(scenario="infield")
        + "field.peak_intensity_w_cm2 = 0\ndelays.list_ps = -30, 0, 30, 60\n"
    )
    trace, fit = app.run_infield(cfg, tmp_path)
    np.testing.assert_allclose(trace.values, 0.5, atol=1e-10)
    assert fit is None


def test_default_validate_config_passes_every_check(tmp_path):
    out = tmp_path / "validate"
    assert _run("validate", "--out", out) == 0
    report = read_record(out / "validation.txt")
    statuses = {k: v for k, v in report.items() if k.endswith(".status")}
    assert "check.dt_halving.status" in statuses
    assert set(statuses.values()) == {"pass"}


def test_validate_uses_resolved_frame(monkeypatch):
    cfg = config_from_text(app.DEFAULT_VALIDATE_CONFIG)
    assert cfg["solver.scheme"] == "magnus4"
    frames = []
    real = app._ground_alignment

    def recording(system, field, dt, scheme, frame):
        frames.append(frame)
        return real(system, field, dt, scheme, frame)

    monkeypatch.setattr(app, "_ground_alignment", recording)
    small = cfg.replace(solver__j_max=3, validate__j_max_oracle=3, validate__sampler_seeds=3)
    app.validate(small)
    assert frames == ["rotating", "rotating", "rotating", "lab"]


def test_decay_traces_use_independent_seeds(tmp_path, monkeypatch):
    seeds = []
    real = app.trace_from_trajectory

    def recording(*args, **kwargs):
        seeds.append(kwargs["seed"])
        return real(*args, **kwargs)

    monkeypatch.setattr(app, "trace_from_trajectory", recording)
    cfg = config_from_text(
        TINY.format(scenario="decay")
        + "delays.start_ps = -60\ndelays.stop_ps = 400\ndelays.step_ps = 20\ndecay.fit_start_ps = 100\n"
    )
    app.run_decay(cfg, tmp_path)
    resonant, reference = seeds
    assert resonant.entropy == reference.entropy == 4
    assert resonant.spawn_key != reference.spawn_key


def test_plateau_summary():
    trace = AlignmentTrace([0.0, 990.0, 2000.0], [0.5, 0.52, 0.51], [0.01, 0.004, 0.01])
    plateau = app.plateau_summary(trace, 1000.0)
    assert plateau["delay_ps"] == 990.0
    assert plateau["value"] == 0.52
    assert plateau["excess_sigma"] == pytest.approx(5.0)
    exact = AlignmentTrace([0.0, 1000.0], [0.5, 0.51], [0.0, 0.0])
    assert "excess_sigma" not in app.plateau_summary(exact, 1000.0)


def test_scan_in_processes_matches_serial(tmp_path):
    cfg = config_from_text(
        TINY.format(scenario="scan").replace("detection.mode = exact\n", "")
        + "scan.start_ghz = 6\nscan.stop_ghz = 12\nscan.points = 5\nscan.delay_ps = 60\n"
        + "detection.n_ions = 200\n"
    )
    serial, _, _ = app.run_scan(cfg, tmp_path / "serial")
    with ProcessPoolExecutor(max_workers=2) as pool:
        parallel, _, _ = app.run_scan(cfg, tmp_path / "parallel", pool)
    np.testing.assert_array_equal(serial, parallel)
    assert (tmp_path / "serial" / "scan.csv").read_bytes() == (
        tmp_path / "parallel" / "scan.csv"
    ).read_bytes()


def test_fit_missing_file_is_one_line_error(tmp_path, capsys):
    missing = tmp_path / "missing.csv"
    assert _run("fit", missing) == 1
    err = capsys.readouterr().err
    assert "Traceback" not in err
    lines = [line for line in err.splitlines() if line.startswith("fit failed:")]
    assert len(lines) == 1
    assert "missing.csv" in lines[0]
