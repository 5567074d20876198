"""Full-scale runs of the shipped configs; enable with --runslow."""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

import app
from utils.analysis import extract_byz
from utils.config import load_config
from utils.physkit import C_GHZ
from utils.rotor import gas_preset, resonance_frequency

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow


def test_infield_oscillates_at_twice_the_rotation_frequency(tmp_path):
    cfg = load_config(CONFIGS / "infield.cfg").replace(detection__mode="exact")
    trace, fit = app.run_infield(cfg, tmp_path)
    assert fit is not None
    assert fit.frequency == pytest.approx(2 * cfg["field.f0_ghz"], rel=0.01)
    assert np.all((trace.values >= 0) & (trace.values <= 1))


def test_infield_amplitude_falls_with_rotation_frequency(tmp_path):
    base = load_config(CONFIGS / "infield.cfg").replace(detection__mode="exact")
    amplitudes = []
    for f0 in (8.5, 13.0, 17.0):
        _, fit = app.run_infield(base.replace(field__f0_ghz=f0), tmp_path / f"f{f0:g}")
        assert fit is not None
        assert fit.frequency == pytest.approx(2 * f0, rel=0.01)
        amplitudes.append(abs(fit.amplitude))
    assert amplitudes[0] > amplitudes[1] > amplitudes[2]


def test_scan_recovers_droplet_constant(tmp_path):
    cfg = load_config(CONFIGS / "scan.cfg")
    with ProcessPoolExecutor(max_workers=4) as pool:
        values, stderr, peak = app.run_scan(cfg, tmp_path, pool)
    assert values.size == 21
    assert stderr.min() > 0
    assert peak is not None
    expected = resonance_frequency(0, cfg.rotor_params())
    assert expected == pytest.approx(8.27, abs=0.01)
    assert abs(peak.center - expected) < 0.5 * peak.width
    center_error = float(np.sqrt(peak.covariance[0, 0]))
    b_yz = extract_byz(peak.center, 0)
    b_yz_error = 2.0 * center_error / (6.0 * C_GHZ)
    assert abs(b_yz - 0.092) < 2.0 * b_yz_error


def test_gas_scan_peaks_near_gas_resonance(tmp_path):
    cfg = load_config(CONFIGS / "scan.cfg").replace(
        molecule__preset="no-dimer-gas",
        scan__start_ghz=12,
        scan__stop_ghz=18,
        scan__points=13,
        detection__mode="exact",
    )
    with ProcessPoolExecutor(max_workers=4) as pool:
        _, _, peak = app.run_scan(cfg, tmp_path, pool)
    assert resonance_frequency(0, gas_preset()) == pytest.approx(15.3, abs=0.05)
    assert peak is not None
    assert abs(peak.center - 15.3) < 0.5 * peak.width


def test_decay_constant_recovered(tmp_path):
    cfg = load_config(CONFIGS / "decay.cfg").replace(detection__mode="exact")
    resonant, reference, fit = app.run_decay(cfg, tmp_path)
    assert fit is not None
    assert fit.amplitude > 0
    assert fit.tau == pytest.approx(cfg["relax.tau_pop_ps"], rel=0.1)
    assert reference.values[-1] == pytest.approx(0.5, abs=0.005)
    assert app.plateau_summary(resonant, 1000.0)["value"] > 0.5
    assert (tmp_path / "decay_reference.csv").exists()


def test_decay_plateau_clears_isotropy(tmp_path):
    cfg = load_config(CONFIGS / "decay.cfg").replace(decay__reference="false")
    resonant, _, fit = app.run_decay(cfg, tmp_path)
    plateau = app.plateau_summary(resonant, cfg["decay.plateau_ps"])
    assert plateau["delay_ps"] == 1000.0
    assert plateau["excess_sigma"] >= 3.0
    assert fit is not None
    assert fit.tau == pytest.approx(cfg["relax.tau_pop_ps"], rel=0.1)
