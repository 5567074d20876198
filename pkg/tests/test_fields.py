import numpy as np
import pytest

from utils.fields import (
    EnvelopeSpec,
    FieldWaveform,
    calibrated_delta_alpha,
    cfcfg_from_interferometer,
    coupling_depth,
    drift_rate_for_span,
    intensity_to_field_squared,
    polarization_angle,
)


def test_interferometer_frequency():
    assert cfcfg_from_interferometer(0.085, 400.0) == pytest.approx(17.0)
    assert cfcfg_from_interferometer(0.3, 0.0) == 0.0
    with pytest.raises(ValueError):
        cfcfg_from_interferometer(0.1, -1.0)


def test_gaussian_envelope_shape():
    env = EnvelopeSpec(fwhm=400.0, center=10.0)
    assert env.normalized(10.0) == pytest.approx(1.0)
    assert env.normalized(210.0) == pytest.approx(0.5)
    assert env.normalized(-190.0) == pytest.approx(0.5)
    assert env.normalized(10.0 + 2.5 * 400.0 + 1.0) == 0.0
    assert env.start == pytest.approx(-990.0)
    assert env.end == pytest.approx(1010.0)


def test_flat_top_envelope_shape():
    env = EnvelopeSpec(shape="cos2-flat-top", fwhm=100.0, ramp=20.0)
    assert env.normalized(0.0) == 1.0
    assert env.normalized(35.0) == 1.0
    assert env.normalized(50.0) == pytest.approx(0.5)
    assert env.normalized(-50.0) == pytest.approx(0.5)
    assert env.normalized(61.0) == 0.0
    assert env.half_span == pytest.approx(60.0)


@pytest.mark.parametrize(
    "kwargs",
    [{"fwhm": 0.0}, {"peak_intensity": -1.0}, {"shape": "box"}, {"truncation": 0.0}],
)
def test_invalid_envelope(kwargs):
    with pytest.raises(ValueError):
        EnvelopeSpec(**kwargs)


def test_gaussian_fluence():
    env = EnvelopeSpec(peak_intensity=1e12, fwhm=400.0)
    expected = 1e12 * 400.0 * np.sqrt(np.pi / (4 * np.log(2)))
    assert env.fluence() == pytest.approx(expected, rel=1e-6)


def test_polarization_angle_law():
    field = FieldWaveform(EnvelopeSpec(center=50.0), f0=10.0, phase0=0.2)
    assert field.polarization_angle(150.0) == pytest.approx(0.2 + 2 * np.pi)
    assert polarization_angle(field, 50.0) == pytest.approx(0.2)
    vec = field.polarization(75.0)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert vec[1] == 0.0


def test_drift_and_spread():
    env = EnvelopeSpec(fwhm=400.0)
    drift = drift_rate_for_span(4.0, env)
    field = FieldWaveform(env, f0=8.5, drift_rate=drift, kind="accelerated")
    assert field.frequency_spread() == pytest.approx(4.0)
    assert field.instantaneous_frequency(100.0) == pytest.approx(8.5 + 100.0 * drift)
    assert not field.constant_frequency


def test_linear_static_field():
    field = FieldWaveform(EnvelopeSpec(), kind="linear-static")
    np.testing.assert_allclose(field.polarization(123.0), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        FieldWaveform(EnvelopeSpec(), f0=1.0, kind="linear-static")
    with pytest.raises(ValueError):
        FieldWaveform(EnvelopeSpec(), kind="helical")


def test_coupling_depth_calibration():
    assert intensity_to_field_squared(3.50944506e16) == pytest.approx(1.0)
    alpha = calibrated_delta_alpha(4.6, 2e12)
    assert coupling_depth(2e12, alpha) == pytest.approx(4.6)
    assert coupling_depth(1e12, alpha) == pytest.approx(2.3)
    assert coupling_depth(0.0, alpha) == 0.0
    with pytest.raises(ValueError):
        calibrated_delta_alpha(1.0, 0.0)


def test_with_helpers_keep_other_fields():
    field = FieldWaveform(EnvelopeSpec(fwhm=100.0), f0=8.5, phase0=0.3)
    other = field.with_frequency(12.0).with_intensity(1e11)
    assert other.f0 == 12.0
    assert other.phase0 == 0.3
    assert other.envelope.peak_intensity == 1e11
    assert other.envelope.fwhm == 100.0


def test_instantaneous_frequency_is_angle_derivative():
    env = EnvelopeSpec(fwhm=400.0, center=25.0)
    field = FieldWaveform(env, f0=8.5, drift_rate=drift_rate_for_span(4.0, env), kind="accelerated")
    t = np.linspace(-900.0, 900.0, 37)
    h = 1e-3
    numeric = (field.polarization_angle(t + h) - field.polarization_angle(t - h)) / (2 * h)
    np.testing.assert_allclose(
        numeric / (2 * np.pi * 1e-3), field.instantaneous_frequency(t), atol=1e-6
    )


def test_constant_frequency_field():
    field = FieldWaveform(EnvelopeSpec(), f0=8.5)
    assert field.constant_frequency
    assert field.frequency_spread() == 0.0
    assert np.all(field.envelope_at(np.linspace(-2000, 2000, 101)) >= 0.0)
