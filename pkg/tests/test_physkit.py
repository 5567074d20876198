import numpy as np
import pytest

from utils.physkit import (
    ANGULAR_PER_WAVENUMBER,
    C_GHZ,
    ghz_to_wavenumber,
    hartree_to_wavenumber,
    phase_angle,
    thermal_energy,
    wavenumber_to_ghz,
)


def test_wavenumber_ghz_conversion():
    assert wavenumber_to_ghz(1.0) == pytest.approx(29.9792458)
    assert ghz_to_wavenumber(wavenumber_to_ghz(0.092)) == pytest.approx(0.092, rel=1e-15)


def test_thermal_energy():
    assert thermal_energy(0.4) == pytest.approx(0.4 * 0.6950348004)
    assert thermal_energy(0.0) == 0.0
    with pytest.raises(ValueError):
        thermal_energy(-1.0)


def test_phase_angle_matches_angular_factor():
    assert ANGULAR_PER_WAVENUMBER == pytest.approx(2 * np.pi * C_GHZ * 1e-3)
    assert phase_angle(1.0, 1000.0) == pytest.approx(2 * np.pi * C_GHZ)
    np.testing.assert_allclose(phase_angle(np.array([0.0, 2.0]), 1.0), [0.0, 2 * ANGULAR_PER_WAVENUMBER])


def test_hartree():
    assert hartree_to_wavenumber(1.0) == pytest.approx(219474.6313632)
