"""Physical constants and unit conversions shared by every module.

Energies are carried in cm^-1, times in ps and frequencies in GHz. Keep only
primitive constants and pure functions here so any module can import it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    """Conversion constants used throughout the package.

    Energies expressed in cm^-1 satisfy E/h = c * E numerically, so no
    separate Planck constant is carried.
    """

    c_GHz_per_wavenumber: float = 29.9792458
    kB_wavenumber_per_K: float = 0.6950348004
    hartree_wavenumber: float = 219474.6313632
    au_intensity_W_cm2: float = 3.50944506e16


CONSTANTS = PhysicalConstants()

C_GHZ = CONSTANTS.c_GHz_per_wavenumber
KB_WAVENUMBER = CONSTANTS.kB_wavenumber_per_K

# rad/ps accumulated per cm^-1 of energy
ANGULAR_PER_WAVENUMBER = 2.0 * np.pi * C_GHZ * 1e-3


def wavenumber_to_ghz(e):
    """Return ``e`` (cm^-1) as a frequency in GHz."""
    return e * C_GHZ


def ghz_to_wavenumber(f):
    """Return ``f`` (GHz) as an energy in cm^-1."""
    return f / C_GHZ


def thermal_energy(temperature: float) -> float:
    """Return kB*T in cm^-1 for a temperature in kelvin."""
    if temperature < 0:
        raise ValueError(f"Invalid temperature: {temperature} K")
    return KB_WAVENUMBER * temperature


def phase_angle(energy, t_ps):
    """Return the dynamical phase 2*pi*(E*c)*t*1e-3 in radians."""
    return ANGULAR_PER_WAVENUMBER * np.asarray(energy) * t_ps


def hartree_to_wavenumber(e):
    return e * CONSTANTS.hartree_wavenumber


__all__ = [
    "ANGULAR_PER_WAVENUMBER",
    "CONSTANTS",
    "C_GHZ",
    "KB_WAVENUMBER",
    "PhysicalConstants",
    "ghz_to_wavenumber",
    "hartree_to_wavenumber",
    "phase_angle",
    "thermal_energy",
    "wavenumber_to_ghz",
]
