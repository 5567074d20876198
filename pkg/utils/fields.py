"""Centrifuge and reference field synthesis.

A field is described by its intensity envelope and the polarization-angle law
phi(t) in the XZ plane. Only the cycle-averaged envelope and the polarization
direction enter the dynamics; the optical carrier is never represented.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

from .physkit import CONSTANTS, hartree_to_wavenumber

ENVELOPE_SHAPES = ("gaussian", "cos2-flat-top")
FIELD_KINDS = ("cfCFG", "accelerated", "linear-static")

_FOUR_LN2 = 4.0 * np.log(2.0)


@dataclass(frozen=True)
class EnvelopeSpec:
    """Intensity envelope of a pulse; ``t = center`` is the envelope peak.

    The Gaussian is truncated at ``truncation`` FWHM on either side of the
    center. The flat-top shape is flat between its cos^2 ramps and reaches
    half maximum at ``center +/- fwhm/2``.
    """

    shape: str = "gaussian"
    peak_intensity: float = 2e12
    fwhm: float = 400.0
    center: float = 0.0
    truncation: float = 2.5
    ramp: float | None = None

    def __post_init__(self):
        if self.shape not in ENVELOPE_SHAPES:
            raise ValueError(f"Invalid envelope shape: {self.shape}")
        if self.peak_intensity < 0:
            raise ValueError("Invalid peak intensity: must be >= 0")
        if self.fwhm <= 0:
            raise ValueError("Invalid envelope FWHM: must be > 0")
        if self.truncation <= 0:
            raise ValueError("Invalid envelope truncation: must be > 0")
        if self.ramp is not None and not 0 < self.ramp <= self.fwhm:
            raise ValueError("Invalid flat-top ramp: must lie in (0, fwhm]")

    @property
    def ramp_duration(self) -> float:
        return self.ramp if self.ramp is not None else self.fwhm / 4.0

    @property
    def half_span(self) -> float:
        """Half the duration over which the envelope is nonzero."""
        if self.shape == "gaussian":
            return self.truncation * self.fwhm
        return 0.5 * self.fwhm + 0.5 * self.ramp_duration

    @property
    def start(self) -> float:
        return self.center - self.half_span

    @property
    def end(self) -> float:
        return self.center + self.half_span

    def normalized(self, t):
        """Return the envelope scaled to 1 at its peak."""
        x = np.abs(np.asarray(t, dtype=float) - self.center)
        if self.shape == "gaussian":
            env = np.exp(-_FOUR_LN2 * (x / self.fwhm) ** 2)
            return np.where(x <= self.half_span, env, 0.0)
        ramp = self.ramp_duration
        flat = 0.5 * self.fwhm - 0.5 * ramp
        rising = np.cos(0.5 * np.pi * (x - flat) / ramp) ** 2
        env = np.where(x <= flat, 1.0, rising)
        return np.where(x < flat + ramp, env, 0.0)

    def intensity(self, t):
        """Return the intensity in W/cm^2 at ``t``."""
        return self.peak_intensity * self.normalized(t)

    def fluence(self) -> float:
        """Return the time-integrated intensity in W ps/cm^2."""
        t = np.linspace(self.start, self.end, 20001)
        return float(trapezoid(self.intensity(t), t))


@dataclass(frozen=True)
class FieldWaveform:
    """Polarization-angle law and envelope of a centrifuge or reference pulse.

    ``phi(t) = phase0 + 2*pi*1e-3*[f0*(t - center) + drift_rate/2*(t - center)**2]``
    with ``f0`` in GHz, ``drift_rate`` in GHz/ps and ``t`` in ps.
    """

    envelope: EnvelopeSpec
    f0: float = 0.0
    drift_rate: float = 0.0
    phase0: float = 0.0
    kind: str = "cfCFG"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"Invalid field kind: {self.kind}")
        if self.kind == "linear-static" and (self.f0 != 0 or self.drift_rate != 0):
            raise ValueError("linear-static field requires f0 = 0 and drift_rate = 0")

    @property
    def center(self) -> float:
        return self.envelope.center

    @property
    def start(self) -> float:
        return self.envelope.start

    @property
    def end(self) -> float:
        return self.envelope.end

    @property
    def constant_frequency(self) -> bool:
        return self.drift_rate == 0

    def polarization_angle(self, t):
        """Return phi(t) in radians."""
        if self.kind == "linear-static":
            return np.full_like(np.asarray(t, dtype=float), self.phase0)
        dt = np.asarray(t, dtype=float) - self.center
        cycles = self.f0 * dt + 0.5 * self.drift_rate * dt**2
        return self.phase0 + 2.0 * np.pi * 1e-3 * cycles

    def instantaneous_frequency(self, t):
        """Return the polarization rotation frequency f(t) in GHz."""
        dt = np.asarray(t, dtype=float) - self.center
        return self.f0 + self.drift_rate * dt

    def envelope_at(self, t):
        return self.envelope.normalized(t)

    def polarization(self, t) -> np.ndarray:
        """Return the unit polarization vector (cos phi, 0, sin phi)."""
        phi = float(self.polarization_angle(t))
        return np.array([np.cos(phi), 0.0, np.sin(phi)])

    def frequency_spread(self) -> float:
        """Return f(end) - f(start) over the full envelope in GHz."""
        return float(
            self.instantaneous_frequency(self.end)
            - self.instantaneous_frequency(self.start)
        )

    def with_frequency(self, f0: float) -> "FieldWaveform":
        return replace(self, f0=f0)

    def with_intensity(self, peak_intensity: float) -> "FieldWaveform":
        return replace(
            self, envelope=replace(self.envelope, peak_intensity=peak_intensity)
        )


def cfcfg_from_interferometer(chirp_rate: float, delay: float) -> float:
    """Return the cfCFG rotation frequency in GHz.

    Two copies of a pulse chirped at ``chirp_rate`` (GHz/ps) and delayed by
    ``delay`` (ps) differ in instantaneous frequency by ``chirp_rate*delay``;
    the polarization rotates at half that difference.
    """
    if delay < 0:
        raise ValueError("Invalid interferometer delay: must be >= 0")
    return 0.5 * chirp_rate * delay


def drift_rate_for_span(span_ghz: float, envelope: EnvelopeSpec) -> float:
    """Return the drift rate (GHz/ps) that sweeps ``span_ghz`` over the envelope."""
    return span_ghz / (2.0 * envelope.half_span)


def polarization_angle(field: FieldWaveform, t):
    """Compatibility wrapper returning phi(t) for ``field``."""
    return field.polarization_angle(t)


def intensity_to_field_squared(intensity: float) -> float:
    """Return E0^2 in atomic units for an intensity in W/cm^2."""
    if intensity < 0:
        raise ValueError("Invalid intensity: must be >= 0")
    return intensity / CONSTANTS.au_intensity_W_cm2


def coupling_depth(intensity: float, delta_alpha: float) -> float:
    """Return the pendular well depth U0 = delta_alpha*E0^2/4 in cm^-1."""
    if delta_alpha < 0:
        raise ValueError("Invalid polarizability anisotropy: must be >= 0")
    e0_sq = intensity_to_field_squared(intensity)
    return hartree_to_wavenumber(0.25 * delta_alpha * e0_sq)


def calibrated_delta_alpha(target_depth: float, intensity: float) -> float:
    """Return the anisotropy (a.u.) giving ``target_depth`` cm^-1 at ``intensity``."""
    unit_depth = coupling_depth(intensity, 1.0)
    if unit_depth <= 0:
        raise ValueError("Cannot calibrate polarizability at zero intensity")
    return target_depth / unit_depth
