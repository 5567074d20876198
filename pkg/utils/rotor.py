"""Rotational basis, level energies and angle-operator matrix elements.

The molecule's most polarizable axis is the unit vector ``u``; its polar angle
is measured from lab Z and its azimuth from lab X. Matrix elements are taken
between Condon-Shortley spherical harmonics |J M>.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import roots_legendre
from sympy.physics.wigner import wigner_3j

from .fields import calibrated_delta_alpha
from .physkit import thermal_energy, wavenumber_to_ghz

try:
    from scipy.special import sph_harm_y
except ImportError:  # scipy < 1.15
    from scipy.special import sph_harm as _sph_harm

    def sph_harm_y(n, m, theta, phi):
        return _sph_harm(m, n, phi, theta)


BASIS_MODES = ("linear-rotor", "symmetric-top")
ENVIRONMENTS = ("gas", "droplet")
ANGLE_KINDS = ("xx", "yy", "zz", "xz")

# Droplet constants are the gas-phase ones reduced by this factor.
DROPLET_RENORMALIZATION = 1.9
DROPLET_BYZ = 0.092
# Default pendular depth U0 = 50 * B_yz(droplet) at the nominal peak intensity.
CALIBRATION_RATIO = 50.0
NOMINAL_INTENSITY = 2e12


@dataclass(frozen=True)
class RotorParams:
    """Molecular constants (cm^-1), anisotropy (a.u.) and ensemble temperature (K)."""

    b_x: float
    b_y: float
    b_z: float
    d: float = 0.0
    delta_alpha: float = 0.0
    temperature: float = 0.0
    environment: str = "gas"

    def __post_init__(self):
        for name in ("b_x", "b_y", "b_z", "d", "delta_alpha", "temperature"):
            if getattr(self, name) < 0:
                raise ValueError(f"Invalid rotor parameter {name}: must be >= 0")
        if not self.b_x >= self.b_y >= self.b_z:
            raise ValueError("Invalid rotor constants: require b_x >= b_y >= b_z")
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"Invalid environment: {self.environment}")

    @property
    def b_yz(self) -> float:
        return 0.5 * (self.b_y + self.b_z)


def _default_delta_alpha() -> float:
    return calibrated_delta_alpha(CALIBRATION_RATIO * DROPLET_BYZ, NOMINAL_INTENSITY)


def gas_preset(**overrides) -> RotorParams:
    """Gas-phase (NO)2 constants."""
    values = dict(
        b_x=0.86,
        b_y=0.19,
        b_z=0.15,
        d=1e-6,
        delta_alpha=_default_delta_alpha(),
        temperature=0.4,
        environment="gas",
    )
    values.update(overrides)
    return RotorParams(**values)


def droplet_preset(**overrides) -> RotorParams:
    """(NO)2 inside a helium droplet: B_y = B_z = 0.092 cm^-1, B_x scaled by 1/1.9."""
    values = dict(
        b_x=0.86 / DROPLET_RENORMALIZATION,
        b_y=DROPLET_BYZ,
        b_z=DROPLET_BYZ,
        d=1e-6,
        delta_alpha=_default_delta_alpha(),
        temperature=0.4,
        environment="droplet",
    )
    values.update(overrides)
    return RotorParams(**values)


PRESETS = {
    "no-dimer-gas": gas_preset,
    "no-dimer-droplet": droplet_preset,
}


class BasisState(NamedTuple):
    J: int
    K: int
    M: int


@dataclass(frozen=True)
class Basis:
    """Ordered |J K M> states, lexicographic in (J, K, M)."""

    j_max: int
    mode: str = "linear-rotor"
    states: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.j_max < 0:
            raise ValueError("Invalid basis truncation: j_max must be >= 0")
        if self.mode not in BASIS_MODES:
            raise ValueError(f"Invalid basis mode: {self.mode}")
        states = []
        for j in range(self.j_max + 1):
            k_values = [0] if self.mode == "linear-rotor" else range(-j, j + 1)
            for k in k_values:
                for m in range(-j, j + 1):
                    states.append(BasisState(j, k, m))
        object.__setattr__(self, "states", tuple(states))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def j_values(self) -> np.ndarray:
        return np.array([s.J for s in self.states])

    @property
    def k_values(self) -> np.ndarray:
        return np.array([s.K for s in self.states])

    @property
    def m_values(self) -> np.ndarray:
        return np.array([s.M for s in self.states])

    def index(self, j: int, m: int, k: int = 0) -> int:
        """Return the position of |J K M> in the ordering."""
        if not (abs(k) <= j <= self.j_max and abs(m) <= j):
            raise ValueError(f"Invalid quantum numbers J={j}, K={k}, M={m}")
        if self.mode == "linear-rotor":
            if k != 0:
                raise ValueError("linear-rotor basis only holds K = 0")
            return j * j + j + m
        offset = sum((2 * jj + 1) ** 2 for jj in range(j))
        return offset + (k + j) * (2 * j + 1) + (m + j)

    def parity_blocks(self) -> list[np.ndarray]:
        """Index sets of even-J and odd-J states; no angle operator couples them."""
        j = self.j_values
        blocks = [np.flatnonzero(j % 2 == 0), np.flatnonzero(j % 2 == 1)]
        return [b for b in blocks if b.size]

    def basis_state(self, j: int, m: int, k: int = 0) -> np.ndarray:
        vec = np.zeros(self.size, dtype=complex)
        vec[self.index(j, m, k)] = 1.0
        return vec


def _check_quantum_numbers(j: int, k: int) -> None:
    if j < 0 or abs(k) > j:
        raise ValueError(f"Invalid quantum numbers J={j}, K={k}")


def prolate_energy(j: int, k: int, params: RotorParams) -> float:
    """Return E(J,K) = B_yz J(J+1) + (B_x - B_yz) K^2 - D [J(J+1)]^2 in cm^-1."""
    _check_quantum_numbers(j, k)
    jj = j * (j + 1)
    return params.b_yz * jj + (params.b_x - params.b_yz) * k * k - params.d * jj * jj


def asymmetric_levels(j: int, params: RotorParams) -> list[float]:
    """Return the ascending rigid asymmetric-top levels for total J.

    Built in the prolate symmetric-top basis |J K>, K along the x axis. The
    J-only distortion shift -D [J(J+1)]^2 is added so the symmetric-top limit
    coincides with :func:`prolate_energy`.
    """
    if j < 0:
        raise ValueError(f"Invalid quantum number J={j}")
    jj = j * (j + 1)
    ks = np.arange(-j, j + 1)
    a, b, c = params.b_x, params.b_y, params.b_z
    h = np.diag(0.5 * (b + c) * (jj - ks**2) + a * ks**2 - params.d * jj * jj)
    for i, k in enumerate(ks[:-2]):
        coupling = 0.25 * (b - c) * np.sqrt(
            (jj - k * (k + 1)) * (jj - (k + 1) * (k + 2))
        )
        h[i, i + 2] = h[i + 2, i] = coupling
    return sorted(np.linalg.eigvalsh(h).tolist())


def resonance_frequency(j: int, params: RotorParams, k: int = 0) -> float:
    """Return f_CFG (GHz) driving the two-photon J -> J+2 transition at fixed K."""
    _check_quantum_numbers(j, k)
    gap = prolate_energy(j + 2, k, params) - prolate_energy(j, k, params)
    return 0.5 * wavenumber_to_ghz(gap)


def basis_energies(basis: Basis, params: RotorParams) -> np.ndarray:
    """Return the field-free energy of every basis state (the diagonal of H0)."""
    return np.array([prolate_energy(s.J, s.K, params) for s in basis.states])


@lru_cache(maxsize=None)
def _three_j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    return float(wigner_3j(j1, j2, j3, m1, m2, m3))


@lru_cache(maxsize=None)
def harmonic_element(jp: int, mp: int, l: int, q: int, j: int, m: int) -> float:
    """Return <J' M'| Y_lq |J M> (a Gaunt coefficient)."""
    if mp != m + q or abs(jp - j) > l or (jp + j + l) % 2:
        return 0.0
    norm = np.sqrt((2 * jp + 1) * (2 * l + 1) * (2 * j + 1) / (4.0 * np.pi))
    sign = -1.0 if mp % 2 else 1.0
    return sign * norm * _three_j(jp, l, j, 0, 0, 0) * _three_j(jp, l, j, -mp, q, m)


# u_a u_b expanded over Y_2q; the l = 0 part is added separately.
_C20 = (4.0 / 3.0) * np.sqrt(np.pi / 5.0)
_C22 = np.sqrt(8.0 * np.pi / 15.0)
_C21 = np.sqrt(2.0 * np.pi / 15.0)
_QUADRUPOLE = {
    "zz": (1.0 / 3.0, {0: _C20}),
    "xx": (1.0 / 3.0, {0: -0.5 * _C20, 2: 0.5 * _C22, -2: 0.5 * _C22}),
    "yy": (1.0 / 3.0, {0: -0.5 * _C20, 2: -0.5 * _C22, -2: -0.5 * _C22}),
    "xz": (0.0, {1: -_C21, -1: _C21}),
}


@lru_cache(maxsize=None)
def _angle_matrix(kind: str, j_max: int) -> np.ndarray:
    basis = Basis(j_max)
    scalar, coefficients = _QUADRUPOLE[kind]
    mat = np.zeros((basis.size, basis.size))
    for col, s in enumerate(basis.states):
        mat[col, col] += scalar
        for jp in (s.J - 2, s.J, s.J + 2):
            if jp < 0 or jp > j_max:
                continue
            for q, coef in coefficients.items():
                mp = s.M + q
                if abs(mp) > jp:
                    continue
                value = coef * harmonic_element(jp, mp, 2, q, s.J, s.M)
                if value:
                    mat[basis.index(jp, mp), col] += value
    mat.setflags(write=False)
    return mat


def angle_operator(kind: str, basis: Basis) -> np.ndarray:
    """Return the matrix of u_x^2, u_y^2, u_z^2 or u_x u_z over ``basis``.

    Nonzero elements obey Delta J in {0, +-2}; zz keeps M, xz changes it by
    +-1 and xx/yy by 0 or +-2. All matrices are real symmetric.
    """
    if kind not in ANGLE_KINDS:
        raise ValueError(f"Invalid angle operator kind: {kind}")
    if basis.mode != "linear-rotor":
        raise ValueError("angle operators require a linear-rotor basis")
    return _angle_matrix(kind, basis.j_max)


def angular_momentum_y(basis: Basis) -> np.ndarray:
    """Return J_Y, the angular momentum about the lab Y (propagation) axis."""
    if basis.mode != "linear-rotor":
        raise ValueError("J_Y requires a linear-rotor basis")
    mat = np.zeros((basis.size, basis.size), dtype=complex)
    for col, s in enumerate(basis.states):
        if s.M < s.J:
            raising = np.sqrt(s.J * (s.J + 1) - s.M * (s.M + 1))
            row = basis.index(s.J, s.M + 1)
            mat[row, col] += raising / 2j
            mat[col, row] -= raising / 2j
    return mat


def _angle_function(kind: str, polar, azimuth):
    sin_t = np.sin(polar)
    if kind == "xx":
        return (sin_t * np.cos(azimuth)) ** 2
    if kind == "yy":
        return (sin_t * np.sin(azimuth)) ** 2
    if kind == "zz":
        return np.cos(polar) ** 2
    if kind == "xz":
        return sin_t * np.cos(azimuth) * np.cos(polar)
    raise ValueError(f"Invalid angle operator kind: {kind}")


def sphere_grid(n_theta: int, n_phi: int):
    """Return Gauss-Legendre x uniform-azimuth nodes and weights on the sphere.

    Polar nodes are Gauss-Legendre roots in cos(theta), so no node sits on a
    pole. The weights sum to 4*pi.
    """
    x, wx = roots_legendre(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    polar = np.repeat(np.arccos(x), n_phi)
    azimuth = np.tile(phi, n_theta)
    weights = np.repeat(wx, n_phi) * (2.0 * np.pi / n_phi)
    return polar, azimuth, weights


def quadrature_oracle(
    kind: str,
    jp: int,
    mp: int,
    j: int,
    m: int,
    *,
    n_theta: int | None = None,
    n_phi: int | None = None,
) -> float:
    """Integrate conj(Y_J'M') f_kind Y_JM over the sphere numerically.

    Independent of the Gaunt-coefficient route used by :func:`angle_operator`.
    The default grid integrates the band-limited integrand exactly.
    """
    for jj, mm in ((jp, mp), (j, m)):
        if jj < 0 or abs(mm) > jj:
            raise ValueError(f"Invalid quantum numbers J={jj}, M={mm}")
    n_theta = n_theta or (jp + j + 4)
    n_phi = n_phi or (2 * (jp + j) + 8)
    polar, azimuth, weights = sphere_grid(n_theta, n_phi)
    integrand = (
        np.conj(sph_harm_y(jp, mp, polar, azimuth))
        * _angle_function(kind, polar, azimuth)
        * sph_harm_y(j, m, polar, azimuth)
    )
    return float(np.real(np.sum(weights * integrand)))


def spherical_harmonics(basis: Basis, polar, azimuth) -> np.ndarray:
    """Return Y_JM at the given points as a (points x basis) matrix."""
    if basis.mode != "linear-rotor":
        raise ValueError("spherical harmonics require a linear-rotor basis")
    polar = np.asarray(polar, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    j = basis.j_values[None, :]
    m = basis.m_values[None, :]
    return sph_harm_y(j, m, polar[:, None], azimuth[:, None])


def thermal_weights(basis: Basis, params: RotorParams) -> np.ndarray:
    """Return Boltzmann probabilities per basis state, normalized to 1.

    Every |J K M> counts once; at T = 0 the lowest level takes all weight.
    Nuclear-spin statistics are ignored.
    """
    energies = np.array([prolate_energy(s.J, s.K, params) for s in basis.states])
    shifted = energies - energies.min()
    kt = thermal_energy(params.temperature)
    if kt == 0:
        weights = np.isclose(shifted, 0.0, rtol=0.0, atol=1e-12).astype(float)
    else:
        weights = np.exp(-shifted / kt)
    return weights / weights.sum()


def level_table(params: RotorParams, j_max: int) -> pd.DataFrame:
    """Return prolate energies and Raman resonance frequencies per (J, K)."""
    rows = []
    for j in range(j_max + 1):
        for k in range(j + 1):
            rows.append(
                {
                    "J": j,
                    "K": k,
                    "E_cm1": prolate_energy(j, k, params),
                    "f_res_GHz": resonance_frequency(j, params, k),
                }
            )
    return pd.DataFrame(rows, columns=["J", "K", "E_cm1", "f_res_GHz"])
