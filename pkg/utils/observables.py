"""Alignment observables: exact and ion-counting estimates of <cos^2 theta_2D>.

theta_2D is the angle of the fragment velocity projected on the detector
(XY) plane, measured from the X axis. With perfect axial recoil the fragment
flies along the molecular axis, so cos^2 theta_2D = u_x^2 / (u_x^2 + u_y^2),
which is cos^2 of the axis azimuth about Z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.special import roots_chebyu, roots_legendre

from .dynamics import DensityTrajectory, QuantumState
from .fields import FieldWaveform
from .rotor import Basis, angle_operator, sphere_grid, spherical_harmonics

logger = logging.getLogger(__name__)

DETECTION_MODES = ("sampled", "exact")
DEFAULT_IONS = 2000
ENVELOPE_MARGIN = 1.5
MAX_ATTEMPTS_PER_ION = 2000
_ORIGIN_RADIUS = 1e-9


class SamplingError(RuntimeError):
    """Raised when the rejection sampler exhausts its attempt budget."""


def _as_density(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.density()
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return arr
    raise ValueError("Expected a state vector or a square density matrix")


def grid_shape(basis: Basis) -> tuple[int, int]:
    """Return (polar, azimuth) node counts exact for the basis band limit."""
    return 2 * basis.j_max + 2, 4 * basis.j_max + 4


@lru_cache(maxsize=8)
def _grid(basis: Basis):
    polar, azimuth, weights = sphere_grid(*grid_shape(basis))
    harmonics = spherical_harmonics(basis, polar, azimuth)
    return polar, azimuth, weights, harmonics


@dataclass
class AxisDistribution:
    """Probability density of the molecular axis on the quadrature grid."""

    polar: np.ndarray
    azimuth: np.ndarray
    weights: np.ndarray
    density: np.ndarray

    @classmethod
    def from_state(cls, state, basis: Basis) -> "AxisDistribution":
        rho = _as_density(state)
        if rho.shape[0] != basis.size:
            raise ValueError("State does not match the basis dimension")
        polar, azimuth, weights, y = _grid(basis)
        values = np.real(np.sum((y @ rho) * y.conj(), axis=1))
        return cls(polar, azimuth, weights, values)

    @property
    def total(self) -> float:
        return float(np.sum(self.weights * self.density))

    def average(self, values) -> float:
        return float(np.sum(self.weights * self.density * values))

    @property
    def axes(self) -> np.ndarray:
        s = np.sin(self.polar)
        return np.column_stack(
            (s * np.cos(self.azimuth), s * np.sin(self.azimuth), np.cos(self.polar))
        )


@dataclass(frozen=True)
class ProjectedFragment:
    """Fragment velocity direction projected on the detector plane."""

    vx: float
    vy: float

    @classmethod
    def from_axis(cls, axis) -> "ProjectedFragment":
        return cls(float(axis[0]), float(axis[1]))

    @property
    def radius(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    @property
    def theta_2d(self) -> float:
        return float(np.arctan2(self.vy, self.vx))

    @property
    def cos2(self) -> float:
        if self.radius == 0:
            raise ValueError("cos^2 theta_2D is undefined at the detector origin")
        return self.vx**2 / (self.vx**2 + self.vy**2)


@dataclass
class AlignmentTrace:
    """<cos^2 theta_2D> against delay (ps)."""

    delays: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.delays.shape == self.values.shape == self.stderr.shape):
            raise ValueError("Trace columns must have equal length")
        if np.any(np.diff(self.delays) <= 0):
            raise ValueError("Trace delays must be strictly ascending")
        if np.any(self.stderr < 0):
            raise ValueError("Trace stderr must be >= 0")

    def __len__(self) -> int:
        return self.delays.size

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"delay_ps": self.delays, "value": self.values, "stderr": self.stderr}
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, metadata: dict | None = None):
        missing = {"delay_ps", "value"} - set(df.columns)
        if missing:
            raise ValueError(f"Trace is missing columns: {sorted(missing)}")
        df = df.sort_values("delay_ps")
        stderr = df["stderr"] if "stderr" in df.columns else np.zeros(len(df))
        return cls(
            df["delay_ps"].to_numpy(float),
            df["value"].to_numpy(float),
            np.asarray(stderr, dtype=float),
            dict(metadata or {}),
        )

    def window(self, start: float | None = None, stop: float | None = None):
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.delays >= start
        if stop is not None:
            mask &= self.delays <= stop
        return AlignmentTrace(
            self.delays[mask], self.values[mask], self.stderr[mask], dict(self.metadata)
        )


@lru_cache(maxsize=8)
def alignment_operator(basis: Basis) -> np.ndarray:
    """Return the matrix of cos^2 theta_2D in ``basis``; read-only."""
    _, azimuth, weights, y = _grid(basis)
    op = y.conj().T @ ((weights * np.cos(azimuth) ** 2)[:, None] * y)
    op = 0.5 * (op + op.conj().T)
    op.setflags(write=False)
    return op


def cos2theta_2d_exact(state, basis: Basis) -> float:
    """Return <cos^2 theta_2D> for a state vector or density matrix."""
    rho = _as_density(state)
    value = float(np.real(np.sum(rho * alignment_operator(basis).T)))
    return float(np.clip(value, 0.0, 1.0))


def cos2theta_2d_quadrature(state, basis: Basis) -> float:
    """Same observable integrated directly over the axis distribution."""
    dist = AxisDistribution.from_state(state, basis)
    return dist.average(np.cos(dist.azimuth) ** 2)


def _density_at(rho: np.ndarray, basis: Basis, axes: np.ndarray) -> np.ndarray:
    polar = np.arccos(np.clip(axes[:, 2], -1.0, 1.0))
    azimuth = np.arctan2(axes[:, 1], axes[:, 0])
    y = spherical_harmonics(basis, polar, azimuth)
    return np.real(np.sum((y @ rho) * y.conj(), axis=1))


@lru_cache(maxsize=8)
def _azimuth_gram(basis: Basis):
    """Polar overlaps of the basis functions and their azimuthal orders.

    Products with an even M difference are polynomials in cos(theta) and use
    Gauss-Legendre nodes; odd differences carry one factor of sin(theta) and
    use Gauss-Chebyshev nodes of the second kind. Both rules are exact.
    """
    n = basis.j_max + 2
    zeros = np.zeros(n)
    x, w = roots_legendre(n)
    polar = np.real(spherical_harmonics(basis, np.arccos(x), zeros))
    even = polar.T @ (w[:, None] * polar)
    x, w = roots_chebyu(n)
    polar = np.real(spherical_harmonics(basis, np.arccos(x), zeros))
    odd = polar.T @ ((w / np.sqrt(1.0 - x * x))[:, None] * polar)
    m = basis.m_values
    order = m[:, None] - m[None, :]
    gram = np.where(order % 2 == 0, even, odd)
    return gram, (order + 2 * basis.j_max).ravel()


def azimuth_coefficients(state, basis: Basis) -> np.ndarray:
    """Return c_k, k = 0..2*j_max, of the axis azimuth density sum_k c_k exp(i k phi).

    c_-k = conj(c_k), and 2*pi*c_0 is the trace of the state.
    """
    rho = _as_density(state)
    if rho.shape[0] != basis.size:
        raise ValueError("State does not match the basis dimension")
    gram, index = _azimuth_gram(basis)
    terms = (rho * gram).ravel()
    size = 4 * basis.j_max + 1
    coeffs = np.bincount(index, weights=terms.real, minlength=size) + 1j * np.bincount(
        index, weights=terms.imag, minlength=size
    )
    return coeffs[2 * basis.j_max :]


def azimuth_density(coeffs, phi) -> np.ndarray:
    """Evaluate the azimuth density from :func:`azimuth_coefficients` at ``phi``."""
    coeffs = np.asarray(coeffs)
    phi = np.asarray(phi, dtype=float)
    orders = np.arange(1, coeffs.size)
    waves = np.exp(1j * np.multiply.outer(phi, orders))
    return coeffs[0].real + 2.0 * np.real(waves @ coeffs[1:])


@dataclass
class FragmentSample:
    fragments: np.ndarray
    attempts: int
    bound_violations: int
    bound: float


@dataclass
class AzimuthSample:
    azimuths: np.ndarray
    attempts: int
    bound_violations: int
    bound: float


def sample_azimuths(
    state,
    basis: Basis,
    n_ions: int,
    rng: np.random.Generator,
    *,
    batch: int | None = None,
) -> AzimuthSample:
    """Draw the detector-plane angle of ``n_ions`` fragments without a radius gate.

    Rejection from uniform proposals against the exact azimuth marginal of the
    axis distribution; one axis per ion.
    """
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    coeffs = azimuth_coefficients(state, basis)
    grid = 2.0 * np.pi * np.arange(16 * coeffs.size) / (16 * coeffs.size)
    peak = float(azimuth_density(coeffs, grid).max())
    bound = ENVELOPE_MARGIN * max(peak, 1.0 / (2.0 * np.pi))
    batch = batch or max(4 * n_ions, 256)
    max_attempts = MAX_ATTEMPTS_PER_ION * n_ions
    accepted = []
    count = attempts = violations = 0
    while count < n_ions:
        if attempts >= max_attempts:
            raise SamplingError(
                f"Rejection sampler exhausted {max_attempts} attempts "
                f"({count}/{n_ions} fragments accepted)"
            )
        phi = 2.0 * np.pi * rng.random(batch)
        u = rng.random(batch)
        attempts += batch
        p = azimuth_density(coeffs, phi)
        violations += int(np.count_nonzero(p > bound))
        keep = phi[u * bound < p]
        accepted.append(keep)
        count += keep.size
    if violations:
        logger.warning(
            "rejection envelope exceeded by %d proposal(s); bound %.4g", violations, bound
        )
    return AzimuthSample(np.concatenate(accepted)[:n_ions], attempts, violations, bound)


def sample_fragments(
    state,
    basis: Basis,
    n_ions: int,
    rng: np.random.Generator,
    *,
    min_radius: float = 0.0,
    batch: int | None = None,
) -> FragmentSample:
    """Draw ``n_ions`` detected fragments by rejection from uniform sphere proposals.

    Returns the projected (vx, vy) of every accepted fragment. Proposals whose
    density exceeds the envelope bound are counted as violations.
    """
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    rho = _as_density(state)
    dist = AxisDistribution.from_state(rho, basis)
    bound = ENVELOPE_MARGIN * max(float(dist.density.max()), 1.0 / (4.0 * np.pi))
    gate = max(min_radius, _ORIGIN_RADIUS)
    batch = batch or max(4 * n_ions, 256)
    max_attempts = MAX_ATTEMPTS_PER_ION * n_ions
    accepted = []
    count = attempts = violations = 0
    while count < n_ions:
        if attempts >= max_attempts:
            raise SamplingError(
                f"Rejection sampler exhausted {max_attempts} attempts "
                f"({count}/{n_ions} fragments accepted)"
            )
        axes = rng.normal(size=(batch, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        u = rng.random(batch)
        attempts += batch
        p = _density_at(rho, basis, axes)
        violations += int(np.count_nonzero(p > bound))
        keep = u * bound < p
        xy = axes[keep, :2]
        xy = xy[np.hypot(xy[:, 0], xy[:, 1]) >= gate]
        accepted.append(xy)
        count += xy.shape[0]
    fragments = np.concatenate(accepted)[:n_ions]
    if violations:
        logger.warning(
            "rejection envelope exceeded by %d proposal(s); bound %.4g", violations, bound
        )
    return FragmentSample(fragments, attempts, violations, bound)


def cos2theta_2d_sampled(
    state,
    basis: Basis,
    n_ions: int = DEFAULT_IONS,
    seed=None,
    *,
    min_radius: float = 0.0,
) -> tuple[float, float]:
    """Return (mean, standard error) of cos^2 theta_2D over ``n_ions`` fragments.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``. Without a
    radius gate only the azimuth of each axis matters, so it is drawn from
    its marginal; a gate needs the full axis and uses :func:`sample_fragments`.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if min_radius > 0:
        sample = sample_fragments(state, basis, n_ions, rng, min_radius=min_radius)
        vx, vy = sample.fragments[:, 0], sample.fragments[:, 1]
        cos2 = vx**2 / (vx**2 + vy**2)
    else:
        cos2 = np.cos(sample_azimuths(state, basis, n_ions, rng).azimuths) ** 2
    stderr = float(cos2.std(ddof=1) / np.sqrt(n_ions)) if n_ions > 1 else 0.0
    return float(cos2.mean()), stderr


def cos2_3d_field(state, field_: FieldWaveform, t: float, basis: Basis) -> float:
    """Return <(eps(t).u)^2> along the instantaneous polarization."""
    rho = _as_density(state)
    phi = float(field_.polarization_angle(t))
    c, s = np.cos(phi), np.sin(phi)
    xx, zz, xz = (
        float(np.real(np.sum(rho * angle_operator(k, basis).T))) for k in ("xx", "zz", "xz")
    )
    return c * c * xx + s * s * zz + 2.0 * s * c * xz


def cos2_3d_quadrature(state, field_: FieldWaveform, t: float, basis: Basis) -> float:
    """Quadrature counterpart of :func:`cos2_3d_field`."""
    dist = AxisDistribution.from_state(state, basis)
    eps = field_.polarization(t)
    return dist.average((dist.axes @ eps) ** 2)


def trace_from_trajectory(
    trajectory: DensityTrajectory,
    basis: Basis,
    *,
    mode: str = "sampled",
    n_ions: int = DEFAULT_IONS,
    seed=None,
    min_radius: float = 0.0,
    executor=None,
    metadata: dict | None = None,
) -> AlignmentTrace:
    """Evaluate <cos^2 theta_2D> at every sample of ``trajectory``.

    Sampled mode spawns one child seed per delay from ``seed`` (an int or a
    ``SeedSequence``) so each point is reproducible on its own. With
    ``executor`` the points are evaluated concurrently and gathered by index.
    """
    if mode not in DETECTION_MODES:
        raise ValueError(f"Invalid detection mode: {mode}")
    meta = dict(metadata or {})
    meta.setdefault("detection", mode)
    if mode == "exact":
        values = np.clip(trajectory.expectation(alignment_operator(basis)), 0.0, 1.0)
        return AlignmentTrace(trajectory.times, values, np.zeros(len(trajectory)), meta)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(len(trajectory))

    def point(i):
        return cos2theta_2d_sampled(
            trajectory.density(i), basis, n_ions, children[i], min_radius=min_radius
        )

    indices = range(len(trajectory))
    results = list(executor.map(point, indices)) if executor else [point(i) for i in indices]
    values = np.array([r[0] for r in results])
    stderr = np.array([r[1] for r in results])
    meta["n_ions"] = n_ions
    return AlignmentTrace(trajectory.times, values, stderr, meta)
