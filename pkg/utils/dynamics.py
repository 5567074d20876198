"""Rotor propagation through the centrifuge and field-free relaxation.

During the pulse the evolution is unitary and solved with a fixed-step
exponential integrator, either in the lab frame or in the frame co-rotating
with the polarization. After the pulse a two-timescale relaxation model acts
in the field-free eigenbasis |J, M_Y>, quantized along the centrifuge
rotation axis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .fields import FieldWaveform, coupling_depth
from .physkit import ANGULAR_PER_WAVENUMBER, ghz_to_wavenumber
from .rotor import (
    Basis,
    RotorParams,
    angle_operator,
    angular_momentum_y,
    basis_energies,
    thermal_weights,
)

logger = logging.getLogger(__name__)

SCHEMES = ("midpoint", "magnus4")
FRAMES = ("auto", "lab", "rotating")
NORM_TOLERANCE = 1e-9
# Largest polarization rotation (rad) allowed within one lab-frame step.
MAX_ROTATION_PER_STEP = 0.25

_SQRT3 = np.sqrt(3.0)
_GAUSS_NODES = (0.5 - _SQRT3 / 6.0, 0.5 + _SQRT3 / 6.0)
_CF4_WEIGHTS = ((3.0 - 2.0 * _SQRT3) / 12.0, (3.0 + 2.0 * _SQRT3) / 12.0)


class PropagationError(RuntimeError):
    """Raised when a propagation cannot meet its accuracy contract."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class QuantumState:
    """Complex amplitudes over a basis at time ``time`` (ps)."""

    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def density(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


def _decay_factor(elapsed, tau: float):
    elapsed = np.asarray(elapsed, dtype=float)
    if np.isinf(tau):
        return np.ones_like(elapsed)
    if tau == 0:
        return np.where(elapsed > 0, 0.0, 1.0)
    return np.exp(-elapsed / tau)


@dataclass(frozen=True)
class RelaxationParams:
    """Coherence and population decay times (ps); ``inf`` disables a channel.

    ``rho_eq`` defaults to the thermal density of the rotor system.
    """

    tau_coh: float = 100.0
    tau_pop: float = 3200.0
    during_pulse: bool = False
    rho_eq: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.tau_coh < 0 or self.tau_pop < 0:
            raise ValueError("Invalid relaxation times: must be >= 0")
        if self.tau_coh > self.tau_pop:
            raise ValueError("Invalid relaxation times: tau_coh must not exceed tau_pop")
        if self.rho_eq is not None and abs(np.trace(self.rho_eq) - 1.0) > 1e-10:
            raise ValueError("Invalid equilibrium density: trace must be 1")

    def coherence_factor(self, elapsed):
        return _decay_factor(elapsed, self.tau_coh)

    def population_factor(self, elapsed):
        return _decay_factor(elapsed, self.tau_pop)


NO_RELAXATION = RelaxationParams(tau_coh=np.inf, tau_pop=np.inf)


@dataclass
class RotorSystem:
    """Field-free Hamiltonian and angle operators of a truncated linear rotor."""

    params: RotorParams
    basis: Basis
    energies: np.ndarray
    xx: np.ndarray
    zz: np.ndarray
    xz: np.ndarray
    j_y: np.ndarray

    @classmethod
    def build(cls, params: RotorParams, j_max: int = 16) -> "RotorSystem":
        basis = Basis(j_max)
        return cls(
            params=params,
            basis=basis,
            energies=basis_energies(basis, params),
            xx=angle_operator("xx", basis),
            zz=angle_operator("zz", basis),
            xz=angle_operator("xz", basis),
            j_y=angular_momentum_y(basis),
        )

    @property
    def dim(self) -> int:
        return self.basis.size

    @property
    def ops(self) -> tuple:
        return self.xx, self.zz, self.xz

    def depth(self, field_: FieldWaveform) -> float:
        """Return U0 (cm^-1) at the field's peak intensity."""
        return coupling_depth(field_.envelope.peak_intensity, self.params.delta_alpha)

    def thermal_density(self) -> np.ndarray:
        return np.diag(thermal_weights(self.basis, self.params)).astype(complex)

    def rotation_axis_frame(self) -> np.ndarray:
        """Return the unitary whose columns are |J, M_Y> in the |J, M> basis.

        J_Y is diagonalized one J block at a time so every column is also an
        eigenvector of H0.
        """
        frame = np.zeros((self.dim, self.dim), dtype=complex)
        j_values = self.basis.j_values
        for j in range(self.basis.j_max + 1):
            idx = np.flatnonzero(j_values == j)
            _, vecs = np.linalg.eigh(self.j_y[np.ix_(idx, idx)])
            frame[np.ix_(idx, idx)] = vecs
        return frame

    def free_phases(self, duration: float) -> np.ndarray:
        return np.exp(-1j * ANGULAR_PER_WAVENUMBER * self.energies * duration)

    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.energies)


def interaction_matrix(
    field_: FieldWaveform, t: float, u0_peak: float, ops
) -> np.ndarray:
    """Return V(t) = -U0 env(t) (eps(t).u)^2 in cm^-1.

    ``ops`` are the (u_x^2, u_z^2, u_x u_z) matrices of one basis. The
    isotropic polarizability term is a global phase and is dropped.
    """
    xx, zz, xz = ops
    if not (xx.shape == zz.shape == xz.shape) or xx.shape[0] != xx.shape[1]:
        raise ValueError("Mismatched angle operator dimensions")
    env = float(field_.envelope_at(t))
    if env == 0.0:
        return np.zeros_like(xx, dtype=float)
    phi = float(field_.polarization_angle(t))
    c, s = np.cos(phi), np.sin(phi)
    return -u0_peak * env * (c * c * xx + s * s * zz + 2.0 * s * c * xz)


def _exp_apply(generator: np.ndarray, h: float, psi: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(generator)
    phases = np.exp(-1j * ANGULAR_PER_WAVENUMBER * vals * h)
    return vecs @ (phases[:, None] * (vecs.conj().T @ psi))


@dataclass
class _Block:
    """Restriction of the rotor system to one J-parity block."""

    idx: np.ndarray
    energies: np.ndarray
    xx: np.ndarray
    zz: np.ndarray
    xz: np.ndarray
    m_y: np.ndarray
    frame: np.ndarray

    def rotation(self, angle: float) -> np.ndarray:
        """Return exp(i*angle*J_Y) on this block."""
        return (self.frame * np.exp(1j * angle * self.m_y)) @ self.frame.conj().T


class Propagator:
    """Fixed-step unitary propagation of column states through one field.

    ``frame='rotating'`` evolves with the generator
    H0 + env(t) V(phi=0) + (f0/c) J_Y and maps back with exp(i phi(t) J_Y);
    it requires a drift-free field. ``frame='auto'`` picks it whenever it
    applies.
    """

    def __init__(
        self,
        system: RotorSystem,
        field_: FieldWaveform,
        *,
        dt: float = 0.1,
        scheme: str = "midpoint",
        frame: str = "lab",
    ):
        if dt <= 0:
            raise ValueError("Invalid time step: must be > 0")
        if scheme not in SCHEMES:
            raise ValueError(f"Invalid integration scheme: {scheme}")
        if frame not in FRAMES:
            raise ValueError(f"Invalid propagation frame: {frame}")
        if frame == "auto":
            frame = "rotating" if field_.constant_frequency else "lab"
        if frame == "rotating" and not field_.constant_frequency:
            raise ValueError("rotating frame requires drift_rate = 0")
        self.system = system
        self.field = field_
        self.dt = dt
        self.scheme = scheme
        self.frame = frame
        self.u0 = system.depth(field_)
        self.steps_taken = 0
        self._blocks = []
        for idx in system.basis.parity_blocks():
            sub = np.ix_(idx, idx)
            m_y, vecs = np.linalg.eigh(system.j_y[sub])
            self._blocks.append(
                _Block(
                    idx=idx,
                    energies=system.energies[idx],
                    xx=system.xx[sub],
                    zz=system.zz[sub],
                    xz=system.xz[sub],
                    m_y=m_y,
                    frame=vecs,
                )
            )
        self._check_step()

    def _check_step(self) -> None:
        if self.frame != "lab" or self.field.kind == "linear-static":
            return
        f_max = max(
            abs(float(self.field.instantaneous_frequency(self.field.start))),
            abs(float(self.field.instantaneous_frequency(self.field.end))),
        )
        rotation = 2.0 * np.pi * 1e-3 * f_max * self.dt
        if rotation > MAX_ROTATION_PER_STEP:
            raise PropagationError(
                "Step size too coarse for the polarization rotation",
                {
                    "dt_ps": self.dt,
                    "max_frequency_ghz": f_max,
                    "rotation_per_step_rad": rotation,
                    "limit_rad": MAX_ROTATION_PER_STEP,
                },
            )

    def _generator(self, block: _Block, t: float) -> np.ndarray:
        env = float(self.field.envelope_at(t))
        if self.frame == "rotating":
            omega = ghz_to_wavenumber(self.field.f0)
            gen = np.diag(block.energies).astype(complex)
            gen -= self.u0 * env * block.xx
            gen += omega * (block.frame * block.m_y) @ block.frame.conj().T
            return gen
        ops = (block.xx, block.zz, block.xz)
        return np.diag(block.energies) + interaction_matrix(self.field, t, self.u0, ops)

    def step(self, block: _Block, psi: np.ndarray, t: float, h: float) -> np.ndarray:
        """Advance ``psi`` from ``t`` to ``t + h`` (frame of this propagator)."""
        self.steps_taken += 1
        if self.scheme == "midpoint":
            return _exp_apply(self._generator(block, t + 0.5 * h), h, psi)
        h1 = self._generator(block, t + _GAUSS_NODES[0] * h)
        h2 = self._generator(block, t + _GAUSS_NODES[1] * h)
        a1, a2 = _CF4_WEIGHTS
        psi = _exp_apply(a2 * h1 + a1 * h2, h, psi)
        return _exp_apply(a1 * h1 + a2 * h2, h, psi)

    def _substeps(self, a: float, b: float):
        n = max(1, int(np.ceil((b - a) / self.dt - 1e-9)))
        h = (b - a) / n
        return [(a + i * h, h) for i in range(n)]

    def _free(self, block: _Block, psi: np.ndarray, duration: float) -> np.ndarray:
        if duration <= 0:
            return psi
        phases = np.exp(-1j * ANGULAR_PER_WAVENUMBER * block.energies * duration)
        return phases[:, None] * psi

    def _driven(self, block: _Block, psi: np.ndarray, a: float, b: float) -> np.ndarray:
        if self.frame == "rotating":
            psi = block.rotation(-float(self.field.polarization_angle(a))) @ psi
        for t, h in self._substeps(a, b):
            psi = self.step(block, psi, t, h)
        if self.frame == "rotating":
            psi = block.rotation(float(self.field.polarization_angle(b))) @ psi
        return psi

    def advance(self, block: _Block, psi: np.ndarray, t_from: float, t_to: float):
        """Advance lab-frame ``psi`` on ``block`` from ``t_from`` to ``t_to``."""
        if t_to <= t_from:
            return psi
        a = max(t_from, self.field.start)
        b = min(t_to, self.field.end)
        if a >= b:
            return self._free(block, psi, t_to - t_from)
        psi = self._free(block, psi, a - t_from)
        psi = self._driven(block, psi, a, b)
        return self._free(block, psi, t_to - b)

    @property
    def blocks(self) -> list:
        return self._blocks

    def run(self, psi0: np.ndarray, t0: float, t_grid) -> np.ndarray:
        """Propagate columns of ``psi0`` (dim x k) and sample them on ``t_grid``.

        Returns an array of shape (len(t_grid), dim, k) in the lab frame.
        """
        t_grid = np.asarray(t_grid, dtype=float)
        if t_grid.ndim != 1 or t_grid.size == 0:
            raise ValueError("Invalid time grid: must be a non-empty 1-D sequence")
        if np.any(np.diff(t_grid) < 0):
            raise ValueError("Invalid time grid: must be ascending")
        if t_grid[0] < t0:
            raise ValueError("Invalid time grid: starts before the initial state")
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.ndim == 1:
            psi0 = psi0[:, None]
        if psi0.shape[0] != self.system.dim:
            raise ValueError("Initial state does not match the basis dimension")
        out = np.zeros((t_grid.size, psi0.shape[0], psi0.shape[1]), dtype=complex)
        for block in self._blocks:
            psi = psi0[block.idx].copy()
            t = t0
            for i, target in enumerate(t_grid):
                psi = self.advance(block, psi, t, target)
                t = target
                out[i, block.idx] = psi
        drift = np.max(
            np.abs(np.linalg.norm(out[-1], axis=0) - np.linalg.norm(psi0, axis=0))
        )
        if drift > NORM_TOLERANCE:
            raise PropagationError(
                "Norm drift exceeds tolerance",
                {"norm_drift": float(drift), "dt_ps": self.dt, "scheme": self.scheme},
            )
        logger.debug(
            "propagated %d state(s) over %d sample(s) in the %s frame (%d steps)",
            psi0.shape[1],
            t_grid.size,
            self.frame,
            self.steps_taken,
        )
        return out


def propagate(
    initial: QuantumState,
    field_: FieldWaveform,
    t_grid,
    system: RotorSystem,
    *,
    dt: float = 0.1,
    scheme: str = "midpoint",
) -> list[QuantumState]:
    """Solve i dpsi/dt = [H0 + V(t)] psi in the lab frame; return states on ``t_grid``."""
    if abs(initial.norm - 1.0) > 1e-10:
        raise ValueError("Initial state must be normalized")
    prop = Propagator(system, field_, dt=dt, scheme=scheme, frame="lab")
    out = prop.run(initial.amplitudes, initial.time, t_grid)
    return [QuantumState(out[i, :, 0], float(t)) for i, t in enumerate(t_grid)]


def propagate_rotating_frame(
    initial: QuantumState,
    field_: FieldWaveform,
    t_grid,
    system: RotorSystem,
    *,
    dt: float = 0.1,
    scheme: str = "midpoint",
) -> list[QuantumState]:
    """Propagate in the frame co-rotating with the polarization; return lab-frame states."""
    if not field_.constant_frequency:
        raise ValueError("rotating frame requires drift_rate = 0")
    if abs(initial.norm - 1.0) > 1e-10:
        raise ValueError("Initial state must be normalized")
    prop = Propagator(system, field_, dt=dt, scheme=scheme, frame="rotating")
    out = prop.run(initial.amplitudes, initial.time, t_grid)
    return [QuantumState(out[i, :, 0], float(t)) for i, t in enumerate(t_grid)]


class DensityTrajectory:
    """Ensemble density of the rotor sampled on a time grid.

    Subclasses store it as weighted pure states, as explicit matrices or in
    closed form; all of them expose the same read interface.
    """

    times: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def density(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def expectation(self, op: np.ndarray) -> np.ndarray:
        return np.array([np.real(np.sum(self.density(i) * op.T)) for i in range(len(self))])

    def components(self, i: int):
        """Return (weights, vectors) with density(i) = sum_k w_k v_k v_k^dagger."""
        vals, vecs = np.linalg.eigh(self.density(i))
        keep = vals > 1e-14
        return vals[keep], vecs[:, keep]

    def diagnostics(self, i: int) -> dict:
        rho = self.density(i)
        return {
            "trace": float(np.real(np.trace(rho))),
            "hermiticity": float(np.max(np.abs(rho - rho.conj().T))),
            "min_eigenvalue": float(np.linalg.eigvalsh(rho).min()),
        }


class MixtureTrajectory(DensityTrajectory):
    """Weighted pure states; ``amplitudes`` has shape (times, dim, members)."""

    def __init__(self, times, weights, amplitudes):
        self.times = np.asarray(times, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.amplitudes = np.asarray(amplitudes, dtype=complex)

    def density(self, i: int) -> np.ndarray:
        a = self.amplitudes[i]
        return (a * self.weights) @ a.conj().T

    def expectation(self, op: np.ndarray) -> np.ndarray:
        values = np.empty(len(self))
        for i in range(len(self)):
            a = self.amplitudes[i]
            per_member = np.real(np.sum(a.conj() * (op @ a), axis=0))
            values[i] = float(np.dot(self.weights, per_member))
        return values

    def components(self, i: int):
        return self.weights, self.amplitudes[i]


class DensitySeries(DensityTrajectory):
    """Explicit density matrices, shape (times, dim, dim)."""

    def __init__(self, times, densities):
        self.times = np.asarray(times, dtype=float)
        self.densities = np.asarray(densities, dtype=complex)

    def density(self, i: int) -> np.ndarray:
        return self.densities[i]


class RelaxedTrajectory(DensityTrajectory):
    """Closed-form field-free relaxation evaluated on demand.

    In the |J, M_Y> basis coherences evolve as
    rho_nm(0) exp(-i w_nm t) exp(-t/tau_coh) and populations as
    rho_eq + (rho_nn(0) - rho_eq) exp(-t/tau_pop), with t measured from
    ``t_start``.
    """

    def __init__(self, times, t_start, rho0, rho_eq, system: RotorSystem, relax):
        self.times = np.asarray(times, dtype=float)
        self.t_start = float(t_start)
        self.relax = relax
        self._frame = system.rotation_axis_frame()
        fh = self._frame.conj().T
        self._rho0 = fh @ rho0 @ self._frame
        self._eq = np.real(np.diag(fh @ rho_eq @ self._frame))
        self._gaps = system.energies[:, None] - system.energies[None, :]

    def _density_axis_frame(self, i: int) -> np.ndarray:
        elapsed = self.times[i] - self.t_start
        phases = np.exp(-1j * ANGULAR_PER_WAVENUMBER * self._gaps * elapsed)
        rho = self._rho0 * phases * self.relax.coherence_factor(elapsed)
        populations = np.real(np.diag(self._rho0))
        decay = self.relax.population_factor(elapsed)
        np.fill_diagonal(rho, self._eq + (populations - self._eq) * decay)
        return rho

    def density(self, i: int) -> np.ndarray:
        return self._frame @ self._density_axis_frame(i) @ self._frame.conj().T

    def expectation(self, op: np.ndarray) -> np.ndarray:
        op_axis = self._frame.conj().T @ op @ self._frame
        return np.array(
            [
                np.real(np.sum(self._density_axis_frame(i) * op_axis.T))
                for i in range(len(self))
            ]
        )


class SegmentedTrajectory(DensityTrajectory):
    """Consecutive trajectories joined in time order."""

    def __init__(self, parts):
        self.parts = [p for p in parts if len(p)]
        self.times = np.concatenate([p.times for p in self.parts])
        self._lookup = [(k, i) for k, p in enumerate(self.parts) for i in range(len(p))]

    def density(self, i: int) -> np.ndarray:
        k, j = self._lookup[i]
        return self.parts[k].density(j)

    def components(self, i: int):
        k, j = self._lookup[i]
        return self.parts[k].components(j)

    def expectation(self, op: np.ndarray) -> np.ndarray:
        return np.concatenate([p.expectation(op) for p in self.parts])


def field_free_relax(
    rho_end: np.ndarray,
    t_grid,
    relax: RelaxationParams,
    system: RotorSystem,
    *,
    t_start: float | None = None,
) -> RelaxedTrajectory:
    """Return the relaxing field-free trajectory starting from ``rho_end``.

    ``t_start`` defaults to the first grid time (the end of the pulse).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if abs(np.trace(rho_end) - 1.0) > 1e-8:
        raise ValueError("Invalid density: trace must be 1")
    start = float(t_grid[0]) if t_start is None else float(t_start)
    rho_eq = relax.rho_eq if relax.rho_eq is not None else system.thermal_density()
    return RelaxedTrajectory(t_grid, start, rho_end, rho_eq, system, relax)


def _relax_step(rho_axis, eq, relax: RelaxationParams, h: float) -> np.ndarray:
    rho = rho_axis * relax.coherence_factor(h)
    populations = np.real(np.diag(rho_axis))
    np.fill_diagonal(rho, eq + (populations - eq) * relax.population_factor(h))
    return rho


def propagate_density(
    rho0: np.ndarray,
    t0: float,
    field_: FieldWaveform,
    t_grid,
    system: RotorSystem,
    relax: RelaxationParams,
    *,
    dt: float = 0.1,
    scheme: str = "midpoint",
) -> DensitySeries:
    """Propagate a density through the pulse with relaxation applied every step.

    Each lab-frame unitary step is followed by the relaxation map over the
    same interval (first-order splitting).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] < t0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("Invalid time grid: must be ascending and start after t0")
    prop = Propagator(system, field_, dt=dt, scheme=scheme, frame="lab")
    frame = system.rotation_axis_frame()
    fh = frame.conj().T
    rho_eq = relax.rho_eq if relax.rho_eq is not None else system.thermal_density()
    eq = np.real(np.diag(fh @ rho_eq @ frame))
    rho = np.asarray(rho0, dtype=complex).copy()
    blocks = prop.blocks

    def unitary_step(rho, t, h):
        new = np.zeros_like(rho)
        stepped = {}
        for b in blocks:
            identity = np.eye(b.idx.size, dtype=complex)
            if t is None:
                stepped[id(b)] = prop._free(b, identity, h)
            else:
                stepped[id(b)] = prop.step(b, identity, t, h)
        for b1 in blocks:
            for b2 in blocks:
                sub = rho[np.ix_(b1.idx, b2.idx)]
                u1, u2 = stepped[id(b1)], stepped[id(b2)]
                new[np.ix_(b1.idx, b2.idx)] = u1 @ sub @ u2.conj().T
        return new

    def relax_over(rho, h):
        return frame @ _relax_step(fh @ rho @ frame, eq, relax, h) @ fh

    out = []
    t = t0
    for target in t_grid:
        while t < target - 1e-12:
            inside = field_.start <= t < field_.end
            if inside:
                h = min(prop.dt, field_.end - t, target - t)
                rho = unitary_step(rho, t, h)
            else:
                nxt = field_.start if t < field_.start else np.inf
                h = min(target, nxt) - t
                rho = unitary_step(rho, None, h)
            rho = relax_over(rho, h)
            t += h
        out.append(rho.copy())
    return DensitySeries(t_grid, np.array(out))


def _canonical_order(weights, vectors) -> list[int]:
    def key(i):
        v = vectors[i]
        return (int(np.argmax(np.abs(v))), v.tobytes(), float(weights[i]))

    return sorted(range(len(vectors)), key=key)


def ensemble_run(
    weights,
    initial_states,
    field_: FieldWaveform,
    t_grid,
    system: RotorSystem,
    relax: RelaxationParams | None = None,
    *,
    dt: float = 0.1,
    scheme: str = "midpoint",
    frame: str = "auto",
) -> DensityTrajectory:
    """Propagate every ensemble member and mix them with ``weights``.

    Members are reordered canonically before propagation so the mixture does
    not depend on the order they were given in. With ``relax`` the samples
    after the pulse come from :func:`field_free_relax` applied to the mixed
    density at the end of the pulse.
    """
    weights = np.asarray(weights, dtype=float)
    states = [
        s if isinstance(s, QuantumState) else QuantumState(np.asarray(s)) for s in initial_states
    ]
    if weights.size != len(states):
        raise ValueError(
            f"Weight/state count mismatch: {weights.size} weights, {len(states)} states"
        )
    if not states:
        raise ValueError("Ensemble must contain at least one member")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("Invalid ensemble weights: must be >= 0 with positive sum")
    t0 = states[0].time
    if any(s.time != t0 for s in states):
        raise ValueError("Ensemble members must share their initial time")
    vectors = [s.amplitudes for s in states]
    order = _canonical_order(weights, vectors)
    weights = weights[order] / weights[order].sum()
    psi0 = np.stack([vectors[i] for i in order], axis=1)

    t_grid = np.asarray(t_grid, dtype=float)
    if relax is None:
        prop = Propagator(system, field_, dt=dt, scheme=scheme, frame=frame)
        return MixtureTrajectory(t_grid, weights, prop.run(psi0, t0, t_grid))

    t_end = max(field_.end, t0)
    inside = t_grid[t_grid <= t_end]
    after = t_grid[t_grid > t_end]
    parts = []
    if relax.during_pulse:
        rho0 = (psi0 * weights) @ psi0.conj().T
        grid = np.append(inside, t_end) if not inside.size or inside[-1] < t_end else inside
        series = propagate_density(
            rho0, t0, field_, grid, system, relax, dt=dt, scheme=scheme
        )
        rho_end = series.densities[-1]
        parts.append(DensitySeries(inside, series.densities[: inside.size]))
    else:
        prop = Propagator(system, field_, dt=dt, scheme=scheme, frame=frame)
        grid = np.append(inside, t_end) if not inside.size or inside[-1] < t_end else inside
        amplitudes = prop.run(psi0, t0, grid)
        rho_end = (amplitudes[-1] * weights) @ amplitudes[-1].conj().T
        parts.append(MixtureTrajectory(inside, weights, amplitudes[: inside.size]))
    if after.size:
        parts.append(field_free_relax(rho_end, after, relax, system, t_start=t_end))
    return SegmentedTrajectory(parts)


def thermal_ensemble(system: RotorSystem, min_weight: float = 1e-4, t0: float = 0.0):
    """Return (weights, states, discarded) for the Boltzmann ensemble.

    Basis states with weight below ``min_weight`` are dropped and the rest
    renormalized; ``discarded`` is the probability that was removed.
    """
    weights = thermal_weights(system.basis, system.params)
    keep = np.flatnonzero(weights >= min_weight)
    if keep.size == 0:
        keep = np.array([int(np.argmax(weights))])
    discarded = float(1.0 - weights[keep].sum())
    states = [QuantumState(np.eye(system.dim, dtype=complex)[i], t0) for i in keep]
    return weights[keep] / weights[keep].sum(), states, discarded


def populations_by_j(rho: np.ndarray, basis: Basis) -> np.ndarray:
    """Return the total population of every J level."""
    diag = np.real(np.diag(rho)) if rho.ndim == 2 else np.abs(rho) ** 2
    return np.bincount(basis.j_values, weights=diag, minlength=basis.j_max + 1)


def first_order_populations(
    system: RotorSystem,
    field_: FieldWaveform,
    t_from: float,
    t_to: float,
    *,
    initial_index: int = 0,
    samples: int = 20001,
) -> np.ndarray:
    """Return first-order perturbation-theory populations at ``t_to``.

    c_n = -i k int V_n0(t) exp(i k (E_n - E_0) t) dt with k the rad/ps per
    cm^-1 factor; used as an oracle for weak resonant driving.
    """
    t = np.linspace(t_from, t_to, samples)
    env = field_.envelope_at(t)
    phi = field_.polarization_angle(t)
    c, s = np.cos(phi), np.sin(phi)
    u0 = system.depth(field_)
    col = initial_index
    v = -u0 * env[:, None] * (
        (c * c)[:, None] * system.xx[:, col]
        + (s * s)[:, None] * system.zz[:, col]
        + (2.0 * s * c)[:, None] * system.xz[:, col]
    )
    gaps = system.energies - system.energies[col]
    integrand = v * np.exp(1j * ANGULAR_PER_WAVENUMBER * gaps[None, :] * t[:, None])
    amplitude = -1j * ANGULAR_PER_WAVENUMBER * cumulative_trapezoid(integrand, t, axis=0)[-1]
    populations = np.abs(amplitude) ** 2
    populations[col] = 0.0
    return populations
