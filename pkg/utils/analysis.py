"""Model fitting and rotational-constant extraction.

All fits run through :func:`least_squares`, a Levenberg-Marquardt wrapper
around ``scipy.optimize.least_squares`` with analytic Jacobians and a
covariance estimate scaled by the residual variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .observables import AlignmentTrace
from .physkit import C_GHZ

logger = logging.getLogger(__name__)

PEAK_MODELS = ("gaussian", "lorentzian")
DECAY_OFFSET = 0.5
NOISE_FLOOR_RATIO = 25.0
UNRESOLVED_RELATIVE_ERROR = 0.5
_FOUR_LN2 = 4.0 * np.log(2.0)
_TWO_PI_THZ = 2.0 * np.pi * 1e-3


class FitError(RuntimeError):
    """Base class for fitting failures."""


class NoOscillationError(FitError):
    """No spectral peak rises above the noise floor of the trace."""


class UnbracketedPeakError(FitError):
    """The scan maximum sits on a scan boundary."""


class ConvergenceError(FitError):
    """The optimizer stopped without meeting its tolerances."""

    def __init__(self, message: str, result: "LeastSquaresResult"):
        super().__init__(message)
        self.result = result


@dataclass
class LeastSquaresResult:
    params: np.ndarray
    covariance: np.ndarray
    rms: float
    singular: bool
    nfev: int
    status: int
    message: str

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def least_squares(
    model: Callable,
    x,
    y,
    p0,
    *,
    jac: Callable | None = None,
    sigma=None,
    max_nfev: int | None = None,
) -> LeastSquaresResult:
    """Minimize sum(((model(x, p) - y) / sigma)^2) with Levenberg-Marquardt.

    ``jac(x, p)`` returns d model / d p with shape (len(x), len(p)); without
    it the Jacobian is taken by finite differences. Raises
    :class:`ConvergenceError` carrying the best point found when the
    iteration budget runs out.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if y.size < p0.size:
        raise ValueError(f"Need at least {p0.size} points, got {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p0))):
        raise ValueError("Fit data and initial guess must be finite")
    scale = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(scale)):
        raise ValueError("Fit uncertainties must be finite and nonzero")

    def residuals(p):
        return (model(x, p) - y) * scale

    kwargs = {}
    if jac is not None:
        kwargs["jac"] = lambda p: jac(x, p) * scale[:, None]
    sol = scipy.optimize.least_squares(
        residuals,
        p0,
        method="lm",
        xtol=1e-10,
        gtol=1e-12,
        ftol=1e-15,
        max_nfev=max_nfev or 200 * (p0.size + 1),
        **kwargs,
    )
    jmat = sol.jac
    rank = np.linalg.matrix_rank(jmat)
    singular = rank < p0.size
    dof = max(y.size - p0.size, 1)
    variance = float(np.sum(sol.fun**2)) / dof
    covariance = np.linalg.pinv(jmat.T @ jmat) * variance
    covariance = 0.5 * (covariance + covariance.T)
    rms = float(np.sqrt(np.mean((model(x, sol.x) - y) ** 2)))
    result = LeastSquaresResult(
        sol.x, covariance, rms, bool(singular), int(sol.nfev), int(sol.status), sol.message
    )
    if singular:
        logger.warning("singular Jacobian at the optimum (rank %d of %d)", rank, p0.size)
    if sol.status <= 0:
        raise ConvergenceError(f"Fit did not converge: {sol.message}", result)
    return result


def _uniform(delays, values):
    """Resample onto a uniform grid of the same length when spacing varies."""
    steps = np.diff(delays)
    if np.allclose(steps, steps[0], rtol=1e-6):
        return delays, values
    grid = np.linspace(delays[0], delays[-1], delays.size)
    return grid, np.interp(grid, delays, values)


def dominant_frequency(delays, values) -> tuple[float, float]:
    """Return (frequency GHz, phase rad) of the strongest spectral component.

    The trace is detrended linearly before the transform; ties resolve to the
    lowest frequency.
    """
    t, v = _uniform(np.asarray(delays, float), np.asarray(values, float))
    if t.size < 8:
        raise NoOscillationError("Trace too short for a spectral estimate")
    v = v - np.polyval(np.polyfit(t - t[0], v, 1), t - t[0])
    spectrum = np.fft.rfft(v)
    power = np.abs(spectrum) ** 2
    freqs = np.fft.rfftfreq(t.size, d=t[1] - t[0]) * 1e3
    k = int(np.argmax(power[1:])) + 1
    floor = float(np.median(power[1:]))
    if power[k] <= NOISE_FLOOR_RATIO * floor or power[k] == 0:
        raise NoOscillationError("No spectral peak above the noise floor")
    if k < 2:
        raise NoOscillationError("Trace spans fewer than two oscillation periods")
    f = freqs[k]
    if k + 1 < power.size:
        a, b, c = np.log(power[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        if denom < 0:
            f += 0.5 * (a - c) / denom * (freqs[1] - freqs[0])
    return float(f), float(np.angle(spectrum[k]))


@dataclass
class SinusoidFit:
    """offset + amplitude exp(-(t - t0)/damping_time) cos(2 pi f (t - t0) + phase)."""

    offset: float
    amplitude: float
    frequency: float
    phase: float
    damping_time: float
    t0: float
    covariance: np.ndarray
    rms: float
    names: tuple = ("offset", "amplitude", "frequency", "phase", "damping_rate")

    @property
    def frequency_error(self) -> float:
        return float(np.sqrt(max(self.covariance[2, 2], 0.0)))

    def evaluate(self, t):
        tau = np.asarray(t, dtype=float) - self.t0
        rate = 0.0 if np.isinf(self.damping_time) else 1.0 / self.damping_time
        return _sinusoid(
            tau, [self.offset, self.amplitude, self.frequency, self.phase, rate]
        )


def _sinusoid(tau, p):
    offset, amp, freq, phase, rate = p
    return offset + amp * np.exp(-rate * tau) * np.cos(_TWO_PI_THZ * freq * tau + phase)


def _sinusoid_jac(tau, p):
    _, amp, freq, phase, rate = p
    env = np.exp(-rate * tau)
    arg = _TWO_PI_THZ * freq * tau + phase
    c, s = np.cos(arg), np.sin(arg)
    return np.column_stack(
        (
            np.ones_like(tau),
            env * c,
            -amp * env * s * _TWO_PI_THZ * tau,
            -amp * env * s,
            -tau * amp * env * c,
        )
    )


def fit_decaying_sinusoid(trace: AlignmentTrace) -> SinusoidFit:
    """Fit a single exponentially damped cosine to ``trace``."""
    t0 = float(trace.delays[0])
    tau = trace.delays - t0
    f0, phase0 = dominant_frequency(trace.delays, trace.values)
    span = float(tau[-1])
    p0 = [
        float(np.mean(trace.values)),
        0.5 * float(np.ptp(trace.values)),
        f0,
        phase0,
        0.1 / span,
    ]
    result = least_squares(_sinusoid, tau, trace.values, p0, jac=_sinusoid_jac)
    p = result.params.copy()
    cov = result.covariance
    if p[1] < 0:
        p[1], p[3] = -p[1], p[3] + np.pi
        sign = np.diag([1.0, -1.0, 1.0, 1.0, 1.0])
        cov = sign @ cov @ sign
    if p[2] < 0:
        p[2], p[3] = -p[2], -p[3]
        sign = np.diag([1.0, 1.0, -1.0, -1.0, 1.0])
        cov = sign @ cov @ sign
    p[3] = float(np.mod(p[3] + np.pi, 2 * np.pi) - np.pi)
    damping = np.inf if p[4] <= 0 else 1.0 / p[4]
    logger.info("sinusoid fit: f = %.4f +/- %.4f GHz", p[2], np.sqrt(max(cov[2, 2], 0)))
    return SinusoidFit(p[0], p[1], p[2], p[3], damping, t0, cov, result.rms)


@dataclass
class DecayFit:
    """offset + amplitude exp(-t/tau) with the offset held fixed."""

    amplitude: float
    tau: float
    amplitude_error: float
    tau_error: float
    covariance: np.ndarray
    rms: float
    offset: float = DECAY_OFFSET
    resolved: bool = True
    notes: list = field(default_factory=list)

    def evaluate(self, t):
        return self.offset + self.amplitude * np.exp(-np.asarray(t, float) / self.tau)


def fit_exponential_decay(
    trace: AlignmentTrace,
    offset: float = DECAY_OFFSET,
    *,
    weighted: bool = True,
) -> DecayFit:
    """Fit ``offset + A exp(-t/tau)`` on absolute delays.

    Fitting runs in the rate 1/tau. The result is flagged unresolved when the
    Jacobian is singular, the rate is not positive or the relative error of
    tau exceeds one half.
    """
    t, y = trace.delays, trace.values
    span = float(t[-1] - t[0]) or 1.0
    excess = y - offset
    if np.all(excess > 0) or np.all(excess < 0):
        slope, intercept = np.polyfit(t, np.log(np.abs(excess)), 1)
        rate0 = -slope if slope < 0 else 1.0 / span
        amp0 = float(np.sign(excess[0]) * np.exp(intercept)) if slope < 0 else float(
            np.mean(excess)
        )
    else:
        rate0, amp0 = 1.0 / span, float(np.mean(excess))

    def model(x, p):
        return offset + p[0] * np.exp(-p[1] * x)

    def jac(x, p):
        e = np.exp(-p[1] * x)
        return np.column_stack((e, -x * p[0] * e))

    sigma = trace.stderr if weighted and np.all(trace.stderr > 0) else None
    result = least_squares(model, t, y, [amp0, rate0], jac=jac, sigma=sigma)
    amp, rate = result.params
    errs = result.errors
    notes = []
    if result.singular:
        notes.append("singular Jacobian")
    if rate > 0:
        tau = 1.0 / rate
        tau_error = errs[1] / rate**2
    else:
        tau, tau_error = np.inf, np.inf
        notes.append("non-positive decay rate")
    if np.isfinite(tau) and tau_error / tau > UNRESOLVED_RELATIVE_ERROR:
        notes.append("decay not resolved within the trace span")
    fit = DecayFit(
        float(amp),
        float(tau),
        float(errs[0]),
        float(tau_error),
        result.covariance,
        result.rms,
        offset,
        resolved=not notes,
        notes=notes,
    )
    if not fit.resolved:
        logger.warning("decay fit flagged: %s", "; ".join(notes))
    return fit


@dataclass
class PeakFit:
    center: float
    width: float
    height: float
    baseline: float
    model: str
    covariance: np.ndarray
    rms: float

    @property
    def center_error(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    def evaluate(self, f):
        return _peak(self.model)(np.asarray(f, float), [self.center, self.width, self.height, self.baseline])


def _peak(model: str):
    if model == "gaussian":
        return lambda f, p: p[3] + p[2] * np.exp(-_FOUR_LN2 * (f - p[0]) ** 2 / p[1] ** 2)
    return lambda f, p: p[3] + p[2] / (1.0 + 4.0 * (f - p[0]) ** 2 / p[1] ** 2)


def _peak_jac(model: str):
    def gaussian(f, p):
        x = f - p[0]
        g = np.exp(-_FOUR_LN2 * x**2 / p[1] ** 2)
        k = 2.0 * _FOUR_LN2 * p[2] * g
        return np.column_stack((k * x / p[1] ** 2, k * x**2 / p[1] ** 3, g, np.ones_like(f)))

    def lorentzian(f, p):
        x = f - p[0]
        shape = 1.0 / (1.0 + 4.0 * x**2 / p[1] ** 2)
        k = 8.0 * p[2] * shape**2
        return np.column_stack(
            (k * x / p[1] ** 2, k * x**2 / p[1] ** 3, shape, np.ones_like(f))
        )

    return gaussian if model == "gaussian" else lorentzian


def fit_resonance_peak(
    frequencies,
    values,
    *,
    model: str = "gaussian",
    window: float | None = None,
) -> PeakFit:
    """Fit a peak plus constant baseline around the scan maximum.

    ``window`` is the full frequency width (GHz) kept around the maximum;
    ``None`` keeps the whole scan. ``width`` is reported as a FWHM.
    """
    if model not in PEAK_MODELS:
        raise ValueError(f"Invalid peak model: {model}")
    f = np.asarray(frequencies, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(f)
    f, v = f[order], v[order]
    top = int(np.argmax(v))
    if top == 0 or top == f.size - 1:
        raise UnbracketedPeakError(
            f"Scan maximum at boundary frequency {f[top]:.4f} GHz"
        )
    if window is not None:
        keep = np.abs(f - f[top]) <= 0.5 * window
        f, v = f[keep], v[keep]
    if f.size < 5:
        raise FitError("Too few scan points around the peak")
    baseline0 = float(v.min())
    height0 = float(v.max()) - baseline0
    above = f[v >= baseline0 + 0.5 * height0]
    width0 = max(float(above.max() - above.min()), float(np.min(np.diff(f))))
    p0 = [float(f[np.argmax(v)]), width0, height0, baseline0]
    result = least_squares(_peak(model), f, v, p0, jac=_peak_jac(model))
    center, width, height, baseline = result.params
    return PeakFit(
        float(center), float(abs(width)), float(height), float(baseline), model,
        result.covariance, result.rms,
    )


def extract_byz(f_peak: float, j: int = 0, distortion: float = 0.0) -> float:
    """Return B_yz (cm^-1) from the J -> J+2 resonance frequency (GHz).

    With ``distortion > 0`` (D, cm^-1) the centrifugal distortion shift of both levels is
    included; the relation stays linear in B_yz.
    """
    if f_peak <= 0:
        raise ValueError("Resonance frequency must be > 0")
    if j < 0:
        raise ValueError(f"Invalid quantum number J={j}")
    gap = 2.0 * f_peak / C_GHZ
    if distortion:
        gap += distortion * (((j + 2) * (j + 3)) ** 2 - (j * (j + 1)) ** 2)
    return gap / (4 * j + 6)
