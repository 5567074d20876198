"""Experiment configuration: schema, parsing and construction of domain objects.

Config files hold one ``key = value`` per line with dotted section prefixes
(``field.f0_ghz = 8.5``). Lines starting with ``#`` are comments. A run
manifest is also accepted: its ``config.*`` entries are read back with the
prefix stripped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Tuple

import numpy as np

from .dynamics import RelaxationParams
from .fields import (
    ENVELOPE_SHAPES,
    FIELD_KINDS,
    EnvelopeSpec,
    FieldWaveform,
    drift_rate_for_span,
)
from .rotor import PRESETS, RotorParams

logger = logging.getLogger(__name__)

SCENARIOS = ("infield", "scan", "decay", "adiabatic-reference")
MANIFEST_PREFIX = "config."


class ConfigError(ValueError):
    """Unknown, missing or invalid configuration key."""


REQUIRED = object()


def _float(value: str) -> float:
    return float(value)


def _positive(value: str) -> float:
    out = float(value)
    if not out > 0:
        raise ValueError("must be > 0")
    return out


def _nonneg(value: str) -> float:
    out = float(value)
    if out < 0:
        raise ValueError("must be >= 0")
    return out


def _int(value: str) -> int:
    out = float(value)
    if not np.isfinite(out) or out != int(out):
        raise ValueError("must be an integer")
    return int(out)


def _count(value: str) -> int:
    out = _int(value)
    if out < 1:
        raise ValueError("must be >= 1")
    return out


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError("must be true or false")


def _float_list(value: str) -> tuple:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise ValueError("must list at least one number")
    return tuple(float(v) for v in items)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(value: str) -> str:
        if value not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return value

    return parse


# key -> (parser, default); REQUIRED marks keys without a default and None
# marks optional keys that stay unset.
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    "scenario": (_choice(*SCENARIOS), REQUIRED),
    "seed": (_int, 0),
    "workers": (_count, 1),
    "molecule.preset": (_choice(*PRESETS), None),
    "molecule.b_x": (_nonneg, None),
    "molecule.b_y": (_nonneg, None),
    "molecule.b_z": (_nonneg, None),
    "molecule.d": (_nonneg, None),
    "molecule.delta_alpha_au": (_nonneg, None),
    "molecule.temperature_k": (_nonneg, None),
    "molecule.min_weight": (_nonneg, 1e-4),
    "field.kind": (_choice(*FIELD_KINDS), "cfCFG"),
    "field.f0_ghz": (_float, 8.5),
    "field.drift_ghz_per_ps": (_float, None),
    "field.drift_span_ghz": (_float, None),
    "field.phase0_rad": (_float, 0.0),
    "field.peak_intensity_w_cm2": (_nonneg, 2e12),
    "field.shape": (_choice(*ENVELOPE_SHAPES), "gaussian"),
    "field.fwhm_ps": (_positive, 400.0),
    "field.center_ps": (_float, 0.0),
    "field.truncation_fwhm": (_positive, 2.5),
    "field.ramp_ps": (_positive, None),
    "relax.tau_coh_ps": (_nonneg, 100.0),
    "relax.tau_pop_ps": (_nonneg, 3200.0),
    "relax.during_pulse": (_bool, False),
    "solver.j_max": (_count, 16),
    "solver.dt_ps": (_positive, 0.1),
    "solver.scheme": (_choice("midpoint", "magnus4"), "midpoint"),
    "solver.frame": (_choice("auto", "lab", "rotating"), "auto"),
    "delays.start_ps": (_float, None),
    "delays.stop_ps": (_float, None),
    "delays.step_ps": (_positive, None),
    "delays.list_ps": (_float_list, None),
    "scan.start_ghz": (_positive, 4.0),
    "scan.stop_ghz": (_positive, 14.0),
    "scan.points": (_count, 21),
    "scan.delay_ps": (_float, 550.0),
    "scan.model": (_choice("gaussian", "lorentzian"), "gaussian"),
    "scan.window_ghz": (_positive, None),
    "detection.mode": (_choice("sampled", "exact"), "sampled"),
    "detection.n_ions": (_count, 2000),
    "detection.min_radius": (_nonneg, 0.0),
    "decay.fit_start_ps": (_float, 500.0),
    "decay.reference": (_bool, True),
    "decay.plateau_ps": (_float, 1000.0),
    "validate.span_ps": (_positive, 60.0),
    "validate.tol_norm": (_positive, 1e-9),
    "validate.tol_dt": (_positive, 1e-6),
    "validate.tol_jmax": (_positive, 1e-6),
    "validate.tol_frame": (_positive, 1e-4),
    "validate.tol_oracle": (_positive, 1e-8),
    "validate.j_max_oracle": (_count, 8),
    "validate.sampler_seeds": (_count, 20),
}

# Delay grids used when the config names none (ps).
DEFAULT_DELAYS: Mapping[str, Tuple[float, float, float]] = {
    "infield": (-200.0, 200.0, 2.0),
    "decay": (-500.0, 3300.0, 25.0),
    "adiabatic-reference": (-500.0, 3300.0, 25.0),
    "scan": (550.0, 550.0, 1.0),
}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Return raw ``key -> value`` strings from config or manifest text."""
    raw: Dict[str, str] = {}
    lines = text.splitlines()
    manifest = any(line.strip().startswith(MANIFEST_PREFIX) for line in lines)
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if manifest:
            if not key.startswith(MANIFEST_PREFIX):
                continue
            key = key[len(MANIFEST_PREFIX) :]
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def build_values(raw: Mapping[str, str]) -> Dict[str, Any]:
    """Validate raw strings against :data:`SCHEMA` and fill in defaults."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"Unknown config key '{unknown[0]}'")
    values: Dict[str, Any] = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw and raw[key] != "":
            try:
                values[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"Invalid value for '{key}': {raw[key]!r} ({exc})") from exc
        elif default is REQUIRED:
            raise ConfigError(f"Missing required config key '{key}'")
        else:
            values[key] = default
    explicit = [values[f"molecule.{k}"] is not None for k in ("b_x", "b_y", "b_z")]
    if values["molecule.preset"] is None and not all(explicit):
        raise ConfigError("Missing required config key 'molecule.preset'")
    if values["relax.tau_coh_ps"] > values["relax.tau_pop_ps"]:
        raise ConfigError(
            "Invalid value for 'relax.tau_coh_ps': must not exceed relax.tau_pop_ps "
            "(coherences may not outlive populations)"
        )
    if values["scan.stop_ghz"] <= values["scan.start_ghz"]:
        raise ConfigError("Invalid value for 'scan.stop_ghz': must exceed scan.start_ghz")
    if values["field.kind"] == "linear-static" and values["field.f0_ghz"]:
        logger.info("linear-static field: ignoring field.f0_ghz")
    return values


@dataclass
class ExperimentConfig:
    """Typed configuration of one run."""

    values: Dict[str, Any]
    raw: Dict[str, str] = field(default_factory=dict)
    source: str = "<config>"

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def scenario(self) -> str:
        return self.values["scenario"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def replace(self, **updates) -> "ExperimentConfig":
        """Return a copy with dotted keys given as ``section__key`` updated."""
        raw = dict(self.raw)
        for name, value in updates.items():
            raw[name.replace("__", ".")] = value if isinstance(value, str) else _format(value)
        return ExperimentConfig(build_values(raw), raw, self.source)

    def rotor_params(self) -> RotorParams:
        v = self.values
        overrides = {}
        for key, attr in (
            ("molecule.b_x", "b_x"),
            ("molecule.b_y", "b_y"),
            ("molecule.b_z", "b_z"),
            ("molecule.d", "d"),
            ("molecule.delta_alpha_au", "delta_alpha"),
            ("molecule.temperature_k", "temperature"),
        ):
            if v[key] is not None:
                overrides[attr] = v[key]
        try:
            if v["molecule.preset"] is not None:
                return PRESETS[v["molecule.preset"]](**overrides)
            return RotorParams(**overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid molecule section: {exc}") from exc

    def envelope(self) -> EnvelopeSpec:
        v = self.values
        try:
            return EnvelopeSpec(
                shape=v["field.shape"],
                peak_intensity=v["field.peak_intensity_w_cm2"],
                fwhm=v["field.fwhm_ps"],
                center=v["field.center_ps"],
                truncation=v["field.truncation_fwhm"],
                ramp=v["field.ramp_ps"],
            )
        except ValueError as exc:
            raise ConfigError(f"Invalid field section: {exc}") from exc

    def waveform(self) -> FieldWaveform:
        v = self.values
        envelope = self.envelope()
        kind = v["field.kind"]
        if kind == "linear-static":
            return FieldWaveform(envelope, phase0=v["field.phase0_rad"], kind=kind)
        drift = v["field.drift_ghz_per_ps"]
        if drift is None and v["field.drift_span_ghz"] is not None:
            drift = drift_rate_for_span(v["field.drift_span_ghz"], envelope)
        return FieldWaveform(
            envelope,
            f0=v["field.f0_ghz"],
            drift_rate=drift or 0.0,
            phase0=v["field.phase0_rad"],
            kind=kind,
        )

    def reference_field(self) -> FieldWaveform:
        """Linear-static pulse along X with the same envelope."""
        return FieldWaveform(self.envelope(), kind="linear-static")

    def relaxation(self) -> RelaxationParams:
        v = self.values
        return RelaxationParams(
            tau_coh=v["relax.tau_coh_ps"],
            tau_pop=v["relax.tau_pop_ps"],
            during_pulse=v["relax.during_pulse"],
        )

    def delays(self) -> np.ndarray:
        v = self.values
        if v["delays.list_ps"] is not None:
            grid = np.array(sorted(set(v["delays.list_ps"])), dtype=float)
        else:
            start, stop, step = DEFAULT_DELAYS[self.scenario]
            start = start if v["delays.start_ps"] is None else v["delays.start_ps"]
            stop = stop if v["delays.stop_ps"] is None else v["delays.stop_ps"]
            step = step if v["delays.step_ps"] is None else v["delays.step_ps"]
            if stop < start:
                raise ConfigError("Invalid value for 'delays.stop_ps': must be >= delays.start_ps")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            grid = start + step * np.arange(count)
        return grid

    def scan_frequencies(self) -> np.ndarray:
        v = self.values
        return np.linspace(v["scan.start_ghz"], v["scan.stop_ghz"], v["scan.points"])

    def items(self):
        """Explicitly set keys followed by effective values, sorted by key."""
        return sorted((k, _format(val)) for k, val in self.values.items() if val is not None)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_text(text: str, source: str = "<config>") -> ExperimentConfig:
    raw = parse_config_text(text, source)
    return ExperimentConfig(build_values(raw), raw, source)


def load_config(path) -> ExperimentConfig:
    """Read and validate a config (or manifest) file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    cfg = config_from_text(text, str(path))
    logger.info("loaded %s config from %s", cfg.scenario, path)
    return cfg
