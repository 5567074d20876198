"""rotorsuite command line: simulate, fit and validate optical-centrifuge runs.

Subcommands: infield, scan, decay, fit, levels, validate. Exit status is 0
on success, 1 when a run or a validation check fails and 2 for usage or
configuration errors.
"""

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import repeat
from pathlib import Path

import numpy as np
import pandas as pd

from database import DatabaseLogHandler, finish_run, set_db_path, start_run
from utils.analysis import (
    FitError,
    NoOscillationError,
    extract_byz,
    fit_decaying_sinusoid,
    fit_exponential_decay,
    fit_resonance_peak,
)
from utils.config import ConfigError, ExperimentConfig, config_from_text, load_config
from utils.dynamics import (
    Propagator,
    RotorSystem,
    ensemble_run,
    first_order_populations,
    populations_by_j,
    thermal_ensemble,
)
from utils.fields import EnvelopeSpec, FieldWaveform, calibrated_delta_alpha
from utils.helpers import (
    format_duration,
    log_error,
    plot_frame,
    read_scan_csv,
    read_trace_csv,
    scan_frame,
    write_csv,
    write_trace,
)
from utils.observables import (
    cos2theta_2d_exact,
    cos2theta_2d_sampled,
    trace_from_trajectory,
)
from utils.physkit import C_GHZ
from utils.records import RunManifest, dump_record, write_record
from utils.rotor import (
    PRESETS,
    Basis,
    angle_operator,
    asymmetric_levels,
    level_table,
    resonance_frequency,
    sphere_grid,
    spherical_harmonics,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# Scenarios each simulation subcommand accepts.
COMMAND_SCENARIOS = {
    "infield": ("infield",),
    "scan": ("scan",),
    "decay": ("decay", "adiabatic-reference"),
}

DEFAULT_VALIDATE_CONFIG = """\
scenario = infield
molecule.preset = no-dimer-droplet
solver.scheme = magnus4
"""


def _errors(cov):
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def build_system(cfg: ExperimentConfig, j_max=None) -> RotorSystem:
    return RotorSystem.build(cfg.rotor_params(), j_max or cfg["solver.j_max"])


def simulate(cfg: ExperimentConfig, field, delays, system=None, relax=True):
    """Propagate the thermal ensemble through ``field`` and sample ``delays``."""
    if cfg["solver.frame"] == "rotating" and not field.constant_frequency:
        raise ConfigError("Invalid value for 'solver.frame': rotating frame requires zero drift")
    system = system or build_system(cfg)
    delays = np.asarray(delays, dtype=float)
    t0 = min(field.start, float(delays[0]))
    weights, states, discarded = thermal_ensemble(system, cfg["molecule.min_weight"], t0)
    logger.info(
        "ensemble of %d state(s), discarded weight %.2e, j_max %d",
        len(states),
        discarded,
        system.basis.j_max,
    )
    trajectory = ensemble_run(
        weights,
        states,
        field,
        delays,
        system,
        cfg.relaxation() if relax else None,
        dt=cfg["solver.dt_ps"],
        scheme=cfg["solver.scheme"],
        frame=cfg["solver.frame"],
    )
    return system, trajectory


def measure(cfg: ExperimentConfig, trajectory, system, executor=None, metadata=None, seed=None):
    """Detect the trajectory; ``seed`` (int or ``SeedSequence``) defaults to the config seed."""
    return trace_from_trajectory(
        trajectory,
        system.basis,
        mode=cfg["detection.mode"],
        n_ions=cfg["detection.n_ions"],
        seed=cfg.seed if seed is None else seed,
        min_radius=cfg["detection.min_radius"],
        executor=executor,
        metadata=metadata,
    )


def _short_field(cfg: ExperimentConfig) -> FieldWaveform:
    """Short pulse with the configured law and intensity, spanning validate.span_ps."""
    field = cfg.waveform()
    span = cfg["validate.span_ps"]
    envelope = EnvelopeSpec(
        shape="gaussian",
        peak_intensity=field.envelope.peak_intensity,
        fwhm=0.5 * span,
        truncation=1.0,
    )
    return replace(field, envelope=envelope)


def _resolved_frame(cfg: ExperimentConfig, field) -> str:
    frame = cfg["solver.frame"]
    if frame == "auto" or (frame == "rotating" and not field.constant_frequency):
        return "rotating" if field.constant_frequency else "lab"
    return frame


def _ground_alignment(system, field, dt, scheme, frame):
    prop = Propagator(system, field, dt=dt, scheme=scheme, frame=frame)
    psi0 = system.basis.basis_state(0, 0)
    psi = prop.run(psi0, field.start, [field.end])[0, :, 0]
    return psi, cos2theta_2d_exact(psi, system.basis)


def convergence_diagnostics(cfg: ExperimentConfig) -> dict:
    """dt-halving and J_max+4 deltas of the final alignment on a short pulse."""
    field = _short_field(cfg)
    dt, scheme, frame = cfg["solver.dt_ps"], cfg["solver.scheme"], _resolved_frame(cfg, field)
    system = build_system(cfg)
    _, base = _ground_alignment(system, field, dt, scheme, frame)
    _, halved = _ground_alignment(system, field, 0.5 * dt, scheme, frame)
    larger = build_system(cfg, cfg["solver.j_max"] + 4)
    _, wider = _ground_alignment(larger, field, dt, scheme, frame)
    return {
        "span_ps": cfg["validate.span_ps"],
        "dt_halving_delta": abs(halved - base),
        "jmax_delta": abs(wider - base),
    }


def _write_plot_data(out_dir, series):
    return write_csv(plot_frame(series), Path(out_dir) / "plot_data.csv")


def run_infield(cfg: ExperimentConfig, out_dir, executor=None, plot_data=False):
    """Trace <cos^2 theta_2D> during the pulse and fit a decaying sinusoid."""
    field = cfg.waveform()
    delays = cfg.delays()
    system, trajectory = simulate(cfg, field, delays)
    trace = measure(cfg, trajectory, system, executor, {"scenario": "infield"})
    out_dir = Path(out_dir)
    write_trace(trace, out_dir / "trace.csv")

    record = {"fit": {"model": "decaying_sinusoid"}, "expected": {"frequency_ghz": 2.0 * field.f0}}
    fit = None
    try:
        fit = fit_decaying_sinusoid(trace)
    except FitError as exc:
        logger.warning("infield fit: %s", exc)
        record["fit"]["status"] = "no oscillation" if isinstance(exc, NoOscillationError) else str(exc)
    else:
        err = _errors(fit.covariance)
        record["fit"].update(
            {
                "status": "ok",
                "offset": fit.offset,
                "offset_error": err[0],
                "amplitude": fit.amplitude,
                "amplitude_error": err[1],
                "frequency_ghz": fit.frequency,
                "frequency_error_ghz": err[2],
                "phase_rad": fit.phase,
                "damping_time_ps": fit.damping_time,
                "rms": fit.rms,
            }
        )
    write_record(out_dir / "fit.txt", record)

    populations = populations_by_j(trajectory.density(len(trajectory) - 1), system.basis)
    write_csv(
        pd.DataFrame({"J": np.arange(populations.size), "population": populations}),
        out_dir / "populations.csv",
    )
    phi = field.polarization_angle(trajectory.times)
    c, s = np.cos(phi), np.sin(phi)
    cos2_3d = (
        c * c * trajectory.expectation(system.xx)
        + s * s * trajectory.expectation(system.zz)
        + 2.0 * s * c * trajectory.expectation(system.xz)
    )
    write_csv(
        pd.DataFrame({"delay_ps": trajectory.times, "value": cos2_3d}), out_dir / "cos2_3d.csv"
    )
    if plot_data:
        series = {"trace": (trace.delays, trace.values, trace.stderr)}
        if fit is not None:
            series["fit"] = (trace.delays, fit.evaluate(trace.delays), np.zeros(len(trace)))
        _write_plot_data(out_dir, series)
    return trace, fit


def _scan_point(cfg, field, system, frequency, seed):
    delay = cfg["scan.delay_ps"]
    _, trajectory = simulate(cfg, field.with_frequency(frequency), [delay], system)
    rho = trajectory.density(0)
    if cfg["detection.mode"] == "exact":
        return cos2theta_2d_exact(rho, system.basis), 0.0
    return cos2theta_2d_sampled(
        rho,
        system.basis,
        cfg["detection.n_ions"],
        seed,
        min_radius=cfg["detection.min_radius"],
    )


def run_scan(cfg: ExperimentConfig, out_dir, executor=None, plot_data=False):
    """Alignment at a fixed delay versus centrifuge frequency, with peak fit."""
    field = cfg.waveform()
    system = build_system(cfg)
    freqs = cfg.scan_frequencies()
    seeds = np.random.SeedSequence(cfg.seed).spawn(freqs.size)
    args = (repeat(cfg), repeat(field), repeat(system), freqs.tolist(), seeds)
    # results come back in grid order
    mapper = executor.map if executor else map
    results = list(mapper(_scan_point, *args))
    values = np.array([r[0] for r in results])
    stderr = np.array([r[1] for r in results])
    out_dir = Path(out_dir)
    write_csv(scan_frame(freqs, values, stderr), out_dir / "scan.csv")

    params = system.params
    record = {
        "peak": {"model": cfg["scan.model"]},
        "expected": {
            "resonance_ghz": resonance_frequency(0, params),
            "b_yz_cm1": params.b_yz,
        },
    }
    peak = None
    try:
        peak = fit_resonance_peak(
            freqs, values, model=cfg["scan.model"], window=cfg["scan.window_ghz"]
        )
        b_yz = extract_byz(peak.center, 0)
    except (FitError, ValueError) as exc:
        peak = None
        logger.warning("scan fit: %s", exc)
        record["peak"]["status"] = str(exc)
    else:
        err = _errors(peak.covariance)
        record["peak"].update(
            {
                "status": "ok",
                "center_ghz": peak.center,
                "center_error_ghz": err[0],
                "width_ghz": peak.width,
                "width_error_ghz": err[1],
                "height": peak.height,
                "baseline": peak.baseline,
                "rms": peak.rms,
            }
        )
        record["extracted"] = {
            "b_yz_cm1": b_yz,
            "b_yz_error_cm1": 2.0 * err[0] / (6.0 * C_GHZ),
            "b_yz_distortion_cm1": extract_byz(peak.center, 0, distortion=params.d),
        }
    write_record(out_dir / "fit.txt", record)
    if plot_data:
        series = {"scan": (freqs, values, stderr)}
        if peak is not None:
            series["peak"] = (freqs, peak.evaluate(freqs), np.zeros(freqs.size))
        _write_plot_data(out_dir, series)
    return values, stderr, peak


def run_adiabatic_reference(
    cfg: ExperimentConfig, out_dir=None, executor=None, plot_data=False, seed=None
):
    """Linear-static pulse along X with the centrifuge envelope."""
    system, trajectory = simulate(cfg, cfg.reference_field(), cfg.delays())
    trace = measure(cfg, trajectory, system, executor, {"scenario": "adiabatic-reference"}, seed)
    if out_dir is not None and cfg.scenario == "adiabatic-reference":
        write_trace(trace, Path(out_dir) / "trace.csv")
        if plot_data:
            _write_plot_data(out_dir, {"reference": (trace.delays, trace.values, trace.stderr)})
    return trace


def plateau_summary(trace, delay: float) -> dict:
    """Trace value at the delay nearest ``delay`` and its excess over 0.5 in standard errors."""
    i = int(np.argmin(np.abs(trace.delays - delay)))
    value, err = float(trace.values[i]), float(trace.stderr[i])
    out = {"delay_ps": float(trace.delays[i]), "value": value, "stderr": err}
    if err > 0:
        out["excess_sigma"] = (value - 0.5) / err
    return out


def run_decay(cfg: ExperimentConfig, out_dir, executor=None, plot_data=False):
    """Resonant run with relaxation, the adiabatic reference and the decay fit."""
    out_dir = Path(out_dir)
    resonant_seed, reference_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    system, trajectory = simulate(cfg, cfg.waveform(), cfg.delays())
    resonant = measure(cfg, trajectory, system, executor, {"scenario": "decay"}, resonant_seed)
    write_trace(resonant, out_dir / "decay_resonant.csv")
    reference = None
    if cfg["decay.reference"]:
        reference = run_adiabatic_reference(cfg, None, executor, seed=reference_seed)
        write_trace(reference, out_dir / "decay_reference.csv")

    tail = resonant.window(start=cfg["decay.fit_start_ps"])
    record = {
        "decay": {"model": "offset + A exp(-t/tau)", "fit_start_ps": cfg["decay.fit_start_ps"]},
        "expected": {"tau_pop_ps": cfg["relax.tau_pop_ps"]},
    }
    fit = None
    try:
        fit = fit_exponential_decay(tail)
    except (FitError, ValueError) as exc:
        logger.warning("decay fit: %s", exc)
        record["decay"]["status"] = str(exc)
    else:
        record["decay"].update(
            {
                "status": "ok",
                "offset": fit.offset,
                "amplitude": fit.amplitude,
                "amplitude_error": fit.amplitude_error,
                "tau_ps": fit.tau,
                "tau_error_ps": fit.tau_error,
                "rms": fit.rms,
                "resolved": fit.resolved,
                "notes": "; ".join(fit.notes),
            }
        )
    record["plateau"] = plateau_summary(resonant, cfg["decay.plateau_ps"])
    if reference is not None:
        record["reference"] = {
            "final_value": float(reference.values[-1]),
            "final_stderr": float(reference.stderr[-1]),
        }
    write_record(out_dir / "fit.txt", record)
    if plot_data:
        series = {"resonant": (resonant.delays, resonant.values, resonant.stderr)}
        if fit is not None:
            series["fit"] = (tail.delays, fit.evaluate(tail.delays), np.zeros(len(tail)))
        if reference is not None:
            series["reference"] = (reference.delays, reference.values, reference.stderr)
        _write_plot_data(out_dir, series)
    return resonant, reference, fit


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


def _check_operator_oracle(cfg):
    """Gaunt-coefficient angle operators against direct quadrature."""
    basis = Basis(cfg["validate.j_max_oracle"])
    n = basis.j_max
    polar, azimuth, weights = sphere_grid(n + 4, 2 * n + 8)
    y = spherical_harmonics(basis, polar, azimuth)
    s = np.sin(polar)
    functions = {
        "xx": (s * np.cos(azimuth)) ** 2,
        "yy": (s * np.sin(azimuth)) ** 2,
        "zz": np.cos(polar) ** 2,
        "xz": s * np.cos(azimuth) * np.cos(polar),
    }
    worst = 0.0
    for kind, values in functions.items():
        quad = np.real(y.conj().T @ ((weights * values)[:, None] * y))
        worst = max(worst, float(np.max(np.abs(angle_operator(kind, basis) - quad))))
    total = sum(angle_operator(k, basis) for k in ("xx", "yy", "zz"))
    completeness = float(np.max(np.abs(total - np.eye(basis.size))))
    tol = cfg["validate.tol_oracle"]
    return [
        Check("operator_oracle", worst <= tol, worst, tol),
        Check("operator_completeness", completeness <= 1e-12, completeness, 1e-12),
    ]


def _check_perturbation(cfg):
    """Weak resonant pulse: J=0 -> 2 population against first-order theory."""
    params = cfg.rotor_params()
    intensity = cfg["field.peak_intensity_w_cm2"] or 1e12
    weak = replace(params, delta_alpha=calibrated_delta_alpha(0.01, intensity))
    system = RotorSystem.build(weak, 4)
    field = FieldWaveform(
        EnvelopeSpec(peak_intensity=intensity, fwhm=20.0),
        f0=resonance_frequency(0, weak),
    )
    prop = Propagator(system, field, dt=cfg["solver.dt_ps"], frame="lab")
    psi = prop.run(system.basis.basis_state(0, 0), field.start, [field.end])[0, :, 0]
    exact = populations_by_j(psi, system.basis)[2]
    approx = first_order_populations(system, field, field.start, field.end)
    oracle = float(approx[system.basis.j_values == 2].sum())
    rel = abs(exact - oracle) / oracle
    return [Check("perturbation_oracle", rel <= 0.05, rel, 0.05)]


def _check_sampler(cfg, psi, basis):
    exact = cos2theta_2d_exact(psi, basis)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg["validate.sampler_seeds"])
    estimates = [cos2theta_2d_sampled(psi, basis, 2000, s) for s in seeds]
    values = np.array([e[0] for e in estimates])
    errs = np.array([e[1] for e in estimates])
    within = float(np.mean(np.abs(values - exact) <= 3.0 * errs))
    bias = abs(values.mean() - exact)
    bias_tol = 4.0 * errs.mean() / np.sqrt(values.size)
    return [
        Check("sampler_coverage", within >= 0.9, within, 0.9),
        Check("sampler_bias", bias <= bias_tol, bias, bias_tol),
    ]


def validate(cfg: ExperimentConfig):
    """Run the oracle, convergence, frame and sampler checks; return the list of checks.

    Convergence runs in the frame and scheme the simulations use.
    """
    checks = _check_operator_oracle(cfg)
    field = _short_field(cfg)
    dt, scheme, frame = cfg["solver.dt_ps"], cfg["solver.scheme"], _resolved_frame(cfg, field)
    system = build_system(cfg)

    psi, base = _ground_alignment(system, field, dt, scheme, frame)
    drift = abs(np.linalg.norm(psi) - 1.0)
    checks.append(Check("norm", drift <= cfg["validate.tol_norm"], drift, cfg["validate.tol_norm"]))

    _, halved = _ground_alignment(system, field, 0.5 * dt, scheme, frame)
    delta = abs(halved - base)
    checks.append(Check("dt_halving", delta <= cfg["validate.tol_dt"], delta, cfg["validate.tol_dt"]))

    larger = build_system(cfg, cfg["solver.j_max"] + 4)
    _, wider = _ground_alignment(larger, field, dt, scheme, frame)
    delta = abs(wider - base)
    checks.append(
        Check("jmax_convergence", delta <= cfg["validate.tol_jmax"], delta, cfg["validate.tol_jmax"])
    )

    if field.constant_frequency:
        other = "lab" if frame == "rotating" else "rotating"
        _, switched = _ground_alignment(system, field, dt, scheme, other)
        delta = abs(switched - base)
        tol = cfg["validate.tol_frame"]
        checks.append(Check("frame_equivalence", delta <= tol, delta, tol))
    else:
        checks.append(Check("frame_equivalence", True, 0.0, cfg["validate.tol_frame"], "skipped: drift"))

    checks.extend(_check_perturbation(cfg))
    checks.extend(_check_sampler(cfg, psi, system.basis))
    for check in checks:
        log = logger.info if check.passed else logger.error
        log("check %s: %s (%.3g, tolerance %.3g)", check.name, "pass" if check.passed else "FAIL", check.value, check.tolerance)
    return checks


def _validation_record(checks):
    return {
        "check": {
            c.name: {
                "status": "pass" if c.passed else "fail",
                "value": c.value,
                "tolerance": c.tolerance,
                **({"detail": c.detail} if c.detail else {}),
            }
            for c in checks
        }
    }


def cmd_fit(args) -> int:
    if args.model == "sinusoid":
        trace = read_trace_csv(args.trace)
        fit = fit_decaying_sinusoid(trace)
        err = _errors(fit.covariance)
        record = {
            "fit": {
                "model": "decaying_sinusoid",
                "offset": fit.offset,
                "amplitude": fit.amplitude,
                "frequency_ghz": fit.frequency,
                "frequency_error_ghz": err[2],
                "phase_rad": fit.phase,
                "damping_time_ps": fit.damping_time,
                "rms": fit.rms,
            }
        }
    elif args.model == "decay":
        trace = read_trace_csv(args.trace)
        fit = fit_exponential_decay(trace.window(start=args.start), offset=args.offset)
        record = {
            "fit": {
                "model": "exponential_decay",
                "offset": fit.offset,
                "amplitude": fit.amplitude,
                "amplitude_error": fit.amplitude_error,
                "tau_ps": fit.tau,
                "tau_error_ps": fit.tau_error,
                "resolved": fit.resolved,
                "rms": fit.rms,
            }
        }
    else:
        freqs, values, _ = read_scan_csv(args.trace)
        peak = fit_resonance_peak(freqs, values, model=args.model, window=args.window)
        err = _errors(peak.covariance)
        record = {
            "fit": {
                "model": peak.model,
                "center_ghz": peak.center,
                "center_error_ghz": err[0],
                "width_ghz": peak.width,
                "height": peak.height,
                "baseline": peak.baseline,
                "rms": peak.rms,
                "b_yz_cm1": extract_byz(peak.center, args.j),
            }
        }
    sys.stdout.write(dump_record(record))
    if args.out:
        write_record(Path(args.out) / "fit.txt", record)
    return EXIT_OK


def cmd_levels(args) -> int:
    if args.config:
        params = load_config(args.config).rotor_params()
    else:
        params = PRESETS[args.preset]()
    table = level_table(params, args.j_max)
    asym = pd.DataFrame(
        [
            {"J": j, "level": i, "E_cm1": e}
            for j in range(args.j_max + 1)
            for i, e in enumerate(asymmetric_levels(j, params))
        ]
    )
    sys.stdout.write(table.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    if args.out:
        write_csv(table, Path(args.out) / "levels.csv")
        write_csv(asym, Path(args.out) / "asymmetric_levels.csv")
    return EXIT_OK


RUNNERS = {
    "infield": run_infield,
    "scan": run_scan,
    "decay": run_decay,
    "adiabatic-reference": run_adiabatic_reference,
}


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    allowed = COMMAND_SCENARIOS[args.command]
    if cfg.scenario not in allowed:
        raise ConfigError(
            f"Invalid value for 'scenario': {cfg.scenario} (command {args.command} expects {'|'.join(allowed)})"
        )
    out_dir = Path(args.out)
    workers = args.workers or cfg["workers"]
    started = time.perf_counter()
    manifest = RunManifest(args.command, cfg.items(), cfg.seed)
    runner = RUNNERS[cfg.scenario]
    if workers > 1:
        # scan points in processes, per-delay sampling in threads
        pool_type = ProcessPoolExecutor if cfg.scenario == "scan" else ThreadPoolExecutor
        with pool_type(max_workers=workers) as pool:
            runner(cfg, out_dir, pool, args.plot_data)
    else:
        runner(cfg, out_dir, None, args.plot_data)
    manifest.diagnostics = convergence_diagnostics(cfg)
    manifest.wall_time_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.txt")
    logger.info("%s finished in %s", args.command, format_duration(manifest.wall_time_s))
    return EXIT_OK


def cmd_validate(args, cfg: ExperimentConfig) -> int:
    out_dir = Path(args.out)
    started = time.perf_counter()
    checks = validate(cfg)
    write_record(out_dir / "validation.txt", _validation_record(checks))
    manifest = RunManifest("validate", cfg.items(), cfg.seed)
    manifest.diagnostics = {"checks_failed": sum(not c.passed for c in checks)}
    manifest.wall_time_s = time.perf_counter() - started
    manifest.write(out_dir / "manifest.txt")
    failed = [c.name for c in checks if not c.passed]
    if failed:
        sys.stderr.write(f"validation failed: {', '.join(failed)}\n")
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config or manifest file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--format", choices=["csv"], default="csv")
    common.add_argument("--plot-data", action="store_true", help="write plot_data.csv")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--workers", type=int, help="worker count (overrides config)")

    parser = argparse.ArgumentParser(prog="rotorsuite", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("infield", "scan", "decay"):
        sub.add_parser(name, parents=[common], help=f"run the {name} scenario")
    fit = sub.add_parser("fit", parents=[common], help="fit a trace or scan CSV")
    fit.add_argument("trace", help="CSV with delay_ps,value[,stderr]")
    fit.add_argument("--model", default="sinusoid", choices=["sinusoid", "decay", "gaussian", "lorentzian"])
    fit.add_argument("--offset", type=float, default=0.5, help="fixed decay asymptote")
    fit.add_argument("--start", type=float, default=None, help="first delay used by the decay fit")
    fit.add_argument("--window", type=float, default=None, help="peak fit window (GHz)")
    fit.add_argument("-j", type=int, default=0, help="initial J for B_yz extraction")
    levels = sub.add_parser("levels", parents=[common], help="print rotational levels")
    levels.add_argument("--preset", default="no-dimer-droplet", choices=sorted(PRESETS))
    levels.add_argument("--j-max", type=int, default=6)
    sub.add_parser("validate", parents=[common], help="run the validation checks")
    return parser


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.command == "validate":
        cfg = config_from_text(DEFAULT_VALIDATE_CONFIG, "<default>")
    else:
        raise ConfigError(f"{args.command} requires --config")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    if args.command == "fit":
        try:
            return cmd_fit(args)
        except (FitError, ValueError, OSError) as exc:
            sys.stderr.write(f"fit failed: {exc}\n")
            return EXIT_FAILED
    if args.command == "levels":
        try:
            return cmd_levels(args)
        except ConfigError as exc:
            sys.stderr.write(f"config error: {exc}\n")
            return EXIT_USAGE
    try:
        cfg = _load(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE

    args.out = args.out or str(Path("runs") / args.command)
    set_db_path(args.out)
    handler = DatabaseLogHandler()
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    run_id = start_run(args.command, args.out)
    status = "failed"
    try:
        if args.command == "validate":
            code = cmd_validate(args, cfg)
        else:
            code = cmd_simulate(args, cfg)
        status = "ok" if code == EXIT_OK else "failed"
        return code
    except ConfigError as exc:
        log_error(f"{args.command}: {exc}")
        sys.stderr.write(f"config error: {exc}\n")
        status = "usage"
        return EXIT_USAGE
    except Exception as exc:
        logger.exception("%s failed", args.command)
        log_error(f"{args.command} failed: {exc}")
        sys.stderr.write(f"{args.command} failed: {exc}\n")
        return EXIT_FAILED
    finally:
        finish_run(run_id, status)
        logging.getLogger().removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
