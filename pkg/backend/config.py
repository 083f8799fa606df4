"""
Configuration: environment settings (.env) and flat key=value parameter files.

Parameter files use one `key=value` per line with `#` comments, for example

    probe.power_mw=0.2
    probe.squeeze_db=-1.6
    det.rbw_hz=1e5
    sweep.phi_db=-1.6,-1.0,0,2.7

Units in key names are binding. Values are layered: built-in defaults,
then per-command defaults, then the file, then explicit overrides.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv

from errors import ConfigError
from freqsim import H_DISTRIBUTIONS
from params import DetectionParams, ModulationParams, ProbeParams, phi_from_db

load_dotenv()

THREADS = int(os.environ.get('QSENSE_THREADS', 4))
LOG_LEVEL = os.environ.get('QSENSE_LOG_LEVEL', 'INFO')
OUTPUT_DIR = os.environ.get('QSENSE_OUTPUT_DIR', '/tmp')

EXPERIMENT_KINDS = ("theory-fig1d", "sweep-phi", "sweep-rbw", "trace-fig2a", "simulate", "validate", "fit")


def _float_list(raw):
    if isinstance(raw, (list, tuple, np.ndarray)):
        return [float(v) for v in raw]
    return [float(v) for v in str(raw).split(",") if v.strip()]


def _optional_float(raw):
    if raw is None or str(raw).strip().lower() in ("", "none"):
        return None
    return float(raw)


def _bool(raw):
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _lower(raw):
    return str(raw).strip().lower()


def _int(raw):
    value = float(raw)
    if value != int(value):
        raise ValueError("expected an integer")
    return int(value)


KEY_TYPES = {
    "probe.power_mw": float,
    "probe.wavelength_nm": float,
    "probe.squeeze_db": float,
    "probe.quad_phase_rad": float,
    "probe.squeeze_bandwidth_hz": float,
    "probe.peak_power_w": _optional_float,
    "mod.delta_m": float,
    "mod.omega_hz": float,
    "det.eta": float,
    "det.load_ohm": float,
    "det.rbw_hz": float,
    "det.m_avg": float,
    "det.var_h": float,
    "det.var_n": float,
    "det.h_cutoff_hz": float,
    "experiment.seed": _int,
    "experiment.k_samples": _int,
    "experiment.reps": _int,
    "sweep.phi_db": _float_list,
    "sweep.rbw_hz": _float_list,
    "sweep.offset_hz": float,
    "trace.squeeze_db": float,
    "trace.antisqueeze_db": float,
    "trace.antisqueeze_power_mw": _optional_float,
    "trace.span_hz": float,
    "trace.sample_rate_hz": _optional_float,
    "experiment.delta_m_drift": _optional_float,
    "freqsim.h_distribution": _lower,
    "freqsim.measured_floors": _bool,
}

# Reference probe and detector; 25 W peak at 0.2 mW average is recorded, not used
DEFAULTS = {
    "probe.power_mw": 0.2,
    "probe.wavelength_nm": 740.0,
    "probe.squeeze_db": 0.0,
    "probe.quad_phase_rad": 0.0,
    "probe.squeeze_bandwidth_hz": 1e9,
    "probe.peak_power_w": 25.0,
    "mod.delta_m": 1e-4,
    "mod.omega_hz": 1e7,
    "det.eta": 1.0,
    "det.load_ohm": 50.0,
    "det.rbw_hz": 1e4,
    "det.m_avg": 1.0,
    "det.var_h": 1e-5,
    "det.var_n": 0.0,
    "det.h_cutoff_hz": 2e6,
    "experiment.k_samples": 50,
    "experiment.reps": 236,
    "sweep.phi_db": [0.0, -1.6, -2.6, -5.7, -15.0],
    "sweep.rbw_hz": list(np.logspace(0, 7, 57)),
    "sweep.offset_hz": 1e5,
    "trace.squeeze_db": -1.2,
    "trace.antisqueeze_db": 2.7,
    "trace.antisqueeze_power_mw": None,
    "trace.span_hz": 4e5,
    "trace.sample_rate_hz": None,
    "experiment.delta_m_drift": None,
    "freqsim.h_distribution": "gaussian",
    "freqsim.measured_floors": False,
}

COMMAND_DEFAULTS = {
    "theory-fig1d": {},
    "sweep-phi": {
        "det.rbw_hz": 1e5,
        "det.m_avg": 34.0,
        "det.var_h": 7e-6,
        # 8 evenly spaced dB values from the deepest squeezing to the antisqueezed end
        "sweep.phi_db": list(np.linspace(-1.6, 2.7, 8)),
    },
    "sweep-rbw": {
        "probe.squeeze_db": -1.3,
        "det.m_avg": 34.0,
        "det.var_h": 7e-6,
        "sweep.rbw_hz": [1e2, 3e2, 1e3, 3e3, 1e4, 3e4, 1e5, 3e5, 1e6],
    },
    "trace-fig2a": {
        "det.rbw_hz": 1e4,
        "det.m_avg": 34.0,
        "mod.omega_hz": 1e7,
    },
    "simulate": {
        "det.rbw_hz": 1e5,
        "det.m_avg": 34.0,
    },
    "validate": {
        "sweep.offset_hz": 5e4,
    },
    "fit": {},
}


def configure_logging(level=None):
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def parse_values(raw: Dict[str, object]) -> Dict[str, object]:
    """Convert raw strings to typed values, rejecting unknown keys"""
    parsed = {}
    for key, value in raw.items():
        if key not in KEY_TYPES:
            raise ConfigError("unknown configuration key", key=key)
        try:
            parsed[key] = KEY_TYPES[key](value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"cannot parse {value!r} ({e})", key=key)
    return parsed


def read_config_file(path) -> Dict[str, object]:
    """Read a flat key=value parameter file"""
    if not os.path.exists(path):
        raise ConfigError(f"configuration file not found: {path}")
    raw = dotenv_values(path)
    missing = [key for key, value in raw.items() if value is None]
    if missing:
        raise ConfigError("key without a value", key=missing[0])
    return parse_values(raw)


def merged_values(kind, file_values=None, overrides=None):
    if kind not in COMMAND_DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}", key="experiment.kind")
    values = dict(DEFAULTS)
    values.update(COMMAND_DEFAULTS[kind])
    values.update(file_values or {})
    values.update(parse_values(overrides or {}))
    return values


def params_from_values(values) -> Tuple[ProbeParams, ModulationParams, DetectionParams]:
    probe = ProbeParams(
        power_avg=values["probe.power_mw"] * 1e-3,
        wavelength=values["probe.wavelength_nm"] * 1e-9,
        squeezing_phi=float(phi_from_db(values["probe.squeeze_db"])),
        quad_phase=values["probe.quad_phase_rad"],
        squeeze_bandwidth=values["probe.squeeze_bandwidth_hz"],
        peak_power=values["probe.peak_power_w"],
    )
    mod = ModulationParams(delta_m=values["mod.delta_m"], omega_mod=values["mod.omega_hz"])
    det = DetectionParams(
        eta=values["det.eta"],
        load_r=values["det.load_ohm"],
        rbw=values["det.rbw_hz"],
        m_avg=values["det.m_avg"],
        var_h=values["det.var_h"],
        var_n=values["det.var_n"],
    )
    return probe, mod, det


@dataclass(frozen=True)
class TraceSettings:
    squeeze_db: float = -1.2
    antisqueeze_db: float = 2.7
    antisqueeze_power: Optional[float] = None
    span: float = 4e5
    sample_rate: Optional[float] = None
    h_cutoff: float = 2e6


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    probe: ProbeParams
    mod: ModulationParams
    det: DetectionParams
    seed: int
    k_samples: int = 50
    reps: int = 236
    phi_grid_db: List[float] = field(default_factory=list)
    rbw_grid: List[float] = field(default_factory=list)
    offset: float = 1e5
    trace: TraceSettings = field(default_factory=TraceSettings)
    delta_m_drift: Optional[Tuple[float, float]] = None
    h_distribution: str = "gaussian"
    measured_floors: bool = False
    threads: int = THREADS
    output: Optional[str] = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a seed is mandatory for reproducible runs", key="experiment.seed")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key="experiment.seed")
        if self.k_samples < 2:
            raise ConfigError("need at least 2 samples per variance", key="experiment.k_samples")
        if self.reps < 1:
            raise ConfigError("need at least one repetition", key="experiment.reps")
        if not self.phi_grid_db:
            raise ConfigError("grid is empty", key="sweep.phi_db")
        if not self.rbw_grid or min(self.rbw_grid) <= 0:
            raise ConfigError("grid must be non-empty and positive", key="sweep.rbw_hz")
        if self.offset <= 0:
            raise ConfigError("floor offset must be > 0", key="sweep.offset_hz")
        if self.h_distribution not in H_DISTRIBUTIONS:
            raise ConfigError(f"expected one of {H_DISTRIBUTIONS}", key="freqsim.h_distribution")
        if self.threads < 1:
            raise ConfigError("need at least one thread", key="threads")


def build_experiment_config(kind, file_values=None, overrides=None, seed=None,
                            reps=None, threads=None, output=None) -> ExperimentConfig:
    values = merged_values(kind, file_values, overrides)
    probe, mod, det = params_from_values(values)
    drift = values["experiment.delta_m_drift"]
    trace = TraceSettings(
        squeeze_db=values["trace.squeeze_db"],
        antisqueeze_db=values["trace.antisqueeze_db"],
        antisqueeze_power=None if values["trace.antisqueeze_power_mw"] is None
        else values["trace.antisqueeze_power_mw"] * 1e-3,
        span=values["trace.span_hz"],
        sample_rate=values["trace.sample_rate_hz"],
        h_cutoff=values["det.h_cutoff_hz"],
    )
    return ExperimentConfig(
        kind=kind,
        probe=probe,
        mod=mod,
        det=det,
        seed=seed if seed is not None else values.get("experiment.seed"),
        k_samples=values["experiment.k_samples"],
        reps=reps if reps is not None else values["experiment.reps"],
        phi_grid_db=list(values["sweep.phi_db"]),
        rbw_grid=list(values["sweep.rbw_hz"]),
        offset=values["sweep.offset_hz"],
        trace=trace,
        # drift is given as the lower end relative to delta_m, e.g. 0.8 -> [0.8, 1.0]*delta_m
        delta_m_drift=None if drift is None else (drift * mod.delta_m, mod.delta_m),
        h_distribution=values["freqsim.h_distribution"],
        measured_floors=bool(values["freqsim.measured_floors"]),
        threads=threads if threads is not None else THREADS,
        output=output,
    )
