"""
Physical parameters, unit conventions and dB conversions.

All quantities are SI: optical powers in W, currents in A, electronic powers
in W, frequencies in Hz. Every parameter block is a frozen dataclass that
checks its own invariants on construction.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as sc

from errors import ConfigError, DomainError

# Upper bound of the weak-modulation regime the closed-form layer is valid in
DELTA_M_MAX = 0.01


@dataclass(frozen=True)
class PhysConstants:
    q: float = sc.e
    hbar: float = sc.hbar
    c: float = sc.c


PHYS = PhysConstants()


def _check(condition, key, message):
    if not condition:
        raise ConfigError(message, key=key)


@dataclass(frozen=True)
class ProbeParams:
    """
    Optical probe.

    Args:
        power_avg: average optical power <P> in W
        wavelength: carrier wavelength in m
        squeezing_phi: amplitude noise variance relative to a coherent state
            (< 1 squeezed, 1 coherent, > 1 antisqueezed)
        quad_phase: classical field phase theta in rad
        squeeze_bandwidth: squeezing bandwidth Lambda in Hz
        peak_power: peak optical power in W, recorded only
    """
    power_avg: float
    wavelength: float
    squeezing_phi: float = 1.0
    quad_phase: float = 0.0
    squeeze_bandwidth: float = 1e9
    peak_power: float = None

    def __post_init__(self):
        _check(self.power_avg >= 0, "probe.power_mw", "must be >= 0")
        _check(self.wavelength > 0, "probe.wavelength_nm", "must be > 0")
        _check(self.squeezing_phi > 0 and math.isfinite(self.squeezing_phi),
               "probe.squeeze_db", "squeezing factor must be finite and > 0")
        _check(self.squeeze_bandwidth > 0, "probe.squeeze_bandwidth_hz", "must be > 0")

    @property
    def carrier_omega(self):
        """Carrier angular frequency 2*pi*c/lambda in rad/s"""
        return 2 * math.pi * PHYS.c / self.wavelength

    @property
    def squeeze_db(self):
        return db_from_phi(self.squeezing_phi)


@dataclass(frozen=True)
class ModulationParams:
    delta_m: float
    omega_mod: float
    psi0: float = field(init=False)
    psi_m: float = field(init=False)

    def __post_init__(self):
        _check(0 <= self.delta_m < DELTA_M_MAX, "mod.delta_m",
               f"must satisfy 0 <= delta_m < {DELTA_M_MAX} (weak modulation)")
        _check(self.omega_mod > 0, "mod.omega_hz", "must be > 0")
        object.__setattr__(self, "psi0", 1 - self.delta_m / 2)
        object.__setattr__(self, "psi_m", self.delta_m / 2)


@dataclass(frozen=True)
class DetectionParams:
    """
    Detection chain.

    var_h is the variance of the real part of the DC classical relative
    amplitude noise; var_n the variance of the real part of the electronic
    noise in the +-B/2 bin (s^-2). The imaginary part of the electronic
    noise carries the same variance.
    """
    eta: float = 1.0
    load_r: float = 50.0
    rbw: float = 1e4
    m_avg: float = 1.0
    var_h: float = 0.0
    var_n: float = 0.0

    def __post_init__(self):
        _check(0 <= self.eta <= 1, "det.eta", "must lie in [0, 1]")
        _check(self.load_r >= 0, "det.load_ohm", "must be >= 0")
        _check(self.rbw > 0, "det.rbw_hz", "must be > 0")
        _check(self.m_avg >= 1, "det.m_avg", "must be >= 1")
        _check(self.var_h >= 0, "det.var_h", "must be >= 0")
        _check(self.var_n >= 0, "det.var_n", "must be >= 0")


def check_squeeze_band(probe, mod):
    """The squeezing band must cover the sideband: Lambda/2 > Omega"""
    if probe.squeeze_bandwidth / 2 <= mod.omega_mod:
        raise ConfigError(
            f"squeezing bandwidth {probe.squeeze_bandwidth:g} Hz does not cover "
            f"the sideband at {mod.omega_mod:g} Hz (need Lambda/2 > Omega)",
            key="probe.squeeze_bandwidth_hz",
        )


def phi_from_db(db):
    """Noise-power ratio convention: Phi = 10^(dB/10)"""
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)[()]


def db_from_phi(phi):
    return (10.0 * np.log10(np.asarray(phi, dtype=float)))[()]


def mean_photocurrent(probe, det):
    """Mean photocurrent i0 = q*eta*<P>/(hbar*omega) in A"""
    return PHYS.q * det.eta * probe.power_avg / (PHYS.hbar * probe.carrier_omega)


def mean_photon_count(i0, B):
    """Photons detected in the integration time 1/B"""
    if B <= 0:
        raise DomainError(f"resolution bandwidth must be > 0, got {B}")
    return i0 / (PHYS.q * B)
