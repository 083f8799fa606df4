"""
Closed-form theory: SNR, mean bin powers, the delta_m estimator, sideband
power variance, Fisher information and quantum advantage.

Functions taking (probe, mod, det) compute i0 from the parameters unless an
explicit `i0` is passed. Array-valued arguments broadcast where noted.
"""
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import pandas as pd

from errors import DegenerateFloorError, DomainError
from params import PHYS, mean_photocurrent, mean_photon_count

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class NoisePowerModel:
    """Mean electronic powers of the sideband, optical-floor and electronic-floor bins (W)"""
    p_omega_mean: float
    p_floor_mean: float
    p_elec_mean: float


@dataclass(frozen=True)
class SpectrumTriplet:
    """
    Measured (p_Omega, p_N, p_E) in W.

    Fields are floats for a single measurement or equal-length arrays for a
    batch of measurements.
    """
    p_omega: ArrayLike
    p_floor: ArrayLike
    p_elec: ArrayLike

    def __post_init__(self):
        for name in ("p_omega", "p_floor", "p_elec"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise DomainError(f"{name} must be >= 0")

    def __len__(self):
        return np.size(self.p_omega)

    @classmethod
    def from_model(cls, powers: NoisePowerModel):
        return cls(powers.p_omega_mean, powers.p_floor_mean, powers.p_elec_mean)

    def to_frame(self):
        return pd.DataFrame({
            "p_omega_w": np.atleast_1d(self.p_omega),
            "p_floor_w": np.atleast_1d(self.p_floor),
            "p_elec_w": np.atleast_1d(self.p_elec),
        })


@dataclass(frozen=True)
class FisherReport:
    fisher: float
    fisher_per_photon: float
    var_delta_m: float
    q_advantage: float


class DeltaEstimate(NamedTuple):
    delta_m: ArrayLike
    below_floor: ArrayLike
    degenerate: ArrayLike = False


def _i0(probe, det, i0):
    return mean_photocurrent(probe, det) if i0 is None else i0


def snr(delta_m, i0, phi, B):
    """Optical SNR of the sideband, delta_m^2 * i0 / (4 q Phi B)"""
    if np.any(np.asarray(B) <= 0):
        raise DomainError("resolution bandwidth must be > 0")
    if np.any(np.asarray(phi) <= 0):
        raise DomainError("squeezing factor must be > 0")
    return delta_m ** 2 * i0 / (4 * PHYS.q * phi * B)


def squeezed_vacuum_power(phi, B, squeeze_bandwidth, load_r):
    """
    Self-noise of the squeezed vacuum in one bin, 2 q^2 R B Lambda (Phi^2/8 + 1/(8 Phi^2) - 1/4).

    Zero for Phi = 1 and negligible next to the shot term for a bright carrier.
    """
    return 2 * PHYS.q ** 2 * load_r * B * squeeze_bandwidth * (
        phi ** 2 / 8 + 1 / (8 * phi ** 2) - 0.25)


def mean_powers(probe, mod, det, i0=None, include_squeezed_vacuum=False) -> NoisePowerModel:
    """
    Mean powers of the three bins.

    <p_E> = 2 q^2 R (2 var_n): the real and imaginary parts of the electronic
    bin each carry var_n.
    """
    i0 = _i0(probe, det, i0)
    q, R, B, phi = PHYS.q, det.load_r, det.rbw, probe.squeezing_phi
    p_elec = 2 * q ** 2 * R * (2 * det.var_n)
    p_floor = R * 2 * q * i0 * phi * B + p_elec
    if include_squeezed_vacuum:
        p_floor += squeezed_vacuum_power(phi, B, probe.squeeze_bandwidth, R)
    p_omega = R * i0 ** 2 * mod.delta_m ** 2 / 2 + p_floor
    return NoisePowerModel(p_omega_mean=p_omega, p_floor_mean=p_floor, p_elec_mean=p_elec)


def estimate_delta_m(spectrum: SpectrumTriplet, phi, B, i0, skip_degenerate=False) -> DeltaEstimate:
    """
    delta_m estimate sqrt(4 q Phi B SNR / i0) with SNR = (p_Omega - p_N)/(p_N - p_E).

    Estimates whose sideband sits at or below the floor are returned as 0 with
    `below_floor` set. Works elementwise on batched triplets.

    A trial with p_N <= p_E cannot be normalised. It raises DegenerateFloorError
    unless `skip_degenerate` is set, in which case its estimate is NaN and it
    is marked in `degenerate`.
    """
    p_omega = np.asarray(spectrum.p_omega, dtype=float)
    p_floor = np.asarray(spectrum.p_floor, dtype=float)
    p_elec = np.asarray(spectrum.p_elec, dtype=float)
    optical = p_floor - p_elec
    degenerate = optical <= 0
    if np.any(degenerate) and not skip_degenerate:
        raise DegenerateFloorError(
            "optical floor p_N must exceed electronic floor p_E to normalise the SNR")
    if i0 <= 0:
        raise DomainError("mean photocurrent must be > 0")
    excess = p_omega - p_floor
    below = (excess <= 0) & ~degenerate
    snr_hat = np.where(below | degenerate, 0.0, excess) / np.where(degenerate, 1.0, optical)
    delta = np.sqrt(4 * PHYS.q * phi * B * snr_hat / i0)
    delta = np.where(degenerate, np.nan, delta)
    return DeltaEstimate(delta_m=delta[()], below_floor=below[()], degenerate=degenerate[()])


def var_sideband_power(probe, mod, det, i0=None, include_electronic=True):
    """
    Leading-order Var(p_Omega) for M spectral averages:

        (R^2/M) [2 q dm^2 i0^3 Phi B + 4 dm^4 i0^4 var_h + 4 q^2 dm^2 i0^2 var_n]
    """
    i0 = _i0(probe, det, i0)
    q, dm = PHYS.q, mod.delta_m
    quantum = 2 * q * dm ** 2 * i0 ** 3 * probe.squeezing_phi * det.rbw
    classical = 4 * dm ** 4 * i0 ** 4 * det.var_h
    electronic = 4 * q ** 2 * dm ** 2 * i0 ** 2 * det.var_n if include_electronic else 0.0
    return det.load_r ** 2 / det.m_avg * (quantum + classical + electronic)


def fisher_curve(rbw, phi, delta_m, var_h, i0, m_avg=1.0, var_n=0.0):
    """Fisher information on delta_m, M [2 q Phi B / i0 + 4 dm^2 var_h + 4 q^2 var_n / i0^2]^-1; broadcasts"""
    rbw = np.asarray(rbw, dtype=float)
    phi = np.asarray(phi, dtype=float)
    inverse = (2 * PHYS.q * phi * rbw / i0
               + 4 * delta_m ** 2 * var_h
               + 4 * PHYS.q ** 2 * var_n / i0 ** 2)
    return (m_avg / inverse)[()]


def q_advantage_curve(rbw, phi, delta_m, var_h, i0):
    """Fisher ratio squeezed/coherent as a function of RBW; M cancels"""
    return (fisher_curve(rbw, phi, delta_m, var_h, i0)
            / fisher_curve(rbw, 1.0, delta_m, var_h, i0))


def fisher_info(probe, mod, det, i0=None, include_electronic=False) -> FisherReport:
    """
    Fisher information on delta_m.

    The electronic-noise term is dropped by default since it contributes
    negligibly; `include_electronic=True` keeps it to quantify the neglect.
    """
    i0 = _i0(probe, det, i0)
    var_n = det.var_n if include_electronic else 0.0
    fisher = float(fisher_curve(det.rbw, probe.squeezing_phi, mod.delta_m, det.var_h,
                                i0, det.m_avg, var_n))
    coherent = float(fisher_curve(det.rbw, 1.0, mod.delta_m, det.var_h, i0, det.m_avg, var_n))
    return FisherReport(
        fisher=fisher,
        fisher_per_photon=fisher / mean_photon_count(i0, det.rbw),
        var_delta_m=1 / fisher,
        q_advantage=fisher / coherent,
    )


def delta_method_variance(probe, mod, det, i0=None):
    """
    Var(delta_m estimate) by error propagation through p_Omega, electronic term dropped.

    (d<dm_hat>/d<p_Omega>)^2 Var(p_Omega) evaluated at the mean powers.
    """
    i0 = _i0(probe, det, i0)
    if mod.delta_m <= 0:
        raise DomainError("error propagation needs delta_m > 0")
    powers = mean_powers(probe, mod, det, i0=i0)
    optical = powers.p_floor_mean - powers.p_elec_mean
    derivative = 4 * PHYS.q * probe.squeezing_phi * det.rbw / i0 / (2 * mod.delta_m * optical)
    return derivative ** 2 * var_sideband_power(probe, mod, det, i0=i0, include_electronic=False)


def quantum_advantage_opt(phi):
    if np.any(np.asarray(phi) <= 0):
        raise DomainError("squeezing factor must be > 0")
    return 1 / phi


def crossover_rbw(delta_m, var_h, i0, phi):
    """RBW at which the quantum and classical Fisher terms are equal, 2 dm^2 var_h i0 / (q Phi)"""
    if var_h <= 0:
        return 0.0
    return 2 * delta_m ** 2 * var_h * i0 / (PHYS.q * phi)
