"""
Frequency-domain Monte Carlo for single spectrum-analyser bins.

Each draw is the complex photocurrent in one RBW bin,

    i = S (1 + 2 H) + (X_re + i X_im) + q (N_re + i N_im),

with S = i0 dm / 2 the sideband amplitude, H the DC classical relative
amplitude noise transferred onto the sideband, X the amplitude-quadrature
shot noise and N the electronic noise. The bin power is p = 2 R |i|^2.
The first and second moments of p reproduce the closed-form layer.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
import pandas as pd

from analytic import SpectrumTriplet, estimate_delta_m, mean_powers
from inference import VarianceReport, variance_of
from params import PHYS, check_squeeze_band, mean_photocurrent

logger = logging.getLogger(__name__)

H_DISTRIBUTIONS = ("gaussian", "uniform")

REPORT_COLUMNS = ["rep", "phi", "rbw_hz", "m_avg", "k_samples", "var_delta_m", "var_se", "n_below_floor",
                  "n_degenerate"]


@dataclass(frozen=True)
class BinDraw:
    """One (or a batch of) bin realisations: complex current in A and power 2R|i|^2 in W"""
    i_complex: complex
    p_value: float


@dataclass(frozen=True)
class GenerativeModel:
    """
    Sampling recipe for one bin.

    shot_sigma_re is the amplitude-quadrature std and is used for both the
    real and imaginary parts of the bin current; shot_sigma_im is the
    (antisqueezed) phase-quadrature std, which a direct detector never sees.
    """
    signal_amp: float
    shot_sigma_re: float
    shot_sigma_im: float
    h_sigma: float
    n_sigma: float
    load_r: float
    h_distribution: str = "gaussian"

    def __post_init__(self):
        for name in ("shot_sigma_re", "shot_sigma_im", "h_sigma", "n_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.h_distribution not in H_DISTRIBUTIONS:
            raise ValueError(f"h_distribution must be one of {H_DISTRIBUTIONS}")


def build_model(probe, mod, det, i0=None, h_distribution="gaussian") -> GenerativeModel:
    check_squeeze_band(probe, mod)
    i0 = mean_photocurrent(probe, det) if i0 is None else i0
    q, phi, B = PHYS.q, probe.squeezing_phi, det.rbw
    return GenerativeModel(
        signal_amp=i0 * mod.delta_m / 2,
        shot_sigma_re=math.sqrt(q * i0 * phi * B / 2),
        shot_sigma_im=math.sqrt(q * i0 * B / (2 * phi)),
        h_sigma=math.sqrt(det.var_h),
        n_sigma=math.sqrt(det.var_n),
        load_r=det.load_r,
        h_distribution=h_distribution,
    )


def rep_rng(seed, *key) -> np.random.Generator:
    """Generator for one independent stream derived from (seed, key...)"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _draw_h(model, rng, size):
    if model.h_distribution == "uniform":
        half_width = math.sqrt(3) * model.h_sigma
        return rng.uniform(-half_width, half_width, size)
    return rng.normal(0.0, model.h_sigma, size)


def _draw_current(model, rng, size, signal_scale=0.0, shot=True):
    sigma = model.shot_sigma_re if shot else 0.0
    current = rng.normal(0.0, sigma, size) + 1j * rng.normal(0.0, sigma, size)
    current += PHYS.q * (rng.normal(0.0, model.n_sigma, size)
                         + 1j * rng.normal(0.0, model.n_sigma, size))
    if np.any(signal_scale):
        amp = model.signal_amp * signal_scale
        current += amp * (1 + 2 * _draw_h(model, rng, size))
    return current


def _bin(model, current):
    return BinDraw(i_complex=current, p_value=2 * model.load_r * np.abs(current) ** 2)


def draw_sideband(model, rng, size=None, signal_scale=1.0) -> BinDraw:
    return _bin(model, _draw_current(model, rng, size, signal_scale=signal_scale))


def draw_floor(model, rng, size=None) -> BinDraw:
    return _bin(model, _draw_current(model, rng, size))


def draw_elec(model, rng, size=None) -> BinDraw:
    return _bin(model, _draw_current(model, rng, size, shot=False))


def averaging_weights(m_avg) -> np.ndarray:
    """
    Weights over ceil(M) draws whose weighted mean has variance Var/M.

    floor(M) draws share weight a and one extra draw gets b = 1 - n a, with
    n a^2 + b^2 = 1/M. Integer M gives equal weights 1/M.
    """
    if m_avg < 1:
        raise ValueError("m_avg must be >= 1")
    n = int(math.floor(m_avg))
    if m_avg == n:
        return np.full(n, 1.0 / n)
    a = (n + math.sqrt(n * ((n + 1) / m_avg - 1))) / (n * (n + 1))
    return np.append(np.full(n, a), 1 - n * a)


def measure_triplets(model, det, rng, n=None, signal_scale=None) -> SpectrumTriplet:
    """
    Averaged (p_Omega, p_N, p_E) for n measurements, each the weighted mean of
    ceil(M) independent draws with a fresh H per draw. n=None gives one
    measurement with float fields.
    """
    weights = averaging_weights(det.m_avg)
    shape = (1 if n is None else n, weights.size)
    scale = 1.0 if signal_scale is None else np.asarray(signal_scale, dtype=float).reshape(-1, 1)
    p_omega = draw_sideband(model, rng, shape, signal_scale=scale).p_value @ weights
    p_floor = draw_floor(model, rng, shape).p_value @ weights
    p_elec = draw_elec(model, rng, shape).p_value @ weights
    if n is None:
        return SpectrumTriplet(float(p_omega[0]), float(p_floor[0]), float(p_elec[0]))
    return SpectrumTriplet(p_omega, p_floor, p_elec)


def measure_triplet(model, det, rng) -> SpectrumTriplet:
    return measure_triplets(model, det, rng)


def model_mean_powers(model) -> Tuple[float, float, float]:
    """Exact means of the sideband, floor and electronic bins of the model"""
    two_r = 2 * model.load_r
    shot = 2 * model.shot_sigma_re ** 2
    elec = 2 * PHYS.q ** 2 * model.n_sigma ** 2
    signal = model.signal_amp ** 2 * (1 + 4 * model.h_sigma ** 2)
    return two_r * (signal + shot + elec), two_r * (shot + elec), two_r * elec


def model_var_sideband_power(model, m_avg=1.0) -> float:
    """
    Exact Var(p_Omega) of the model for M averages.

    Equals the leading-order sideband variance plus the noise-only term
    8 R^2 (var_re^2 + var_im^2) that the leading-order result drops, plus a
    fourth-cumulant correction when H is uniform.
    """
    s = model.signal_amp
    noise = model.shot_sigma_re ** 2 + PHYS.q ** 2 * model.n_sigma ** 2
    var_a = 4 * s ** 2 * model.h_sigma ** 2 + noise
    kurtosis = 0.0
    if model.h_distribution == "uniform":
        kurtosis = -1.2 * (2 * s) ** 4 * model.h_sigma ** 4
    per_draw = 4 * model.load_r ** 2 * (4 * s ** 2 * var_a + 2 * var_a ** 2 + kurtosis + 2 * noise ** 2)
    return per_draw * float(np.sum(averaging_weights(m_avg) ** 2))


def run_repetition(probe, mod, det, k_samples, seed, rep, *, arm=0, point=0, model=None,
                   measured_floors=False, delta_m_drift=None, i0=None) -> VarianceReport:
    """
    One variance measurement: k triplets, one estimate each, sample variance.

    Floors are pre-calibrated from the closed-form means unless
    `measured_floors` is set; `delta_m_drift=(lo, hi)` draws each trial's
    delta_m uniformly from the range. With measured floors, trials whose
    sampled p_N does not exceed p_E are left out of the variance and counted
    in `n_degenerate`.
    """
    i0 = mean_photocurrent(probe, det) if i0 is None else i0
    model = model or build_model(probe, mod, det, i0=i0)
    rng = rep_rng(seed, arm, point, rep)
    scale = None
    if delta_m_drift is not None and mod.delta_m > 0:
        lo, hi = delta_m_drift
        scale = rng.uniform(lo, hi, k_samples) / mod.delta_m
    triplets = measure_triplets(model, det, rng, n=k_samples, signal_scale=scale)
    if not measured_floors:
        calib = mean_powers(probe, mod, det, i0=i0)
        triplets = SpectrumTriplet(
            triplets.p_omega,
            np.full(k_samples, calib.p_floor_mean),
            np.full(k_samples, calib.p_elec_mean),
        )
    estimate = estimate_delta_m(triplets, probe.squeezing_phi, det.rbw, i0, skip_degenerate=measured_floors)
    usable = ~np.asarray(estimate.degenerate, dtype=bool)
    n_degenerate = int(k_samples - np.count_nonzero(usable))
    n_below = int(np.count_nonzero(estimate.below_floor))
    if n_below or n_degenerate:
        logger.debug("rep %d: %d of %d estimates below floor, %d degenerate",
                     rep, n_below, k_samples, n_degenerate)
    return variance_of(
        estimate.delta_m[usable],
        phi=probe.squeezing_phi,
        rbw=det.rbw,
        m_avg=det.m_avg,
        n_below_floor=n_below,
        rep=rep,
        n_degenerate=n_degenerate,
    )


def run_experiment(probe, mod, det, k_samples, reps, seed, *, arm=0, point=0,
                   measured_floors=False, delta_m_drift=None,
                   h_distribution="gaussian") -> Iterator[VarianceReport]:
    """Stream of `reps` variance reports with seed-derived per-rep streams"""
    if k_samples < 2:
        raise ValueError("k_samples must be >= 2")
    i0 = mean_photocurrent(probe, det)
    model = build_model(probe, mod, det, i0=i0, h_distribution=h_distribution)
    for rep in range(reps):
        yield run_repetition(probe, mod, det, k_samples, seed, rep, arm=arm, point=point,
                             model=model, measured_floors=measured_floors,
                             delta_m_drift=delta_m_drift, i0=i0)


def reports_to_frame(reports) -> pd.DataFrame:
    rows = [{
        "rep": r.rep,
        "phi": r.phi,
        "rbw_hz": r.rbw,
        "m_avg": r.m_avg,
        "k_samples": len(r.estimates) + r.n_degenerate,
        "var_delta_m": r.var,
        "var_se": r.var_se,
        "n_below_floor": r.n_below_floor,
        "n_degenerate": r.n_degenerate,
    } for r in reports]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)
