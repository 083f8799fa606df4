"""
Time-domain photocurrent synthesis and spectrum-analyser emulation.

A trace is the detected current i(t) sampled at `sample_rate`. analyze()
cuts it into rectangular segments of length 1/rbw, so every DFT coefficient
covers exactly one RBW window; the bin amplitude is X_k / L and the bin
power p = 2 R |X_k / L|^2. M segments are averaged per sweep (video
bandwidth). A tone a*cos(2 pi f t) on the bin grid gives p = R a^2 / 2.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import scipy.fft

from analytic import SpectrumTriplet
from errors import ConfigError, DomainError, TraceLengthError
from freqsim import averaging_weights, rep_rng
from inference import read_results_csv, write_results_csv
from params import PHYS, check_squeeze_band, mean_photocurrent

logger = logging.getLogger(__name__)

DEFAULT_H_CUTOFF = 2e6
# samples synthesised per chunk in simulate_triplets
CHUNK_SAMPLES = 4_000_000

_HEADER = struct.Struct("<dq")


@dataclass(frozen=True)
class TimeTrace:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if np.size(self.samples) == 0:
            raise TraceLengthError("trace has no samples")
        if not self.sample_rate > 0:
            raise DomainError("sample_rate must be > 0")

    @property
    def duration(self):
        return np.size(self.samples) / self.sample_rate

    def __len__(self):
        return np.size(self.samples)


@dataclass(frozen=True)
class NoiseSpectrum:
    """
    Swept bin powers.

    powers has shape (n_sweeps, n_bins); each sweep is the weighted mean of
    m_avg segments.
    """
    freqs: np.ndarray
    powers: np.ndarray
    rbw: float
    m_avg: float

    def __post_init__(self):
        if np.any(self.powers < 0):
            raise DomainError("bin powers must be >= 0")
        if self.powers.ndim != 2 or self.powers.shape[1] != self.freqs.size:
            raise DomainError("powers must have shape (n_sweeps, len(freqs))")
        k = self.freqs / self.rbw
        if not np.allclose(k, np.round(k), atol=1e-6):
            raise DomainError("bin frequencies must sit on the rbw grid")

    @property
    def n_sweeps(self):
        return self.powers.shape[0]

    @property
    def mean_power(self):
        return self.powers.mean(axis=0)

    def bin_index(self, freq):
        idx = int(np.argmin(np.abs(self.freqs - freq)))
        if abs(self.freqs[idx] - freq) > self.rbw / 2:
            raise DomainError(f"no bin at {freq:g} Hz in this spectrum")
        return idx

    def bin_powers(self, freq):
        """Per-sweep power of the bin containing `freq`"""
        return self.powers[:, self.bin_index(freq)]

    def to_frame(self):
        return pd.DataFrame({"freq_hz": self.freqs, "power_w": self.mean_power})

    def replace_powers(self, powers):
        return NoiseSpectrum(self.freqs, np.clip(powers, 0.0, None), self.rbw, self.m_avg)


def default_sample_rate(mod, det, offset=0.0):
    """Smallest rate above 2.5 (Omega + offset + B) whose segment length is FFT friendly"""
    length = scipy.fft.next_fast_len(int(math.ceil(2.5 * (mod.omega_mod + offset + det.rbw) / det.rbw)))
    return det.rbw * length


def segment_length(sample_rate, rbw):
    length = sample_rate / rbw
    n = int(round(length))
    if n < 2 or abs(length - n) > 1e-6 * n:
        raise ConfigError(
            f"sample rate {sample_rate:g} Hz is not an integer multiple of rbw {rbw:g} Hz",
            key="trace.sample_rate_hz")
    return n


def _check_aliasing(mod, det, sample_rate):
    if sample_rate <= 2 * (mod.omega_mod + det.rbw):
        raise ConfigError(
            f"sample rate {sample_rate:g} Hz aliases the sideband band (need > 2 (Omega + B) = "
            f"{2 * (mod.omega_mod + det.rbw):g} Hz)", key="trace.sample_rate_hz")


def _n_samples(duration, sample_rate):
    n = int(round(duration * sample_rate))
    if n <= 0:
        raise TraceLengthError(f"duration {duration:g} s gives an empty trace")
    return n


def _white(rng, n, psd, sample_rate):
    """White Gaussian noise with one-sided PSD `psd` (unit^2/Hz)"""
    if psd <= 0:
        return np.zeros(n)
    return rng.normal(0.0, math.sqrt(psd * sample_rate / 2), n)


def _low_pass(x, sample_rate, cutoff):
    if cutoff >= sample_rate / 2:
        return x
    spectrum = scipy.fft.rfft(x)
    spectrum[scipy.fft.rfftfreq(x.size, 1 / sample_rate) > cutoff] = 0
    return scipy.fft.irfft(spectrum, n=x.size)


def synthesize(probe, mod, det, duration, sample_rate=None, rng=None, h_cutoff=DEFAULT_H_CUTOFF,
               i0=None, shot_noise=True) -> TimeTrace:
    """
    Synthesize a detected photocurrent trace.

    i(t) = i0 (psi0 + psi_m cos)^2 / (psi0^2 + psi_m^2/2) (1 + 2 zeta) + shot + electronic

    Shot noise is white with one-sided PSD 2 q i0 Phi. zeta is white noise
    brick-wall low-passed at `h_cutoff`, scaled so its mean over one RBW
    segment has variance var_h. (1 + zeta)^2 is kept to first order so
    zeta leaves the mean current unchanged. Electronic noise is white with PSD
    4 q^2 var_n / B, matching the frequency-domain bin statistics.
    shot_noise=False leaves out the shot term (noise-free tone checks).
    """
    check_squeeze_band(probe, mod)
    sample_rate = default_sample_rate(mod, det) if sample_rate is None else sample_rate
    _check_aliasing(mod, det, sample_rate)
    n = _n_samples(duration, sample_rate)
    if n / sample_rate < 1 / det.rbw:
        raise TraceLengthError(f"duration {duration:g} s is shorter than one RBW segment 1/B")
    rng = rng if rng is not None else np.random.default_rng()
    i0 = mean_photocurrent(probe, det) if i0 is None else i0

    t = np.arange(n) / sample_rate
    field_amp = mod.psi0 + mod.psi_m * np.cos(2 * np.pi * mod.omega_mod * t)
    envelope = field_amp ** 2 / (mod.psi0 ** 2 + mod.psi_m ** 2 / 2)
    current = i0 * envelope
    if det.var_h > 0:
        zeta = _low_pass(_white(rng, n, 2 * det.var_h / det.rbw, sample_rate), sample_rate, h_cutoff)
        current *= 1 + 2 * zeta
    if shot_noise:
        current += _white(rng, n, 2 * PHYS.q * i0 * probe.squeezing_phi, sample_rate)
    current += _white(rng, n, 4 * PHYS.q ** 2 * det.var_n / det.rbw, sample_rate)
    return TimeTrace(samples=current, sample_rate=sample_rate)


def synthesize_dark(det, duration, sample_rate, rng=None) -> TimeTrace:
    """Electronic noise only, as recorded with the probe blocked"""
    rng = rng if rng is not None else np.random.default_rng()
    n = _n_samples(duration, sample_rate)
    return TimeTrace(_white(rng, n, 4 * PHYS.q ** 2 * det.var_n / det.rbw, sample_rate), sample_rate)


def analyze(trace: TimeTrace, center, rbw, m_avg=1.0, span=0.0, load_r=50.0) -> NoiseSpectrum:
    """
    Emulate a swept spectrum analyser on `trace`.

    `center` is one frequency (with an optional `span` around it) or a
    sequence of frequencies. The DFT is taken over each segment before the
    modulus is squared, so the bin amplitude is the integral of i(nu) over
    the RBW window.
    """
    length = segment_length(trace.sample_rate, rbw)
    if span > 0:
        lo = int(round((center - span / 2) / rbw))
        hi = int(round((center + span / 2) / rbw))
        bins = np.arange(max(lo, 0), hi + 1)
    else:
        bins = np.unique(np.round(np.atleast_1d(np.asarray(center, dtype=float)) / rbw).astype(int))
    if bins.size == 0 or bins.max() >= length // 2:
        raise ConfigError("requested bins lie at or above the Nyquist frequency", key="trace.span_hz")
    weights = averaging_weights(m_avg)
    per_sweep = weights.size * length
    n_sweeps = len(trace) // per_sweep
    if n_sweeps < 1:
        raise TraceLengthError(
            f"{len(trace)} samples cannot fill {weights.size} segments of {length} samples")
    segments = np.asarray(trace.samples[:n_sweeps * per_sweep]).reshape(n_sweeps * weights.size, length)
    amplitudes = scipy.fft.rfft(segments, axis=1)[:, bins] / length
    powers = 2 * load_r * np.abs(amplitudes) ** 2
    powers = np.einsum("smb,m->sb", powers.reshape(n_sweeps, weights.size, bins.size), weights)
    return NoiseSpectrum(freqs=bins * float(rbw), powers=powers, rbw=float(rbw), m_avg=float(m_avg))


def triplet_from_trace(spectrum: NoiseSpectrum, omega_mod, offset, dark: Optional[NoiseSpectrum] = None
                       ) -> SpectrumTriplet:
    """
    Per-sweep (p_Omega, p_N, p_E).

    p_N is read `offset` Hz above the sideband. p_E comes from the same bin
    of a dark spectrum, sweep by sweep when the sweep counts match and as the
    dark mean otherwise; no dark spectrum means p_E = 0.
    """
    if offset <= spectrum.rbw:
        raise ConfigError(f"floor offset {offset:g} Hz overlaps the sideband bin "
                          f"(must exceed rbw {spectrum.rbw:g} Hz)", key="sweep.offset_hz")
    p_omega = spectrum.bin_powers(omega_mod)
    p_floor = spectrum.bin_powers(omega_mod + offset)
    if dark is None:
        p_elec = np.zeros_like(p_floor)
    else:
        dark_floor = dark.bin_powers(omega_mod + offset)
        p_elec = dark_floor if dark_floor.size == p_floor.size else np.full_like(p_floor, dark_floor.mean())
    return SpectrumTriplet(p_omega, p_floor, p_elec)


def simulate_triplets(probe, mod, det, n, seed, *, offset=1e5, sample_rate=None, h_cutoff=DEFAULT_H_CUTOFF,
                      arm=0, point=0, rep=0, with_dark=True) -> SpectrumTriplet:
    """
    n time-domain triplet measurements, synthesised in chunks.

    Each chunk holds whole sweeps of ceil(M) segments; the dark trace has the
    same length and draws from the same stream.
    """
    sample_rate = default_sample_rate(mod, det, offset) if sample_rate is None else sample_rate
    length = segment_length(sample_rate, det.rbw)
    per_sweep = averaging_weights(det.m_avg).size * length
    chunk = max(1, CHUNK_SAMPLES // per_sweep)
    rng = rep_rng(seed, arm, point, rep)
    i0 = mean_photocurrent(probe, det)
    parts = []
    done = 0
    while done < n:
        sweeps = min(chunk, n - done)
        duration = sweeps * per_sweep / sample_rate
        trace = synthesize(probe, mod, det, duration, sample_rate, rng, h_cutoff=h_cutoff, i0=i0)
        spectrum = analyze(trace, [mod.omega_mod, mod.omega_mod + offset], det.rbw, det.m_avg,
                           load_r=det.load_r)
        dark = None
        if with_dark:
            dark = analyze(synthesize_dark(det, duration, sample_rate, rng),
                           [mod.omega_mod + offset], det.rbw, det.m_avg, load_r=det.load_r)
        parts.append(triplet_from_trace(spectrum, mod.omega_mod, offset, dark))
        done += sweeps
    logger.debug("synthesised %d sweeps in %d chunks", n, len(parts))
    return SpectrumTriplet(
        np.concatenate([p.p_omega for p in parts]),
        np.concatenate([p.p_floor for p in parts]),
        np.concatenate([p.p_elec for p in parts]),
    )


def subtract_electronic(spectrum: NoiseSpectrum, dark: NoiseSpectrum) -> NoiseSpectrum:
    """Remove the mean dark (electronic) level bin by bin, clipped at zero"""
    if dark.freqs.size == spectrum.freqs.size:
        level = dark.mean_power
    else:
        level = np.full(spectrum.freqs.size, dark.mean_power.mean())
    return spectrum.replace_powers(spectrum.powers - level)


def correct_shot_level(spectrum: NoiseSpectrum, shot_level, reference_level) -> NoiseSpectrum:
    """
    Refer a trace recorded at a different optical power to the reference
    shot-noise level by subtracting the difference of the two levels.
    """
    return spectrum.replace_powers(spectrum.powers - (shot_level - reference_level))


def shot_level(i0, rbw, load_r):
    """Coherent (Phi = 1) floor 2 q R i0 B in W"""
    return 2 * PHYS.q * load_r * i0 * rbw


def write_trace_binary(trace: TimeTrace, path):
    """Little-endian header (sample_rate f8, count i8) then the f8 samples in A"""
    samples = np.asarray(trace.samples, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(trace.sample_rate, samples.size))
        f.write(samples.tobytes())


def read_trace_binary(path) -> TimeTrace:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TraceLengthError(f"{path}: truncated trace header")
        sample_rate, count = _HEADER.unpack(head)
        samples = np.frombuffer(f.read(), dtype="<f8")
    if samples.size != count:
        raise TraceLengthError(f"{path}: header says {count} samples, found {samples.size}")
    return TimeTrace(samples.astype(float), sample_rate)


def write_trace_csv(trace: TimeTrace, path):
    df = pd.DataFrame({
        "time_s": np.arange(len(trace)) / trace.sample_rate,
        "current_a": trace.samples,
    })
    write_results_csv(df, path, "trace", sample_rate_hz=f"{trace.sample_rate:.17g}")


def read_trace_csv(path) -> TimeTrace:
    tags, df = read_results_csv(path)
    if "sample_rate_hz" not in tags:
        raise TraceLengthError(f"{path}: trace CSV lacks a sample_rate_hz tag")
    return TimeTrace(df["current_a"].to_numpy(dtype=float), float(tags["sample_rate_hz"]))


def write_spectrum_csv(spectrum: NoiseSpectrum, path):
    write_results_csv(spectrum.to_frame(), path, "spectrum",
                      rbw_hz=f"{spectrum.rbw:g}", m_avg=f"{spectrum.m_avg:g}", n_sweeps=spectrum.n_sweeps)
