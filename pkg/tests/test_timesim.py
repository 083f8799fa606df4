import math
from dataclasses import replace

import numpy as np
import pytest

import analytic
import freqsim
import timesim
from errors import ConfigError, DomainError, TraceLengthError
from params import DetectionParams, ModulationParams, mean_photocurrent

# low sideband frequency keeps the traces short
OMEGA = 2e5
RBW = 1e4


def _se_of_variance(x):
    centred = x - x.mean()
    return math.sqrt((np.mean(centred ** 4) - np.mean(centred ** 2) ** 2) / x.size)


@pytest.fixture
def low_mod():
    return ModulationParams(delta_m=1e-4, omega_mod=OMEGA)


@pytest.fixture
def dark_mod():
    return ModulationParams(delta_m=0.0, omega_mod=OMEGA)


@pytest.fixture
def quiet_det():
    return DetectionParams(rbw=RBW)


def test_default_sample_rate_is_rbw_multiple(low_mod, quiet_det):
    rate = timesim.default_sample_rate(low_mod, quiet_det)
    assert rate == pytest.approx(5.4e5)
    assert timesim.segment_length(rate, RBW) == 54


def test_default_sample_rate_covers_floor_offset(low_mod, quiet_det):
    rate = timesim.default_sample_rate(low_mod, quiet_det, offset=1e5)
    assert rate == pytest.approx(8e5)
    assert rate / 2 > OMEGA + 1e5 + RBW


def test_segment_length_must_be_integer():
    with pytest.raises(ConfigError) as excinfo:
        timesim.segment_length(5.4e5, 7e3)
    assert excinfo.value.key == "trace.sample_rate_hz"


def test_noise_free_tone_power(probe, low_mod, quiet_det):
    trace = timesim.synthesize(probe, low_mod, quiet_det, 10 / RBW, shot_noise=False)
    spectrum = timesim.analyze(trace, [OMEGA, OMEGA + 5e4], RBW, load_r=quiet_det.load_r)
    i0 = mean_photocurrent(probe, quiet_det)
    expected = quiet_det.load_r * i0 ** 2 * low_mod.delta_m ** 2 / 2
    assert spectrum.bin_powers(OMEGA) == pytest.approx(np.full(10, expected), rel=1e-3)
    assert np.all(spectrum.bin_powers(OMEGA + 5e4) < 1e-6 * expected)


def test_tone_power_does_not_depend_on_rbw(probe, low_mod, quiet_det):
    trace = timesim.synthesize(probe, low_mod, quiet_det, 4 / RBW, shot_noise=False)
    narrow = timesim.analyze(trace, OMEGA, RBW).mean_power
    wide = timesim.analyze(trace, OMEGA, 2 * RBW).mean_power
    assert wide == pytest.approx(narrow, rel=1e-9)


def test_shot_noise_floor_is_flat(probe, dark_mod, quiet_det):
    rng = np.random.default_rng(31)
    trace = timesim.synthesize(probe, dark_mod, quiet_det, 2000 / RBW, rng=rng)
    spectrum = timesim.analyze(trace, 1.5e5, RBW, span=2e5, load_r=quiet_det.load_r)
    expected = timesim.shot_level(mean_photocurrent(probe, quiet_det), RBW, quiet_det.load_r)
    assert spectrum.powers.mean() == pytest.approx(expected, rel=0.03)
    # flat: no bin strays far from the level
    assert np.allclose(spectrum.mean_power, expected, rtol=0.15)


def test_white_noise_power_scales_with_rbw(probe, dark_mod, quiet_det):
    trace = timesim.synthesize(probe, dark_mod, quiet_det, 2000 / RBW, rng=np.random.default_rng(32))
    narrow = timesim.analyze(trace, 1.5e5, RBW, span=1e5).powers.mean()
    wide = timesim.analyze(trace, 1.5e5, 2 * RBW, span=1e5).powers.mean()
    assert wide / narrow == pytest.approx(2.0, rel=0.05)


def test_empty_trace_is_rejected(probe, low_mod, quiet_det):
    with pytest.raises(TraceLengthError):
        timesim.synthesize(probe, low_mod, quiet_det, 0.0)
    with pytest.raises(TraceLengthError):
        timesim.TimeTrace(np.array([]), 1e6)


def test_aliasing_is_rejected(probe, low_mod, quiet_det):
    with pytest.raises(ConfigError) as excinfo:
        timesim.synthesize(probe, low_mod, quiet_det, 1e-3, sample_rate=3e5)
    assert excinfo.value.key == "trace.sample_rate_hz"


def test_analysis_needs_full_segments():
    with pytest.raises(TraceLengthError):
        timesim.analyze(timesim.TimeTrace(np.ones(10), 5.4e5), OMEGA, RBW)
    with pytest.raises(TraceLengthError):
        timesim.analyze(timesim.TimeTrace(np.ones(540), 5.4e5), OMEGA, RBW, m_avg=34.0)


def test_analysis_above_nyquist_is_rejected():
    with pytest.raises(ConfigError):
        timesim.analyze(timesim.TimeTrace(np.ones(540), 5.4e5), 3e5, RBW)


def test_floor_offset_must_clear_sideband_bin(probe, low_mod, quiet_det):
    trace = timesim.synthesize(probe, low_mod, quiet_det, 2 / RBW, rng=np.random.default_rng(33))
    spectrum = timesim.analyze(trace, [OMEGA, OMEGA + RBW], RBW)
    with pytest.raises(ConfigError) as excinfo:
        timesim.triplet_from_trace(spectrum, OMEGA, RBW)
    assert excinfo.value.key == "sweep.offset_hz"


def test_shot_only_sideband_matches_floor(probe, dark_mod, quiet_det):
    triplets = timesim.simulate_triplets(probe, dark_mod, quiet_det, 4000, seed=34, offset=5e4)
    assert np.mean(triplets.p_omega) == pytest.approx(np.mean(triplets.p_floor), rel=0.08)
    assert np.all(triplets.p_elec == 0)


def test_squeezing_scales_floor_with_matched_seeds(probe, low_mod, quiet_det):
    coherent = timesim.simulate_triplets(probe, low_mod, quiet_det, 50, seed=35, offset=5e4)
    squeezed = timesim.simulate_triplets(replace(probe, squeezing_phi=0.5), low_mod, quiet_det, 50,
                                         seed=35, offset=5e4)
    assert squeezed.p_floor == pytest.approx(0.5 * coherent.p_floor, rel=1e-6)


def test_simulated_triplets_are_deterministic(probe, low_mod):
    det = DetectionParams(rbw=RBW, m_avg=2.5, var_h=1e-5, var_n=3e14)
    first = timesim.simulate_triplets(probe, low_mod, det, 20, seed=36, offset=5e4)
    second = timesim.simulate_triplets(probe, low_mod, det, 20, seed=36, offset=5e4)
    assert len(first) == 20
    assert np.array_equal(first.p_omega, second.p_omega)
    assert np.array_equal(first.p_elec, second.p_elec)


@pytest.mark.slow
def test_time_and_frequency_models_agree(probe, low_mod):
    det = DetectionParams(rbw=RBW, var_h=0.0, var_n=3e14)
    n = 4000
    triplets = timesim.simulate_triplets(probe, low_mod, det, n, seed=37, offset=5e4)
    expected = analytic.mean_powers(probe, low_mod, det)
    for measured, mean in ((triplets.p_omega, expected.p_omega_mean),
                           (triplets.p_floor, expected.p_floor_mean),
                           (triplets.p_elec, expected.p_elec_mean)):
        assert abs(np.mean(measured) - mean) < 3 * np.std(measured) / math.sqrt(n)


def test_noise_spectrum_validation():
    with pytest.raises(DomainError):
        timesim.NoiseSpectrum(np.array([1e4]), np.array([[-1.0]]), RBW, 1.0)
    with pytest.raises(DomainError):
        timesim.NoiseSpectrum(np.array([1.5e4]), np.array([[1.0]]), RBW, 1.0)
    with pytest.raises(DomainError):
        timesim.NoiseSpectrum(np.array([1e4, 2e4]), np.array([[1.0]]), RBW, 1.0)


def test_bin_lookup():
    spectrum = timesim.NoiseSpectrum(np.array([1e4, 2e4]), np.array([[1.0, 2.0], [3.0, 4.0]]), RBW, 1.0)
    assert spectrum.n_sweeps == 2
    assert spectrum.bin_powers(2.1e4).tolist() == [2.0, 4.0]
    assert spectrum.mean_power.tolist() == [2.0, 3.0]
    with pytest.raises(DomainError):
        spectrum.bin_index(5e4)


def test_subtract_electronic_clips_at_zero():
    spectrum = timesim.NoiseSpectrum(np.array([1e4, 2e4]), np.array([[1.0, 2.0]]), RBW, 1.0)
    dark = timesim.NoiseSpectrum(np.array([1e4, 2e4]), np.array([[0.5, 3.0]]), RBW, 1.0)
    result = timesim.subtract_electronic(spectrum, dark)
    assert result.powers.tolist() == [[0.5, 0.0]]


def test_correct_shot_level():
    spectrum = timesim.NoiseSpectrum(np.array([1e4]), np.array([[5.0]]), RBW, 1.0)
    assert timesim.correct_shot_level(spectrum, 3.0, 2.0).powers.tolist() == [[4.0]]


def test_triplet_without_dark_has_zero_electronic():
    spectrum = timesim.NoiseSpectrum(np.array([2e5, 2.5e5]), np.array([[4.0, 1.0]]), RBW, 1.0)
    triplet = timesim.triplet_from_trace(spectrum, 2e5, 5e4)
    assert triplet.p_omega.tolist() == [4.0]
    assert triplet.p_elec.tolist() == [0.0]


def test_binary_trace_round_trip(tmp_path):
    trace = timesim.TimeTrace(np.linspace(-1e-6, 1e-6, 101), 5.4e5)
    path = tmp_path / "trace.bin"
    timesim.write_trace_binary(trace, path)
    back = timesim.read_trace_binary(path)
    assert back.sample_rate == trace.sample_rate
    assert np.array_equal(back.samples, trace.samples)


def test_truncated_binary_trace(tmp_path):
    path = tmp_path / "trace.bin"
    timesim.write_trace_binary(timesim.TimeTrace(np.ones(8), 1e6), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(TraceLengthError):
        timesim.read_trace_binary(path)


def test_csv_trace_round_trip(tmp_path):
    trace = timesim.TimeTrace(np.array([1e-4, 1.1e-4, 0.9e-4]), 5.4e5)
    path = tmp_path / "trace.csv"
    timesim.write_trace_csv(trace, path)
    back = timesim.read_trace_csv(path)
    assert back.sample_rate == trace.sample_rate
    assert np.allclose(back.samples, trace.samples, rtol=1e-9)
    assert len(back) == 3


@pytest.mark.slow
def test_models_agree_at_10_mhz(probe, mod):
    det = DetectionParams(rbw=RBW, var_h=1e-5, var_n=3e14)
    n = 4000
    triplets = timesim.simulate_triplets(probe, mod, det, n, seed=38)
    model = freqsim.build_model(probe, mod, det)
    means = freqsim.model_mean_powers(model)
    for measured, mean in zip((triplets.p_omega, triplets.p_floor, triplets.p_elec), means):
        assert abs(np.mean(measured) - mean) < 3 * np.std(measured) / math.sqrt(n)
    side_var = freqsim.model_var_sideband_power(model, det.m_avg)
    assert abs(np.var(triplets.p_omega, ddof=1) - side_var) < 3 * _se_of_variance(triplets.p_omega)
    # exponential floor bin: variance is the squared mean
    assert abs(np.var(triplets.p_floor, ddof=1) - means[1] ** 2) < 3 * _se_of_variance(triplets.p_floor)


@pytest.mark.slow
def test_squeezed_floor_at_10_mhz(probe, mod):
    det = DetectionParams(rbw=RBW)
    n = 100_000
    phi = 10 ** -0.12
    coherent = timesim.simulate_triplets(probe, mod, det, n, seed=39, with_dark=False)
    squeezed = timesim.simulate_triplets(replace(probe, squeezing_phi=phi), mod, det, n, seed=40,
                                         with_dark=False)
    ratio_db = 10 * np.log10(np.mean(squeezed.p_floor) / np.mean(coherent.p_floor))
    assert ratio_db == pytest.approx(10 * np.log10(phi), abs=0.1)


@pytest.mark.slow
def test_estimator_round_trip_at_10_mhz(probe, mod, det):
    det = replace(det, m_avg=34.0)
    triplets = timesim.simulate_triplets(probe, mod, det, 100, seed=41)
    estimate = analytic.estimate_delta_m(triplets, probe.squeezing_phi, det.rbw, mean_photocurrent(probe, det))
    assert np.mean(estimate.delta_m) == pytest.approx(mod.delta_m, rel=0.05)
