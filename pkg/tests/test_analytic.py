from dataclasses import replace

import numpy as np
import pytest

from analytic import (
    SpectrumTriplet,
    crossover_rbw,
    delta_method_variance,
    estimate_delta_m,
    fisher_curve,
    fisher_info,
    mean_powers,
    q_advantage_curve,
    quantum_advantage_opt,
    snr,
    squeezed_vacuum_power,
    var_sideband_power,
)
from errors import DegenerateFloorError, DomainError
from params import PHYS, mean_photocurrent

I0 = 1.19e-4


def test_snr_example():
    assert snr(1e-4, I0, 1.0, 1e4) == pytest.approx(185.7, rel=1e-3)


def test_snr_rejects_zero_bandwidth():
    with pytest.raises(DomainError):
        snr(1e-4, I0, 1.0, 0.0)


def test_mean_powers_floor_and_signal(probe, mod, det):
    i0 = mean_photocurrent(probe, det)
    powers = mean_powers(probe, mod, det)
    assert powers.p_floor_mean == pytest.approx(2 * PHYS.q * det.load_r * i0 * det.rbw)
    assert powers.p_elec_mean == 0.0
    signal = powers.p_omega_mean - powers.p_floor_mean
    assert signal == pytest.approx(det.load_r * i0 ** 2 * mod.delta_m ** 2 / 2)


def test_floor_scales_with_squeezing(probe, mod, det):
    full = mean_powers(probe, mod, det).p_floor_mean
    half = mean_powers(replace(probe, squeezing_phi=0.5), mod, det).p_floor_mean
    assert half == pytest.approx(full / 2)


def test_electronic_floor_counts_both_quadratures(probe, mod, det):
    powers = mean_powers(probe, mod, replace(det, var_n=1e14))
    assert powers.p_elec_mean == pytest.approx(4 * PHYS.q ** 2 * det.load_r * 1e14)


def test_squeezed_vacuum_term():
    assert squeezed_vacuum_power(1.0, 1e4, 1e9, 50.0) == 0.0
    assert squeezed_vacuum_power(0.5, 1e4, 1e9, 50.0) > 0


def test_estimator_recovers_delta_from_mean_powers(probe, mod, det):
    phi = 0.6918
    probe = replace(probe, squeezing_phi=phi)
    i0 = mean_photocurrent(probe, det)
    triplet = SpectrumTriplet.from_model(mean_powers(probe, mod, det))
    estimate = estimate_delta_m(triplet, phi, det.rbw, i0)
    assert estimate.delta_m == pytest.approx(mod.delta_m, rel=1e-9)
    assert not estimate.below_floor


def test_estimator_below_floor_is_flagged():
    estimate = estimate_delta_m(SpectrumTriplet(1e-18, 2e-18, 0.0), 1.0, 1e4, I0)
    assert estimate.delta_m == 0.0
    assert estimate.below_floor


def test_estimator_batches():
    triplets = SpectrumTriplet(np.array([1e-18, 4e-18]), np.full(2, 2e-18), np.zeros(2))
    estimate = estimate_delta_m(triplets, 1.0, 1e4, I0)
    assert estimate.below_floor.tolist() == [True, False]
    assert estimate.delta_m[1] > 0


def test_estimator_degenerate_floor():
    with pytest.raises(DegenerateFloorError):
        estimate_delta_m(SpectrumTriplet(3e-18, 1e-18, 1e-18), 1.0, 1e4, I0)


def test_estimator_skips_degenerate_trials_when_asked():
    triplets = SpectrumTriplet(np.array([3e-18, 4e-18]), np.array([1e-18, 2e-18]), np.array([1e-18, 0.0]))
    with pytest.raises(DegenerateFloorError):
        estimate_delta_m(triplets, 1.0, 1e4, I0)
    estimate = estimate_delta_m(triplets, 1.0, 1e4, I0, skip_degenerate=True)
    assert estimate.degenerate.tolist() == [True, False]
    assert estimate.below_floor.tolist() == [False, False]
    assert np.isnan(estimate.delta_m[0])
    assert estimate.delta_m[1] > 0


def test_triplet_rejects_negative_power():
    with pytest.raises(DomainError):
        SpectrumTriplet(-1.0, 0.0, 0.0)


def test_var_sideband_power_averaging_law(probe, mod, det):
    single = var_sideband_power(probe, mod, det)
    averaged = var_sideband_power(probe, mod, replace(det, m_avg=34.0))
    assert averaged == pytest.approx(single / 34)


def test_electronic_term_in_variance(probe, mod, det):
    noisy = replace(det, var_n=1e14)
    assert var_sideband_power(probe, mod, noisy) > var_sideband_power(probe, mod, noisy, include_electronic=False)


def test_fisher_example(probe, mod, det):
    report = fisher_info(probe, mod, det, i0=I0)
    assert report.fisher == pytest.approx(3.67e10, rel=5e-3)
    assert report.var_delta_m == pytest.approx(1 / report.fisher)
    assert report.q_advantage == pytest.approx(1.0)


def test_fisher_electronic_variant_is_smaller(probe, mod, det):
    noisy = replace(det, var_n=1e16)
    assert fisher_info(probe, mod, noisy, include_electronic=True).fisher < fisher_info(probe, mod, noisy).fisher


def test_fisher_halves_at_crossover(probe, mod, det):
    i0 = mean_photocurrent(probe, det)
    b_star = crossover_rbw(mod.delta_m, det.var_h, i0, 1.0)
    quantum_limited = i0 / (2 * PHYS.q * b_star)
    assert fisher_curve(b_star, 1.0, mod.delta_m, det.var_h, i0) == pytest.approx(quantum_limited / 2)


def test_crossover_for_reference_beam(probe, mod, det):
    i0 = mean_photocurrent(probe, det)
    assert crossover_rbw(mod.delta_m, det.var_h, i0, 1.0) == pytest.approx(149.0, abs=1.0)
    assert crossover_rbw(mod.delta_m, 0.0, i0, 1.0) == 0.0


def test_q_advantage_limits(probe, mod, det):
    i0 = mean_photocurrent(probe, det)
    phi = 10 ** -0.16
    rbw = np.array([1.0, 1e6])
    q = q_advantage_curve(rbw, phi, mod.delta_m, det.var_h, i0)
    assert q[0] == pytest.approx(1.0, abs=0.01)
    assert q[1] == pytest.approx(1 / phi, rel=0.01)
    flat = q_advantage_curve(np.logspace(2, 6, 5), phi, mod.delta_m, 0.0, i0)
    assert np.allclose(flat, 1 / phi)


def test_quantum_advantage_opt():
    assert quantum_advantage_opt(10 ** -0.16) == pytest.approx(1.45, abs=0.005)
    assert quantum_advantage_opt(0.74) == pytest.approx(1.35, abs=0.005)
    with pytest.raises(DomainError):
        quantum_advantage_opt(0.0)


def test_delta_method_matches_cramer_rao(probe, mod, det):
    probe = replace(probe, squeezing_phi=0.6918)
    assert delta_method_variance(probe, mod, det) == pytest.approx(fisher_info(probe, mod, det).var_delta_m, rel=1e-9)


@pytest.mark.parametrize("rbw", np.logspace(0, 7, 29))
def test_fisher_decreases_in_squeezing_and_classical_noise(probe, mod, det, rbw):
    i0 = mean_photocurrent(probe, det)
    over_phi = fisher_curve(rbw, np.linspace(0.05, 3.0, 60), mod.delta_m, det.var_h, i0)
    assert np.all(np.diff(over_phi) < 0)
    var_h = np.array([0.0, *np.logspace(-9, -3, 25)])
    over_var_h = fisher_curve(rbw, 0.6918, mod.delta_m, var_h, i0)
    assert np.all(np.diff(over_var_h) < 0)


@pytest.mark.parametrize("phi", [0.1, 0.5, 0.6918, 0.99])
def test_q_advantage_bounded_by_one_and_inverse_phi(probe, mod, det, phi):
    i0 = mean_photocurrent(probe, det)
    q = q_advantage_curve(np.logspace(0, 7, 71), phi, mod.delta_m, det.var_h, i0)
    assert np.all(q >= 1.0)
    assert np.all(q <= (1 / phi) * (1 + 1e-12))


@pytest.mark.parametrize("var_h", [0.0, 1e-5])
def test_q_advantage_is_one_without_squeezing(probe, mod, var_h, det):
    i0 = mean_photocurrent(probe, det)
    q = q_advantage_curve(np.logspace(0, 7, 29), 1.0, mod.delta_m, var_h, i0)
    assert np.all(q == 1.0)
