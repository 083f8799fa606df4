"""
Experiment Manager - runs the experiments behind the CLI and the API

Every runner takes an ExperimentConfig and returns an ExperimentOutput whose
frame is written as a versioned CSV. Sweep points run in a thread pool and
are re-assembled in grid order, so output is independent of scheduling.
"""
import concurrent.futures
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

import analytic
import freqsim
import inference
import timesim
from config import ExperimentConfig, build_experiment_config
from errors import ConfigError, CsvVersionError
from params import db_from_phi, mean_photocurrent, mean_photon_count, phi_from_db

logger = logging.getLogger(__name__)

QNL_ARM = 1
SQUEEZED_ARM = 0

# config keys that fix the classical-noise model, carried in sweep-rbw headers
FIT_MODEL_KEYS = (
    "probe.power_mw", "probe.wavelength_nm", "probe.squeeze_db", "probe.squeeze_bandwidth_hz",
    "mod.delta_m", "mod.omega_hz", "det.eta", "det.load_ohm", "det.m_avg", "det.var_n",
)


@dataclass
class ExperimentOutput:
    kind: str
    frame: pd.DataFrame
    meta: Dict[str, object] = field(default_factory=dict)
    fit: Optional[inference.FitResult] = None
    passed: Optional[bool] = None

    def write_csv(self, target):
        inference.write_results_csv(self.frame, target, self.kind, **self.meta)


def _meta(cfg: ExperimentConfig, **extra):
    meta = {"seed": cfg.seed}
    meta.update(extra)
    return meta


def _model_tags(cfg):
    values = {
        "probe.power_mw": cfg.probe.power_avg * 1e3,
        "probe.wavelength_nm": cfg.probe.wavelength * 1e9,
        "probe.squeeze_db": float(db_from_phi(cfg.probe.squeezing_phi)),
        "probe.squeeze_bandwidth_hz": cfg.probe.squeeze_bandwidth,
        "mod.delta_m": cfg.mod.delta_m,
        "mod.omega_hz": cfg.mod.omega_mod,
        "det.eta": cfg.det.eta,
        "det.load_ohm": cfg.det.load_r,
        "det.m_avg": cfg.det.m_avg,
        "det.var_n": cfg.det.var_n,
    }
    return {key: f"{values[key]:.17g}" for key in FIT_MODEL_KEYS}


def _with_phi(probe, phi):
    return replace(probe, squeezing_phi=float(phi))


def _run_arm(cfg, probe, det, arm, point):
    reports = list(freqsim.run_experiment(
        probe, cfg.mod, det, cfg.k_samples, cfg.reps, cfg.seed,
        arm=arm, point=point, delta_m_drift=cfg.delta_m_drift,
        measured_floors=cfg.measured_floors, h_distribution=cfg.h_distribution,
    ))
    return inference.pool_reports(reports)


def run_arms(cfg: ExperimentConfig, arms) -> Dict[tuple, inference.VarianceReport]:
    """
    Run every (arm, point, probe, det) arm on the thread pool.

    Returns pooled reports keyed by (arm, point).
    """
    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.threads) as executor:
        futures = {
            executor.submit(_run_arm, cfg, probe, det, arm, point): (arm, point)
            for arm, point, probe, det in arms
        }
        for i, future in enumerate(concurrent.futures.as_completed(futures), 1):
            key = futures[future]
            results[key] = future.result()
            logger.info("✓ arm %d point %d completed (%d/%d)", key[0], key[1], i, len(futures))
    return results


def run_theory_fig1d(cfg: ExperimentConfig) -> ExperimentOutput:
    """Fisher information per detected photon over the RBW grid for each Phi"""
    i0 = mean_photocurrent(cfg.probe, cfg.det)
    rbw = np.asarray(cfg.rbw_grid, dtype=float)
    frames = []
    for db in cfg.phi_grid_db:
        phi = float(phi_from_db(db))
        fisher = analytic.fisher_curve(rbw, phi, cfg.mod.delta_m, cfg.det.var_h, i0, cfg.det.m_avg)
        photons = np.array([mean_photon_count(i0, b) for b in rbw])
        frames.append(pd.DataFrame({
            "rbw_hz": rbw,
            "phi": phi,
            "squeeze_db": db,
            "fisher_per_photon": fisher / photons,
        }))
    crossover = analytic.crossover_rbw(cfg.mod.delta_m, cfg.det.var_h, i0, 1.0)
    logger.info("crossover RBW at Phi=1: %.4g Hz", crossover)
    return ExperimentOutput("theory-fig1d", pd.concat(frames, ignore_index=True),
                            _meta(cfg, crossover_hz=f"{crossover:.6g}"))


def run_sweep_phi(cfg: ExperimentConfig) -> ExperimentOutput:
    """
    Measured Q against Phi at fixed RBW.

    The QNL reference is one Phi = 1 arm on its own seed streams, shared by
    all points.
    """
    phis = [float(phi_from_db(db)) for db in cfg.phi_grid_db]
    arms = [(SQUEEZED_ARM, i, _with_phi(cfg.probe, phi), cfg.det) for i, phi in enumerate(phis)]
    arms.append((QNL_ARM, 0, _with_phi(cfg.probe, 1.0), cfg.det))
    results = run_arms(cfg, arms)
    qnl = results[(QNL_ARM, 0)]
    rows = []
    for i, (db, phi) in enumerate(zip(cfg.phi_grid_db, phis)):
        report = results[(SQUEEZED_ARM, i)]
        q = inference.measured_q(qnl, report)
        rows.append({
            "phi": phi,
            "squeeze_db": db,
            "q_measured": q.q,
            "q_se": q.q_se,
            "q_opt": analytic.quantum_advantage_opt(phi),
            "var_delta_m": report.var,
            "var_se": report.var_se,
            "var_qnl": qnl.var,
            "var_qnl_se": qnl.var_se,
            "n_below_floor": report.n_below_floor,
            "n_degenerate": report.n_degenerate,
        })
    return ExperimentOutput("sweep-phi", pd.DataFrame(rows),
                            _meta(cfg, rbw_hz=f"{cfg.det.rbw:g}", reps=cfg.reps, k_samples=cfg.k_samples))


def run_sweep_rbw(cfg: ExperimentConfig) -> ExperimentOutput:
    """Measured Q against RBW at fixed Phi, then the classical-noise fit"""
    arms = []
    for i, rbw in enumerate(cfg.rbw_grid):
        det = replace(cfg.det, rbw=float(rbw))
        arms.append((SQUEEZED_ARM, i, cfg.probe, det))
        arms.append((QNL_ARM, i, _with_phi(cfg.probe, 1.0), det))
    results = run_arms(cfg, arms)
    rows = []
    for i, rbw in enumerate(cfg.rbw_grid):
        q = inference.measured_q(results[(QNL_ARM, i)], results[(SQUEEZED_ARM, i)])
        rows.append({"rbw_hz": float(rbw), "q_measured": q.q, "q_se": q.q_se})
    frame = pd.DataFrame(rows)
    fit = inference.fit_classical_noise(frame[["rbw_hz", "q_measured", "q_se"]].to_numpy(),
                                        cfg.probe, cfg.mod, cfg.det)
    i0 = mean_photocurrent(cfg.probe, cfg.det)
    frame["q_model"] = analytic.q_advantage_curve(frame["rbw_hz"].to_numpy(), cfg.probe.squeezing_phi,
                                                  cfg.mod.delta_m, fit.value, i0)
    logger.info("fitted var_h = %.3g +- %.1g", fit.value, fit.stderr)
    meta = _meta(cfg, phi=f"{cfg.probe.squeezing_phi:.6g}", reps=cfg.reps,
                 fit_var_h=f"{fit.value:.6g}", fit_stderr=f"{fit.stderr:.3g}",
                 fit_residual_norm=f"{fit.residual_norm:.4g}", **_model_tags(cfg))
    return ExperimentOutput("sweep-rbw", frame, meta, fit=fit)


def run_trace_fig2a(cfg: ExperimentConfig) -> ExperimentOutput:
    """
    Squeezed and antisqueezed spectra around the sideband, relative to the
    QNL level, electronic noise subtracted and the antisqueezed trace referred
    to the reference shot level.
    """
    settings = cfg.trace
    det, mod = cfg.det, cfg.mod
    sample_rate = settings.sample_rate or timesim.default_sample_rate(mod, det)
    duration = math.ceil(det.m_avg) / det.rbw
    rng = freqsim.rep_rng(cfg.seed, 0, 0, 0)

    reference = cfg.probe
    squeezed = _with_phi(reference, phi_from_db(settings.squeeze_db))
    antisqueezed = _with_phi(reference, phi_from_db(settings.antisqueeze_db))
    if settings.antisqueeze_power is not None:
        antisqueezed = replace(antisqueezed, power_avg=settings.antisqueeze_power)

    def spectrum(trace):
        return timesim.analyze(trace, mod.omega_mod, det.rbw, det.m_avg, span=settings.span, load_r=det.load_r)

    dark = spectrum(timesim.synthesize_dark(det, duration, sample_rate, rng))
    qnl = timesim.shot_level(mean_photocurrent(reference, det), det.rbw, det.load_r)
    frames = []
    for label, probe in (("squeezed", squeezed), ("antisqueezed", antisqueezed)):
        trace = timesim.synthesize(probe, mod, det, duration, sample_rate, rng, h_cutoff=settings.h_cutoff)
        result = timesim.subtract_electronic(spectrum(trace), dark)
        if probe.power_avg != reference.power_avg:
            level = timesim.shot_level(mean_photocurrent(probe, det), det.rbw, det.load_r)
            result = timesim.correct_shot_level(result, level, qnl)
        with np.errstate(divide="ignore"):
            rel_db = 10 * np.log10(result.mean_power / qnl)
        frames.append(pd.DataFrame({"freq_hz": result.freqs, "power_rel_db": rel_db, "label": label}))
    meta = _meta(cfg, rbw_hz=f"{det.rbw:g}", m_avg=f"{det.m_avg:g}", sample_rate_hz=f"{sample_rate:.10g}")
    return ExperimentOutput("trace-fig2a", pd.concat(frames, ignore_index=True), meta)


def run_simulate(cfg: ExperimentConfig) -> ExperimentOutput:
    """Free-form frequency-domain run: one report row per repetition"""
    i0 = mean_photocurrent(cfg.probe, cfg.det)
    model = freqsim.build_model(cfg.probe, cfg.mod, cfg.det, i0=i0, h_distribution=cfg.h_distribution)
    reports = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.threads) as executor:
        futures = {
            executor.submit(freqsim.run_repetition, cfg.probe, cfg.mod, cfg.det, cfg.k_samples, cfg.seed,
                            rep, model=model, delta_m_drift=cfg.delta_m_drift, i0=i0,
                            measured_floors=cfg.measured_floors): rep
            for rep in range(cfg.reps)
        }
        for future in concurrent.futures.as_completed(futures):
            reports[futures[future]] = future.result()
    logger.info("✓ %d repetitions completed", len(reports))
    frame = freqsim.reports_to_frame([reports[rep] for rep in range(cfg.reps)])
    return ExperimentOutput("simulate", frame, _meta(cfg, delta_m=f"{cfg.mod.delta_m:g}"))


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    target: float
    tolerance: float

    @property
    def margin(self):
        """|value - target| in units of the tolerance; <= 1 passes"""
        return abs(self.value - self.target) / self.tolerance

    @property
    def passed(self):
        return bool(self.margin <= 1.0)


def _moment_checks(cfg, rng) -> List[Check]:
    n = 200_000
    probe = _with_phi(cfg.probe, 0.6918)
    det = replace(cfg.det, rbw=1e4, m_avg=1.0, var_h=1e-5, var_n=3e14)
    model = freqsim.build_model(probe, cfg.mod, det)
    p_side = freqsim.draw_sideband(model, rng, n).p_value
    p_floor = freqsim.draw_floor(model, rng, n).p_value
    mean_side, mean_floor, _ = freqsim.model_mean_powers(model)
    exact_var = freqsim.model_var_sideband_power(model)
    # SE of a sample variance from the sample fourth central moment
    var_se = math.sqrt((np.mean((p_side - p_side.mean()) ** 4) - p_side.var() ** 2) / n)
    leading = analytic.var_sideband_power(probe, cfg.mod, det)
    noise_rel = 1 / (2 * analytic.snr(cfg.mod.delta_m, mean_photocurrent(probe, det), probe.squeezing_phi, det.rbw))
    return [
        Check("sideband mean vs model", float(p_side.mean()), mean_side, 3 * p_side.std() / math.sqrt(n)),
        Check("floor mean vs model", float(p_floor.mean()), mean_floor, 3 * p_floor.std() / math.sqrt(n)),
        Check("sideband variance vs exact model", float(p_side.var(ddof=1)), exact_var, 3 * var_se),
        Check("leading-order variance vs exact model", leading / exact_var, 1.0, 1.5 * noise_rel),
    ]


def _efficiency_check(cfg, rng) -> List[Check]:
    n = 20_000
    probe = _with_phi(cfg.probe, 0.6918)
    det = replace(cfg.det, rbw=1e4, m_avg=34.0, var_h=0.0, var_n=0.0)
    model = freqsim.build_model(probe, cfg.mod, det)
    triplets = freqsim.measure_triplets(model, det, rng, n=n)
    calib = analytic.mean_powers(probe, cfg.mod, det)
    triplets = analytic.SpectrumTriplet(triplets.p_omega, np.full(n, calib.p_floor_mean),
                                        np.full(n, calib.p_elec_mean))
    estimate = analytic.estimate_delta_m(triplets, probe.squeezing_phi, det.rbw, mean_photocurrent(probe, det))
    report = inference.variance_of(estimate.delta_m)
    bound = analytic.fisher_info(probe, cfg.mod, det).var_delta_m
    return [
        Check("estimator mean vs delta_m", float(np.mean(estimate.delta_m)), cfg.mod.delta_m,
              3 * math.sqrt(report.var / n)),
        Check("estimator variance / Cramer-Rao bound", report.var / bound, 1.0, 0.05),
    ]


def _q_check(cfg) -> List[Check]:
    det = replace(cfg.det, rbw=1e5, m_avg=34.0, var_h=0.0, var_n=0.0)
    small = replace(cfg, reps=min(cfg.reps, 60))
    results = run_arms(small, [
        (SQUEEZED_ARM, 0, _with_phi(cfg.probe, float(phi_from_db(-1.6))), det),
        (QNL_ARM, 0, _with_phi(cfg.probe, 1.0), det),
    ])
    q = inference.measured_q(results[(QNL_ARM, 0)], results[(SQUEEZED_ARM, 0)])
    return [Check("Monte Carlo Q at -1.6 dB", q.q, 1.445, max(0.09, 3 * q.q_se))]


def _timesim_check(cfg) -> List[Check]:
    mod = replace(cfg.mod, omega_mod=2e5)
    det = replace(cfg.det, rbw=1e4, m_avg=1.0, var_h=0.0, var_n=3e14)
    n = 4000
    triplets = timesim.simulate_triplets(cfg.probe, mod, det, n, cfg.seed, offset=cfg.offset)
    expected = analytic.mean_powers(cfg.probe, mod, det)
    return [
        Check("time-domain floor mean vs closed form", float(np.mean(triplets.p_floor)),
              expected.p_floor_mean, 3 * float(np.std(triplets.p_floor)) / math.sqrt(n)),
        Check("time-domain sideband mean vs closed form", float(np.mean(triplets.p_omega)),
              expected.p_omega_mean, 3 * float(np.std(triplets.p_omega)) / math.sqrt(n)),
    ]


def run_validate(cfg: ExperimentConfig) -> ExperimentOutput:
    """Deterministic invariant suite; one row per check with its margin"""
    rng = freqsim.rep_rng(cfg.seed, 2, 0, 0)
    i0 = mean_photocurrent(cfg.probe, cfg.det)
    phi_loss = inference.infer_generated_squeezing(10 ** -0.16, 0.84, 0.81)
    fisher = analytic.fisher_curve(1e6, np.array([1.0, 10 ** -0.16]), cfg.mod.delta_m, cfg.det.var_h, i0)
    checks = [
        Check("Q_opt at -1.6 dB", float(analytic.quantum_advantage_opt(10 ** -0.16)), 1.45, 0.005),
        Check("Q_opt at Phi=0.74", float(analytic.quantum_advantage_opt(0.74)), 1.35, 0.005),
        Check("generated squeezing (dB)", float(db_from_phi(phi_loss)), -2.6, 0.05),
        Check("loss map round trip", float(inference.degrade_squeezing(phi_loss, 0.84 * 0.81)),
              10 ** -0.16, 1e-12),
        Check("crossover RBW (Hz)", analytic.crossover_rbw(cfg.mod.delta_m, cfg.det.var_h, i0, 1.0), 149.0, 2.0),
        Check("Fisher separation at 1 MHz", float(fisher[1] / fisher[0]), 10 ** 0.16, 0.01 * 10 ** 0.16),
    ]
    checks += _moment_checks(cfg, rng)
    checks += _efficiency_check(cfg, rng)
    checks += _q_check(cfg)
    checks += _timesim_check(cfg)
    frame = pd.DataFrame([{
        "check": c.name,
        "value": c.value,
        "target": c.target,
        "tolerance": c.tolerance,
        "margin": c.margin,
        "passed": c.passed,
    } for c in checks])
    passed = bool(frame["passed"].all())
    return ExperimentOutput("validate", frame, _meta(cfg), passed=passed)


def run_fit(source) -> ExperimentOutput:
    """
    Fit a CSV written by sweep-phi (Var-vs-Phi line) or sweep-rbw
    (classical noise). The sweep-rbw fit rebuilds probe/mod/det from the
    command defaults overridden by the model keys in the CSV header.
    """
    tags, df = inference.read_results_csv(source)
    kind = tags.get("kind")
    if kind == "sweep-phi":
        fit = inference.fit_var_vs_phi(df[["phi", "var_delta_m", "var_se"]].to_numpy())
        qs = [fit.q_at(phi) for phi in df["phi"]]
        frame = pd.DataFrame({
            "phi": df["phi"],
            "q_fit": [q.q for q in qs],
            "q_fit_se": [q.q_se for q in qs],
        })
    elif kind == "sweep-rbw":
        overrides = {key: tags[key] for key in FIT_MODEL_KEYS if key in tags}
        if "probe.squeeze_db" not in overrides and "phi" in tags:
            overrides["probe.squeeze_db"] = str(db_from_phi(float(tags["phi"])))
        cfg = build_experiment_config("sweep-rbw", overrides=overrides, seed=int(tags.get("seed", 0)))
        fit = inference.fit_classical_noise(df[["rbw_hz", "q_measured", "q_se"]].to_numpy(),
                                            cfg.probe, cfg.mod, cfg.det)
        frame = pd.DataFrame([fit.summary()])
    else:
        raise CsvVersionError(f"no fit defined for CSV kind {kind!r}")
    return ExperimentOutput("fit", frame, {"source_kind": kind}, fit=fit)


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentOutput]] = {
    "theory-fig1d": run_theory_fig1d,
    "sweep-phi": run_sweep_phi,
    "sweep-rbw": run_sweep_rbw,
    "trace-fig2a": run_trace_fig2a,
    "simulate": run_simulate,
    "validate": run_validate,
}


def run(cfg: ExperimentConfig) -> ExperimentOutput:
    if cfg.kind not in RUNNERS:
        raise ConfigError(f"experiment kind {cfg.kind!r} is not runnable from a config",
                          key="experiment.kind")
    logger.info("running %s (seed=%d, threads=%d)", cfg.kind, cfg.seed, cfg.threads)
    return RUNNERS[cfg.kind](cfg)
