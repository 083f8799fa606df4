"""
Statistics over delta_m estimate ensembles: sample variance with standard
error, measured quantum advantage, Var-vs-Phi line fits, the classical-noise
fit of Q against RBW and loss-corrected squeezing inference.

Also owns the versioned CSV format every command writes.
"""
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from analytic import q_advantage_curve
from errors import CsvVersionError, DomainError, FitError
from params import PHYS, mean_photocurrent

CSV_VERSION = 1
CSV_MAGIC = "qsense-csv"


@dataclass(frozen=True)
class VarianceReport:
    estimates: np.ndarray
    var: float
    var_se: float
    phi: float = math.nan
    rbw: float = math.nan
    m_avg: float = math.nan
    n_below_floor: int = 0
    rep: int = 0
    n_degenerate: int = 0

    def __post_init__(self):
        if len(self.estimates) < 2:
            raise DomainError("a variance report needs at least 2 estimates")
        if self.var < 0 or self.var_se < 0:
            raise DomainError("variance and its standard error must be >= 0")


class QuantumAdvantage(NamedTuple):
    q: float
    q_se: float


@dataclass(frozen=True)
class FitResult:
    """
    Fitted parameter with 1-sigma uncertainty.

    Line fits also carry the intercept; `value` is then the slope.
    """
    parameter: str
    value: float
    stderr: float
    residual_norm: float
    n_points: int
    intercept: Optional[float] = None
    intercept_stderr: Optional[float] = None
    covariance: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise FitError(f"stderr must be >= 0, got {self.stderr}")

    def line(self, phi):
        return self.value * np.asarray(phi, dtype=float) + (self.intercept or 0.0)

    def q_at(self, phi) -> QuantumAdvantage:
        """Quantum advantage line(1)/line(Phi) with first-order uncertainty from the covariance"""
        if self.intercept is None:
            raise FitError("q_at needs a line fit")
        num, den = float(self.line(1.0)), float(self.line(phi))
        if den <= 0:
            raise DomainError(f"fitted variance at Phi={phi} is not positive")
        q = num / den
        # gradient of (s + c)/(s phi + c) in (slope, intercept)
        grad = np.array([(den - num * phi) / den ** 2, (den - num) / den ** 2])
        q_se = math.sqrt(max(float(grad @ self.covariance @ grad), 0.0)) if self.covariance is not None else 0.0
        return QuantumAdvantage(q, q_se)

    def summary(self) -> Dict[str, object]:
        out = {
            "parameter": self.parameter,
            "value": self.value,
            "stderr": self.stderr,
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
        }
        if self.intercept is not None:
            out["intercept"] = self.intercept
            out["intercept_stderr"] = self.intercept_stderr
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def variance_of(estimates, phi=math.nan, rbw=math.nan, m_avg=math.nan, n_below_floor=0, rep=0,
                n_degenerate=0) -> VarianceReport:
    """Unbiased sample variance; SE from Var(s^2) = 2 sigma^4/(k-1) under normality"""
    estimates = np.asarray(estimates, dtype=float)
    k = estimates.size
    if k < 2:
        raise DomainError(f"need at least 2 estimates, got {k}")
    var = float(np.var(estimates, ddof=1))
    return VarianceReport(
        estimates=estimates,
        var=var,
        var_se=var * math.sqrt(2.0 / (k - 1)),
        phi=phi,
        rbw=rbw,
        m_avg=m_avg,
        n_below_floor=n_below_floor,
        rep=rep,
        n_degenerate=n_degenerate,
    )


def pool_reports(reports: Sequence[VarianceReport]) -> VarianceReport:
    """
    Average of repeated variance measurements.

    var is the mean of the per-rep variances and var_se the standard error of
    that mean (the spread across reps); a single report passes through.
    """
    reports = list(reports)
    if not reports:
        raise DomainError("no reports to pool")
    if len(reports) == 1:
        return reports[0]
    variances = np.array([r.var for r in reports])
    first = reports[0]
    return VarianceReport(
        estimates=np.concatenate([r.estimates for r in reports]),
        var=float(variances.mean()),
        var_se=float(variances.std(ddof=1) / math.sqrt(variances.size)),
        phi=first.phi,
        rbw=first.rbw,
        m_avg=first.m_avg,
        n_below_floor=sum(r.n_below_floor for r in reports),
        rep=-1,
        n_degenerate=sum(r.n_degenerate for r in reports),
    )


def measured_q(var_qnl: VarianceReport, var_phi: VarianceReport) -> QuantumAdvantage:
    """Q = Var_QNL / Var_Phi with first-order propagated uncertainty"""
    if var_phi.var <= 0:
        raise DomainError("squeezed-arm variance must be > 0")
    q = var_qnl.var / var_phi.var
    rel_qnl = var_qnl.var_se / var_qnl.var if var_qnl.var > 0 else 0.0
    rel_phi = var_phi.var_se / var_phi.var
    return QuantumAdvantage(q, q * math.hypot(rel_qnl, rel_phi))


def fit_var_vs_phi(points) -> FitResult:
    """
    Weighted least-squares line var = slope * Phi + intercept.

    `points` holds (phi, var, var_se) triples. All-zero var_se means unit
    weights.
    """
    data = np.asarray(points, dtype=float).reshape(-1, 3)
    phi, var, se = data.T
    if np.unique(phi).size < 2:
        raise FitError("need at least two distinct Phi values", {"phi": phi.tolist()})
    if np.all(se == 0):
        se = np.ones_like(se)
    elif np.any(se <= 0):
        raise FitError("var_se must be > 0 for every point", {"var_se": se.tolist()})
    w = 1.0 / se
    design = np.column_stack([phi, np.ones_like(phi)])
    coef, _, _, _ = np.linalg.lstsq(design * w[:, None], var * w, rcond=None)
    covariance = np.linalg.inv((design * w[:, None] ** 2).T @ design)
    residuals = (var - design @ coef) * w
    return FitResult(
        parameter="slope",
        value=float(coef[0]),
        stderr=float(math.sqrt(covariance[0, 0])),
        residual_norm=float(np.linalg.norm(residuals)),
        n_points=phi.size,
        intercept=float(coef[1]),
        intercept_stderr=float(math.sqrt(covariance[1, 1])),
        covariance=covariance,
    )


def fit_classical_noise(points, probe, mod, det, rtol=1e-3) -> FitResult:
    """
    Fit Var(Re[H]) to measured Q(B) with the Fisher-ratio model.

    `points` holds (rbw, q, q_se) triples; probe/mod/det fix everything but
    var_h. Weighted chi-square is scanned on a log grid and refined with a
    bounded scalar minimisation. stderr is the Gauss-Newton value from the
    model slope at the optimum.
    """
    data = np.asarray(points, dtype=float).reshape(-1, 3)
    rbw, q_obs, q_se = data.T
    if np.unique(rbw).size < 3:
        raise FitError("need at least three distinct RBW points to identify var_h",
                       {"rbw_hz": rbw.tolist()})
    if np.any(q_se <= 0):
        raise FitError("q_se must be > 0 for every point", {"q_se": q_se.tolist()})
    phi = probe.squeezing_phi
    if phi == 1.0 or mod.delta_m == 0:
        raise FitError("Q does not depend on var_h for Phi = 1 or delta_m = 0",
                       {"phi": phi, "delta_m": mod.delta_m})
    i0 = mean_photocurrent(probe, det)

    def model(v):
        return q_advantage_curve(rbw, phi, mod.delta_m, v, i0)

    def chi2(v):
        return float(np.sum(((q_obs - model(v)) / q_se) ** 2))

    # var_h at which the classical term equals the quantum one at the median RBW
    scale = 2 * PHYS.q * float(np.median(rbw)) / (i0 * 4 * mod.delta_m ** 2)
    grid = np.concatenate([[0.0], scale * np.logspace(-5, 5, 201)])
    values = np.array([chi2(v) for v in grid])
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    diagnostics = {"grid_best": float(grid[best]), "chi2_best": float(values[best]),
                   "bracket": [float(lo), float(hi)]}
    if not np.isfinite(values[best]):
        raise FitError("chi-square is not finite on the search grid", diagnostics)
    if hi > lo:
        res = minimize_scalar(chi2, bounds=(lo, hi), method="bounded",
                              options={"xatol": max(rtol * 1e-1 * hi, 1e-300)})
        if not res.success:
            raise FitError(f"refinement did not converge: {res.message}", diagnostics)
        v_hat = float(res.x) if res.fun <= values[best] else float(grid[best])
    else:
        v_hat = float(grid[best])

    step = max(1e-4 * v_hat, 1e-6 * scale)
    slope = (model(v_hat + step) - model(max(v_hat - step, 0.0))) / (v_hat + step - max(v_hat - step, 0.0))
    information = float(np.sum((slope / q_se) ** 2))
    if information <= 0:
        raise FitError("data carry no information on var_h", diagnostics)
    return FitResult(
        parameter="var_h",
        value=v_hat,
        stderr=1.0 / math.sqrt(information),
        residual_norm=math.sqrt(chi2(v_hat)),
        n_points=rbw.size,
    )


def degrade_squeezing(phi_generated, eta):
    """Beam-splitter loss map: Phi_meas = 1 - eta (1 - Phi_gen)"""
    return 1 - eta * (1 - phi_generated)


def infer_generated_squeezing(phi_measured, eta_detect, eta_optical):
    """Invert the loss map with eta = eta_d * eta_opt"""
    eta = eta_detect * eta_optical
    if not 0 < eta <= 1:
        raise DomainError(f"total efficiency must lie in (0, 1], got {eta}")
    phi_generated = 1 - (1 - phi_measured) / eta
    if phi_generated <= 0:
        raise DomainError(
            f"Phi_meas={phi_measured} with eta={eta} implies unphysical Phi_gen={phi_generated}")
    return phi_generated


def write_results_csv(df: pd.DataFrame, target, kind, **meta):
    """
    Write a DataFrame with a versioned header comment line.

    `target` is a path or a text buffer.
    """
    tags = " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
    header = f"# {CSV_MAGIC} v{CSV_VERSION} kind={kind}" + (f" {tags}" if tags else "") + "\n"
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", newline="") as f:
            f.write(header)
            df.to_csv(f, index=False, float_format="%.10g")
    else:
        target.write(header)
        df.to_csv(target, index=False, float_format="%.10g")


def parse_header(line):
    parts = line.lstrip("#").split()
    if len(parts) < 3 or parts[0] != CSV_MAGIC:
        raise CsvVersionError(f"missing {CSV_MAGIC} header line")
    if parts[1] != f"v{CSV_VERSION}":
        raise CsvVersionError(f"unsupported CSV schema version {parts[1]!r}, expected v{CSV_VERSION}")
    return dict(p.split("=", 1) for p in parts[2:] if "=" in p)


def read_results_csv(source):
    """Read a versioned CSV; returns (header tags, DataFrame)"""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source) as f:
            text = f.read()
    else:
        text = source.read()
    first, _, rest = text.partition("\n")
    tags = parse_header(first)
    return tags, pd.read_csv(io.StringIO(rest), comment="#")
