"""Pass/fail numerical checks for the inequalities Phi(lambda) satisfies.

Five checks, all one-sided with explicit, reported slack (default: 3
statistical standard errors plus an absolute tolerance of 1e-3):

* convexity        second differences of the estimated curve are >= 0
* subgaussian      ln E e^{lam (F - EF)} <= lam^2 Var(F)/2 for lam <= 0
* phi_gap          |Phi(lam) - EF| <= |lam| Var(F)/2 for lam <= 0
* dlog_lipschitz   |Phi'(lam) - Phi'(lam')| <= |ln(lam/lam')| Var(F), lam < 0
* small_deviation  P(F - EF <= -t) <= exp(-t^2 / (2 Var F)) for t > 0

The variance-based small-deviation bound is also compared (reported, not
asserted) against the Lipschitz baseline exp(-t^2/(2 L^2)) and the weaker
exp(-t^2/(1000 Var)) constant; the auditor asserts the Poincare direction
Var <= L^2 wherever a Lipschitz constant is declared, which is the sense in
which the variance bound improves the Lipschitz one.

Sample sizes are fixed up front; the checks never adapt m until they pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gaussmc
from .reporting import AuditReport, CheckResult, make_check

DEFAULT_SLACK_SIGMAS = 3.0
DEFAULT_ABS_TOL = 1e-3


def default_convexity_grid() -> np.ndarray:
    return np.linspace(-3.0, 3.0, 25)  # step 0.25


def default_negative_grid() -> np.ndarray:
    return np.linspace(-3.0, 0.0, 13)  # step 0.25


def default_dlog_grid(num: int = 12) -> np.ndarray:
    """Geometric grid on [-3, -0.125]: the log-ratio bound degenerates as
    lambda -> 0^-, so geometric spacing probes the interesting regime."""
    ratio = (0.125 / 3.0) ** (1.0 / (num - 1))
    return -3.0 * ratio ** np.arange(num)


def default_t_grid() -> np.ndarray:
    return np.arange(0.5, 3.0 + 1e-12, 0.5)


@dataclass(frozen=True)
class AuditConfig:
    seed: int
    samples: int = 1_000_000
    chunk_size: int = gaussmc.DEFAULT_CHUNK
    threads: int = 1
    slack_sigmas: float = DEFAULT_SLACK_SIGMAS
    abs_tol: float = DEFAULT_ABS_TOL
    convexity_lambdas: np.ndarray = field(default_factory=default_convexity_grid)
    negative_lambdas: np.ndarray = field(default_factory=default_negative_grid)
    dlog_lambdas: np.ndarray = field(default_factory=default_dlog_grid)
    t_grid: np.ndarray = field(default_factory=default_t_grid)


# ---------------------------------------------------------------------------
# Individual checks
# ---------------------------------------------------------------------------


def check_convexity(curve: gaussmc.PhiCurve, tol: float = DEFAULT_ABS_TOL,
                    slack_sigmas: float = DEFAULT_SLACK_SIGMAS) -> CheckResult:
    """Second differences of phi-hat over a uniform grid are >= -slack."""
    lam = curve.lambdas
    if len(lam) < 3:
        raise ValueError("convexity check needs at least 3 grid points")
    spacing = np.diff(lam)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12):
        raise ValueError("convexity check requires a uniform lambda grid")
    d = curve.phi[:-2] - 2.0 * curve.phi[1:-1] + curve.phi[2:]
    se = np.sqrt(curve.stderr[:-2] ** 2 + 4.0 * curve.stderr[1:-1] ** 2 + curve.stderr[2:] ** 2)
    slacks = tol + slack_sigmas * se
    return make_check("convexity", d, slacks, lam[1:-1], details={
        "second_differences": d.tolist(),
        "propagated_stderr": se.tolist(),
        "grid_step": float(spacing[0]),
    })


def check_subgaussian(f, bank: gaussmc.SampleBank, lambdas,
                      slack_sigmas: float = DEFAULT_SLACK_SIGMAS,
                      tol: float = DEFAULT_ABS_TOL,
                      threads: int | None = None,
                      values: np.ndarray | None = None) -> CheckResult:
    """ln E-hat e^{lam (F - mean)} <= lam^2 Var-hat / 2 at every lam <= 0."""
    grid = gaussmc._validated_grid(lambdas)
    if np.any(grid > 0):
        raise ValueError("subgaussian check requires lambda <= 0")
    if values is None:
        values = gaussmc.evaluate_on_bank(f, bank, threads)
    mom = gaussmc.moments_from_values(values)
    centered = values - mom.mean
    m = bank.m
    margins, slacks, ses = [], [], []
    lhs_list, rhs_list = [], []
    for lam in grid:
        if abs(lam) < gaussmc.LAMBDA_EPS:
            lhs, se_lhs = 0.0, 0.0
        else:
            lhs, rel_sd = gaussmc.log_mean_exp_with_relsd(lam * centered, bank.chunk_size)
            se_lhs = rel_sd / math.sqrt(m)
        rhs = lam * lam * mom.variance / 2.0
        se_rhs = lam * lam * mom.stderr_variance / 2.0
        se = math.hypot(se_lhs, se_rhs)
        margins.append(rhs - lhs)
        slacks.append(slack_sigmas * se + tol)
        ses.append(se)
        lhs_list.append(lhs)
        rhs_list.append(rhs)
    return make_check("subgaussian", margins, slacks, grid, details={
        "lambdas": grid.tolist(),
        "lhs": lhs_list,
        "rhs": rhs_list,
        "margins": [float(v) for v in margins],
        "point_stderr": ses,
        "mean": mom.mean,
        "variance": mom.variance,
    })


def check_phi_gap(curve: gaussmc.PhiCurve, moments: gaussmc.MomentEstimate,
                  slack_sigmas: float = DEFAULT_SLACK_SIGMAS,
                  tol: float = DEFAULT_ABS_TOL) -> CheckResult:
    """|phi(lam) - mean| <= (|lam|/2) Var-hat at every lam <= 0."""
    lam = curve.lambdas
    if np.any(lam > 0):
        raise ValueError("phi-gap check requires lambda <= 0")
    margins, slacks, ses = [], [], []
    for j, l in enumerate(lam):
        gap = abs(curve.phi[j] - moments.mean)
        bound = abs(l) / 2.0 * moments.variance
        se = math.sqrt(curve.stderr[j] ** 2 + moments.stderr_mean ** 2
                       + (abs(l) / 2.0 * moments.stderr_variance) ** 2)
        margins.append(bound - gap)
        slacks.append(slack_sigmas * se + tol)
        ses.append(se)
    return make_check("phi_gap", margins, slacks, lam, details={
        "lambdas": lam.tolist(),
        "margins": [float(v) for v in margins],
        "point_stderr": ses,
        "mean": moments.mean,
        "variance": moments.variance,
    })


def _derivative_estimates(curve: gaussmc.PhiCurve):
    """Centered 3-point Phi' at interior nodes of a (possibly non-uniform)
    grid, with propagated stderr and a discretization allowance.

    The exact 3-point scheme has leading error -(h1 h2 / 6) Phi'''(xi); the
    allowance uses a divided-difference estimate of Phi''' so statistical and
    discretization error stay separate.
    """
    lam, phi, se = curve.lambdas, curve.phi, curve.stderr
    K = len(lam)
    third = []
    for j in range(K - 3):
        # 6 * third divided difference over lam[j..j+3]
        dd = phi[j:j + 4].copy()
        pts = lam[j:j + 4]
        for order in range(1, 4):
            dd = (dd[1:] - dd[:-1]) / (pts[order:] - pts[:-order])
        third.append(6.0 * dd[0])
    deriv, deriv_se, allow, locs = [], [], [], []
    for i in range(1, K - 1):
        h1 = lam[i] - lam[i - 1]
        h2 = lam[i + 1] - lam[i]
        cm = -h2 / (h1 * (h1 + h2))
        c0 = (h2 - h1) / (h1 * h2)
        cp = h1 / (h2 * (h1 + h2))
        deriv.append(cm * phi[i - 1] + c0 * phi[i] + cp * phi[i + 1])
        deriv_se.append(math.sqrt((cm * se[i - 1]) ** 2 + (c0 * se[i]) ** 2
                                  + (cp * se[i + 1]) ** 2))
        stencils = [j for j in (i - 2, i - 1) if 0 <= j < len(third)]
        f3 = max(abs(third[j]) for j in stencils) if stencils else 0.0
        allow.append(h1 * h2 / 6.0 * f3)
        locs.append(lam[i])
    return np.array(locs), np.array(deriv), np.array(deriv_se), np.array(allow)


def check_dlog_lipschitz(curve: gaussmc.PhiCurve, moments: gaussmc.MomentEstimate,
                         slack_sigmas: float = DEFAULT_SLACK_SIGMAS,
                         tol: float = DEFAULT_ABS_TOL) -> CheckResult:
    """|Phi'(l) - Phi'(l')| <= |ln(l/l')| Var-hat for all interior pairs, l, l' < 0."""
    lam = curve.lambdas
    if len(lam) < 3:
        raise ValueError("dlog check needs at least 3 grid points")
    if np.any(lam >= 0):
        raise ValueError("dlog check requires a strictly negative lambda grid")
    locs, deriv, deriv_se, allow = _derivative_estimates(curve)
    if len(locs) < 2:  # a 3-point grid has one interior node and no pairs
        return CheckResult(name="dlog_lipschitz", passed=True, worst_margin=0.0,
                           location=None, slack_used=0.0,
                           details={"note": "vacuous: fewer than 2 interior points"})
    margins, slacks, labels = [], [], []
    for i in range(len(locs)):
        for j in range(i + 1, len(locs)):
            lnr = abs(math.log(locs[i] / locs[j]))
            lhs = abs(deriv[i] - deriv[j])
            bound = lnr * moments.variance
            se = math.sqrt(deriv_se[i] ** 2 + deriv_se[j] ** 2
                           + (lnr * moments.stderr_variance) ** 2)
            margins.append(bound - lhs)
            slacks.append(slack_sigmas * se + allow[i] + allow[j] + tol)
            labels.append(f"({locs[i]:g},{locs[j]:g})")
    return make_check("dlog_lipschitz", margins, slacks, labels, details={
        "interior_lambdas": locs.tolist(),
        "derivatives": deriv.tolist(),
        "derivative_stderr": deriv_se.tolist(),
        "discretization_allowance": allow.tolist(),
        "variance": moments.variance,
    })


def check_small_deviation(f, bank: gaussmc.SampleBank, t_grid,
                          slack_sigmas: float = DEFAULT_SLACK_SIGMAS,
                          tol: float = DEFAULT_ABS_TOL,
                          threads: int | None = None,
                          values: np.ndarray | None = None) -> CheckResult:
    """p-hat(F - mean <= -t) <= exp(-t^2 / (2 Var-hat)) + slack at every t.

    Also reports (never asserts) the ratios of the variance bound to the
    Lipschitz baseline exp(-t^2/(2 L^2)) and to the 1000-constant variant.
    """
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or len(ts) == 0 or np.any(ts <= 0):
        raise ValueError("t grid must be positive")
    if values is None:
        values = gaussmc.evaluate_on_bank(f, bank, threads)
    mom = gaussmc.moments_from_values(values)
    m = bank.m
    margins, slacks = [], []
    rows = []
    for t in ts:
        tail = gaussmc.estimate_tail(f, bank, t, values=values)
        bound = math.exp(-t * t / (2.0 * mom.variance)) if mom.variance > 0 else 0.0
        se_p = math.sqrt(tail.p_hat * (1.0 - tail.p_hat) / m)
        se_bound = bound * (t * t / (2.0 * mom.variance ** 2)) * mom.stderr_variance \
            if mom.variance > 0 else 0.0
        margins.append(bound - tail.p_hat)
        slacks.append(slack_sigmas * math.hypot(se_p, se_bound) + tol)
        row = {"t": float(t), "p_hat": tail.p_hat, "ci_upper_95": tail.ci_upper_95,
               "bound": bound}
        if f.lipschitz:
            lip = math.exp(-t * t / (2.0 * f.lipschitz ** 2))
            row["lipschitz_bound"] = lip
            row["bound_over_lipschitz"] = bound / lip if lip > 0 else float("inf")
        if mom.variance > 0:
            pv = math.exp(-t * t / (1000.0 * mom.variance))
            row["pv_bound"] = pv
            row["bound_over_pv"] = bound / pv
        rows.append(row)
    return make_check("small_deviation", margins, slacks, ts, details={
        "variance": mom.variance,
        "mean": mom.mean,
        "per_t": rows,
    })


def check_variance_poincare(f, moments: gaussmc.MomentEstimate,
                            slack_sigmas: float = DEFAULT_SLACK_SIGMAS) -> CheckResult:
    """Var-hat <= L^2 (1 + sigmas * relative stderr): the Poincare direction
    that makes the variance bound an improvement over the Lipschitz one."""
    if f.lipschitz is None:
        raise ValueError("functional declares no Lipschitz constant")
    rel = moments.stderr_variance / moments.variance if moments.variance > 0 else 0.0
    margin = f.lipschitz ** 2 * (1.0 + slack_sigmas * rel) - moments.variance
    return make_check("variance_poincare", [margin], [0.0], ["Var<=L^2"], details={
        "variance": moments.variance,
        "lipschitz_sq": f.lipschitz ** 2,
        "relative_stderr": rel,
    })


# ---------------------------------------------------------------------------
# Full audit
# ---------------------------------------------------------------------------


def audit_all(f, config: AuditConfig) -> AuditReport:
    """Run every check on shared banks (fixed sample sizes, CRN across lambda)."""
    bank = gaussmc.make_bank(config.seed, f.dim, config.samples, config.chunk_size)
    values = gaussmc.evaluate_on_bank(f, bank, config.threads)
    mom = gaussmc.moments_from_values(values)
    sig, tol = config.slack_sigmas, config.abs_tol

    curve = gaussmc.estimate_phi_curve(f, bank, config.convexity_lambdas, values=values)
    neg_curve = gaussmc.estimate_phi_curve(f, bank, config.negative_lambdas, values=values)
    dlog_curve = gaussmc.estimate_phi_curve(f, bank, config.dlog_lambdas, values=values)

    checks = [
        check_convexity(curve, tol=tol, slack_sigmas=sig),
        check_subgaussian(f, bank, config.negative_lambdas, slack_sigmas=sig,
                          tol=tol, values=values),
        check_phi_gap(neg_curve, mom, slack_sigmas=sig, tol=tol),
        check_dlog_lipschitz(dlog_curve, mom, slack_sigmas=sig, tol=tol),
        check_small_deviation(f, bank, config.t_grid, slack_sigmas=sig,
                              tol=tol, values=values),
    ]
    if f.lipschitz is not None:
        checks.append(check_variance_poincare(f, mom, slack_sigmas=sig))

    report = AuditReport(checks=checks, metadata={
        "functional": f.name,
        "seed": config.seed,
        "samples": config.samples,
        "chunk_size": config.chunk_size,
        "slack_sigmas": sig,
        "abs_tol": tol,
        "convexity_lambdas": config.convexity_lambdas.tolist(),
        "negative_lambdas": config.negative_lambdas.tolist(),
        "dlog_lambdas": config.dlog_lambdas.tolist(),
        "t_grid": np.asarray(config.t_grid).tolist(),
        "mean": mom.mean,
        "variance": mom.variance,
    })
    report.artifacts["phi_curve"] = curve
    return report
