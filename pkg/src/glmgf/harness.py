"""Experiment orchestration: configs, runs, and deterministic report emission.

A run is a pure function of its configuration: the JSON report, every CSV
artifact, and the exit code reproduce byte-for-byte under identical configs,
including when the thread count changes. Emission-only settings (output
directory, format, threads) are therefore excluded from the config echo that
lands in the report. Wall-clock timing is kept on the in-memory report and
logged to stderr, never written into artifacts.
"""

from __future__ import annotations

import math
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__, auditor, bdcontrol, gaussmc, skmodel
from .functionals import catalog, from_spec
from .reporting import CheckResult, csv_text, json_dumps, render_table, write_text

EXPERIMENTS = ("audit", "sk", "control", "all")
FORMATS = ("json", "table", "csv")


@dataclass
class RunConfig:
    experiment: str
    seed: int | None = None
    functional: str | None = None
    samples: int | None = None
    threads: int = 1
    chunk_size: int = gaussmc.DEFAULT_CHUNK
    slack_sigmas: float = 3.0
    abs_tol: float = 1e-3
    lambda_grid: str | None = None  # "lo:hi:step"
    t_grid: str | None = None
    out_dir: str | None = None
    fmt: str = "table"
    # sk experiment
    sk_N: int = 4
    sk_beta: float = 1.0
    sk_h: float = 0.0
    disorder_samples: int | None = None
    trend_Ns: tuple[int, ...] = (1, 2, 4, 8)
    # control experiment
    control_lambda: float = -1.0
    steps: int = 1000
    dx: float = 0.05
    xmax: float = 8.0
    paths: int = 100_000
    hjb_tol: float | None = None

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.seed is None:
            raise ValueError("seed is mandatory (no wall-clock default)")
        if not (0 <= int(self.seed) <= 0xFFFFFFFFFFFFFFFF):
            raise ValueError("seed must fit in 64 bits")
        if self.fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.samples is not None and self.samples < 2:
            raise ValueError("samples must be >= 2")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def echo(self) -> dict:
        """Run-semantic fields only: emission knobs (out_dir, fmt) and the
        thread count must not influence any numeric output."""
        skip = {"out_dir", "fmt", "threads"}
        out = {}
        for f in fields(self):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


@dataclass
class RunReport:
    config: dict
    checks: list[CheckResult]
    extras: dict = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)  # filename -> text
    timing_seconds: float = 0.0  # in-memory only; never serialized

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "artifact_version": __version__,
            "config": self.config,
            "checks": [c.to_dict() for c in self.checks],
            "extras": self.extras,
            "data_files": sorted(self.artifacts),
            "all_passed": self.all_passed,
        }


def parse_grid(spec: str) -> np.ndarray:
    """lo:hi:step, endpoints inclusive up to round-off."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid spec must be lo:hi:step, got {spec!r}")
    lo, hi, step = (float(p) for p in parts)
    if not (step > 0 and hi >= lo and all(map(math.isfinite, (lo, hi, step)))):
        raise ValueError(f"bad grid spec {spec!r}: need finite lo <= hi and step > 0")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _audit_config(config: RunConfig, f) -> auditor.AuditConfig:
    kwargs = dict(
        seed=config.seed,
        samples=config.samples if config.samples is not None else f.default_samples,
        chunk_size=config.chunk_size,
        threads=config.threads,
        slack_sigmas=config.slack_sigmas,
        abs_tol=config.abs_tol,
    )
    if config.lambda_grid:
        grid = parse_grid(config.lambda_grid)
        kwargs["convexity_lambdas"] = grid
        neg = grid[grid <= 0]
        if len(neg) >= 3:
            kwargs["negative_lambdas"] = neg
    if config.t_grid:
        kwargs["t_grid"] = parse_grid(config.t_grid)
    return auditor.AuditConfig(**kwargs)


def _run_audit_one(config: RunConfig, spec: str, prefix: str = "") -> tuple[list, dict, dict]:
    f = from_spec(spec)
    acfg = _audit_config(config, f)
    report = auditor.audit_all(f, acfg)
    checks = report.checks
    for c in checks:
        c.name = prefix + c.name
    artifacts = {f"{prefix or 'audit_'}phi_curve.csv".replace(":", "_"):
                 report.artifacts["phi_curve"].csv()}
    extras = {"metadata": report.metadata}
    return checks, artifacts, extras


def _run_audit(config: RunConfig) -> RunReport:
    if not config.functional:
        raise ValueError("audit requires a functional spec (--functional)")
    checks, artifacts, extras = _run_audit_one(config, config.functional)
    return RunReport(config=config.echo(), checks=checks,
                     extras={"audit": extras["metadata"]}, artifacts=artifacts)


def _run_sk(config: RunConfig) -> RunReport:
    params = skmodel.SkParams(N=config.sk_N, beta=config.sk_beta, h=config.sk_h)
    grid = parse_grid(config.lambda_grid) if config.lambda_grid \
        else skmodel.default_sk_lambda_grid()
    m = config.disorder_samples if config.disorder_samples is not None \
        else skmodel.default_disorder_samples(params.N)
    bank = skmodel.disorder_bank(params, config.seed, m, config.chunk_size)
    lnz = skmodel.log_partition_bank(params, bank, config.threads)
    curve = skmodel.gamma_curve(params, grid, bank, lnz=lnz)
    mom = gaussmc.moments_from_values(lnz)
    sig, tol = config.slack_sigmas, config.abs_tol

    checks = [skmodel.check_gamma_lipschitz(curve, slack_sigmas=sig, tol=tol)]
    extras: dict = {
        "free_energy_variance": {"mean": mom.mean, "variance": mom.variance,
                                 "stderr_variance": mom.stderr_variance,
                                 "n_disorder": m},
    }
    neg = curve.lambdas[curve.lambdas < 0]
    if params.h == 0.0 and len(neg) > 0:
        checks.append(skmodel.check_dfm_gap(params, neg, bank,
                                            threads=config.threads,
                                            slack_sigmas=sig, tol=tol))
        trend_Ns = [n for n in config.trend_Ns if n <= skmodel.MAX_SPINS]
        extras["dfm_trend"] = skmodel.dfm_trend_table(
            params.beta, trend_Ns, config.seed + 17, lambdas=neg,
            threads=config.threads)
    if params.N >= 2:
        M = params.N // 2
        N2 = params.N - M
        for lam in (-1.0, -0.5):
            banks = tuple(
                skmodel.disorder_bank(skmodel.SkParams(size, params.beta, params.h),
                                      config.seed + 1 + i, m, config.chunk_size)
                for i, size in enumerate((params.N, M, N2)))
            chk = skmodel.check_superadditivity(M, N2, params.beta, params.h, lam,
                                                banks, threads=config.threads,
                                                slack_sigmas=sig, tol=tol)
            chk.name = f"sk_superadditivity[lam={lam:g}]"
            checks.append(chk)
    artifacts = {"gamma_curve.csv": curve.csv()}
    return RunReport(config=config.echo(), checks=checks, extras=extras,
                     artifacts=artifacts)


def _run_control(config: RunConfig) -> RunReport:
    f = from_spec(config.functional or "euclid1")
    problem = bdcontrol.ControlProblem(f, config.control_lambda,
                                       steps=config.steps, dx=config.dx,
                                       xmax=config.xmax)
    grid = bdcontrol.build_value_grid(problem, threads=config.threads)
    policies = bdcontrol.default_policies(grid)
    ensembles: dict = {}
    rep = bdcontrol.verify_representation(problem, policies,
                                          n_paths=config.paths, seed=config.seed,
                                          slack_sigmas=config.slack_sigmas,
                                          ensembles_out=ensembles)
    checks = [rep]
    resid = bdcontrol.hjb_residual(grid)
    extras = {"hjb_max_residual": resid, "functional": f.name,
              "lambda": config.control_lambda}
    if config.hjb_tol is not None:
        checks.append(CheckResult(
            name="hjb_residual", passed=resid <= config.hjb_tol,
            worst_margin=config.hjb_tol - resid, location="max over grid",
            slack_used=0.0, details={"residual": resid, "tol": config.hjb_tol}))
    artifacts = {"value_grid.csv": grid.csv()}
    grid_ens = ensembles.get("optimal-from-grid")
    if grid_ens is not None:
        artifacts["paths.csv"] = grid_ens.csv()
    return RunReport(config=config.echo(), checks=checks, extras=extras,
                     artifacts=artifacts)


def _run_all(config: RunConfig) -> RunReport:
    checks: list[CheckResult] = []
    artifacts: dict[str, str] = {}
    extras: dict = {"catalog": {}}
    for name in catalog():
        cs, arts, ext = _run_audit_one(config, name, prefix=f"{name}:")
        checks.extend(cs)
        for fname, text in arts.items():
            artifacts[fname] = text
        extras["catalog"][name] = ext["metadata"]
    sk_report = _run_sk(config)
    checks.extend(sk_report.checks)
    artifacts.update(sk_report.artifacts)
    extras["sk"] = sk_report.extras
    control_report = _run_control(replace(config, functional="euclid1"))
    checks.extend(control_report.checks)
    artifacts.update(control_report.artifacts)
    extras["control"] = control_report.extras
    return RunReport(config=config.echo(), checks=checks, extras=extras,
                     artifacts=artifacts)


def run(config: RunConfig) -> RunReport:
    """Execute the configured experiment; deterministic given the config."""
    config.validate()
    t0 = time.perf_counter()
    runner = {"audit": _run_audit, "sk": _run_sk,
              "control": _run_control, "all": _run_all}[config.experiment]
    report = runner(config)
    report.timing_seconds = time.perf_counter() - t0
    return report


def emit_report(report: RunReport, fmt: str = "table",
                out_dir: str | None = None) -> tuple[str, list[str]]:
    """Serialize: returns (stdout text, written file paths)."""
    written = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "report.json")
        write_text(path, json_dumps(report.to_dict()) + "\n")
        written.append(path)
        for fname in sorted(report.artifacts):
            path = os.path.join(out_dir, fname)
            write_text(path, report.artifacts[fname])
            written.append(path)
    if fmt == "json":
        text = json_dumps(report.to_dict()) + "\n"
    elif fmt == "csv":
        if report.artifacts:
            text = report.artifacts[sorted(report.artifacts)[0]]
        else:
            text = csv_text(("check", "passed"), [(c.name, c.passed) for c in report.checks])
    else:
        summary = "all checks passed" if report.all_passed else "CHECK FAILURES"
        text = render_table(report.checks) + summary + "\n"
    print(f"run completed in {report.timing_seconds:.2f}s", file=sys.stderr)
    return text, written
