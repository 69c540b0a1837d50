"""Reproducible Gaussian sampling and log-space estimation of Phi(lambda).

For a functional F of an n-dimensional standard Gaussian vector g, the
normalized log-moment generating function is

    Phi(lambda) = lambda^-1 * ln E exp(lambda * F(g)),   Phi(0) = E F(g).

Estimation strategy:

* One immutable ``SampleBank`` is shared across every lambda on a grid
  (common random numbers), so estimated curves are smooth in lambda up to
  shared noise. Banks are generated chunk-by-chunk from a counter-based
  Philox stream keyed by (seed, dim, chunk index); sample i is therefore a
  pure function of (seed, n, chunk_size, i), independent of thread count
  and of the total sample count m.
* All exponential moments are accumulated in log space: per-chunk
  log-sum-exp partials combined by pairwise log-add in fixed chunk order.
  Overflow is impossible by construction; results depend only on
  (seed, m, chunk_size).
* Standard errors for Phi come from the delta method on the log of the
  mean: sd(exp(lambda F)) / (mean(exp(lambda F)) * sqrt(m) * |lambda|),
  with the sd/mean ratio formed entirely in log space.
* ``quadrature_phi`` is the deterministic cross-oracle for dim <= 3:
  adaptive Gauss-Kronrod in 1-d (robust to kinks such as |x|), tensor
  Gauss-Hermite in 2-d/3-d.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.random import Generator, Philox
from scipy import integrate
from scipy.special import logsumexp
from scipy.stats import beta as beta_dist

# Below this |lambda| the lambda^-1 prefactor amplifies round-off faster than
# the exponential tilt matters; Phi is continuous at 0 with Phi(0) = E F.
LAMBDA_EPS = 1e-6

DEFAULT_CHUNK = 65536

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EvaluationError(ValueError):
    """A functional produced a non-finite value on the bank."""


# ---------------------------------------------------------------------------
# Sample banks
# ---------------------------------------------------------------------------


def _chunk_normals(seed: int, n: int, chunk_index: int, rows: int) -> np.ndarray:
    key = [seed & _MASK64, ((n & _MASK32) << 32) | (chunk_index & _MASK32)]
    return Generator(Philox(key=key)).standard_normal((rows, n))


class SampleBank:
    """Reproducible bank of m i.i.d. standard Gaussian vectors in R^n.

    Chunk c holds rows [c*chunk_size, (c+1)*chunk_size); every chunk comes
    from its own keyed Philox stream and is always generated at full length,
    so row i never depends on m.
    """

    def __init__(self, seed: int, n: int, m: int, chunk_size: int = DEFAULT_CHUNK):
        if m < 1 or n < 1:
            raise ValueError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
        if chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if not (0 <= seed <= _MASK64):
            raise ValueError("seed must fit in 64 bits")
        self.seed = int(seed)
        self.n = int(n)
        self.m = int(m)
        self.chunk_size = int(chunk_size)
        parts = []
        for c in range(_num_chunks(m, chunk_size)):
            rows = _chunk_normals(self.seed, self.n, c, self.chunk_size)
            parts.append(rows)
        samples = np.concatenate(parts, axis=0)[:m]
        samples.setflags(write=False)
        self.samples = samples

    def sample(self, i: int) -> np.ndarray:
        return self.samples[i]

    def chunk_ranges(self) -> list[tuple[int, int]]:
        return [(lo, min(lo + self.chunk_size, self.m))
                for lo in range(0, self.m, self.chunk_size)]


def _num_chunks(m: int, chunk_size: int) -> int:
    return (m + chunk_size - 1) // chunk_size


def make_bank(seed: int, n: int, m: int, chunk_size: int = DEFAULT_CHUNK) -> SampleBank:
    return SampleBank(seed, n, m, chunk_size)


def evaluate_on_bank(f, bank: SampleBank, threads: int | None = None) -> np.ndarray:
    """F over the whole bank, chunked; raises EvaluationError on non-finite."""
    if bank.n != f.dim:
        raise ValueError(f"bank dimension {bank.n} != functional dimension {f.dim}")
    out = np.empty(bank.m)
    ranges = bank.chunk_ranges()

    def work(rng):
        lo, hi = rng
        out[lo:hi] = f.eval_many(bank.samples[lo:hi])

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, ranges))
    else:
        for rng in ranges:
            work(rng)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise EvaluationError(f"non-finite F at sample index {bad}")
    return out


# ---------------------------------------------------------------------------
# Deterministic log-space reductions
# ---------------------------------------------------------------------------


def pairwise_logaddexp(parts) -> float:
    """Combine log-values by pairwise log-add in fixed index order."""
    vals = [float(v) for v in parts]
    if not vals:
        return -math.inf
    while len(vals) > 1:
        nxt = [float(np.logaddexp(vals[i], vals[i + 1])) for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def chunked_logsumexp(a: np.ndarray, chunk_size: int = DEFAULT_CHUNK) -> float:
    parts = [logsumexp(a[lo:lo + chunk_size]) for lo in range(0, len(a), chunk_size)]
    return pairwise_logaddexp(parts)


def log_mean_exp(a: np.ndarray, chunk_size: int = DEFAULT_CHUNK) -> float:
    return chunked_logsumexp(a, chunk_size) - math.log(len(a))


def log_mean_exp_with_relsd(a: np.ndarray, chunk_size: int = DEFAULT_CHUNK) -> tuple[float, float]:
    """(ln mean(e^a), sd(e^a)/mean(e^a)), both formed in log space."""
    m = len(a)
    l1 = chunked_logsumexp(a, chunk_size)
    l2 = chunked_logsumexp(2.0 * a, chunk_size)
    log_mean = l1 - math.log(m)
    # E Y^2 / (E Y)^2 = exp(l2 + ln m - 2 l1); rel variance is that minus 1.
    log_ratio = l2 + math.log(m) - 2.0 * l1
    rel_var = math.expm1(min(max(log_ratio, 0.0), 700.0))
    return log_mean, math.sqrt(rel_var)


# ---------------------------------------------------------------------------
# Curve / moment / tail estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiCurve:
    lambdas: np.ndarray
    phi: np.ndarray
    stderr: np.ndarray
    m: int
    bank_seed: int

    def csv(self) -> str:
        from .reporting import csv_text
        rows = [(lam, p, se, self.m, self.bank_seed)
                for lam, p, se in zip(self.lambdas, self.phi, self.stderr)]
        return csv_text(("lambda", "phi", "stderr", "m", "seed"), rows)


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    variance: float
    stderr_mean: float
    stderr_variance: float
    m: int


@dataclass(frozen=True)
class TailEstimate:
    t: float
    p_hat: float
    ci_upper_95: float
    m: int


def _validated_grid(lambdas) -> np.ndarray:
    grid = np.asarray(lambdas, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("lambda grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(grid)):
        raise ValueError("lambda grid must be finite")
    grid = np.sort(grid)
    if len(np.unique(grid)) != len(grid):
        raise ValueError("lambda grid has duplicate entries")
    return grid


def estimate_phi_curve(f, bank: SampleBank, lambdas, threads: int | None = None,
                       values: np.ndarray | None = None) -> PhiCurve:
    """Phi-hat on a lambda grid from one shared bank (common random numbers)."""
    grid = _validated_grid(lambdas)
    if values is None:
        values = evaluate_on_bank(f, bank, threads)
    m = bank.m
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if m > 1 else 0.0
    phi = np.empty(len(grid))
    stderr = np.empty(len(grid))
    for j, lam in enumerate(grid):
        if abs(lam) < LAMBDA_EPS:
            phi[j] = mean
            stderr[j] = sd / math.sqrt(m)
        else:
            log_mean, rel_sd = log_mean_exp_with_relsd(lam * values, bank.chunk_size)
            phi[j] = log_mean / lam
            stderr[j] = rel_sd / (math.sqrt(m) * abs(lam))
    return PhiCurve(lambdas=grid, phi=phi, stderr=stderr, m=m, bank_seed=bank.seed)


def moments_from_values(values: np.ndarray) -> MomentEstimate:
    m = len(values)
    if np.all(values == values[0]):  # constant on the bank: exact zeros
        return MomentEstimate(float(values[0]), 0.0, 0.0, 0.0, m)
    mean = float(np.mean(values))
    if m < 2:
        return MomentEstimate(mean, 0.0, 0.0, 0.0, m)
    d = values - mean
    var = float(np.sum(d * d) / (m - 1))
    mu4 = float(np.mean(d ** 4))
    se_mean = math.sqrt(var / m)
    # Var(s^2) = (mu4 - sigma^4 (m-3)/(m-1)) / m
    se_var = math.sqrt(max(mu4 - var * var * (m - 3) / (m - 1), 0.0) / m)
    return MomentEstimate(mean, var, se_mean, se_var, m)


def estimate_moments(f, bank: SampleBank, threads: int | None = None,
                     values: np.ndarray | None = None) -> MomentEstimate:
    """Sample mean and unbiased (m-1)-denominator variance of F over the bank."""
    if values is None:
        values = evaluate_on_bank(f, bank, threads)
    return moments_from_values(values)


def clopper_pearson_upper(k: int, m: int) -> float:
    """Upper end of the exact two-sided 95% binomial interval (valid at k=0)."""
    if k >= m:
        return 1.0
    return float(beta_dist.ppf(0.975, k + 1, m - k))


def estimate_tail(f, bank: SampleBank, t: float, threads: int | None = None,
                  values: np.ndarray | None = None) -> TailEstimate:
    """Empirical lower tail P(F - mean(F) <= -t), centered at the same-bank mean."""
    if not t > 0:
        raise ValueError("t must be positive")
    if values is None:
        values = evaluate_on_bank(f, bank, threads)
    mean = float(np.mean(values))
    k = int(np.count_nonzero(values - mean <= -t))
    m = len(values)
    return TailEstimate(t=float(t), p_hat=k / m, ci_upper_95=clopper_pearson_upper(k, m), m=m)


# ---------------------------------------------------------------------------
# Quadrature oracle (dim <= 3)
# ---------------------------------------------------------------------------

_LOG_SQRT_PI = 0.5 * math.log(math.pi)


@lru_cache(maxsize=32)
def gh_nodes(nodes: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite nodes for E under N(0, I_dim): (points, log-weights)."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    z = np.sqrt(2.0) * x
    logw = np.log(w) - _LOG_SQRT_PI
    if dim == 1:
        pts = z[:, None]
        lw = logw.copy()
    else:
        grids = np.meshgrid(*([z] * dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        lw_grids = np.meshgrid(*([logw] * dim), indexing="ij")
        lw = np.add.reduce([g.ravel() for g in lw_grids])
    pts.setflags(write=False)
    lw.setflags(write=False)
    return pts, lw


def _adaptive_log_gauss_mean(f, lam: float, center: float, scale: float,
                             limit: int) -> float:
    """ln E exp(lam * F(center + scale*z)), z ~ N(0,1), by adaptive quadrature.

    The integrand is shifted by its max over a probe grid so the adaptive
    pass works on exp(log-integrand - shift) <= ~1 (no overflow).
    """
    R = 14.0
    zs = np.linspace(-R, R, 4001)
    pts = (center + scale * zs)[:, None]
    log_int = lam * f.eval_many(pts) - 0.5 * zs ** 2 - 0.5 * math.log(2.0 * math.pi)
    shift = float(np.max(log_int))

    def integrand(z):
        fval = f.eval_many(np.array([[center + scale * z]]))[0]
        return math.exp(lam * fval - 0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - shift)

    val, _ = integrate.quad(integrand, -R, R, limit=limit, epsabs=1e-13, epsrel=1e-12)
    return shift + math.log(val)


def quadrature_phi(f, lam: float, nodes_per_dim: int = 64,
                   center=None, scale: float = 1.0) -> float:
    """Deterministic Phi(lambda) for E over N(center, scale^2 I), dim <= 3.

    dim == 1 uses adaptive Gauss-Kronrod panels (accurate through kinks);
    dim 2 and 3 use a tensor Gauss-Hermite rule with ``nodes_per_dim`` nodes
    per axis. Everything is assembled in log space. |lambda| < LAMBDA_EPS
    returns the plain quadrature mean of F.
    """
    n = f.dim
    if n > 3:
        raise ValueError(f"quadrature oracle limited to dim <= 3, got {n}")
    if nodes_per_dim < 8:
        raise ValueError("nodes_per_dim must be >= 8")
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    if not scale > 0:
        raise ValueError("scale must be positive")
    if center is None:
        center = np.zeros(n)
    center = np.asarray(center, dtype=float).reshape(n)

    if n == 1:
        if abs(lam) < LAMBDA_EPS:
            R = 14.0

            def integrand(z):
                fval = f.eval_many(np.array([[center[0] + scale * z]]))[0]
                return fval * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

            val, _ = integrate.quad(integrand, -R, R, limit=max(50, nodes_per_dim),
                                    epsabs=1e-13, epsrel=1e-12)
            return float(val)
        log_mean = _adaptive_log_gauss_mean(f, lam, center[0], scale,
                                            limit=max(50, nodes_per_dim))
        return log_mean / lam

    pts, logw = gh_nodes(nodes_per_dim, n)
    fvals = f.eval_many(center[None, :] + scale * pts)
    if abs(lam) < LAMBDA_EPS:
        return float(np.sum(np.exp(logw) * fvals))
    return float(logsumexp(logw + lam * fvals)) / lam
