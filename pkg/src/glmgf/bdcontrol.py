"""Discretized stochastic-control representation of Phi (dim <= 2).

The smoothed value function

    V(s, x) = lambda^-1 * ln E exp(lambda * F(x + sqrt(1-s) g)),  V(1,.) = F,

solves dV/ds = -(1/2)(Lap V + lambda ||grad V||^2). Phi(lambda) = V(0, 0)
also equals the extremum over drift controls u of

    E[ F(lambda * int_0^1 u ds + W(1)) - (lambda/2) * int_0^1 ||u||^2 ds ],

a supremum for lambda > 0 and an infimum for lambda < 0, attained at
u(s) = grad V(s, Y(s)) along the controlled path.

This module builds V on a time-space grid by per-node Gaussian quadrature
(the closed integral form is an oracle independent of any PDE stepping),
measures the HJB residual with centered differences, simulates controlled
Euler-Maruyama path ensembles under grid-derived / constant / zero drift
policies, and checks both the attainment of Phi by the grid policy and the
sup/inf direction for every policy.

Paths are clamped at the box boundary; a clamp fraction above 1% is an
error, so boundary effects are visible rather than silent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import logsumexp

from . import gaussmc
from .reporting import CheckResult, make_check

DEFAULT_GAP_TOL = 0.02


class PathClampError(RuntimeError):
    """More than 1% of path steps hit the box boundary."""


def _probe_subgradient_sup(f, xmax: float, dim: int) -> float:
    """sup of ||subgradient|| over the box, by deterministic probing."""
    if f.lipschitz is not None:
        return f.lipschitz
    rng = Generator(Philox(key=[2718281828, 0]))
    pts = rng.uniform(-xmax, xmax, size=(256, dim))
    corners = np.array(np.meshgrid(*([[-xmax, xmax]] * dim), indexing="ij"))
    corners = corners.reshape(dim, -1).T
    best = 0.0
    for x in np.vstack([pts, corners, np.zeros((1, dim))]):
        best = max(best, float(np.linalg.norm(f.subgradient(x))))
    return best


@dataclass(frozen=True)
class ControlProblem:
    functional: object
    lam: float
    steps: int = 1000
    dx: float = 0.05
    xmax: float = 8.0
    gh_nodes: int | None = None  # default 128 in 1-d, 24 in 2-d

    def __post_init__(self):
        f = self.functional
        if f.dim > 2:
            raise ValueError("control problems limited to dim <= 2")
        if not (math.isfinite(self.lam) and abs(self.lam) >= gaussmc.LAMBDA_EPS):
            raise ValueError("lambda must be finite and nonzero")
        if self.steps < 4:
            raise ValueError("need at least 4 time steps")
        if not (self.dx > 0 and self.xmax > 0):
            raise ValueError("dx and xmax must be positive")
        grad_sup = _probe_subgradient_sup(f, self.xmax, f.dim)
        required = 4.0 + 4.0 * abs(self.lam) * grad_sup
        if self.xmax < required - 1e-12:
            raise ValueError(
                f"xmax={self.xmax} too small: need >= 4 + 4|lambda|*sup||subgrad|| "
                f"= {required:g} so controlled paths rarely exit")
        if self.gh_nodes is None:
            object.__setattr__(self, "gh_nodes", 128 if f.dim == 1 else 24)

    @property
    def dim(self) -> int:
        return self.functional.dim

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    @property
    def axis(self) -> np.ndarray:
        npts = int(round(2.0 * self.xmax / self.dx)) + 1
        return np.linspace(-self.xmax, self.xmax, npts)


@dataclass(frozen=True)
class ValueGrid:
    problem: ControlProblem
    values: np.ndarray  # (steps+1, npts[, npts])
    grads: np.ndarray   # (steps+1, npts[, npts], dim)

    def csv(self, stride: int | None = None) -> str:
        from .reporting import csv_text
        p = self.problem
        if stride is None:
            stride = max(1, p.steps // 20)
        axis = p.axis
        rows = []
        layers = list(range(0, p.steps + 1, stride))
        if layers[-1] != p.steps:
            layers.append(p.steps)
        if p.dim == 1:
            header = ("s", "x", "value")
            for k in layers:
                s = k * p.dt
                for j, x in enumerate(axis):
                    rows.append((s, x, self.values[k, j]))
        else:
            header = ("s", "x1", "x2", "value")
            for k in layers:
                s = k * p.dt
                for j1, x1 in enumerate(axis):
                    for j2, x2 in enumerate(axis):
                        rows.append((s, x1, x2, self.values[k, j1, j2]))
        return csv_text(header, rows)


def _layer_values(problem: ControlProblem, s: float) -> np.ndarray:
    """V(s, .) on the space grid by tensor Gauss-Hermite at scale sqrt(1-s)."""
    f = problem.functional
    lam = problem.lam
    axis = problem.axis
    scale = math.sqrt(max(1.0 - s, 0.0))
    pts, logw = gaussmc.gh_nodes(problem.gh_nodes, problem.dim)
    if problem.dim == 1:
        if scale == 0.0:
            return f.eval_many(axis[:, None])
        sample = axis[:, None, None] + scale * pts[None, :, :]
        fv = f.eval_many(sample.reshape(-1, 1)).reshape(len(axis), -1)
        return logsumexp(logw[None, :] + lam * fv, axis=1) / lam
    npts = len(axis)
    if scale == 0.0:
        mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
        return f.eval_many(mesh.reshape(-1, 2)).reshape(npts, npts)
    out = np.empty((npts, npts))
    row = np.empty((npts, 2))
    for j1, x1 in enumerate(axis):  # row-by-row to bound memory
        row[:, 0] = x1
        row[:, 1] = axis
        sample = row[:, None, :] + scale * pts[None, :, :]
        fv = f.eval_many(sample.reshape(-1, 2)).reshape(npts, -1)
        out[j1] = logsumexp(logw[None, :] + lam * fv, axis=1) / lam
    return out


def build_value_grid(problem: ControlProblem, threads: int | None = None) -> ValueGrid:
    """V(s, x) at every grid node; the s = 1 layer is set to F exactly."""
    shape = (len(problem.axis),) * problem.dim
    n_evals = (problem.steps + 1) * len(problem.axis) ** problem.dim \
        * problem.gh_nodes ** problem.dim
    if n_evals > 1e9:  # 2-d at 1-d default resolution would be ~1e13 evals
        raise ValueError(
            f"value grid needs ~{n_evals:.1e} functional evaluations; "
            f"coarsen dx/steps/gh_nodes (2-d problems need much coarser grids)")
    values = np.empty((problem.steps + 1,) + shape)

    def work(k):
        values[k] = _layer_values(problem, k * problem.dt)

    layers = range(problem.steps + 1)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, layers))
    else:
        for k in layers:
            work(k)
    if not np.all(np.isfinite(values)):
        k_bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise RuntimeError(f"non-finite quadrature value at layer s={k_bad * problem.dt:g}")
    grads = np.empty(values.shape + (problem.dim,))
    for k in range(problem.steps + 1):
        g = np.gradient(values[k], problem.dx)  # centered interior, one-sided faces
        if problem.dim == 1:
            grads[k, :, 0] = g
        else:
            grads[k, :, :, 0] = g[0]
            grads[k, :, :, 1] = g[1]
    return ValueGrid(problem=problem, values=values, grads=grads)


def hjb_residual(grid: ValueGrid) -> float:
    """max |dV/ds + (Lap V + lambda ||grad V||^2)/2| over interior nodes with
    s <= 1 - 2 dt (the boundary layer near s = 1 is excluded: F may be
    nonsmooth there). All derivatives by centered differences."""
    p = grid.problem
    if len(p.axis) < 3:
        raise ValueError("grid too coarse: need >= 3 nodes per axis")
    V = grid.values
    dt, dx, lam = p.dt, p.dx, p.lam
    kmax = p.steps - 2  # s_k <= 1 - 2 dt
    if kmax < 1:
        raise ValueError("grid too coarse: need steps >= 4")
    Vs = (V[2:kmax + 2] - V[0:kmax]) / (2.0 * dt)
    Vi = V[1:kmax + 1]
    if p.dim == 1:
        Vx = (Vi[:, 2:] - Vi[:, :-2]) / (2.0 * dx)
        Vxx = (Vi[:, 2:] - 2.0 * Vi[:, 1:-1] + Vi[:, :-2]) / dx ** 2
        resid = Vs[:, 1:-1] + 0.5 * (Vxx + lam * Vx ** 2)
    else:
        V1 = (Vi[:, 2:, 1:-1] - Vi[:, :-2, 1:-1]) / (2.0 * dx)
        V2 = (Vi[:, 1:-1, 2:] - Vi[:, 1:-1, :-2]) / (2.0 * dx)
        V11 = (Vi[:, 2:, 1:-1] - 2.0 * Vi[:, 1:-1, 1:-1] + Vi[:, :-2, 1:-1]) / dx ** 2
        V22 = (Vi[:, 1:-1, 2:] - 2.0 * Vi[:, 1:-1, 1:-1] + Vi[:, 1:-1, :-2]) / dx ** 2
        resid = Vs[:, 1:-1, 1:-1] + 0.5 * (V11 + V22 + lam * (V1 ** 2 + V2 ** 2))
    return float(np.max(np.abs(resid)))


# ---------------------------------------------------------------------------
# Drift policies and controlled paths
# ---------------------------------------------------------------------------


class DriftPolicy:
    name = "policy"

    def drift(self, s: float, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ZeroPolicy(DriftPolicy):
    name = "zero"

    def drift(self, s, Y):
        return np.zeros_like(Y)


class ConstantPolicy(DriftPolicy):
    def __init__(self, u0):
        self.u0 = np.asarray(u0, dtype=float).reshape(-1)
        self.name = "constant:" + ",".join("%g" % v for v in self.u0)

    def drift(self, s, Y):
        return np.broadcast_to(self.u0, Y.shape)


class GridPolicy(DriftPolicy):
    """u(s, x) = grad V interpolated from the grid: multilinear in x,
    piecewise-constant (left endpoint) in s, matching Euler-Maruyama's order."""

    name = "optimal-from-grid"

    def __init__(self, grid: ValueGrid):
        self.grid = grid

    def drift(self, s, Y):
        p = self.grid.problem
        k = min(int(s / p.dt + 1e-9), p.steps - 1)
        g = self.grid.grads[k]
        axis = p.axis
        if p.dim == 1:
            return np.interp(Y[:, 0], axis, g[:, 0])[:, None]
        # bilinear interpolation on the shared axis grid
        out = np.empty_like(Y)
        idx = np.clip(((Y - axis[0]) / p.dx).astype(int), 0, len(axis) - 2)
        frac = (Y - axis[idx]) / p.dx
        i1, i2 = idx[:, 0], idx[:, 1]
        w1, w2 = frac[:, 0], frac[:, 1]
        for comp in range(2):
            g00 = g[i1, i2, comp]
            g10 = g[i1 + 1, i2, comp]
            g01 = g[i1, i2 + 1, comp]
            g11 = g[i1 + 1, i2 + 1, comp]
            out[:, comp] = ((1 - w1) * (1 - w2) * g00 + w1 * (1 - w2) * g10
                            + (1 - w1) * w2 * g01 + w1 * w2 * g11)
        return out


@dataclass(frozen=True)
class PathEnsemble:
    n_paths: int
    seed: int
    terminals: np.ndarray     # Y(1), shape (n_paths, dim)
    costs: np.ndarray         # int_0^1 ||u||^2/2 ds per path
    objective_mean: float
    objective_stderr: float
    clamp_count: int
    clamp_fraction: float
    policy_name: str = ""

    def csv(self) -> str:
        from .reporting import csv_text
        dim = self.terminals.shape[1]
        header = tuple(f"y{i+1}" for i in range(dim)) + ("cost",)
        rows = [tuple(t) + (c,) for t, c in zip(self.terminals, self.costs)]
        return csv_text(header, rows)


def control_objective(problem: ControlProblem, policy: DriftPolicy,
                      n_paths: int, seed: int) -> PathEnsemble:
    """Euler-Maruyama ensemble of Y' = lambda u dt + dW with left-endpoint
    cost accumulation; objective = mean of F(Y(1)) - (lambda/2) int ||u||^2.

    Step noise comes from a per-step keyed Philox stream, so the ensemble is
    a pure function of (seed, n_paths, steps)."""
    if n_paths < 1:
        raise ValueError("need n_paths >= 1")
    p = problem
    dim = p.dim
    Y = np.zeros((n_paths, dim))
    cost = np.zeros(n_paths)
    sqdt = math.sqrt(p.dt)
    clamped = 0
    for k in range(p.steps):
        u = policy.drift(k * p.dt, Y)
        cost += 0.5 * np.sum(u * u, axis=1) * p.dt
        xi = Generator(Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, k])).standard_normal((n_paths, dim))
        Y = Y + p.lam * u * p.dt + sqdt * xi
        out = np.abs(Y) > p.xmax
        clamped += int(np.count_nonzero(np.any(out, axis=1)))
        np.clip(Y, -p.xmax, p.xmax, out=Y)
    fvals = p.functional.eval_many(Y)
    obj = fvals - p.lam * cost
    frac = clamped / (n_paths * p.steps)
    if frac > 0.01:
        raise PathClampError(
            f"{frac:.1%} of steps clamped at the box boundary under policy "
            f"{policy.name!r}; enlarge xmax or tame the drift")
    return PathEnsemble(
        n_paths=n_paths, seed=seed,
        terminals=Y, costs=cost,
        objective_mean=float(np.mean(obj)),
        objective_stderr=float(np.std(obj, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        clamp_count=clamped, clamp_fraction=frac,
        policy_name=policy.name,
    )


def default_policies(grid: ValueGrid) -> list[DriftPolicy]:
    dim = grid.problem.dim
    ones = np.ones(dim)
    return [GridPolicy(grid), ZeroPolicy(),
            ConstantPolicy(0.5 * ones), ConstantPolicy(-0.5 * ones)]


def verify_representation(problem: ControlProblem, policies: list[DriftPolicy],
                          n_paths: int = 100_000, seed: int = 0,
                          gap_tol: float = DEFAULT_GAP_TOL,
                          slack_sigmas: float = 3.0,
                          quad_nodes: int = 64,
                          ensembles_out: dict | None = None) -> CheckResult:
    """(i) the grid policy attains Phi within gap_tol; (ii) every policy's
    objective sits on the correct side of Phi: <= for lambda > 0 (sup
    branch), >= for lambda < 0 (inf branch).

    ``ensembles_out``, if given, collects the simulated PathEnsemble per
    policy name (for CSV export)."""
    grid_policies = [p for p in policies if isinstance(p, GridPolicy)]
    if not grid_policies or len(policies) < 3:
        raise ValueError("need the grid policy plus at least 2 other policies")
    f, lam = problem.functional, problem.lam
    phi_ref = gaussmc.quadrature_phi(f, lam, nodes_per_dim=quad_nodes)
    margins, slacks, labels = [], [], []
    per_policy = {}
    for policy in policies:
        ens = control_objective(problem, policy, n_paths, seed)
        if ensembles_out is not None:
            ensembles_out[policy.name] = ens
        per_policy[policy.name] = {
            "objective": ens.objective_mean,
            "stderr": ens.objective_stderr,
            "clamp_fraction": ens.clamp_fraction,
        }
        if policy is grid_policies[0]:
            margins.append(gap_tol - abs(ens.objective_mean - phi_ref))
            slacks.append(slack_sigmas * ens.objective_stderr)
            labels.append("optimal-gap")
        direction = phi_ref - ens.objective_mean if lam > 0 else ens.objective_mean - phi_ref
        margins.append(direction)
        slacks.append(slack_sigmas * ens.objective_stderr + gap_tol)
        labels.append(f"direction:{policy.name}")
    details = {
        "phi_quadrature": phi_ref,
        "lambda": lam,
        "branch": "sup" if lam > 0 else "inf",
        "n_paths": n_paths,
        "policies": per_policy,
    }
    return make_check("bd_representation", margins, slacks, labels, details=details)
