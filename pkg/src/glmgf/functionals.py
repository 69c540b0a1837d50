"""Catalog of convex test functions F on R^n.

Each functional knows how to evaluate itself (single point and batched), how
to produce a supporting subgradient, its Lipschitz constant when one exists,
and closed-form reference values where they are known exactly:

* Linear(a, b):      Phi(lambda) = b + lambda * ||a||^2 / 2 for all lambda.
* EuclidNorm, n = 1: Phi(lambda) = lambda/2 + lambda^-1 * ln(2 N(lambda)),
                     N the standard normal cdf; Phi(0) = sqrt(2/pi).
* SkFreeEnergy N=1:  ln Z_1(x) = beta*x + ln(2 cosh h), so
                     Phi(lambda) = ln(2 cosh h) + lambda * beta^2 / 2.

Closed forms are hard-coded constants/formulas (never derived from the Monte
Carlo path) so they can serve as independent oracles.

Subgradient tie-breaks are deterministic: EuclidNorm returns 0 at the
origin, MaxCoord the indicator of the lowest-index maximizer.

``Composed(rho, inner)`` realizes F0(x) = inner(rho(x_1), ..., rho(x_n)) for
a convex scalar map rho; convexity of the composition needs the inner
functional to be coordinatewise nondecreasing, which is checked at
construction.

Two deliberately *non-convex* functionals, ``synthetic-concave`` (-||x||)
and ``synthetic-heavytail`` (-exp(x_1)), are provided as negative controls
for the audit checks; they are excluded from ``catalog()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logsumexp, ndtr, softmax

from .skmodel import (
    SkInstance,
    SkParams,
    default_disorder_samples,
    gibbs_spin_correlations,
    log_partition_bank_array,
)


class Functional:
    """Base class; concrete kinds define dim/eval_many/subgradient."""

    name: str = ""
    dim: int = 0
    lipschitz: float | None = None
    coordinatewise_nondecreasing: bool = False
    #: approximately-convex by construction; negative controls set False
    convex: bool = True
    #: desk-scale default Monte Carlo budget
    default_samples: int = 1_000_000

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval_one(self, x) -> float:
        return float(self.eval_many(self._point(x)[None, :])[0])

    def subgradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def closed_form_phi(self, lam: float) -> float | None:
        return None

    def closed_form_mean(self) -> float | None:
        return None

    def closed_form_variance(self) -> float | None:
        return None

    def _point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name}: expected point in R^{self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite input")
        return x

    def _batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected (m, {self.dim}) batch, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"{self.name}: non-finite input")
        return X

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class Linear(Functional):
    def __init__(self, a, b: float = 0.0):
        self.a = np.asarray(a, dtype=float).reshape(-1)
        if len(self.a) == 0 or not np.all(np.isfinite(self.a)):
            raise ValueError("a must be a non-empty finite vector")
        self.b = float(b)
        self.dim = len(self.a)
        self.lipschitz = float(np.linalg.norm(self.a))
        self.coordinatewise_nondecreasing = bool(np.all(self.a >= 0))
        avals = ",".join("%g" % v for v in self.a)
        self.name = f"linear:a={avals};b={self.b:g}"

    def eval_many(self, X):
        return self._batch(X) @ self.a + self.b

    def subgradient(self, x):
        self._point(x)
        return self.a.copy()

    def closed_form_phi(self, lam):
        return self.b + lam * float(self.a @ self.a) / 2.0

    def closed_form_mean(self):
        return self.b

    def closed_form_variance(self):
        return float(self.a @ self.a)


class EuclidNorm(Functional):
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.lipschitz = 1.0
        self.name = f"euclid:n={self.dim}"

    def eval_many(self, X):
        return np.linalg.norm(self._batch(X), axis=1)

    def subgradient(self, x):
        x = self._point(x)
        r = np.linalg.norm(x)
        if r == 0.0:
            return np.zeros(self.dim)  # 0 is a valid subgradient of ||.|| at 0
        return x / r

    def closed_form_phi(self, lam):
        if self.dim != 1:
            return None
        if lam == 0.0:
            return math.sqrt(2.0 / math.pi)
        # E e^{lam|g|} = 2 e^{lam^2/2} N(lam)
        return lam / 2.0 + math.log(2.0 * ndtr(lam)) / lam

    def closed_form_mean(self):
        # chi distribution with dim degrees of freedom
        return math.sqrt(2.0) * math.exp(gammaln((self.dim + 1) / 2.0) - gammaln(self.dim / 2.0))

    def closed_form_variance(self):
        return self.dim - self.closed_form_mean() ** 2


class MaxCoord(Functional):
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.lipschitz = 1.0
        self.coordinatewise_nondecreasing = True
        self.name = f"maxcoord:n={self.dim}"

    def eval_many(self, X):
        return self._batch(X).max(axis=1)

    def subgradient(self, x):
        x = self._point(x)
        g = np.zeros(self.dim)
        g[int(np.argmax(x))] = 1.0  # lowest-index maximizer
        return g


class LogSumExp(Functional):
    """tau * ln sum_i exp(x_i / tau): smooth convex stand-in for max."""

    def __init__(self, dim: int, temperature: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.dim = int(dim)
        self.temperature = float(temperature)
        self.lipschitz = 1.0  # gradient is a probability vector
        self.coordinatewise_nondecreasing = True
        self.name = f"lse:n={self.dim};tau={self.temperature:g}"

    def eval_many(self, X):
        X = self._batch(X)
        return self.temperature * logsumexp(X / self.temperature, axis=1)

    def subgradient(self, x):
        x = self._point(x)
        return softmax(x / self.temperature)


class SkFreeEnergy(Functional):
    """F(x) = ln Z_N(x) for the flattened N x N disorder matrix (dim = N^2)."""

    def __init__(self, params: SkParams):
        self.params = params
        self.dim = params.N * params.N
        self.lipschitz = params.beta * math.sqrt(params.N)
        self.default_samples = default_disorder_samples(params.N)
        self.name = f"sk:N={params.N};beta={params.beta:g};h={params.h:g}"

    def eval_many(self, X):
        X = self._batch(X)
        N = self.params.N
        xs = np.ascontiguousarray(X.reshape(len(X), N, N))
        return log_partition_bank_array(self.params, xs)

    def subgradient(self, x):
        x = self._point(x)
        N = self.params.N
        inst = SkInstance(self.params, x.reshape(N, N))
        corr = gibbs_spin_correlations(inst)
        return (self.params.beta / math.sqrt(N) * corr).reshape(-1)

    def closed_form_phi(self, lam):
        if self.params.N != 1:
            return None
        p = self.params
        return float(np.logaddexp(p.h, -p.h)) + lam * p.beta ** 2 / 2.0

    def closed_form_mean(self):
        if self.params.N != 1:
            return None
        return float(np.logaddexp(self.params.h, -self.params.h))

    def closed_form_variance(self):
        if self.params.N != 1:
            return None
        return self.params.beta ** 2


@dataclass(frozen=True)
class ScalarMap:
    """Convex scalar map rho with derivative; kinds: softplus, square, identity."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("softplus", "square", "identity"):
            raise ValueError(f"unknown scalar map {self.kind!r}")

    @property
    def nondecreasing(self) -> bool:
        return self.kind != "square"

    @property
    def max_abs_derivative(self) -> float | None:
        return 1.0 if self.kind in ("softplus", "identity") else None

    def value(self, x):
        if self.kind == "softplus":
            return np.logaddexp(0.0, x)
        if self.kind == "square":
            return np.square(x)
        return np.asarray(x, dtype=float)

    def derivative(self, x):
        if self.kind == "softplus":
            return expit(x)
        if self.kind == "square":
            return 2.0 * np.asarray(x, dtype=float)
        return np.ones_like(np.asarray(x, dtype=float))


class Composed(Functional):
    """inner(rho(x_1), ..., rho(x_n)); inner must be coordinatewise nondecreasing."""

    def __init__(self, rho: ScalarMap, inner: Functional):
        if not inner.coordinatewise_nondecreasing:
            raise ValueError(
                f"Composed requires a coordinatewise nondecreasing inner functional, "
                f"got {inner.name}")
        self.rho = rho
        self.inner = inner
        self.dim = inner.dim
        if rho.max_abs_derivative is not None and inner.lipschitz is not None:
            self.lipschitz = rho.max_abs_derivative * inner.lipschitz
        self.coordinatewise_nondecreasing = rho.nondecreasing
        self.name = f"composed:rho={rho.kind};inner={inner.name}"

    def eval_many(self, X):
        return self.inner.eval_many(self.rho.value(self._batch(X)))

    def subgradient(self, x):
        x = self._point(x)
        return self.rho.derivative(x) * self.inner.subgradient(self.rho.value(x))


class NegatedNorm(Functional):
    """-||x||: concave, NOT convex. Negative control for the audit checks."""

    convex = False

    def __init__(self, dim: int = 1):
        self.dim = int(dim)
        self.lipschitz = 1.0
        self.name = "synthetic-concave"

    def eval_many(self, X):
        return -np.linalg.norm(self._batch(X), axis=1)

    def subgradient(self, x):
        x = self._point(x)
        r = np.linalg.norm(x)
        return np.zeros(self.dim) if r == 0.0 else -x / r


class NegatedExp(Functional):
    """-exp(x_1): concave with a heavy lower tail relative to its variance.

    Negative control for the small-deviation check: P(F - EF <= -t) beats
    exp(-t^2 / (2 Var F)) decisively for t around 8.
    """

    convex = False

    def __init__(self):
        self.dim = 1
        self.name = "synthetic-heavytail"

    def eval_many(self, X):
        return -np.exp(self._batch(X)[:, 0])

    def subgradient(self, x):
        x = self._point(x)
        return np.array([-math.exp(x[0])])


def catalog() -> dict[str, Functional]:
    """Desk-scale audit catalog (negative controls not included).

    Members keep sd(F) around 1 or below: the plain-MC exponential-moment
    estimator saturates (bias the delta-method stderr cannot see) once
    |lambda| * sd(F) grows past ~sqrt(ln m), so the default lambda grids in
    [-3, 3] stay inside the valid regime for every member.
    """
    return {
        "linear1": Linear([1.0], 0.0),
        "linear2": Linear([0.6, 0.8], 1.0),
        "euclid1": EuclidNorm(1),
        "euclid3": EuclidNorm(3),
        "euclid5": EuclidNorm(5),
        "maxcoord5": MaxCoord(5),
        "lse2": LogSumExp(2),
        "lse5": LogSumExp(5),
        "softplus1": Composed(ScalarMap("softplus"), Linear([1.0], 0.0)),
        "softplus-lse5": Composed(ScalarMap("softplus"), LogSumExp(5)),
        "sk4": SkFreeEnergy(SkParams(N=4, beta=1.0, h=0.0)),
    }


def _parse_params(text: str) -> dict[str, str]:
    out = {}
    for part in text.split(";"):
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"malformed parameter {part!r}")
        key, val = part.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def from_spec(spec: str) -> Functional:
    """Build a functional from a catalog name or a ``kind:key=val;...`` spec.

    Vector values use commas: ``linear:a=1,1;b=0``. The inner functional of
    ``composed`` is itself a spec without parameters (e.g. a catalog name).
    """
    spec = spec.strip()
    cat = catalog()
    if spec in cat:
        return cat[spec]
    if spec == "synthetic-concave":
        return NegatedNorm(1)
    if spec == "synthetic-heavytail":
        return NegatedExp()
    kind, _, params_text = spec.partition(":")
    kind = kind.strip().lower()
    params = _parse_params(params_text)
    try:
        if kind == "linear":
            a = [float(v) for v in params.get("a", "1").split(",")]
            return Linear(a, float(params.get("b", "0")))
        if kind == "euclid":
            return EuclidNorm(int(params.get("n", "1")))
        if kind == "maxcoord":
            return MaxCoord(int(params.get("n", "2")))
        if kind == "lse":
            return LogSumExp(int(params.get("n", "2")), float(params.get("tau", "1")))
        if kind == "sk":
            return SkFreeEnergy(SkParams(N=int(params.get("N", params.get("n", "4"))),
                                         beta=float(params.get("beta", "1")),
                                         h=float(params.get("h", "0"))))
        if kind == "composed":
            rho = ScalarMap(params.get("rho", "softplus"))
            return Composed(rho, from_spec(params.get("inner", "lse5")))
    except ValueError:
        raise
    except Exception as exc:  # malformed numerics etc.
        raise ValueError(f"cannot parse functional spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown functional spec {spec!r}")
