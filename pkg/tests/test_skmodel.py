import math

import numpy as np
import pytest
from scipy.special import logsumexp

from glmgf import skmodel
from glmgf.auditor import check_convexity
from glmgf.gaussmc import PhiCurve, moments_from_values
from glmgf.skmodel import (
    GammaCurve,
    SkInstance,
    SkParams,
    check_dfm_gap,
    check_gamma_lipschitz,
    check_superadditivity,
    default_sk_lambda_grid,
    disorder_bank,
    free_energy_variance,
    gamma_curve,
    log_partition,
    log_partition_bank,
    log_partition_naive,
)

SEED = 271828


def _naive_reference(x, beta, h):
    # written independently of the package's enumeration helpers
    N = x.shape[0]
    energies = []
    for state in range(2 ** N):
        sigma = np.array([1.0 if (state >> i) & 1 else -1.0 for i in range(N)])
        energies.append(beta / math.sqrt(N) * sigma @ x @ sigma + h * sigma.sum())
    return float(logsumexp(energies))


# ---------------------------------------------------------------------------
# partition functions
# ---------------------------------------------------------------------------


def test_n1_closed_form():
    inst = SkInstance(SkParams(1, 1.0, 0.0), np.array([[0.7]]))
    expected = 0.7 + math.log(2.0)
    assert log_partition(inst) == pytest.approx(expected, rel=1e-12)
    assert log_partition_naive(inst) == pytest.approx(expected, rel=1e-12)


def test_gray_matches_naive_small():
    rng = np.random.default_rng(SEED)
    inst = SkInstance(SkParams(2, 1.0, 0.5), rng.standard_normal((2, 2)))
    assert log_partition(inst) == pytest.approx(log_partition_naive(inst), rel=1e-10)


@pytest.mark.parametrize("N", range(1, 11))
def test_gray_matches_naive_random_instances(N):
    rng = np.random.default_rng(SEED + N)
    params = SkParams(N, 0.8, 0.3)
    for _ in range(20):
        inst = SkInstance(params, rng.standard_normal((N, N)))
        a, b = log_partition(inst), log_partition_naive(inst)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_gray_matches_independent_reference():
    rng = np.random.default_rng(SEED)
    for N in (3, 5):
        x = rng.standard_normal((N, N))
        inst = SkInstance(SkParams(N, 0.7, -0.2), x)
        assert log_partition(inst) == pytest.approx(_naive_reference(x, 0.7, -0.2), rel=1e-10)


def test_beta_zero_independent_spins():
    rng = np.random.default_rng(SEED)
    for h in (0.0, 0.5, 30.0):
        inst = SkInstance(SkParams(4, 0.0, h), rng.standard_normal((4, 4)))
        expected = 4.0 * float(np.logaddexp(h, -h))  # N ln(2 cosh h), overflow-safe
        assert log_partition(inst) == pytest.approx(expected, rel=1e-12)


def test_size_budget_enforced():
    with pytest.raises(ValueError):
        SkParams(21, 1.0, 0.0)
    with pytest.raises(ValueError):
        log_partition_naive(
            SkInstance(SkParams(13, 1.0, 0.0), np.zeros((13, 13))))


def test_instance_validation():
    with pytest.raises(ValueError):
        SkInstance(SkParams(2, 1.0, 0.0), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SkInstance(SkParams(2, 1.0, 0.0), np.array([[np.inf, 0], [0, 0]]))


def test_bank_evaluation_thread_invariance():
    params = SkParams(3, 1.0, 0.2)
    bank = disorder_bank(params, SEED, 2000, chunk_size=256)
    a = log_partition_bank(params, bank, threads=1)
    b = log_partition_bank(params, bank, threads=4)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# gamma curves
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bank_n1():
    return disorder_bank(SkParams(1, 1.0, 0.0), SEED, 20_000)


def test_gamma_n1_closed_form(bank_n1):
    # Gamma_1(lambda) = ln 2 + lambda/2 exactly (h = 0, beta = 1)
    params = SkParams(1, 1.0, 0.0)
    curve = gamma_curve(params, [-1.0], bank_n1)
    assert abs(curve.gamma[0] - (math.log(2.0) - 0.5)) <= 3.0 * curve.stderr[0]


def test_gamma_n1_with_field(bank_n1):
    params = SkParams(1, 1.0, 1.0)
    curve = gamma_curve(params, [-2.0], bank_n1)
    exact = math.log(2.0 * math.cosh(1.0)) - 1.0  # ln(2 cosh h) + lam beta^2/2
    assert abs(curve.gamma[0] - exact) <= 3.0 * curve.stderr[0]


def test_gamma_lambda0_is_disorder_mean(bank_n1):
    params = SkParams(1, 1.0, 0.0)
    lnz = log_partition_bank(params, bank_n1)
    curve = gamma_curve(params, [0.0], bank_n1, lnz=lnz)
    assert curve.gamma[0] == float(np.mean(lnz))


def test_gamma_csv_header(bank_n1):
    curve = gamma_curve(SkParams(1, 1.0, 0.0), [0.0], bank_n1)
    assert curve.csv().splitlines()[0] == "N,beta,h,lambda,gamma,stderr,n_disorder"


def test_free_energy_variance_n1(bank_n1):
    est = free_energy_variance(SkParams(1, 1.0, 0.0), bank_n1)
    assert abs(est.variance - 1.0) <= 3.0 * est.stderr_variance


def test_free_energy_variance_beta0(bank_n1):
    est = free_energy_variance(SkParams(1, 0.0, 0.4), bank_n1)
    assert est.variance == 0.0


def test_disorder_negation_symmetry():
    # with h = 0 the disorder law is symmetric, so mean ln Z agrees on +-bank
    params = SkParams(4, 1.0, 0.0)
    bank = disorder_bank(params, SEED, 4000)
    lnz = log_partition_bank(params, bank)
    xs = bank.samples.reshape(-1, 4, 4)
    lnz_neg = skmodel.log_partition_bank_array(params, -xs)
    a, b = moments_from_values(lnz), moments_from_values(lnz_neg)
    assert abs(a.mean - b.mean) <= 3.0 * math.hypot(a.stderr_mean, b.stderr_mean)


def test_gamma_rescaled_passes_convexity_check():
    # Phi_N = N * Gamma_N is the Phi of the free energy functional
    params = SkParams(2, 1.0, 0.0)
    bank = disorder_bank(params, SEED, 20_000)
    grid = np.arange(-2.0, 2.0 + 1e-12, 0.5)
    curve = gamma_curve(params, grid, bank)
    phi = PhiCurve(lambdas=curve.lambdas, phi=params.N * curve.gamma,
                   stderr=params.N * curve.stderr, m=bank.m, bank_seed=bank.seed)
    assert check_convexity(phi).passed


# ---------------------------------------------------------------------------
# SK checks
# ---------------------------------------------------------------------------


def test_lipschitz_check_n1_equality(bank_n1):
    params = SkParams(1, 1.0, 0.0)
    curve = gamma_curve(params, default_sk_lambda_grid(), bank_n1)
    chk = check_gamma_lipschitz(curve)
    assert chk.passed
    margins = np.array(chk.details["lipschitz_margins"])
    ses = np.array(chk.details["lipschitz_pair_stderr"])
    # N=1 saturates the bound: every pair sits at equality up to noise
    assert np.all(np.abs(margins) <= 4.0 * ses + 1e-12)


def test_lipschitz_check_beta0():
    params = SkParams(3, 0.0, 0.5)
    bank = disorder_bank(params, SEED, 2000)
    curve = gamma_curve(params, [-1.0, -0.5, 0.0], bank)
    chk = check_gamma_lipschitz(curve)
    assert chk.passed
    assert chk.worst_margin == pytest.approx(0.0, abs=1e-12)


def test_gamma_monotone_detected():
    params = SkParams(1, 1.0, 0.0)
    curve = GammaCurve(lambdas=np.array([-2.0, -1.0]),
                       gamma=np.array([0.5, 0.1]),  # decreasing: must fail
                       stderr=np.array([1e-6, 1e-6]),
                       n_disorder_samples=100, params=params)
    assert not check_gamma_lipschitz(curve).passed


def test_dfm_gap_n1_equality(bank_n1):
    chk = check_dfm_gap(SkParams(1, 1.0, 0.0), [-2.0, -1.0, -0.5], bank_n1)
    assert chk.passed
    # both sides equal |lambda|/2 for N=1: margins are pure noise
    assert abs(chk.worst_margin) <= chk.slack_used


def test_dfm_gap_n4_passes():
    params = SkParams(4, 1.0, 0.0)
    bank = disorder_bank(params, SEED, 5000)
    chk = check_dfm_gap(params, [-2.0, -1.0, -0.5, -1e-3], bank)
    assert chk.passed


def test_dfm_gap_rejects_field():
    bank = disorder_bank(SkParams(2, 1.0, 0.3), SEED, 100)
    with pytest.raises(ValueError):
        check_dfm_gap(SkParams(2, 1.0, 0.3), [-1.0], bank)


def test_dfm_trend_table_shape():
    rows = skmodel.dfm_trend_table(1.0, [1, 2], SEED, lambdas=[-1.0, -0.5],
                                   samples=2000)
    assert [r["N"] for r in rows] == [1, 2]
    for r in rows:
        assert r["var_over_N"] > 0
        assert r["max_gap_over_abs_lambda"] >= 0


def test_superadditivity_m1_n1():
    beta, h, lam = 1.0, 0.0, -1.0
    banks = tuple(disorder_bank(SkParams(size, beta, h), SEED + i, 20_000)
                  for i, size in enumerate((2, 1, 1)))
    chk = check_superadditivity(1, 1, beta, h, lam, banks)
    assert chk.passed
    # ln E Z_1^{-1} = -ln 2 + 1/2 exactly; the estimated RHS must match it
    rhs = chk.details["log_mean_M"] + chk.details["log_mean_N"]
    assert rhs == pytest.approx(1.0 - 2.0 * math.log(2.0), abs=0.05)
    # closed form ln E Z_2^{-1} = ln((1/4) e^{1/2} E sech N(0,1)) = -1.18569:
    # the raw log-means are subadditive, the lam^-1 normalization flips them
    assert chk.details["log_mean_MN"] == pytest.approx(-1.18569, abs=0.05)
    assert chk.details["normalized_lhs"] > chk.details["normalized_rhs"]


def test_superadditivity_beta0_equality():
    beta, h, lam = 0.0, 0.3, -0.5
    banks = tuple(disorder_bank(SkParams(size, beta, h), SEED + i, 500)
                  for i, size in enumerate((4, 2, 2)))
    chk = check_superadditivity(2, 2, beta, h, lam, banks)
    assert chk.passed
    assert chk.worst_margin == pytest.approx(0.0, abs=1e-9)


def test_superadditivity_rejects_bad_args():
    banks = tuple(disorder_bank(SkParams(s, 1.0, 0.0), SEED, 10)
                  for s in (2, 1, 1))
    with pytest.raises(ValueError):
        check_superadditivity(1, 1, 1.0, 0.0, 0.5, banks)
    with pytest.raises(ValueError):
        check_superadditivity(12, 12, 1.0, 0.0, -1.0, banks)
