from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from massfuse import (
    CovariateMatrix,
    DesignSpec,
    EstimatedN,
    KnownN,
    NonProbSample,
    ProbSample,
    VarianceSettings,
    estimate,
    estimate_glm_mi,
    estimate_pmm,
    naive_mean,
    select_k_dynamic,
)
from massfuse.engine import ImputationSpec
from massfuse.errors import InconsistentAssignment
from massfuse.estimators import choose_k
from massfuse.matching import MatchAssignment, match_pmm_a
from massfuse.regression import FittedModel, fit_linear

from conftest import make_pair

FAST = VarianceSettings(mini_bootstrap_M=10, bootstrap_L=20, seed=3)


def test_all_donors_gives_donor_mean(rng):
    N, n_b = 1000, 20
    donors, recipients = make_pair(rng, n_a=15, n_b=n_b, pi=n_b / N, design=DesignSpec.srswor(N, n_b))
    a = MatchAssignment(np.tile(np.arange(15), (n_b, 1)), 15, "pmm_a")
    assert estimate_pmm(a, donors, recipients, KnownN(N)) == pytest.approx(donors.y.mean(), rel=1e-13)


def test_single_recipient():
    d = NonProbSample(CovariateMatrix(np.zeros((1, 1)), ("x",)), np.array([4.0]))
    r = ProbSample(CovariateMatrix(np.zeros((1, 1)), ("x",)), np.array([0.5]))
    a = MatchAssignment(np.array([[0]]), 1, "nn")
    assert estimate_pmm(a, d, r, KnownN(2)) == 4.0


def test_matches_exact_rational_formula(rng):
    donors, recipients = make_pair(rng, n_a=12, n_b=7)
    idx = rng.integers(0, 12, size=(7, 3))
    a = MatchAssignment(idx, 3, "pmm_a")
    N = 123.0
    total = sum(
        Fraction(1) / Fraction(float(recipients.pi[i])) * sum(Fraction(float(donors.y[j])) for j in idx[i]) / 3
        for i in range(7)
    )
    assert estimate_pmm(a, donors, recipients, KnownN(N)) == pytest.approx(float(total / Fraction(N)), rel=1e-14)
    nhat = sum(Fraction(1) / Fraction(float(p)) for p in recipients.pi)
    assert estimate_pmm(a, donors, recipients, EstimatedN()) == pytest.approx(float(total / nhat), rel=1e-14)


def test_inconsistent_assignment(rng):
    donors, recipients = make_pair(rng, n_a=5, n_b=3)
    with pytest.raises(InconsistentAssignment):
        estimate_pmm(MatchAssignment(np.zeros((2, 1)), 1, "nn"), donors, recipients)
    with pytest.raises(InconsistentAssignment):
        estimate_pmm(MatchAssignment(np.full((3, 1), 5), 1, "nn"), donors, recipients)


def test_glm_constant_model():
    N, n_b = 500, 10
    r = ProbSample(CovariateMatrix(np.ones((n_b, 1)), ("x",)), np.full(n_b, n_b / N), DesignSpec.srswor(N, n_b))
    m = FittedModel("linear", ("x",), True, np.array([3.25, 0.0]))
    assert estimate_glm_mi(m, r, KnownN(N)) == pytest.approx(3.25, rel=1e-14)


def test_glm_consistent_at_large_n():
    rng = np.random.default_rng(8)
    N = 10_000
    x = rng.normal(2, 1, N)
    y = 1 + 2 * x + rng.normal(size=N)
    ia = rng.choice(N, 2000, replace=False)
    ib = rng.choice(N, 2000, replace=False)
    m = fit_linear(CovariateMatrix(x[ia, None], ("x",)), y[ia])
    r = ProbSample(CovariateMatrix(x[ib, None], ("x",)), np.full(2000, 0.2), DesignSpec.srswor(N, 2000))
    assert abs(estimate_glm_mi(m, r, N) - y.mean()) < 0.1


def test_glm_and_pmm_a_differ():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.5, 0.7, 2.4, 2.9])
    d = NonProbSample(CovariateMatrix(x[:, None], ("x",)), y)
    r = ProbSample(CovariateMatrix(np.array([[1.1], [2.2]]), ("x",)), np.array([0.5, 0.5]))
    m = fit_linear(d.x, d.y)
    a = match_pmm_a(m, d, r, 1)
    assert estimate_glm_mi(m, r, 4) != pytest.approx(estimate_pmm(a, d, r, 4), abs=1e-3)


def test_naive():
    x = CovariateMatrix(np.zeros((3, 1)), ("x",))
    assert naive_mean(NonProbSample(x, np.array([1.0, 2.0, 3.0]))) == 2.0
    assert naive_mean(NonProbSample(CovariateMatrix(np.zeros((1, 1)), ("x",)), np.array([7.5]))) == 7.5


def test_dynamic_singleton_grid(rng):
    donors, recipients = make_pair(rng)
    k, res = select_k_dynamic(donors, recipients, "pmm_a", ImputationSpec(), [1], FAST)
    assert k == 1 and res.k == 1


def test_dynamic_picks_largest_k_for_pure_noise():
    rng = np.random.default_rng(11)
    # outcome unrelated to x: averaging more donors only removes noise
    X = rng.normal(size=(400, 1))
    d = NonProbSample(CovariateMatrix(X, ("x",)), rng.normal(size=400))
    r = ProbSample(CovariateMatrix(rng.normal(size=(60, 1)), ("x",)), np.full(60, 0.01))
    k, res = select_k_dynamic(d, r, "nn", ImputationSpec(), [1, 2, 4, 8, 16, 32], FAST, KnownN(6000))
    assert k == 32


def test_choose_k_rules():
    grid, scores = [1, 5, 25, 50], [3.0, 2.0, 2.5, 1.0]
    assert choose_k(grid, scores, "global") == 50
    assert choose_k(grid, scores, "first_local") == 5
    assert choose_k([1, 2], [1.0, 1.0], "global") == 1
    with pytest.raises(ValueError):
        choose_k(grid, scores, "best")


def test_estimate_contract(rng):
    donors, recipients = make_pair(rng, n_a=60, n_b=25)
    for method in ("pmm_a", "pmm_b", "nn", "glm"):
        res = estimate(donors, recipients, method, k=3, n_mode=KnownN(1000), settings=FAST)
        assert res.ci_low <= res.point <= res.ci_high
        assert res.variance_total == pytest.approx(res.variance_v1 + res.variance_v2, rel=1e-12)
        assert res.variance_v1 >= 0 and res.variance_v2 >= 0
        assert res.as_dict()["method"] == method
    boot = estimate(donors, recipients, "pmm_a", k=3, n_mode=1000, variance="bootstrap", settings=FAST)
    assert boot.ci_low <= boot.point <= boot.ci_high


def test_estimate_is_reproducible(rng):
    donors, recipients = make_pair(rng, n_a=50, n_b=20)
    a = estimate(donors, recipients, "pmm_b", k=2, settings=FAST)
    b = estimate(donors, recipients, "pmm_b", k=2, settings=FAST)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 4), c=st.floats(0.01, 100))
def test_point_invariants(seed, k, c):
    rng = np.random.default_rng(seed)
    n_b, N = 12, 480
    donors, recipients = make_pair(rng, n_a=20, n_b=n_b)
    idx = rng.integers(0, 20, size=(n_b, k))
    a = MatchAssignment(idx, k, "pmm_a")
    # self-weighting design: plain mean of imputed values
    flat = ProbSample(recipients.x, np.full(n_b, n_b / N))
    assert estimate_pmm(a, donors, flat, KnownN(N)) == pytest.approx(donors.y[idx].mean(axis=1).mean(), rel=1e-12)
    # estimated N ignores a common rescaling of pi
    scaled = ProbSample(recipients.x, recipients.pi * min(c, 1 / recipients.pi.max()))
    assert estimate_pmm(a, donors, scaled) == pytest.approx(estimate_pmm(a, donors, recipients), rel=1e-12)
    # linear in donor outcomes
    doubled = NonProbSample(donors.x, 2 * donors.y)
    assert estimate_pmm(a, doubled, recipients, N) == pytest.approx(2 * estimate_pmm(a, donors, recipients, N), rel=1e-12)
