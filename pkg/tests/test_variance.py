import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from massfuse import CovariateMatrix, DesignSpec, NonProbSample, ProbSample, VarianceSettings
from massfuse.designs import joint_inclusion
from massfuse.engine import ImputationSpec
from massfuse.errors import DegenerateDonors, NegativeVariance, VarianceFloored
from massfuse.matching import MatchAssignment
from massfuse.rng import make_rng
from massfuse.variance import (
    bootstrap_variance,
    confidence_interval,
    unknown_n_variance,
    v1_from_values,
    variance_v1,
    variance_v2_minibootstrap,
)

from conftest import make_pair

SPEC = ImputationSpec()


def _direct_v1(values, M, pi, N):
    """Double sum over all pairs in exact rational arithmetic."""
    n = len(values)
    acc = Fraction(0)
    for i in range(n):
        for j in range(n):
            pij, a, b = Fraction(float(M[i, j])), Fraction(float(pi[i])), Fraction(float(pi[j]))
            acc += (pij - a * b) / (pij * a * b) * Fraction(float(values[i])) * Fraction(float(values[j]))
    return float(acc / Fraction(N) ** 2)


def test_poisson_v1_is_diagonal(rng):
    pi = rng.uniform(0.1, 0.9, 8)
    vals = rng.normal(size=8)
    J = joint_inclusion(DesignSpec.poisson(), pi)
    expected = np.sum((1 - pi) / pi**2 * vals**2) / 50.0**2
    assert v1_from_values(vals, J, 50.0) == pytest.approx(expected, rel=1e-13)


def test_zero_values_zero_v1():
    J = joint_inclusion(DesignSpec.srswor(10, 4), np.full(4, 0.4))
    assert v1_from_values(np.zeros(4), J, 10) == 0.0


def test_variance_v1_from_assignment(rng):
    N, n = 40, 5
    donors, recipients = make_pair(rng, n_a=9, n_b=n, pi=n / N, design=DesignSpec.srswor(N, n))
    a = MatchAssignment(rng.integers(0, 9, size=(n, 2)), 2, "nn")
    vals = donors.y[a.donors].mean(axis=1)
    M = joint_inclusion(recipients.design, recipients.pi).matrix()
    assert variance_v1(a, donors, recipients) == pytest.approx(_direct_v1(vals, M, recipients.pi, N), rel=1e-12)


def test_srswor_enumeration_oracle():
    z = np.array([1.3, -0.4, 2.2, 0.9, 3.1, -1.7])
    N, n = 6, 3
    design = DesignSpec.srswor(N, n)
    pi = np.full(n, n / N)
    estimates, v1s = [], []
    for s in itertools.combinations(range(N), n):
        vals = z[list(s)]
        estimates.append(np.sum(vals / pi) / N)
        J = joint_inclusion(design, pi)
        v1 = v1_from_values(vals, J, N)
        assert v1 == pytest.approx(_direct_v1(vals, J.matrix(), pi, N), rel=1e-12)
        v1s.append(v1)
    true_var = np.var(estimates)
    assert abs(np.mean(v1s) - true_var) <= 0.10 * true_var


def test_constant_donors_give_zero_v2(rng):
    donors, recipients = make_pair(rng, n_a=30, n_b=10)
    const = NonProbSample(donors.x, np.full(30, 2.0))
    for mode in ("replicate_mean", "pairwise_cov"):
        with pytest.warns(DegenerateDonors):
            v2 = variance_v2_minibootstrap(const, recipients, "pmm_a", SPEC, 3, VarianceSettings(mini_bootstrap_M=5, v2_mode=mode))
        assert v2 == 0.0


def test_identical_replicates_give_zero(monkeypatch, rng):
    import massfuse.variance as var

    # every replicate reuses the same stream
    monkeypatch.setattr(var, "child", lambda seed, *key: make_rng(seed))
    donors, recipients = make_pair(rng, n_a=30, n_b=10)
    s = VarianceSettings(mini_bootstrap_M=2, bootstrap_L=2)
    assert variance_v2_minibootstrap(donors, recipients, "nn", SPEC, 2, s, 100) == 0.0
    assert bootstrap_variance(donors, recipients, "nn", SPEC, 2, s, 100, v2=0.0).v1 == 0.0


def test_pairwise_mode_runs_and_is_nonnegative_on_poisson(rng):
    donors, recipients = make_pair(rng, n_a=40, n_b=12)
    v2 = variance_v2_minibootstrap(donors, recipients, "pmm_b", SPEC, 2, VarianceSettings(mini_bootstrap_M=8, v2_mode="pairwise_cov"), 300)
    assert v2 >= 0


def test_unknown_n_poisson_hand_expansion():
    pi = np.array([0.25, 0.5])
    y = np.array([2.0, -1.0])
    J = joint_inclusion(DesignSpec.poisson(), pi)
    Nhat = 4 + 2
    mu = (2 / 0.25 - 1 / 0.5) / Nhat
    v2 = 0.01
    # Poisson: only i == j terms survive
    v1 = ((1 - 0.25) / 0.25**2 * 4 + (1 - 0.5) / 0.5**2 * 1) / Nhat**2
    size = mu**2 / Nhat**2 * ((1 - 0.25) / 0.25 + (1 - 0.5) / 0.5)
    cross = 2 * mu / Nhat**2 * ((1 - 0.25) / 0.25**2 * 2 + (1 - 0.5) / 0.5**2 * -1)
    expected = v1 + v2 + size - cross
    assert expected > 0
    assert unknown_n_variance(y, J, mu, v2) == pytest.approx(expected, rel=1e-13)


def test_unknown_n_zero_point_drops_corrections(rng):
    pi = rng.uniform(0.2, 0.8, 6)
    y = rng.normal(size=6)
    J = joint_inclusion(DesignSpec.poisson(), pi)
    Nhat = np.sum(1 / pi)
    assert unknown_n_variance(y, J, 0.0, 0.5) == pytest.approx(J.bilinear("v1", y) / Nhat**2 + 0.5, rel=1e-13)


def test_display_coefficient_sum_closed_form():
    N, n = 50, 7
    pi = np.full(n, n / N)
    J = joint_inclusion(DesignSpec.srswor(N, n), pi)
    M = J.matrix()
    loop = sum((M[i, j] - pi[i] * pi[j]) / (pi[i] * pi[j]) for i in range(n) for j in range(n))
    p, c = n / N, n * (n - 1) / (N * (N - 1))
    closed = n * (1 - p) / p + n * (n - 1) * (c - p * p) / (p * p)
    assert J.coefficient_sum("display") == pytest.approx(loop, rel=1e-12)
    assert closed == pytest.approx(loop, rel=1e-12)


def test_negative_total_floored(rng):
    pi = np.full(5, 0.5)
    y = np.full(5, 10.0)
    J = joint_inclusion(DesignSpec.poisson(), pi)
    with pytest.warns(VarianceFloored):
        v = unknown_n_variance(y, J, 10.0, 0.0)
    assert v == pytest.approx(np.sum((1 - pi) / pi**2 * y**2) / np.sum(1 / pi) ** 2)


def test_bare_correction_variant(rng):
    pi = rng.uniform(0.3, 0.9, 4)
    y = rng.normal(size=4)
    J = joint_inclusion(DesignSpec.poisson(), pi)
    Nhat = np.sum(1 / pi)
    mu = 0.1
    bare = unknown_n_variance(y, J, mu, 1.0, "bare")
    expected = J.bilinear("v1", y) / Nhat**2 + 1.0 + mu**2 / Nhat**2 * np.sum((1 - pi) / pi) - 2 * mu / Nhat**2 * np.sum((1 - pi) / pi**2)
    assert bare == pytest.approx(expected, rel=1e-12)


def test_confidence_interval_examples():
    assert confidence_interval(1.5, 0.0) == (1.5, 1.5)
    lo, hi = confidence_interval(0.0, 1.0, 0.95)
    assert lo == pytest.approx(-1.959964, abs=1e-6) and hi == pytest.approx(1.959964, abs=1e-6)
    lo90, hi90 = confidence_interval(0.0, 1.0, 0.90)
    assert (hi90 - lo90) / (hi - lo) == pytest.approx(1.644854 / 1.959964, abs=1e-6)
    with pytest.raises(NegativeVariance):
        confidence_interval(0.0, -1e-9)


def test_bootstrap_total_and_order(rng):
    donors, recipients = make_pair(rng, n_a=50, n_b=20)
    s = VarianceSettings(mini_bootstrap_M=6, bootstrap_L=30, seed=5)
    res = bootstrap_variance(donors, recipients, "pmm_a", SPEC, 2, s, 400)
    assert res.total == pytest.approx(res.v1 + res.v2)
    assert res.v1 == pytest.approx(np.var(res.replicates, ddof=1))
    # replicate l depends only on (seed, l): a longer run extends the shorter one
    longer = bootstrap_variance(donors, recipients, "pmm_a", SPEC, 2, VarianceSettings(mini_bootstrap_M=6, bootstrap_L=40, seed=5), 400)
    assert np.array_equal(longer.replicates[:30], res.replicates)


def test_stratified_bootstrap_resamples_within_strata():
    from massfuse.variance import resample_recipients

    strata = np.array([0, 0, 0, 1, 1])
    for seed in range(20):
        idx = resample_recipients(make_rng(seed), 5, "stratified", strata)
        assert np.array_equal(np.sort(strata[idx]), np.sort(strata))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 9), kind=st.sampled_from(["srswor", "poisson"]))
def test_v1_nonnegative(seed, n, kind):
    rng = np.random.default_rng(seed)
    if kind == "srswor":
        N = n + int(rng.integers(0, 40))
        pi, design = np.full(n, n / N), DesignSpec.srswor(N, n)
    else:
        N = 100
        pi, design = rng.uniform(0.01, 1.0, n), DesignSpec.poisson()
    vals = rng.normal(size=n) * 10
    J = joint_inclusion(design, pi)
    v = v1_from_values(vals, J, N)
    assert v >= -1e-12 * max(1.0, abs(_direct_v1(vals, J.matrix(), pi, N)))
    assert v == pytest.approx(_direct_v1(vals, J.matrix(), pi, N), rel=1e-9, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), method=st.sampled_from(["pmm_a", "pmm_b", "nn"]))
def test_v2_invariant_to_donor_relabelling(seed, method):
    rng = np.random.default_rng(seed)
    donors, recipients = make_pair(rng, n_a=25, n_b=8)
    perm = rng.permutation(25)
    shuffled = NonProbSample(CovariateMatrix(donors.x.values[perm], donors.x.column_names), donors.y[perm])
    s = VarianceSettings(mini_bootstrap_M=5, seed=seed)
    a = variance_v2_minibootstrap(donors, recipients, method, SPEC, 2, s, 200)
    b = variance_v2_minibootstrap(shuffled, recipients, method, SPEC, 2, s, 200)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)
