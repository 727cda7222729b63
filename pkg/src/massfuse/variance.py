"""Variance estimation for mass-imputation means.

The analytic route adds a Horvitz-Thompson term computed from imputed values
(``v1``) to a donor-resampling term (``v2``) from the mini-bootstrap. The full
bootstrap resamples both samples and re-runs the whole imputation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import NonProbSample, ProbSample
from .designs import JointInclusion, joint_for
from .engine import ImputationSpec, impute
from .errors import DegenerateDonors, InconsistentAssignment, MismatchedColumns, NegativeVariance, VarianceFloored
from .matching import MatchAssignment
from .regression import fit_arrays, mean_gradient, sandwich_cov
from .rng import child

V2_MODES = ("replicate_mean", "pairwise_cov")


@dataclass(frozen=True)
class VarianceSettings:
    mini_bootstrap_M: int = 50
    bootstrap_L: int = 500
    v2_mode: str = "replicate_mean"
    include_v2: bool = True
    ci_level: float = 0.95
    seed: int = 0
    n_correction: str = "expanded"

    def __post_init__(self):
        if self.mini_bootstrap_M < 2 or self.bootstrap_L < 2:
            raise ValueError("bootstrap budgets must be at least 2")
        if self.v2_mode not in V2_MODES:
            raise ValueError(f"v2_mode must be one of {V2_MODES}")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.n_correction not in ("expanded", "bare"):
            raise ValueError("n_correction must be 'expanded' or 'bare'")


@dataclass
class BootstrapResult:
    v1: float
    v2: float
    total: float
    replicates: np.ndarray = field(repr=False)


def imputed_values(assignment: MatchAssignment, donors: NonProbSample) -> np.ndarray:
    """Per-recipient mean of the assigned donors' outcomes."""
    idx = assignment.donors
    if idx.ndim != 2 or idx.shape[1] != assignment.k:
        raise InconsistentAssignment("assignment matrix does not have k columns")
    if idx.size and (idx.min() < 0 or idx.max() >= donors.n):
        raise InconsistentAssignment("assignment references donors outside the sample")
    return donors.y[idx].mean(axis=1)


def ht_mean(values, pi, N: float | None = None) -> float:
    """Design-weighted mean; ``N=None`` divides by the estimated size sum(1/pi)."""
    d = 1.0 / np.asarray(pi, dtype=float)
    total = float(np.dot(d, values))
    return total / (float(d.sum()) if N is None else float(N))


def v1_from_values(values, joint: JointInclusion, N: float) -> float:
    return joint.bilinear("v1", values) / float(N) ** 2


def variance_v1(
    assignment: MatchAssignment,
    donors: NonProbSample,
    recipients: ProbSample,
    joint: JointInclusion | None = None,
    N: float | None = None,
) -> float:
    """Horvitz-Thompson variance of the weighted mean of imputed values.

    ``N`` defaults to the design's population size.
    """
    if assignment.n_recipients != recipients.n:
        raise InconsistentAssignment("assignment rows differ from the recipient count")
    joint = joint_for(recipients) if joint is None else joint
    N = recipients.design.population_size if N is None else N
    if N is None:
        raise ValueError("population size required; use variance_unknown_n for estimated N")
    return v1_from_values(imputed_values(assignment, donors), joint, N)


def unknown_n_variance(values, joint: JointInclusion, point: float, v2: float, correction: str = "expanded") -> float:
    """Plug-in variance of the ratio-type mean when N is estimated by sum(1/pi).

    ``correction="expanded"`` keeps the imputed values inside the covariance
    correction; ``"bare"`` sums the coefficients alone.
    """
    pi = joint.pi
    Nhat = float(np.sum(1.0 / pi))
    values = np.asarray(values, dtype=float)
    ones = np.ones_like(values)
    v1 = joint.bilinear("v1", values) / Nhat**2
    size_term = point**2 / Nhat**2 * joint.coefficient_sum("display")
    if correction == "expanded":
        cross = joint.bilinear("v1", ones, values)
    else:
        cross = joint.coefficient_sum("v1")
    total = v1 + v2 + size_term - 2.0 * point / Nhat**2 * cross
    if total < 0:
        floor = float(np.sum((1.0 - pi) / pi**2 * values**2)) / Nhat**2
        warnings.warn(
            f"negative unknown-N variance {total:.3g} floored at diagonal V1 bound {floor:.3g}",
            VarianceFloored,
            stacklevel=2,
        )
        total = floor
    return float(total)


def variance_unknown_n(
    assignment: MatchAssignment,
    donors: NonProbSample,
    recipients: ProbSample,
    joint: JointInclusion | None,
    point: float,
    v2: float,
    correction: str = "expanded",
) -> float:
    joint = joint_for(recipients) if joint is None else joint
    return unknown_n_variance(imputed_values(assignment, donors), joint, point, v2, correction)


def _resample_probs(donor_weights, n):
    if donor_weights is None:
        return None
    w = np.asarray(donor_weights, dtype=float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ValueError("pseudo-weights must be positive, one per donor")
    p = 1.0 / w
    return p / p.sum()


def _canonical_order(Xd, yd) -> np.ndarray:
    """Donor rows sorted by value, so resamples do not depend on row labels."""
    keys = np.column_stack([Xd, yd]).T
    return np.lexsort(keys[::-1])


def _donor_draw(rng, order, probs):
    n = order.size
    if probs is None:
        return order[rng.integers(0, n, size=n)]
    return order[rng.choice(n, size=n, replace=True, p=probs[order])]


def minibootstrap_replicates(
    spec: ImputationSpec,
    requests: Sequence[tuple[str, int]],
    names: Sequence[str],
    Xd: np.ndarray,
    yd: np.ndarray,
    Xr: np.ndarray,
    M: int,
    seed: int,
    donor_weights=None,
    start: int = 0,
) -> dict[tuple[str, int], np.ndarray]:
    """Imputed values under ``M`` donor resamples, one ``(M, n_B)`` array per request.

    Replicate ``m`` draws from ``child(seed, 0, m)``, so any subset of
    replicates can be recomputed independently (``start`` offsets ``m``).
    Draws index donors in sorted order, so relabelling donors changes nothing.
    """
    probs = _resample_probs(donor_weights, yd.size)
    order = _canonical_order(Xd, yd)
    out = {tuple(r): np.empty((M, Xr.shape[0])) for r in requests}
    for m in range(M):
        rng = child(seed, 0, start + m)
        b = _donor_draw(rng, order, probs)
        vals = impute(spec, requests, names, Xd[b], yd[b], Xr)
        for r in out:
            out[r][m] = vals[r]
    return out


def v2_from_replicates(
    reps: np.ndarray,
    pi,
    N: float | None = None,
    mode: str = "replicate_mean",
    joint: JointInclusion | None = None,
) -> float:
    """Reduce an ``(M, n_B)`` replicate matrix of imputed values to V2."""
    reps = np.asarray(reps, dtype=float)
    pi = np.asarray(pi, dtype=float)
    d = 1.0 / pi
    denom = float(d.sum()) if N is None else float(N)
    if mode == "replicate_mean":
        means = reps @ d / denom
        return float(np.var(means, ddof=1))
    if mode == "pairwise_cov":
        if joint is None:
            raise ValueError("pairwise_cov mode needs joint inclusion probabilities")
        centred = reps - reps.mean(axis=0)
        acc = sum(joint.bilinear("inv", row) for row in centred)
        return float(acc / (reps.shape[0] - 1) / denom**2)
    raise ValueError(f"unknown v2 mode {mode!r}")


def _arrays(donors: NonProbSample, recipients: ProbSample):
    if donors.x.column_names != recipients.x.column_names:
        raise MismatchedColumns("donor and recipient columns differ")
    return donors.x.column_names, np.asarray(donors.x.values), np.asarray(donors.y), np.asarray(recipients.x.values)


def variance_v2_minibootstrap(
    donors: NonProbSample,
    recipients: ProbSample,
    method: str,
    spec: ImputationSpec,
    k: int,
    settings: VarianceSettings = VarianceSettings(),
    N: float | None = None,
    donor_weights=None,
) -> float:
    """V2 from ``settings.mini_bootstrap_M`` donor-only resamples."""
    if donors.n < 2:
        raise ValueError("mini-bootstrap needs at least two donors")
    if np.ptp(donors.y) == 0:
        warnings.warn("all donor outcomes are identical; V2 is zero", DegenerateDonors, stacklevel=2)
        return 0.0
    names, Xd, yd, Xr = _arrays(donors, recipients)
    reps = minibootstrap_replicates(
        spec, [(method, k)], names, Xd, yd, Xr, settings.mini_bootstrap_M, settings.seed, donor_weights
    )[(method, k)]
    joint = joint_for(recipients) if settings.v2_mode == "pairwise_cov" else None
    return v2_from_replicates(reps, recipients.pi, N, settings.v2_mode, joint)


def glm_v2(spec: ImputationSpec, names, Xd, yd, Xr, pi, N: float | None) -> float:
    """Coefficient-uncertainty term of the model-prediction estimator (sandwich)."""
    cols = spec.model.columns if spec.model.columns is not None else tuple(names)
    sel = [list(names).index(c) for c in cols]
    model = fit_arrays(spec.model, cols, Xd[:, sel], yd)
    d = 1.0 / np.asarray(pi, dtype=float)
    denom = float(d.sum()) if N is None else float(N)
    g = mean_gradient(model, Xr[:, sel], d) / denom
    return float(g @ sandwich_cov(model, Xd[:, sel], yd) @ g)


def resample_recipients(rng: np.random.Generator, recipients_n: int, design_kind: str, strata=None) -> np.ndarray:
    """With-replacement resample of recipient rows, within strata when stratified."""
    if design_kind == "stratified" and strata is not None:
        strata = np.asarray(strata)
        parts = []
        for h in np.unique(strata):
            members = np.flatnonzero(strata == h)
            parts.append(members[rng.integers(0, members.size, size=members.size)])
        return np.concatenate(parts)
    return rng.integers(0, recipients_n, size=recipients_n)


def bootstrap_replicates(
    spec: ImputationSpec,
    requests: Sequence[tuple[str, int]],
    names: Sequence[str],
    Xd: np.ndarray,
    yd: np.ndarray,
    Xr: np.ndarray,
    pi: np.ndarray,
    L: int,
    seed: int,
    N: float | None = None,
    design_kind: str = "srswor",
    strata=None,
    donor_weights=None,
) -> dict[tuple[str, int], np.ndarray]:
    """Point estimates over ``L`` joint resamples of donors and recipients."""
    probs = _resample_probs(donor_weights, yd.size)
    order = _canonical_order(Xd, yd)
    out = {tuple(r): np.empty(L) for r in requests}
    for l in range(L):
        rng = child(seed, 1, l)
        b = _donor_draw(rng, order, probs)
        r_idx = resample_recipients(rng, Xr.shape[0], design_kind, strata)
        vals = impute(spec, requests, names, Xd[b], yd[b], Xr[r_idx])
        pr = pi[r_idx]
        for r in out:
            out[r][l] = ht_mean(vals[r], pr, N)
    return out


def bootstrap_variance(
    donors: NonProbSample,
    recipients: ProbSample,
    method: str,
    spec: ImputationSpec,
    k: int,
    settings: VarianceSettings = VarianceSettings(),
    N: float | None = None,
    donor_weights=None,
    v2: float | None = None,
) -> BootstrapResult:
    """Full bootstrap: V1 from ``L`` joint resamples, V2 from the mini-bootstrap."""
    if donors.n < 2 or recipients.n < 2:
        raise ValueError("bootstrap needs at least two donors and two recipients")
    names, Xd, yd, Xr = _arrays(donors, recipients)
    reps = bootstrap_replicates(
        spec, [(method, k)], names, Xd, yd, Xr, np.asarray(recipients.pi), settings.bootstrap_L,
        settings.seed, N, recipients.design.kind, recipients.strata, donor_weights,
    )[(method, k)]
    v1 = float(np.var(reps, ddof=1))
    if v2 is None:
        if not settings.include_v2:
            v2 = 0.0
        elif method == "glm" and spec.model.engine != "kernel":
            v2 = glm_v2(spec, names, Xd, yd, Xr, recipients.pi, N)
        else:
            v2 = variance_v2_minibootstrap(donors, recipients, method, spec, k, settings, N, donor_weights)
    return BootstrapResult(v1, float(v2), v1 + float(v2), reps)


def confidence_interval(point: float, variance_total: float, level: float = 0.95) -> tuple[float, float]:
    """Normal-theory interval ``point +/- z * sqrt(variance_total)``."""
    if variance_total < 0 or math.isnan(variance_total):
        raise NegativeVariance(f"variance must be non-negative, got {variance_total}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    half = float(norm.ppf(0.5 + level / 2.0)) * math.sqrt(variance_total)
    return point - half, point + half
