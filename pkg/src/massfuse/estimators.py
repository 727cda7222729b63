"""Point estimators of a finite-population mean and the one-call ``estimate``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import NonProbSample, ProbSample, validate_pair
from .designs import joint_for
from .engine import ImputationSpec, impute
from .errors import InconsistentAssignment, KExceedsDonors, MismatchedColumns
from .matching import MatchAssignment
from .regression import FittedModel, predict
from .variance import (
    VarianceSettings,
    bootstrap_variance,
    confidence_interval,
    glm_v2,
    ht_mean,
    minibootstrap_replicates,
    unknown_n_variance,
    v1_from_values,
    v2_from_replicates,
)

# mini-bootstrap budget per grid point while scanning candidate k
SCAN_M = 20
K_SEARCHES = ("global", "first_local")


def choose_k(grid: Sequence[int], scores: Sequence[float], search: str = "global") -> int:
    """Pick k from an increasing grid given its variance scores.

    ``global`` takes the smallest score (ties to the smaller k);
    ``first_local`` walks up the grid and stops at the first k whose
    successor does not lower the score.
    """
    if search == "global":
        best = min(range(len(grid)), key=lambda i: (scores[i], grid[i]))
        return int(grid[best])
    if search == "first_local":
        for i in range(len(grid) - 1):
            if not scores[i + 1] < scores[i]:
                return int(grid[i])
        return int(grid[-1])
    raise ValueError(f"unknown k search {search!r}; expected one of {K_SEARCHES}")


@dataclass(frozen=True)
class KnownN:
    N: float

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError("population size must be positive")


@dataclass(frozen=True)
class EstimatedN:
    pass


def _as_n_mode(n_mode):
    if n_mode is None:
        return EstimatedN()
    if isinstance(n_mode, (KnownN, EstimatedN)):
        return n_mode
    return KnownN(float(n_mode))


def _n_value(n_mode) -> float | None:
    mode = _as_n_mode(n_mode)
    return mode.N if isinstance(mode, KnownN) else None


def _describe_n(n_mode) -> str:
    mode = _as_n_mode(n_mode)
    return f"known:{mode.N:g}" if isinstance(mode, KnownN) else "estimated"


@dataclass(frozen=True)
class EstimateResult:
    point: float
    variance_v1: float
    variance_v2: float
    variance_total: float
    ci_low: float
    ci_high: float
    method: str
    k: int
    n_used: str
    seed_provenance: str

    @property
    def se(self) -> float:
        return math.sqrt(self.variance_total)

    def as_dict(self) -> dict:
        return {
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "v1": self.variance_v1,
            "v2": self.variance_v2,
            "variance_total": self.variance_total,
            "method": self.method,
            "k": self.k,
            "n_used": self.n_used,
            "seed": self.seed_provenance,
        }


def estimate_pmm(assignment: MatchAssignment, donors: NonProbSample, recipients: ProbSample, n_mode=None) -> float:
    """Weighted mean of per-recipient donor averages.

    ``n_mode`` is :class:`KnownN`, :class:`EstimatedN`, a number (known N) or
    ``None`` (estimated).
    """
    idx = assignment.donors
    if idx.shape[0] != recipients.n:
        raise InconsistentAssignment(f"assignment has {idx.shape[0]} rows for {recipients.n} recipients")
    if idx.size and (idx.min() < 0 or idx.max() >= donors.n):
        raise InconsistentAssignment("assignment references donors outside the sample")
    values = donors.y[idx].mean(axis=1)
    return ht_mean(values, recipients.pi, _n_value(n_mode))


def estimate_glm_mi(model: FittedModel, recipients: ProbSample, n_mode=None) -> float:
    """Weighted mean of model predictions over the recipients."""
    return ht_mean(predict(model, recipients.x), recipients.pi, _n_value(n_mode))


def naive_mean(donors: NonProbSample) -> float:
    if donors.n < 1:
        raise ValueError("naive mean needs at least one donor")
    return float(np.mean(donors.y))


def _arrays(donors: NonProbSample, recipients: ProbSample):
    if donors.x.column_names != recipients.x.column_names:
        raise MismatchedColumns(
            f"non-probability columns {list(donors.x.column_names)} != "
            f"probability columns {list(recipients.x.column_names)}"
        )
    return (
        donors.x.column_names,
        np.asarray(donors.x.values),
        np.asarray(donors.y),
        np.asarray(recipients.x.values),
    )


def _combine(values, joint, point, v2, N, correction) -> tuple[float, float]:
    """(V1, total) for imputed values under known or estimated N."""
    if N is None:
        Nhat = float(np.sum(1.0 / joint.pi))
        v1 = joint.bilinear("v1", values) / Nhat**2
        return v1, unknown_n_variance(values, joint, point, v2, correction)
    v1 = v1_from_values(values, joint, N)
    return v1, v1 + v2


def _check_k(method: str, k: int, n_donors: int) -> None:
    if method != "glm" and k > n_donors:
        raise KExceedsDonors(f"k={k} exceeds the {n_donors} available donors")


def select_k_dynamic(
    donors: NonProbSample,
    recipients: ProbSample,
    method: str,
    spec: ImputationSpec,
    k_grid: Sequence[int],
    settings: VarianceSettings = VarianceSettings(),
    n_mode=None,
    donor_weights=None,
    search: str = "global",
) -> tuple[int, EstimateResult]:
    """Pick the ``k`` in ``k_grid`` with the smallest estimated variance.

    Every grid point is scored with V1 plus a ``SCAN_M``-replicate V2 (the
    same donor resamples for every ``k``); the winner is then re-scored with
    the full ``settings.mini_bootstrap_M`` budget. See :func:`choose_k` for
    ``search``.
    """
    grid = sorted({int(k) for k in k_grid})
    if not grid:
        raise ValueError("k_grid must not be empty")
    if grid[0] < 1:
        raise ValueError("k must be positive")
    _check_k(method, grid[-1], donors.n)
    names, Xd, yd, Xr = _arrays(donors, recipients)
    N = _n_value(n_mode)
    pi = np.asarray(recipients.pi)
    joint = joint_for(recipients)
    requests = [(method, k) for k in grid]
    values = impute(spec, requests, names, Xd, yd, Xr)
    scan_m = min(SCAN_M, settings.mini_bootstrap_M)
    reps = minibootstrap_replicates(spec, requests, names, Xd, yd, Xr, scan_m, settings.seed, donor_weights)

    scores = []
    for req in requests:
        point = ht_mean(values[req], pi, N)
        v2 = v2_from_replicates(reps[req], pi, N, settings.v2_mode, joint) if settings.include_v2 else 0.0
        scores.append(_combine(values[req], joint, point, v2, N, settings.n_correction)[1])
    best_k = choose_k(grid, scores, search)

    req = (method, best_k)
    extra = settings.mini_bootstrap_M - scan_m
    full = reps[req]
    if extra > 0 and settings.include_v2:
        more = minibootstrap_replicates(
            spec, [req], names, Xd, yd, Xr, extra, settings.seed, donor_weights, start=scan_m
        )[req]
        full = np.vstack([full, more])
    point = ht_mean(values[req], pi, N)
    v2 = v2_from_replicates(full, pi, N, settings.v2_mode, joint) if settings.include_v2 else 0.0
    v1, total = _combine(values[req], joint, point, v2, N, settings.n_correction)
    lo, hi = confidence_interval(point, total, settings.ci_level)
    result = EstimateResult(point, v1, v2, total, lo, hi, method, best_k, _describe_n(n_mode), str(settings.seed))
    return best_k, result


def estimate(
    donors: NonProbSample,
    recipients: ProbSample,
    method: str = "pmm_a",
    spec: ImputationSpec | None = None,
    k: int | Sequence[int] = 1,
    n_mode=None,
    variance: str = "analytic",
    settings: VarianceSettings = VarianceSettings(),
    donor_weights=None,
) -> EstimateResult:
    """Point estimate, variance and confidence interval in one call.

    ``k`` may be an integer or a grid of candidates (dynamic k). ``variance``
    is ``analytic``, ``bootstrap`` or ``none``. ``naive`` ignores the
    probability sample and reports the simple-random-sampling variance of the
    donor mean.
    """
    validate_pair(donors, recipients)
    spec = ImputationSpec() if spec is None else spec
    N = _n_value(n_mode)
    seed = str(settings.seed)
    if variance not in ("analytic", "bootstrap", "none"):
        raise ValueError(f"unknown variance mode {variance!r}")

    if method == "naive":
        point = naive_mean(donors)
        v = float(np.var(donors.y, ddof=1) / donors.n) if donors.n > 1 and variance != "none" else 0.0
        lo, hi = confidence_interval(point, v, settings.ci_level)
        return EstimateResult(point, v, 0.0, v, lo, hi, method, 0, _describe_n(n_mode), seed)

    if not isinstance(k, (int, np.integer)):
        grid = list(k)
        if len(grid) > 1:
            if variance == "bootstrap":
                kk, _ = select_k_dynamic(donors, recipients, method, spec, grid, settings, n_mode, donor_weights)
                return estimate(donors, recipients, method, spec, kk, n_mode, variance, settings, donor_weights)
            return select_k_dynamic(donors, recipients, method, spec, grid, settings, n_mode, donor_weights)[1]
        k = grid[0]
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    _check_k(method, k, donors.n)

    names, Xd, yd, Xr = _arrays(donors, recipients)
    pi = np.asarray(recipients.pi)
    values = impute(spec, [(method, k)], names, Xd, yd, Xr)[(method, k)]
    point = ht_mean(values, pi, N)
    if variance == "none":
        return EstimateResult(point, 0.0, 0.0, 0.0, point, point, method, k, _describe_n(n_mode), seed)

    if not settings.include_v2:
        v2 = 0.0
    elif method == "glm" and spec.model.engine != "kernel":
        v2 = glm_v2(spec, names, Xd, yd, Xr, pi, N)
    else:
        joint_v2 = joint_for(recipients) if settings.v2_mode == "pairwise_cov" else None
        reps = minibootstrap_replicates(
            spec, [(method, k)], names, Xd, yd, Xr, settings.mini_bootstrap_M, settings.seed, donor_weights
        )[(method, k)]
        v2 = v2_from_replicates(reps, pi, N, settings.v2_mode, joint_v2)

    if variance == "bootstrap":
        boot = bootstrap_variance(donors, recipients, method, spec, k, settings, N, donor_weights, v2)
        v1, total = boot.v1, boot.total
    else:
        v1, total = _combine(values, joint_for(recipients), point, v2, N, settings.n_correction)
    lo, hi = confidence_interval(point, total, settings.ci_level)
    return EstimateResult(point, v1, v2, total, lo, hi, method, k, _describe_n(n_mode), seed)
