"""Sample drawing and inclusion-probability algebra for the supported designs."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import DesignSpec, ProbSample
from .errors import (
    AllocationExceedsStratum,
    InvalidProbability,
    SampleLargerThanPopulation,
    UnsupportedDesign,
)

COEF_KINDS = ("v1", "display", "inv")


def draw_srswor(N: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Simple random sample of ``n`` distinct indices from ``range(N)``, sorted."""
    if n > N:
        raise SampleLargerThanPopulation(f"sample size {n} exceeds population size {N}")
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    return np.sort(rng.choice(N, size=n, replace=False, shuffle=False))


def draw_stratified_srswor(
    strata: Sequence[np.ndarray], allocations: Sequence[int], rng: np.random.Generator
) -> np.ndarray:
    """Independent SRSWOR inside each stratum; indices returned stratum by stratum."""
    if len(strata) != len(allocations):
        raise ValueError("one allocation per stratum required")
    parts = []
    for h, (members, nh) in enumerate(zip(strata, allocations)):
        members = np.asarray(members)
        if nh > members.size:
            raise AllocationExceedsStratum(
                f"stratum {h}: allocation {nh} exceeds stratum size {members.size}"
            )
        parts.append(members[draw_srswor(members.size, int(nh), rng)])
    return np.concatenate(parts)


def draw_poisson(pi, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(pi_i) inclusions; returns the selected indices."""
    pi = np.asarray(pi, dtype=float)
    bad = np.flatnonzero(~((pi > 0) & (pi <= 1)))
    if bad.size:
        raise InvalidProbability(f"probability {pi[bad[0]]!r} at index {bad[0]} not in (0, 1]", int(bad[0]))
    return np.flatnonzero(rng.random(pi.size) < pi)


class JointInclusion:
    """Second-order inclusion probabilities of the units in a probability sample.

    Subclasses never materialise the ``n x n`` matrix unless it was supplied.
    Double sums of the form ``sum_ij c(pi_ij, pi_i, pi_j) a_i b_j`` are
    evaluated by :meth:`bilinear` for three coefficient kinds:

    ``v1``       ``(pi_ij - pi_i pi_j) / (pi_ij pi_i pi_j)``
    ``display``  ``(pi_ij - pi_i pi_j) / (pi_i pi_j)``
    ``inv``      ``1 / pi_ij``
    """

    def __init__(self, pi):
        self.pi = np.asarray(pi, dtype=float)

    @property
    def n(self) -> int:
        return self.pi.size

    def pair(self, i: int, j: int) -> float:
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        n = self.n
        return np.array([[self.pair(i, j) for j in range(n)] for i in range(n)])

    def bilinear(self, kind: str, a, b=None) -> float:
        raise NotImplementedError

    def coefficient_sum(self, kind: str) -> float:
        ones = np.ones(self.n)
        return self.bilinear(kind, ones, ones)


def coefficient(kind: str, pij, pi, pj):
    """Elementwise coefficient for ``kind`` (see :class:`JointInclusion`)."""
    if kind == "v1":
        return (pij - pi * pj) / (pij * pi * pj)
    if kind == "display":
        return (pij - pi * pj) / (pi * pj)
    if kind == "inv":
        return 1.0 / pij
    raise ValueError(f"unknown coefficient kind {kind!r}")


class GroupedJoint(JointInclusion):
    """Units in the same group share ``pi_ij = c_g``; across groups ``pi_ij = pi_i pi_j``.

    Covers SRSWOR (one group), stratified SRSWOR (one group per stratum)
    and Poisson sampling (every unit its own group).
    """

    def __init__(self, pi, groups, within):
        super().__init__(pi)
        self.groups = np.asarray(groups, dtype=np.int64)
        self.within = np.asarray(within, dtype=float)
        counts = np.bincount(self.groups, minlength=self.within.size)
        shared = counts >= 2
        if np.any(self.within[shared] <= 0):
            raise UnsupportedDesign("zero joint inclusion probability inside a group")

    def pair(self, i: int, j: int) -> float:
        if i == j:
            return float(self.pi[i])
        gi, gj = self.groups[i], self.groups[j]
        if gi == gj:
            return float(self.within[gi])
        return float(self.pi[i] * self.pi[j])

    def _gsum(self, v):
        return np.bincount(self.groups, weights=v, minlength=self.within.size)

    def bilinear(self, kind: str, a, b=None) -> float:
        a = np.asarray(a, dtype=float)
        b = a if b is None else np.asarray(b, dtype=float)
        pi = self.pi
        d = 1.0 / pi
        ab = a * b
        if kind == "v1":
            diag = np.sum((1.0 - pi) / pi**2 * ab)
        elif kind == "display":
            diag = np.sum((1.0 - pi) / pi * ab)
        elif kind == "inv":
            diag = np.sum(d * ab)
        else:
            raise ValueError(f"unknown coefficient kind {kind!r}")

        # Within-group off-diagonal sums, expressed through group totals.
        size = self._gsum(np.ones_like(pi))
        shared = size >= 2
        c = np.where(shared, self.within, 1.0)
        a_g, b_g, ab_g = self._gsum(a), self._gsum(b), self._gsum(ab)
        pair_11 = a_g * b_g - ab_g
        pi_g = self._gsum(pi) / np.maximum(size, 1)
        constant = np.all(np.abs(pi - pi_g[self.groups]) <= 1e-15 * pi)
        if constant:
            # one coefficient per group; avoids cancellation between d_i d_j and 1/c
            off = coefficient(kind, c, pi_g, pi_g)
            within = np.sum(np.where(shared, off * pair_11, 0.0))
        else:
            da_g, db_g = self._gsum(d * a), self._gsum(d * b)
            pair_dd = da_g * db_g - self._gsum(d * d * ab)
            if kind == "v1":
                term = pair_dd - pair_11 / c
            elif kind == "display":
                term = c * pair_dd - pair_11
            else:
                term = pair_11 / c
            within = np.sum(np.where(shared, term, 0.0))
        if kind == "inv":
            da_g, db_g = self._gsum(d * a), self._gsum(d * b)
            cross = da_g.sum() * db_g.sum() - np.sum(da_g * db_g)
        else:
            cross = 0.0
        return float(diag + within + cross)


class ExplicitJoint(JointInclusion):
    """Joint probabilities given as a full symmetric matrix."""

    def __init__(self, pi, joint):
        super().__init__(pi)
        self.joint = np.asarray(joint, dtype=float)
        if self.joint.shape != (self.n, self.n):
            raise UnsupportedDesign("joint matrix shape does not match the sample")

    def pair(self, i: int, j: int) -> float:
        return float(self.joint[i, j])

    def matrix(self) -> np.ndarray:
        return self.joint.copy()

    def bilinear(self, kind: str, a, b=None) -> float:
        a = np.asarray(a, dtype=float)
        b = a if b is None else np.asarray(b, dtype=float)
        coef = coefficient(kind, self.joint, self.pi[:, None], self.pi[None, :])
        return float(a @ coef @ b)


def joint_inclusion(design: DesignSpec, pi, strata=None) -> JointInclusion:
    """Build the joint-inclusion accessor for a design and its sampled units."""
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    if design.kind == "srswor":
        N, m = design.population_size, design.sample_size
        c = m * (m - 1) / (N * (N - 1)) if N > 1 else 1.0
        return GroupedJoint(pi, np.zeros(n, dtype=np.int64), [c])
    if design.kind == "poisson":
        return GroupedJoint(pi, np.arange(n), np.ones(n))
    if design.kind == "stratified":
        if strata is None:
            raise UnsupportedDesign("stratified design requires per-unit stratum labels")
        sizes = np.asarray(design.strata_sizes, dtype=float)
        alloc = np.asarray(design.allocations, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(sizes > 1, alloc * (alloc - 1) / (sizes * (sizes - 1)), 1.0)
        return GroupedJoint(pi, strata, c)
    if design.kind == "explicit":
        return ExplicitJoint(pi, design.joint)
    raise UnsupportedDesign(f"no joint inclusion probabilities for design {design.kind!r}")


def joint_for(sample: ProbSample) -> JointInclusion:
    return joint_inclusion(sample.design, sample.pi, sample.strata)
