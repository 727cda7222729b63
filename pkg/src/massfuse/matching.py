"""Donor assignment for mass imputation.

Every matcher returns, for each recipient, the ``k`` donors ordered by
increasing distance with ties broken by ascending donor index. That order is
total, so the ``k``-donor rows are prefixes of the ``k + 1``-donor rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .data import NonProbSample, ProbSample
from .errors import KExceedsDonors, MismatchedColumns
from .regression import FittedModel, predict

VARIANTS = ("pmm_a", "pmm_b", "nn", "multirobust")

# donors at or above this count use the k-d tree for multivariate matching
TREE_THRESHOLD = 200
_BLOCK = 4_000_000


@dataclass(frozen=True, eq=False)
class MatchAssignment:
    """``donors[i, t]`` is the ``t``-th closest donor of recipient ``i``."""

    donors: np.ndarray
    k: int
    variant: str
    distances: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.donors, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "donors", d)

    @property
    def n_recipients(self) -> int:
        return self.donors.shape[0]

    def __eq__(self, other):
        if not isinstance(other, MatchAssignment):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.donors, other.donors)

    __hash__ = None


def _check_k(k: int, n_donors: int) -> None:
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > n_donors:
        raise KExceedsDonors(f"k={k} exceeds the {n_donors} available donors")


def _order_rows(dist: np.ndarray, idx: np.ndarray, k: int):
    """Sort each row by (distance, donor index) and keep the first ``k``."""
    order = np.lexsort((idx, dist), axis=-1)[:, :k]
    return np.take_along_axis(idx, order, 1), np.take_along_axis(dist, order, 1)


def knn_1d(keys, queries, k: int, return_distance: bool = False):
    """k nearest donor keys to each query on the real line.

    Donor keys are sorted once; each query is located by binary search and
    only the ``2k`` sorted keys around it are examined. Rows whose boundary
    distance is tied with a key outside that window are recomputed against
    all donors so that index tie-breaking stays exact.
    """
    keys = np.asarray(keys, dtype=float)
    queries = np.asarray(queries, dtype=float)
    n = keys.size
    _check_k(k, n)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    pos = np.searchsorted(sk, queries, side="left")
    w = min(2 * k, n)
    lo = np.clip(pos - k, 0, n - w)
    win = lo[:, None] + np.arange(w)[None, :]
    cand_idx = order[win]
    cand_d = np.abs(queries[:, None] - sk[win])
    idx, dist = _order_rows(cand_d, cand_idx, k)

    kth = dist[:, -1]
    unsafe = np.zeros(queries.size, dtype=bool)
    left = lo - 1
    has_left = left >= 0
    unsafe[has_left] |= np.abs(queries[has_left] - sk[left[has_left]]) <= kth[has_left]
    right = lo + w
    has_right = right < n
    unsafe[has_right] |= np.abs(queries[has_right] - sk[right[has_right]]) <= kth[has_right]
    rows = np.flatnonzero(unsafe)
    if rows.size:
        # every key within the k-th distance lies in one contiguous run of the
        # sorted keys; widen it by a few ulps and sort that run exactly
        q, r = queries[rows], kth[rows]
        slack = r * 1e-9 + 4 * np.spacing(np.abs(q) + r)
        a = np.searchsorted(sk, q - r - slack, side="left")
        b = np.searchsorted(sk, q + r + slack, side="right")
        width = int((b - a).max())
        span = a[:, None] + np.arange(width)[None, :]
        inside = span < b[:, None]
        span = np.minimum(span, n - 1)
        cd = np.where(inside, np.abs(q[:, None] - sk[span]), np.inf)
        ci = np.where(inside, order[span], n)
        idx[rows], dist[rows] = _order_rows(cd, ci, k)
    if return_distance:
        return idx, dist
    return idx


def _sq_dist(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    d = np.zeros((Q.shape[0], P.shape[0]))
    for c in range(P.shape[1]):
        d += (Q[:, c, None] - P[None, :, c]) ** 2
    return d


def _within(d: np.ndarray, radius: np.ndarray, k: int):
    """k smallest (distance, index) pairs among entries with ``d <= radius``."""
    rr, cc = np.nonzero(d <= radius[:, None])
    counts = np.bincount(rr, minlength=d.shape[0])
    pos = np.arange(rr.size) - np.repeat(np.cumsum(counts) - counts, counts)
    width = int(counts.max())
    ci = np.full((d.shape[0], width), d.shape[1], dtype=np.int64)
    cd = np.full((d.shape[0], width), np.inf)
    ci[rr, pos] = cc
    cd[rr, pos] = d[rr, cc]
    return _order_rows(cd, ci, k)


def _knn_brute(P: np.ndarray, Q: np.ndarray, k: int):
    n = P.shape[0]
    out_i = np.empty((Q.shape[0], k), dtype=np.int64)
    out_d = np.empty((Q.shape[0], k))
    step = max(1, _BLOCK // max(n * P.shape[1], 1))
    for s in range(0, Q.shape[0], step):
        d = _sq_dist(Q[s : s + step], P)
        if k == n:
            o = np.argsort(d, axis=1, kind="stable")
            out_i[s : s + step] = o
            out_d[s : s + step] = np.take_along_axis(d, o, 1)
            continue
        part = np.argpartition(d, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(d, part, 1)
        kth = pd.max(axis=1)
        safe = (d <= kth[:, None]).sum(axis=1) == k
        idx, dist = _order_rows(pd, part, k)
        bad = np.flatnonzero(~safe)
        if bad.size:
            idx[bad], dist[bad] = _within(d[bad], kth[bad], k)
        out_i[s : s + step] = idx
        out_d[s : s + step] = dist
    return out_i, out_d


def _knn_tree(P: np.ndarray, Q: np.ndarray, k: int):
    n = P.shape[0]
    tree = cKDTree(P)
    extra = min(k + 8, n)
    _, cand = tree.query(Q, k=extra)
    cand = np.asarray(cand, dtype=np.int64).reshape(Q.shape[0], extra)
    # exact squared distances, then a (distance, index) sort of the candidates
    d2 = np.zeros(cand.shape)
    for c in range(P.shape[1]):
        d2 += (P[cand, c] - Q[:, c, None]) ** 2
    idx, dist = _order_rows(d2, cand, k)
    if extra == n:
        return idx, dist
    # rows whose k-th distance is not clearly below the last candidate may
    # have tied donors the tree did not return
    last = d2.max(axis=1)
    risky = np.flatnonzero(last <= dist[:, -1] * (1 + 1e-9) + 1e-300)
    if risky.size:
        radius = np.sqrt(dist[risky, -1]) * (1 + 1e-9) + 1e-300
        for r, c in zip(risky, tree.query_ball_point(Q[risky], r=radius)):
            c = np.asarray(c, dtype=np.int64)
            dd = ((P[c] - Q[r]) ** 2).sum(axis=1)
            o = np.lexsort((c, dd))[:k]
            idx[r], dist[r] = c[o], dd[o]
    return idx, dist


def knn_euclidean(points, queries, k: int, return_distance: bool = False):
    """Exact Euclidean k nearest neighbours with index tie-breaking.

    Distances are compared as squared Euclidean norms. One-dimensional input
    is delegated to :func:`knn_1d`. Returned distances are Euclidean.
    """
    P = np.asarray(points, dtype=float)
    Q = np.asarray(queries, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if Q.ndim == 1:
        Q = Q[:, None]
    if P.shape[1] != Q.shape[1]:
        raise MismatchedColumns(f"donor dimension {P.shape[1]} != recipient dimension {Q.shape[1]}")
    _check_k(k, P.shape[0])
    if P.shape[1] == 1:
        return knn_1d(P[:, 0], Q[:, 0], k, return_distance)
    if P.shape[0] >= TREE_THRESHOLD:
        idx, d2 = _knn_tree(P, Q, k)
    else:
        idx, d2 = _knn_brute(P, Q, k)
    if return_distance:
        return idx, np.sqrt(d2)
    return idx


def match_pmm_a(model: FittedModel, donors: NonProbSample, recipients: ProbSample, k: int) -> MatchAssignment:
    """Predicted-to-predicted matching: donors whose predicted mean is closest."""
    _check_k(k, donors.n)
    idx, dist = knn_1d(predict(model, donors.x), predict(model, recipients.x), k, True)
    return MatchAssignment(idx, k, "pmm_a", dist)


def match_pmm_b(model: FittedModel, donors: NonProbSample, recipients: ProbSample, k: int) -> MatchAssignment:
    """Predicted-to-observed matching: donors whose observed outcome is closest."""
    _check_k(k, donors.n)
    idx, dist = knn_1d(donors.y, predict(model, recipients.x), k, True)
    return MatchAssignment(idx, k, "pmm_b", dist)


def match_nn(
    donors: NonProbSample, recipients: ProbSample, k: int, columns: Sequence[str] | None = None
) -> MatchAssignment:
    """Covariate-space nearest neighbours on ``columns`` (all by default)."""
    cols = donors.x.column_names if columns is None else tuple(columns)
    idx, dist = knn_euclidean(donors.x.select(cols), recipients.x.select(cols), k, True)
    return MatchAssignment(idx, k, "nn", dist)


def match_multirobust(
    models: Sequence[FittedModel], donors: NonProbSample, recipients: ProbSample, k: int
) -> MatchAssignment:
    """Nearest neighbours on the vector of predictions from several models."""
    if not models:
        raise ValueError("at least one model is required")
    P = np.column_stack([predict(m, donors.x) for m in models])
    Q = np.column_stack([predict(m, recipients.x) for m in models])
    idx, dist = knn_euclidean(P, Q, k, True)
    return MatchAssignment(idx, k, "multirobust", dist)
