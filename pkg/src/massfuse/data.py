"""Core sample types and pair validation.

All containers are immutable: arrays are copied on construction and marked
read-only, so instances can be shared freely between worker processes.
Construction only enforces shapes; the value-level invariants (finiteness,
probability bounds, column agreement) are checked by :func:`validate_pair`
so that a single call reports every problem at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    InvalidProbability,
    MismatchedColumns,
    NonFiniteValue,
    ShapeMismatch,
    ValidationError,
)

DESIGN_KINDS = ("srswor", "poisson", "stratified", "explicit")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """Dense ``n x p`` covariate block with named columns."""

    values: np.ndarray
    column_names: tuple[str, ...]
    has_intercept: bool = False

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim == 1:
            values = _frozen(values.reshape(-1, 1))
        if values.ndim != 2:
            raise ShapeMismatch(f"covariates must be 2-D, got shape {values.shape}")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != values.shape[1]:
            raise ShapeMismatch(
                f"{len(names)} column names for {values.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise ShapeMismatch(f"duplicate column names in {names}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence[float]]) -> "CovariateMatrix":
        names = list(columns)
        return cls(np.column_stack([np.asarray(columns[c], float) for c in names]), tuple(names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index(name)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        """Return the sub-matrix for ``names`` in the requested order."""
        return self.values[:, [self._index(c) for c in names]]

    def take(self, rows) -> "CovariateMatrix":
        return CovariateMatrix(self.values[rows], self.column_names, self.has_intercept)

    def _index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise MismatchedColumns(
                f"column {name!r} not among {list(self.column_names)}"
            ) from None

    def violations(self) -> list[DataError]:
        out: list[DataError] = []
        if self.n < 1 or self.p < 1:
            out.append(ShapeMismatch(f"covariate matrix must be non-empty, got {self.values.shape}"))
        bad = np.argwhere(~np.isfinite(self.values))
        for row, col in bad[:20]:
            name = self.column_names[col]
            out.append(NonFiniteValue(f"non-finite covariate at row {row + 1}, column {name!r}", int(row) + 1, name))
        return out

    def __eq__(self, other):
        if not isinstance(other, CovariateMatrix):
            return NotImplemented
        return (
            self.column_names == other.column_names
            and self.has_intercept == other.has_intercept
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DesignSpec:
    """Sampling design of the probability sample.

    ``kind`` is one of ``srswor``, ``poisson``, ``stratified`` or ``explicit``.
    Stratified designs carry per-stratum population sizes and allocations; the
    stratum of each sampled unit lives on :class:`ProbSample`.
    """

    kind: str
    population_size: int | None = None
    sample_size: int | None = None
    strata_sizes: tuple[int, ...] | None = None
    allocations: tuple[int, ...] | None = None
    joint: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DataError(f"unknown design kind {self.kind!r}; expected one of {DESIGN_KINDS}")
        if self.population_size is not None and self.population_size <= 0:
            raise DataError("population_size must be positive")
        if self.kind == "srswor":
            if self.population_size is None or self.sample_size is None:
                raise DataError("srswor design needs population_size and sample_size")
            if not 1 <= self.sample_size <= self.population_size:
                raise DataError(
                    f"srswor sample size {self.sample_size} outside [1, {self.population_size}]"
                )
        if self.kind == "stratified":
            if self.strata_sizes is None or self.allocations is None:
                raise DataError("stratified design needs strata_sizes and allocations")
            sizes = tuple(int(s) for s in self.strata_sizes)
            alloc = tuple(int(a) for a in self.allocations)
            if len(sizes) != len(alloc):
                raise DataError("strata_sizes and allocations differ in length")
            for h, (nh, Nh) in enumerate(zip(alloc, sizes)):
                if not 1 <= nh <= Nh:
                    raise DataError(f"stratum {h}: allocation {nh} outside [1, {Nh}]")
            object.__setattr__(self, "strata_sizes", sizes)
            object.__setattr__(self, "allocations", alloc)
            if self.population_size is None:
                object.__setattr__(self, "population_size", sum(sizes))
        if self.kind == "explicit":
            if self.joint is None:
                raise DataError("explicit design needs a joint inclusion matrix")
            m = _frozen(self.joint)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DataError(f"joint matrix must be square, got {m.shape}")
            if not np.array_equal(m, m.T):
                raise DataError("joint inclusion matrix is not symmetric")
            if not np.all((m > 0) & (m <= 1)):
                raise DataError("joint inclusion probabilities must lie in (0, 1]")
            object.__setattr__(self, "joint", m)

    @classmethod
    def srswor(cls, population_size: int, sample_size: int) -> "DesignSpec":
        return cls("srswor", population_size=population_size, sample_size=sample_size)

    @classmethod
    def poisson(cls, population_size: int | None = None) -> "DesignSpec":
        return cls("poisson", population_size=population_size)

    @classmethod
    def stratified(cls, strata_sizes, allocations) -> "DesignSpec":
        return cls("stratified", strata_sizes=tuple(strata_sizes), allocations=tuple(allocations))

    @classmethod
    def explicit(cls, joint, population_size: int | None = None) -> "DesignSpec":
        return cls("explicit", population_size=population_size, joint=joint)

    def __eq__(self, other):
        if not isinstance(other, DesignSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.population_size == other.population_size
            and self.sample_size == other.sample_size
            and self.strata_sizes == other.strata_sizes
            and self.allocations == other.allocations
            and _opt_equal(self.joint, other.joint)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NonProbSample:
    """Donor sample: covariates and observed outcomes."""

    x: CovariateMatrix
    y: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y).reshape(-1))
        if self.ids is not None:
            object.__setattr__(self, "ids", _frozen(self.ids, dtype=np.int64).reshape(-1))

    @property
    def n(self) -> int:
        return self.x.n

    def take(self, rows) -> "NonProbSample":
        ids = None if self.ids is None else self.ids[rows]
        return NonProbSample(self.x.take(rows), self.y[rows], ids)

    def violations(self) -> list[DataError]:
        out = self.x.violations()
        if self.y.shape[0] != self.x.n:
            out.append(ShapeMismatch(f"outcome length {self.y.shape[0]} != {self.x.n} covariate rows"))
        for row in np.flatnonzero(~np.isfinite(self.y))[:20]:
            out.append(NonFiniteValue(f"non-finite outcome at row {row + 1}", int(row) + 1, "y"))
        if self.ids is not None and self.ids.shape[0] != self.x.n:
            out.append(ShapeMismatch("ids length differs from row count"))
        return out

    def __eq__(self, other):
        if not isinstance(other, NonProbSample):
            return NotImplemented
        return self.x == other.x and np.array_equal(self.y, other.y) and _opt_equal(self.ids, other.ids)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ProbSample:
    """Recipient sample: covariates, inclusion probabilities and design."""

    x: CovariateMatrix
    pi: np.ndarray
    design: DesignSpec = field(default_factory=lambda: DesignSpec("poisson"))
    ids: np.ndarray | None = None
    strata: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi).reshape(-1))
        if self.ids is not None:
            object.__setattr__(self, "ids", _frozen(self.ids, dtype=np.int64).reshape(-1))
        if self.strata is not None:
            object.__setattr__(self, "strata", _frozen(self.strata, dtype=np.int64).reshape(-1))

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.pi

    def take(self, rows) -> "ProbSample":
        ids = None if self.ids is None else self.ids[rows]
        strata = None if self.strata is None else self.strata[rows]
        return ProbSample(self.x.take(rows), self.pi[rows], self.design, ids, strata)

    def violations(self) -> list[DataError]:
        out = self.x.violations()
        if self.pi.shape[0] != self.x.n:
            out.append(ShapeMismatch(f"pi length {self.pi.shape[0]} != {self.x.n} covariate rows"))
        bad = ~(np.isfinite(self.pi) & (self.pi > 0) & (self.pi <= 1))
        for row in np.flatnonzero(bad)[:20]:
            out.append(InvalidProbability(f"inclusion probability {self.pi[row]!r} at row {row + 1} not in (0, 1]", int(row) + 1))
        if self.design.kind == "stratified":
            if self.strata is None or self.strata.shape[0] != self.x.n:
                out.append(ShapeMismatch("stratified design needs one stratum label per row"))
            elif np.any((self.strata < 0) | (self.strata >= len(self.design.strata_sizes))):
                out.append(DataError("stratum label out of range"))
        if self.design.kind == "explicit" and self.design.joint.shape[0] != self.x.n:
            out.append(ShapeMismatch("explicit joint matrix size differs from sample size"))
        return out

    def __eq__(self, other):
        if not isinstance(other, ProbSample):
            return NotImplemented
        return (
            self.x == other.x
            and np.array_equal(self.pi, other.pi)
            and self.design == other.design
            and _opt_equal(self.ids, other.ids)
            and _opt_equal(self.strata, other.strata)
        )

    __hash__ = None


def validate_pair(a: NonProbSample, b: ProbSample) -> tuple[NonProbSample, ProbSample]:
    """Check every invariant of a donor/recipient pair.

    Returns the pair unchanged when it is valid; otherwise raises
    :class:`ValidationError` whose ``violations`` list names each offending
    row (1-based) or column.
    """
    violations: list[DataError] = []
    if a.x.column_names != b.x.column_names:
        violations.append(
            MismatchedColumns(
                f"non-probability columns {list(a.x.column_names)} != "
                f"probability columns {list(b.x.column_names)}"
            )
        )
    violations.extend(a.violations())
    violations.extend(b.violations())
    if violations:
        raise ValidationError(violations)
    return a, b
