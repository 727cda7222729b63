"""Working-model engines: least squares, logistic IRLS and Nadaraya-Watson.

Predictions are always returned on the mean (response) scale, which is the
scale used for predictive mean matching.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .data import CovariateMatrix
from .errors import (
    CompleteSeparation,
    DidNotConverge,
    MismatchedColumns,
    RankDeficient,
    ShapeMismatch,
    SingleClass,
)

ENGINES = ("linear", "logistic", "kernel")

LOGISTIC_SCORE_TOL = 1e-8
LOGISTIC_LL_RTOL = 1e-10
LOGISTIC_MAX_ITER = 25
SEPARATION_BETA = 1e3

# queries x training rows evaluated per block in kernel prediction
_KERNEL_BLOCK = 2_000_000


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: engine, covariate columns (``None`` = all) and intercept.

    ``aliased="drop"`` removes covariates that are collinear with earlier ones
    and gives them a zero coefficient instead of raising ``RankDeficient``.
    """

    engine: str = "linear"
    columns: tuple[str, ...] | None = None
    intercept: bool = True
    bandwidth: float | str = "auto"
    aliased: str = "error"

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.aliased not in ("error", "drop"):
            raise ValueError("aliased must be 'error' or 'drop'")
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))

    def resolve_columns(self, x: CovariateMatrix) -> tuple[str, ...]:
        return x.column_names if self.columns is None else self.columns


@dataclass(frozen=True, eq=False)
class FittedModel:
    engine: str
    columns: tuple[str, ...]
    intercept: bool
    beta: np.ndarray
    bandwidth: float | None = None
    training_x: np.ndarray | None = None
    training_y: np.ndarray | None = None
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def predict(self, x: CovariateMatrix) -> np.ndarray:
        return predict(self, x)


def design_matrix(X: np.ndarray, intercept: bool) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if intercept:
        return np.column_stack([np.ones(X.shape[0]), X])
    return X


def _term_names(columns: Sequence[str], intercept: bool) -> list[str]:
    return (["(intercept)"] if intercept else []) + list(columns)


def _aliased(A: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Terms whose column lies (numerically) in the span of the earlier ones."""
    n, p = A.shape
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * max(diag.max(initial=0.0), 1.0)
    # relative to the column norm so that badly scaled but independent columns pass
    colnorm = np.linalg.norm(A, axis=0)
    return (diag <= tol) | (diag <= 1e-10 * colnorm)


def lstsq_qr(A: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
    """Least squares through a thin QR factorisation; raises on rank deficiency."""
    n, p = A.shape
    if n < p:
        raise RankDeficient(f"{n} rows cannot identify {p} coefficients")
    Q, R = np.linalg.qr(A, mode="reduced")
    bad = np.flatnonzero(_aliased(A, R))
    if bad.size:
        j = int(bad[0])
        name = names[j] if names is not None else str(j)
        raise RankDeficient(f"design matrix is rank deficient: column {name!r} is collinear", name)
    return solve_triangular(R, Q.T @ y)


def _fit_linear_arrays(X, y, intercept, names=None):
    A = design_matrix(X, intercept)
    beta = lstsq_qr(A, y, names)
    resid = y - A @ beta
    dof = A.shape[0] - A.shape[1]
    sigma = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    return beta, {"iterations": 1, "converged": True, "residual_scale": sigma}


def _fit_logistic_arrays(X, y, intercept, names=None):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic outcome must be coded 0/1")
    if y.min() == y.max():
        raise SingleClass("logistic regression needs both outcome classes")
    A = design_matrix(X, intercept)
    # surfaces exact collinearity before iterating
    lstsq_qr(A, y, names)
    beta = np.zeros(A.shape[1])

    def loglik(eta):
        return float(-np.sum(np.logaddexp(0.0, np.where(y == 1, -eta, eta))))

    eta = A @ beta
    ll = loglik(eta)
    converged = False
    it = 0
    for it in range(1, LOGISTIC_MAX_ITER + 1):
        p = expit(eta)
        score = A.T @ (y - p)
        if np.max(np.abs(score)) < LOGISTIC_SCORE_TOL:
            converged = True
            it -= 1
            break
        w = p * (1.0 - p)
        sw = np.sqrt(np.maximum(w, 1e-300))
        step, *_ = np.linalg.lstsq(A * sw[:, None], (y - p) / sw, rcond=None)
        beta = beta + step
        eta = A @ beta
        new_ll = loglik(eta)
        if _separated(eta, y) or (np.max(np.abs(beta)) > SEPARATION_BETA and new_ll >= ll):
            raise CompleteSeparation("outcome classes are perfectly separated by the covariates")
        change = abs(new_ll - ll) / max(abs(ll), 1e-300)
        ll = new_ll
        if change < LOGISTIC_LL_RTOL:
            converged = True
            break
    if _separated(eta, y):
        raise CompleteSeparation("outcome classes are perfectly separated by the covariates")
    if not converged:
        warnings.warn(f"IRLS did not converge in {LOGISTIC_MAX_ITER} iterations", DidNotConverge, stacklevel=3)
    p = expit(eta)
    score = A.T @ (y - p)
    return beta, {
        "iterations": it,
        "converged": converged,
        "residual_scale": float(np.sqrt(np.mean((y - p) ** 2))),
        "loglik": ll,
        "max_score": float(np.max(np.abs(score))),
    }


def _separated(eta, y) -> bool:
    # a linear predictor that strictly orders the classes witnesses separability
    return bool(eta[y == 1].min() > eta[y == 0].max())


def silverman_bandwidth(n: int, d: int) -> float:
    """Rule-of-thumb Gaussian bandwidth for standardised data in ``d`` dimensions."""
    return float((4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0)))


def _check_xy(x: CovariateMatrix, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != x.n:
        raise ShapeMismatch(f"outcome length {y.size} != {x.n} rows")
    return y


def fit_linear(x: CovariateMatrix, y, intercept: bool = True, columns=None) -> FittedModel:
    """Ordinary least squares of ``y`` on the selected columns of ``x``."""
    y = _check_xy(x, y)
    cols = x.column_names if columns is None else tuple(columns)
    beta, diag = _fit_linear_arrays(x.select(cols), y, intercept, _term_names(cols, intercept))
    return FittedModel("linear", cols, intercept, beta, diagnostics=diag)


def fit_logistic(x: CovariateMatrix, y, intercept: bool = True, columns=None) -> FittedModel:
    """Bernoulli maximum likelihood by iteratively reweighted least squares.

    Stops when the largest score component drops below 1e-8 or the relative
    log-likelihood change drops below 1e-10, at most 25 iterations. A
    non-converged fit is returned with ``diagnostics["converged"] = False``
    and a :class:`DidNotConverge` warning.
    """
    y = _check_xy(x, y)
    cols = x.column_names if columns is None else tuple(columns)
    beta, diag = _fit_logistic_arrays(x.select(cols), y, intercept, _term_names(cols, intercept))
    return FittedModel("logistic", cols, intercept, beta, diagnostics=diag)


def fit_kernel(x: CovariateMatrix, y, bandwidth: float | str = "auto", columns=None) -> FittedModel:
    """Nadaraya-Watson regression with a Gaussian kernel on standardised covariates."""
    y = _check_xy(x, y)
    cols = x.column_names if columns is None else tuple(columns)
    return _fit_kernel_arrays(x.select(cols), y, bandwidth, cols)


def _fit_kernel_arrays(X, y, bandwidth, cols) -> FittedModel:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("kernel regression needs at least two training rows")
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    scale = np.where(scale > 0, scale, 1.0)
    if bandwidth == "auto":
        h = silverman_bandwidth(n, d)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth!r}")
    Z = (X - center) / scale
    return FittedModel(
        "kernel",
        tuple(cols),
        False,
        np.empty(0),
        bandwidth=h,
        training_x=Z,
        training_y=np.asarray(y, dtype=float).copy(),
        center=center,
        scale=scale,
        diagnostics={"iterations": 0, "converged": True, "residual_scale": float(np.std(y))},
    )


def fit(spec: ModelSpec, x: CovariateMatrix, y) -> FittedModel:
    cols = spec.resolve_columns(x)
    if spec.engine == "linear":
        return fit_linear(x, y, spec.intercept, cols)
    if spec.engine == "logistic":
        return fit_logistic(x, y, spec.intercept, cols)
    return fit_kernel(x, y, spec.bandwidth, cols)


def fit_arrays(spec: ModelSpec, cols: Sequence[str], X: np.ndarray, y: np.ndarray) -> FittedModel:
    """Fit on a pre-selected covariate array (columns already in ``cols`` order)."""
    cols = tuple(cols)
    names = _term_names(cols, spec.intercept)
    if spec.engine == "kernel":
        return _fit_kernel_arrays(X, y, spec.bandwidth, cols)
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    fitter = _fit_linear_arrays if spec.engine == "linear" else _fit_logistic_arrays
    keep = _kept_terms(design_matrix(X, spec.intercept), names) if spec.aliased == "drop" else None
    if keep is None or keep.all():
        beta, diag = fitter(X, y, spec.intercept, names)
    else:
        off = int(spec.intercept)
        sub, diag = fitter(X[:, keep[off:]], y, spec.intercept, [n for n, kk in zip(names, keep) if kk])
        beta = np.zeros(keep.size)
        beta[keep] = sub
        diag["aliased"] = [n for n, kk in zip(names, keep) if not kk]
    return FittedModel(spec.engine, cols, spec.intercept, beta, diagnostics=diag)


def _kept_terms(A: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Mask of design-matrix terms that are not aliased with earlier terms.

    Removing an aliased column leaves the span of the earlier columns, and so
    every later diagonal of R, unchanged; one factorisation finds them all.
    """
    if A.shape[0] < A.shape[1]:
        raise RankDeficient(f"{A.shape[0]} rows cannot identify {A.shape[1]} coefficients")
    R = np.linalg.qr(A, mode="r")
    keep = ~_aliased(A, R)
    if not keep.any():
        raise RankDeficient("every term is aliased", names[0])
    return keep


def predict_arrays(model: FittedModel, X: np.ndarray) -> np.ndarray:
    """Mean-scale predictions for rows of ``X`` given in ``model.columns`` order."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if model.engine == "linear":
        return design_matrix(X, model.intercept) @ model.beta
    if model.engine == "logistic":
        return expit(design_matrix(X, model.intercept) @ model.beta)
    return _kernel_predict(model, X)


def _kernel_predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    Z = (X - model.center) / model.scale
    T = model.training_x
    ty = model.training_y
    inv2h2 = 0.5 / model.bandwidth**2
    out = np.empty(Z.shape[0])
    block = max(1, _KERNEL_BLOCK // max(T.shape[0], 1))
    for start in range(0, Z.shape[0], block):
        q = Z[start : start + block]
        d2 = np.zeros((q.shape[0], T.shape[0]))
        for c in range(T.shape[1]):
            d2 += (q[:, c, None] - T[None, :, c]) ** 2
        logw = -d2 * inv2h2
        # weights relative to the nearest training row: no underflow, and the
        # nearest-row limit falls out when every other weight vanishes
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        out[start : start + block] = (w @ ty) / w.sum(axis=1)
    return out


def predict(model: FittedModel, x: CovariateMatrix) -> np.ndarray:
    """Predicted means for every row of ``x`` (columns matched by name)."""
    missing = [c for c in model.columns if c not in x.column_names]
    if missing:
        raise MismatchedColumns(f"columns {missing} used in training are absent from the input")
    return predict_arrays(model, x.select(model.columns))


def mean_gradient(model: FittedModel, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i w_i d m(x_i, beta) / d beta`` for the parametric engines."""
    A = design_matrix(X, model.intercept)
    if model.engine == "linear":
        return A.T @ weights
    if model.engine == "logistic":
        p = expit(A @ model.beta)
        return A.T @ (weights * p * (1.0 - p))
    raise ValueError("kernel models have no coefficient gradient")


def sandwich_cov(model: FittedModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Heteroscedasticity-robust covariance of the fitted coefficients.

    Dropped (aliased) terms get zero rows and columns.
    """
    A_full = design_matrix(X, model.intercept)
    names = _term_names(model.columns, model.intercept)
    dropped = set(model.diagnostics.get("aliased", ()))
    keep = np.array([n not in dropped for n in names])
    A = A_full[:, keep]
    eta = A_full @ model.beta
    if model.engine == "linear":
        r = y - eta
        bread = np.linalg.inv(A.T @ A)
    elif model.engine == "logistic":
        p = expit(eta)
        r = y - p
        bread = np.linalg.inv(A.T @ (A * (p * (1.0 - p))[:, None]))
    else:
        raise ValueError("kernel models have no coefficient covariance")
    meat = A.T @ (A * (r**2)[:, None])
    out = np.zeros((keep.size, keep.size))
    out[np.ix_(keep, keep)] = bread @ meat @ bread
    return out
