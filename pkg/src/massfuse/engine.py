"""Array-level imputation shared by point estimation and every bootstrap.

One call fits the working model(s) once and serves any number of
``(method, k)`` requests: matching is done at the largest requested ``k`` and
smaller ``k`` reuse the leading donors of each row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .matching import knn_1d, knn_euclidean
from .regression import ModelSpec, fit_arrays, predict_arrays

METHODS = ("glm", "pmm_a", "pmm_b", "nn", "multirobust")


@dataclass(frozen=True)
class ImputationSpec:
    """Working model plus the covariates used by covariate-space matching.

    ``extra_models`` join ``model`` for multiply robust matching; ``nn_columns``
    defaults to the columns of ``model``.
    """

    model: ModelSpec = field(default_factory=ModelSpec)
    extra_models: tuple[ModelSpec, ...] = ()
    nn_columns: tuple[str, ...] | None = None

    def matching_columns(self, names: Sequence[str]) -> tuple[str, ...]:
        if self.nn_columns is not None:
            return tuple(self.nn_columns)
        if self.model.columns is not None:
            return self.model.columns
        return tuple(names)


def _cols(names: Sequence[str], wanted: Sequence[str]) -> list[int]:
    names = list(names)
    return [names.index(c) for c in wanted]


def impute(
    spec: ImputationSpec,
    requests: Iterable[tuple[str, int]],
    names: Sequence[str],
    Xd: np.ndarray,
    yd: np.ndarray,
    Xr: np.ndarray,
    return_donors: bool = False,
):
    """Per-recipient imputed values for each ``(method, k)`` request.

    ``Xd``/``Xr`` hold the full donor/recipient covariate arrays laid out as
    ``names``. For ``glm`` the value is the model prediction and ``k`` is
    ignored. With ``return_donors`` a second dict maps each matching method to
    its donor index matrix at the largest requested ``k``.
    """
    requests = list(requests)
    by_method: dict[str, list[int]] = {}
    for method, k in requests:
        by_method.setdefault(method, []).append(int(k))
    out: dict[tuple[str, int], np.ndarray] = {}
    donors_out: dict[str, np.ndarray] = {}

    need_fit = any(m in by_method for m in ("glm", "pmm_a", "pmm_b", "multirobust"))
    pred_d = pred_r = None
    if need_fit:
        mcols = spec.model.columns if spec.model.columns is not None else tuple(names)
        sel = _cols(names, mcols)
        model = fit_arrays(spec.model, mcols, Xd[:, sel], yd)
        pred_r = predict_arrays(model, Xr[:, sel])
        if "pmm_a" in by_method or "multirobust" in by_method:
            pred_d = predict_arrays(model, Xd[:, sel])

    for method, ks in by_method.items():
        if method == "glm":
            for k in ks:
                out[(method, k)] = pred_r
            continue
        kmax = max(ks)
        if method == "pmm_a":
            idx = knn_1d(pred_d, pred_r, kmax)
        elif method == "pmm_b":
            idx = knn_1d(yd, pred_r, kmax)
        elif method == "nn":
            sel = _cols(names, spec.matching_columns(names))
            idx = knn_euclidean(Xd[:, sel], Xr[:, sel], kmax)
        elif method == "multirobust":
            P, Q = [pred_d], [pred_r]
            for extra in spec.extra_models:
                ecols = extra.columns if extra.columns is not None else tuple(names)
                esel = _cols(names, ecols)
                em = fit_arrays(extra, ecols, Xd[:, esel], yd)
                P.append(predict_arrays(em, Xd[:, esel]))
                Q.append(predict_arrays(em, Xr[:, esel]))
            idx = knn_euclidean(np.column_stack(P), np.column_stack(Q), kmax)
        else:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        donors_out[method] = idx
        csum = np.cumsum(yd[idx], axis=1)
        for k in ks:
            out[(method, k)] = csum[:, k - 1] / k
    if return_donors:
        return out, donors_out
    return out
