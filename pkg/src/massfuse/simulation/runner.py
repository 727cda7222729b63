"""Monte Carlo driver and summary metrics.

Replicate ``r`` draws everything from ``child(seed, r)``; workers return
per-replicate records that are reduced in replicate order, so a report does
not depend on how many worker processes produced it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from ..designs import joint_inclusion
from ..data import DesignSpec
from ..engine import impute
from ..errors import MassfuseError
from ..estimators import choose_k
from ..rng import child, child_seed, make_rng
from ..variance import (
    VarianceSettings,
    bootstrap_replicates,
    glm_v2,
    ht_mean,
    minibootstrap_replicates,
    v1_from_values,
    v2_from_replicates,
)
from .scenarios import OutcomeBlock, Population, Scenario

SCAN_M = 20


@dataclass(frozen=True)
class RunOptions:
    """What to compute in each replicate besides the analytic interval."""

    settings: VarianceSettings = VarianceSettings()
    bootstrap_blocks: tuple[str, ...] = ()
    keep_records: bool = False


@dataclass
class EstimatorSummary:
    outcome: str
    estimator: str
    bias: float
    se: float
    rmse: float
    cr: float
    cr_v1: float
    cr_boot: float | None
    mean_v2_share: float
    median_v2_share: float
    mean_k: float | None
    n_ok: int
    n_failed: int


@dataclass
class SimulationReport:
    scenario: str
    seed: int
    replicates: int
    params: dict
    truth: dict[str, float]
    rows: list[EstimatorSummary]
    baselines: list[EstimatorSummary]
    failures: dict[str, int] = field(default_factory=dict)
    records: dict | None = None

    def row(self, outcome: str, estimator: str) -> EstimatorSummary:
        for r in self.rows + self.baselines:
            if r.outcome == outcome and r.estimator == estimator:
                return r
        raise KeyError((outcome, estimator))


def summarize(estimates, truth: float, lows=None, highs=None) -> tuple[float, float, float, float]:
    """Bias, SE, RMSE and coverage (in percent) of a set of estimates.

    ``SE`` is the standard deviation of the estimates (``ddof=1``) and
    ``RMSE = sqrt(Bias^2 + SE^2)``. Coverage is NaN when no intervals are given.
    """
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        return math.nan, math.nan, math.nan, math.nan
    bias = float(est.mean() - truth)
    se = float(est.std(ddof=1)) if est.size > 1 else 0.0
    rmse = math.sqrt(bias**2 + se**2)
    if lows is None:
        return bias, se, rmse, math.nan
    lows, highs = np.asarray(lows), np.asarray(highs)
    cr = 100.0 * float(np.mean((lows <= truth) & (truth <= highs)))
    return bias, se, rmse, cr


# --- one replicate -----------------------------------------------------------


def _block_arrays(pop: Population, covariates, draw, outcome):
    X = np.column_stack([pop.columns[c] for c in covariates])
    y = pop.columns[outcome]
    return X[draw.donors], y[draw.donors], X[draw.recipients]


def _run_block(block: OutcomeBlock, names, Xd, yd, Xr, pi, joint, N, opts: RunOptions, seed: int, z: float):
    settings = opts.settings
    requests = sorted({(e.method, k) for e in block.estimators for k in e.ks})
    values = impute(block.spec, requests, names, Xd, yd, Xr)
    points = {r: ht_mean(values[r], pi, N) for r in requests}
    v1 = {r: v1_from_values(values[r], joint, N) for r in requests}

    matched = [r for r in requests if r[0] != "glm" or block.spec.model.engine == "kernel"]
    M = settings.mini_bootstrap_M
    reps = minibootstrap_replicates(block.spec, matched, names, Xd, yd, Xr, M, seed) if matched and settings.include_v2 else {}
    v2_scan, v2_full = {}, {}
    for r in requests:
        if not settings.include_v2:
            v2_scan[r] = v2_full[r] = 0.0
        elif r in reps:
            v2_scan[r] = v2_from_replicates(reps[r][: min(SCAN_M, M)], pi, N, settings.v2_mode, joint)
            v2_full[r] = v2_from_replicates(reps[r], pi, N, settings.v2_mode, joint)
        else:
            v2_full[r] = v2_scan[r] = glm_v2(block.spec, names, Xd, yd, Xr, pi, N)

    boot = {}
    if block.label in opts.bootstrap_blocks:
        fixed = sorted({(e.method, e.k) for e in block.estimators if not e.dynamic})
        boot_reps = bootstrap_replicates(
            block.spec, fixed, names, Xd, yd, Xr, pi, settings.bootstrap_L, seed, N
        )
        boot = {r: float(np.var(v, ddof=1)) for r, v in boot_reps.items()}

    out = {}
    for e in block.estimators:
        if e.dynamic:
            k = choose_k(e.ks, [v1[(e.method, kk)] + v2_scan[(e.method, kk)] for kk in e.ks], e.search)
        else:
            k = e.k
        r = (e.method, k)
        total = v1[r] + v2_full[r]
        rec = {
            "point": points[r],
            "v1": v1[r],
            "v2": v2_full[r],
            "half": z * math.sqrt(total),
            "half_v1": z * math.sqrt(v1[r]),
            "k": k,
        }
        if r in boot:
            rec["half_boot"] = z * math.sqrt(boot[r] + v2_full[r])
        out[e.label] = rec
    return out


def run_replicate(scenario: Scenario, pop: Population, r: int, opts: RunOptions) -> dict:
    """All estimates of replicate ``r``; failed blocks are recorded, not raised."""
    params = scenario.params
    rng = child(scenario.seed, r)
    draw = scenario.draw_samples(pop, rng, params)
    seed = child_seed(rng)
    N = pop.N
    pi = draw.pi
    n_b = draw.recipients.size
    if draw.design_kind == "srswor":
        design = DesignSpec.srswor(N, n_b)
    else:
        design = DesignSpec.poisson(N)
    joint = joint_inclusion(design, pi, draw.strata)
    z = float(norm.ppf(0.5 + opts.settings.ci_level / 2))
    names = scenario.covariates

    result = {"blocks": {}, "failed": {}, "naive": {}}
    for y in scenario.naive_outcomes:
        result["naive"][y] = float(np.mean(pop.columns[y][draw.donors]))
    for block in scenario.blocks:
        try:
            Xd, yd, Xr = _block_arrays(pop, names, draw, block.outcome)
            result["blocks"][block.label] = _run_block(block, names, Xd, yd, Xr, pi, joint, N, opts, seed, z)
        except (MassfuseError, np.linalg.LinAlgError, ValueError) as exc:
            result["failed"][block.label] = f"{type(exc).__name__}: {exc}"
    return result


# --- parallel driver ---------------------------------------------------------

_WORKER: dict = {}


def _init_worker(scenario: Scenario, opts: RunOptions) -> None:
    _WORKER["scenario"] = scenario
    _WORKER["opts"] = opts
    _WORKER["pop"] = scenario.make_population(make_rng(scenario.seed), scenario.params)


def _worker_run(r: int) -> dict:
    return run_replicate(_WORKER["scenario"], _WORKER["pop"], r, _WORKER["opts"])


def resolve_threads(threads: int | None) -> int:
    """``0``/``None`` means the ``MASSFUSE_THREADS`` variable, else every CPU."""
    if threads:
        return max(1, int(threads))
    env = os.environ.get("MASSFUSE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def population_truth(scenario: Scenario, pop: Population) -> dict[str, float]:
    outcomes = {b.outcome for b in scenario.blocks} | set(scenario.naive_outcomes)
    return {y: float(np.mean(pop.columns[y])) for y in sorted(outcomes)}


def run_monte_carlo(
    scenario: Scenario,
    threads: int | None = 1,
    replicates: int | None = None,
    options: RunOptions = RunOptions(),
) -> SimulationReport:
    """Run ``replicates`` (default ``scenario.replicates``) Monte Carlo replicates."""
    R = scenario.replicates if replicates is None else int(replicates)
    if R < 1:
        raise ValueError("replicates must be positive")
    workers = min(resolve_threads(threads), R)
    pop = scenario.make_population(make_rng(scenario.seed), scenario.params)
    if workers == 1:
        results = [run_replicate(scenario, pop, r, options) for r in range(R)]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(scenario, options)) as ex:
            results = list(ex.map(_worker_run, range(R), chunksize=max(1, R // (4 * workers))))
    return reduce_results(scenario, pop, results, options)


def reduce_results(scenario: Scenario, pop: Population, results: Sequence[dict], options: RunOptions) -> SimulationReport:
    truth = population_truth(scenario, pop)
    rows: list[EstimatorSummary] = []
    failures: dict[str, int] = {}
    records = {} if options.keep_records else None
    for block in scenario.blocks:
        mu = truth[block.outcome]
        ok = [res["blocks"][block.label] for res in results if block.label in res["blocks"]]
        failures[block.label] = len(results) - len(ok)
        for e in block.estimators:
            recs = [o[e.label] for o in ok]
            pts = np.array([x["point"] for x in recs])
            half = np.array([x["half"] for x in recs])
            half_v1 = np.array([x["half_v1"] for x in recs])
            bias, se, rmse, cr = summarize(pts, mu, pts - half, pts + half)
            cr_v1 = summarize(pts, mu, pts - half_v1, pts + half_v1)[3]
            cr_boot = None
            if recs and "half_boot" in recs[0]:
                hb = np.array([x["half_boot"] for x in recs])
                cr_boot = summarize(pts, mu, pts - hb, pts + hb)[3]
            v1 = np.array([x["v1"] for x in recs])
            v2 = np.array([x["v2"] for x in recs])
            with np.errstate(invalid="ignore", divide="ignore"):
                share = np.where(v1 + v2 > 0, v2 / (v1 + v2), 0.0)
            ks = np.array([x["k"] for x in recs], dtype=float)
            rows.append(
                EstimatorSummary(
                    block.label,
                    e.label,
                    bias,
                    se,
                    rmse,
                    cr,
                    cr_v1,
                    cr_boot,
                    float(share.mean()) if share.size else math.nan,
                    float(np.median(share)) if share.size else math.nan,
                    float(ks.mean()) if e.dynamic and ks.size else None,
                    len(recs),
                    failures[block.label],
                )
            )
            if records is not None:
                records[(block.label, e.label)] = recs
    baselines = []
    for y in scenario.naive_outcomes:
        pts = np.array([res["naive"][y] for res in results])
        bias, se, rmse, _ = summarize(pts, truth[y])
        baselines.append(
            EstimatorSummary(y.upper(), "Naive", bias, se, rmse, math.nan, math.nan, None, math.nan, math.nan, None, len(pts), 0)
        )
    return SimulationReport(
        scenario.name,
        scenario.seed,
        len(results),
        dict(scenario.params),
        truth,
        rows,
        baselines,
        failures,
        records,
    )
