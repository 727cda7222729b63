"""Built-in Monte Carlo scenarios.

A scenario fixes a finite population per seed (``make_rng(seed)``) and
redraws both samples in every replicate. Outcomes are analysed in blocks:
each block names the outcome column, a working-model specification and the
estimators that share its fit and donor matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from ..designs import draw_srswor, draw_stratified_srswor
from ..engine import ImputationSpec
from ..regression import ModelSpec

# candidate k for dynamic selection, scanned upwards until the variance stops falling
DYNAMIC_K = tuple(range(1, 51))


@dataclass(frozen=True)
class EstimatorConfig:
    label: str
    method: str
    k: int | tuple[int, ...] = 1
    search: str = "first_local"

    @property
    def dynamic(self) -> bool:
        return isinstance(self.k, tuple)

    @property
    def ks(self) -> tuple[int, ...]:
        return self.k if isinstance(self.k, tuple) else (self.k,)


@dataclass(frozen=True)
class OutcomeBlock:
    label: str
    outcome: str
    spec: ImputationSpec
    estimators: tuple[EstimatorConfig, ...]


@dataclass
class Population:
    columns: dict[str, np.ndarray]
    extras: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return next(iter(self.columns.values())).size


@dataclass
class SampleDraw:
    donors: np.ndarray
    recipients: np.ndarray
    pi: np.ndarray
    design_kind: str = "srswor"
    strata: np.ndarray | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    make_population: Callable[[np.random.Generator, Mapping], Population]
    draw_samples: Callable[[Population, np.random.Generator, Mapping], SampleDraw]
    covariates: tuple[str, ...]
    blocks: tuple[OutcomeBlock, ...]
    naive_outcomes: tuple[str, ...] = ()
    replicates: int = 500
    seed: int = 1
    params: Mapping = field(default_factory=lambda: MappingProxyType({}))

    def with_params(self, **kw) -> "Scenario":
        unknown = set(kw) - set(self.params)
        if unknown:
            raise KeyError(f"scenario {self.name!r} has no parameters {sorted(unknown)}")
        return replace(self, params=MappingProxyType({**self.params, **kw}))


def _srswor_b(N: int, n_b: int, rng) -> tuple[np.ndarray, np.ndarray]:
    idx = draw_srswor(N, n_b, rng)
    return idx, np.full(n_b, n_b / N)


# --- normal-covariate population with a stratified donor sample ------------


def gen_population_sec4(rng: np.random.Generator, N: int = 100_000) -> Population:
    """Three N(2, 1) covariates and three outcomes sharing one error draw."""
    x1, x2, x3 = (rng.normal(2.0, 1.0, N) for _ in range(3))
    eps = rng.normal(0.0, 1.0, N)
    cols = {
        "x1": x1,
        "x2": x2,
        "x3": x3,
        "x1sq": x1**2,
        "x2sq": x2**2,
        "x3sq": x3**2,
        "y1": 1 + 2 * x1 + eps,
        "y2": -1 + x1 + x2 + x3 + eps,
        "y3": -10 + x1**2 + x2**2 + x3**2 + eps,
    }
    low = np.flatnonzero(x1 <= 2)
    high = np.flatnonzero(x1 > 2)
    return Population(cols, {"strata": (low, high)})


def gen_nonprob_sec4(population: Population, n_a: int, rng: np.random.Generator) -> np.ndarray:
    """Donor rows: SRSWOR of 70% of ``n_a`` from x1 <= 2 and 30% from x1 > 2."""
    n_low = int(round(0.7 * n_a))
    return draw_stratified_srswor(population.extras["strata"], (n_low, n_a - n_low), rng)


def _sec4_population(rng, params):
    return gen_population_sec4(rng, params["N"])


def _sec4_draw(pop, rng, params):
    a = gen_nonprob_sec4(pop, params["n_a"], rng)
    b, pi = _srswor_b(pop.N, params["n_b"], rng)
    return SampleDraw(a, b, pi)


def _standard_estimators() -> tuple[EstimatorConfig, ...]:
    return (
        EstimatorConfig("GLM", "glm"),
        EstimatorConfig("NN1", "nn", 1),
        EstimatorConfig("NN5", "nn", 5),
        EstimatorConfig("PMM1A", "pmm_a", 1),
        EstimatorConfig("PMM1B", "pmm_b", 1),
        EstimatorConfig("PMM5A", "pmm_a", 5),
        EstimatorConfig("PMM5B", "pmm_b", 5),
    )


def _linear(*cols: str, nn: tuple[str, ...] | None = None) -> ImputationSpec:
    return ImputationSpec(ModelSpec("linear", cols), nn_columns=nn)


SEC4 = Scenario(
    name="sec4",
    description=(
        "N=1e5 normal covariates; donors stratified on x1 <= 2 (70/30 split); "
        "recipients SRSWOR n_B=500; Y3_mis fits x1, x2 only"
    ),
    make_population=_sec4_population,
    draw_samples=_sec4_draw,
    covariates=("x1", "x2", "x3", "x1sq", "x2sq", "x3sq"),
    blocks=(
        OutcomeBlock("Y1", "y1", _linear("x1"), _standard_estimators()),
        OutcomeBlock("Y2", "y2", _linear("x1", "x2", "x3"), _standard_estimators()),
        OutcomeBlock("Y3", "y3", _linear("x1sq", "x2sq", "x3sq", nn=("x1", "x2", "x3")), _standard_estimators()),
        OutcomeBlock("Y3_mis", "y3", _linear("x1", "x2"), _standard_estimators()),
    ),
    naive_outcomes=("y1", "y2", "y3"),
    replicates=500,
    seed=1,
    params=MappingProxyType({"N": 100_000, "n_a": 500, "n_b": 500}),
)


# --- correlated-block population with self-selected donors -----------------


def _block_corr(rng: np.random.Generator, low: float, high: float, size: int = 5) -> np.ndarray:
    """Unit-diagonal matrix with iid U(low, high) off-diagonals, redrawn until PD."""
    iu = np.triu_indices(size, 1)
    while True:
        s = np.eye(size)
        s[iu] = rng.uniform(low, high, iu[0].size)
        s = s + np.triu(s, 1).T
        if np.all(np.linalg.eigvalsh(s) > 0):
            return s


def _block_mvn(rng: np.random.Generator, N: int, mean: float, cov: np.ndarray) -> np.ndarray:
    b = cov.shape[0]
    z = rng.multivariate_normal(np.full(b, mean), cov, size=-(-N // b), method="cholesky")
    return z.reshape(-1)[:N]


def gen_scenario_c1(rng: np.random.Generator, N: int = 100_000) -> Population:
    """Correlated blocks of five for x1 and the error; x2 ~ Exp(1).

    Selection is ``min(Bern(expit(x2)), Bern(expit(x1)), tail(eps))`` where
    ``tail`` flags errors outside the empirical 20%/80% quantiles. The tail
    indicator and the probabilities are fixed with the population; the two
    Bernoulli draws are redrawn per replicate by :func:`draw_c1`.
    """
    cov_x = _block_corr(rng, -0.5, 0.5)
    cov_e = _block_corr(rng, -0.7, 1.0)
    x1 = _block_mvn(rng, N, 1.0, cov_x)
    x2 = rng.exponential(1.0, N)
    eps = _block_mvn(rng, N, 0.0, cov_e)
    q20, q80 = np.quantile(eps, [0.2, 0.8])
    tail = (eps > q80) | (eps < q20)
    cols = {
        "x1": x1,
        "x2": x2,
        "eps": eps,
        "y1": 1 + 0.5 * x1 + 0.35 * x2 + eps,
        "y2": 1.2 + (x1 - 0.5) ** 2 + np.arctan(x2) ** (3 + np.sin(x1 + x2)) + np.sin(x1) * np.cos(x2) + eps,
    }
    extras = {"p1": expit(x2), "p2": expit(x1), "tail": tail, "cov_x": cov_x, "cov_e": cov_e}
    return Population(cols, extras)


def draw_c1(pop: Population, rng: np.random.Generator) -> np.ndarray:
    e = pop.extras
    delta = (rng.random(pop.N) < e["p1"]) & (rng.random(pop.N) < e["p2"]) & e["tail"]
    return np.flatnonzero(delta)


def _c1_population(rng, params):
    return gen_scenario_c1(rng, params["N"])


def _c1_draw(pop, rng, params):
    a = draw_c1(pop, rng)
    b, pi = _srswor_b(pop.N, params["n_b"], rng)
    return SampleDraw(a, b, pi)


def _dynamic_estimators() -> tuple[EstimatorConfig, ...]:
    return (
        EstimatorConfig("GLM", "glm"),
        EstimatorConfig("NN5", "nn", 5),
        EstimatorConfig("NN_dyn", "nn", DYNAMIC_K),
        EstimatorConfig("PMM5A", "pmm_a", 5),
        EstimatorConfig("PMMA_dyn", "pmm_a", DYNAMIC_K),
        EstimatorConfig("PMM5B", "pmm_b", 5),
        EstimatorConfig("PMMB_dyn", "pmm_b", DYNAMIC_K),
    )


APP_C1 = Scenario(
    name="app_c1",
    description="block-correlated x1 and errors, x2 ~ Exp(1), about 20% self-selected donors; fixed and dynamic k",
    make_population=_c1_population,
    draw_samples=_c1_draw,
    covariates=("x1", "x2"),
    blocks=(
        OutcomeBlock("Y1", "y1", _linear("x1", "x2"), _dynamic_estimators()),
        OutcomeBlock("Y2", "y2", _linear("x1", "x2"), _dynamic_estimators()),
    ),
    naive_outcomes=("y1", "y2"),
    replicates=500,
    seed=1,
    params=MappingProxyType({"N": 100_000, "n_b": 500}),
)


# --- kernel-engine variant -------------------------------------------------


def _c3_population(rng, params):
    pop = gen_scenario_c1(rng, params["N"])
    c = pop.columns
    c["y3"] = c["x1"] * c["x2"] * c["eps"]
    return pop


def _c3_estimators() -> tuple[EstimatorConfig, ...]:
    return (
        EstimatorConfig("GLM", "glm"),
        EstimatorConfig("NN5", "nn", 5),
        EstimatorConfig("PMM5A", "pmm_a", 5),
        EstimatorConfig("PMM5B", "pmm_b", 5),
    )


def _kernel_block(label: str, outcome: str) -> OutcomeBlock:
    spec = ImputationSpec(ModelSpec("kernel", ("x1", "x2")))
    return OutcomeBlock(
        label + "_kernel",
        outcome,
        spec,
        (EstimatorConfig("PMM5A", "pmm_a", 5), EstimatorConfig("PMM5B", "pmm_b", 5)),
    )


APP_C3 = Scenario(
    name="app_c3",
    description=(
        "app_c1 population plus Y3 = x1*x2*eps; linear and Nadaraya-Watson working models. "
        "Kernel fits cost O(n_A^2); lower N or R for desk runs"
    ),
    make_population=_c3_population,
    draw_samples=_c1_draw,
    covariates=("x1", "x2"),
    blocks=tuple(
        b
        for lab, out in (("Y1", "y1"), ("Y2", "y2"), ("Y3", "y3"))
        for b in (OutcomeBlock(lab, out, _linear("x1", "x2"), _c3_estimators()), _kernel_block(lab, out))
    ),
    naive_outcomes=("y1", "y2", "y3"),
    replicates=500,
    seed=1,
    params=MappingProxyType({"N": 100_000, "n_b": 500}),
)


# --- restricted samplable sub-population ------------------------------------

C4_LEVELS = 40
C4_LAMBDA = np.linspace(0.75, 0.10, C4_LEVELS)


def gen_scenario_c4(rng: np.random.Generator, mode: str, N: int = 100_000) -> Population:
    """The block-correlated population plus a 40-level count covariate ``x3``.

    ``mode="stochastic"`` makes each unit samplable with probability
    ``expit(lambda[x3])``; ``mode="deterministic"`` keeps the 75% of units with
    the highest ``expit(0.84 + 0.32 x1 + 0.68 x2 + lambda[x3])``.
    """
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"mode must be 'stochastic' or 'deterministic', got {mode!r}")
    pop = gen_scenario_c1(rng, N)
    c = pop.columns
    r, mu = 4.0, 10.0
    counts = rng.negative_binomial(r, r / (r + mu), N)
    x3 = np.clip(counts, 1, C4_LEVELS)
    gamma = rng.uniform(-6.0, 10.0, C4_LEVELS)
    lam = C4_LAMBDA[x3 - 1]
    x1, x2, eps = c["x1"], c["x2"], c["eps"]
    effect = gamma[x3 - 1]
    c["x3"] = x3.astype(float)
    for level in range(2, C4_LEVELS + 1):
        c[f"x3_{level}"] = (x3 == level).astype(float)
    c["y1"] = -7 + 6 * x1 - 5 * x2 + effect + 15 * eps
    c["y2"] = -2 + 0.37 * (x1 - 0.5) ** 2 + x2**2 + effect + 5 * eps
    if mode == "stochastic":
        samplable = rng.random(N) < expit(lam)
        p = expit(x2 - x1 - 2)
    else:
        pi_u = expit(0.84 + 0.32 * x1 + 0.68 * x2 + lam)
        samplable = pi_u > np.quantile(pi_u, 0.25)
        p = expit(0.6 * x1 - x2 - 2)
    pop.extras.update(gamma=gamma, samplable=samplable, p=p, mode=mode)
    return pop


def draw_c4(pop: Population, rng: np.random.Generator) -> np.ndarray:
    e = pop.extras
    return np.flatnonzero(e["samplable"] & (rng.random(pop.N) < e["p"]))


def _c4_draw(pop, rng, params):
    a = draw_c4(pop, rng)
    b, pi = _srswor_b(pop.N, params["n_b"], rng)
    return SampleDraw(a, b, pi)


def _c4_scenario(mode: str, make_population) -> Scenario:
    dummies = tuple(f"x3_{level}" for level in range(2, C4_LEVELS + 1))
    spec = ImputationSpec(
        ModelSpec("linear", ("x1", "x2") + dummies, aliased="drop"), nn_columns=("x1", "x2", "x3")
    )
    ests = (
        EstimatorConfig("GLM", "glm"),
        EstimatorConfig("NN5", "nn", 5),
        EstimatorConfig("PMM5A", "pmm_a", 5),
        EstimatorConfig("PMM5B", "pmm_b", 5),
    )
    return Scenario(
        name=f"app_c4_{mode}",
        description=f"{mode} restriction of the samplable population by the 40-level covariate x3",
        make_population=make_population,
        draw_samples=_c4_draw,
        covariates=("x1", "x2", "x3") + dummies,
        blocks=(OutcomeBlock("Y1", "y1", spec, ests), OutcomeBlock("Y2", "y2", spec, ests)),
        naive_outcomes=("y1", "y2"),
        replicates=500,
        seed=1,
        params=MappingProxyType({"N": 100_000, "n_b": 500}),
    )


def _c4_stochastic_population(rng, params):
    return gen_scenario_c4(rng, "stochastic", params["N"])


def _c4_deterministic_population(rng, params):
    return gen_scenario_c4(rng, "deterministic", params["N"])


APP_C4_STOCHASTIC = _c4_scenario("stochastic", _c4_stochastic_population)
APP_C4_DETERMINISTIC = _c4_scenario("deterministic", _c4_deterministic_population)


# --- multiply robust matching ------------------------------------------------


def _c5_population(rng, params):
    pop = gen_scenario_c1(rng, params["N"])
    c = pop.columns
    x1, x2, eps = c["x1"], c["x2"], c["eps"]
    c["x1p5"] = (x1 - 0.5) ** 5
    c["x2p3"] = x2**3
    c["y1"] = 1 + 0.2 * x1 + 5 * x2 + eps
    c["y2"] = -2 + 5 * (x1 - 0.5) ** 5 + x2**3 + eps
    return pop


def _c5_spec() -> ImputationSpec:
    return ImputationSpec(
        ModelSpec("linear", ("x1", "x2")),
        extra_models=(ModelSpec("linear", ("x1p5", "x2p3")),),
        nn_columns=("x1", "x2"),
    )


def _c5_estimators() -> tuple[EstimatorConfig, ...]:
    return (
        EstimatorConfig("GLM", "glm"),
        EstimatorConfig("NN5", "nn", 5),
        EstimatorConfig("PMM5A", "pmm_a", 5),
        EstimatorConfig("PMM5B", "pmm_b", 5),
        EstimatorConfig("MR5", "multirobust", 5),
    )


APP_C5 = Scenario(
    name="app_c5",
    description="block-correlated population; matching on predictions of a linear and a polynomial model",
    make_population=_c5_population,
    draw_samples=_c1_draw,
    covariates=("x1", "x2", "x1p5", "x2p3"),
    blocks=(
        OutcomeBlock("Y1", "y1", _c5_spec(), _c5_estimators()),
        OutcomeBlock("Y2", "y2", _c5_spec(), _c5_estimators()),
    ),
    naive_outcomes=("y1", "y2"),
    replicates=500,
    seed=1,
    params=MappingProxyType({"N": 100_000, "n_b": 500}),
)


SCENARIOS: Mapping[str, Scenario] = MappingProxyType(
    {
        s.name: s
        for s in (SEC4, APP_C1, APP_C3, APP_C4_STOCHASTIC, APP_C4_DETERMINISTIC, APP_C5)
    }
)


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; built-in: {sorted(SCENARIOS)}") from None
