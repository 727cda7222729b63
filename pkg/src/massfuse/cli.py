"""``massfuse`` command line: estimate, bootstrap and simulate."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from typing import Sequence

import numpy as np

from . import io
from .data import DesignSpec, ProbSample
from .engine import ImputationSpec
from .errors import (
    AllocationExceedsStratum,
    ConfigError,
    DataError,
    KExceedsDonors,
    MassfuseError,
    SampleLargerThanPopulation,
    UnsupportedDesign,
)
from .estimators import K_SEARCHES, estimate, select_k_dynamic
from .regression import ENGINES, ModelSpec
from .variance import VarianceSettings, bootstrap_variance

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("pmm_a", "pmm_b", "nn", "glm", "naive", "multirobust")

DEFAULTS = {
    "method": "pmm_a",
    "engine": "linear",
    "k": "1",
    "k_search": "global",
    "variance": "analytic",
    "v2": "on",
    "n_mode": "estimated",
    "design": "poisson",
    "seed": "1",
    "m": "50",
    "l": "500",
    "ci_level": "0.95",
    "format": "json",
    "threads": "0",
    "scale": "100",
}

# settings that change how a run executes but not what it computes
EXECUTION_KEYS = {"threads", "output", "config", "format", "full_precision"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    p.add_argument("--seed")
    p.add_argument("--threads", help="worker processes, 0 = auto (env MASSFUSE_THREADS)")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--output", "-o", help="write here instead of stdout")
    p.add_argument("--full-precision", action="store_true", default=None, help="17 digits in CSV output")
    p.add_argument("--v2", choices=("on", "off", "pairwise"))
    p.add_argument("--m", "--M", dest="m", help="mini-bootstrap replicates")
    p.add_argument("--l", "--L", dest="l", help="full-bootstrap replicates")
    p.add_argument("--ci-level")


def _sample_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nonprob", help="CSV with covariates and outcome column y")
    p.add_argument("--prob", help="CSV with covariates and pi or d")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--columns", help="comma-separated model covariates (default: all shared columns)")
    p.add_argument("--extra-model", action="append", help="extra model columns for multirobust matching")
    p.add_argument("--k", help="integer or dynamic:<grid>, e.g. dynamic:1,5,25 or dynamic:1-50")
    p.add_argument("--k-search", choices=K_SEARCHES)
    p.add_argument("--n-mode", help="known:<N> or estimated")
    p.add_argument("--design", choices=("poisson", "srswor"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="massfuse", description="Mass imputation estimators of a population mean.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    est = sub.add_parser("estimate", help="point estimate with variance and confidence interval")
    _common(est)
    _sample_args(est)
    est.add_argument("--variance", choices=("analytic", "bootstrap", "none"))
    boot = sub.add_parser("bootstrap", help="full bootstrap: replicate trace plus summary")
    _common(boot)
    _sample_args(boot)
    sim = sub.add_parser("simulate", help="Monte Carlo study of a built-in scenario")
    _common(sim)
    sim.add_argument("--scenario")
    sim.add_argument("--r", help="replicates (default: the scenario's)")
    sim.add_argument("--param", action="append", help="scenario parameter override key=value, e.g. n_a=1000")
    sim.add_argument("--bootstrap-blocks", help="comma-separated outcome blocks that also get the full bootstrap")
    sim.add_argument("--scale", help="multiplier for Bias, SE and RMSE in the table (default 100)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config-file values over defaults."""
    cfg = io.load_config(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    known = set(vars(args))
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    out = {k: v for k, v in DEFAULTS.items() if k in known}
    out.update(cfg)
    out.update(flags)
    return out


def parse_k(text: str) -> int | list[int]:
    text = str(text).strip()
    if text.startswith("dynamic:"):
        grid: list[int] = []
        for part in text[len("dynamic:") :].split(","):
            part = part.strip()
            if "-" in part:
                a, b = part.split("-", 1)
                grid.extend(range(int(a), int(b) + 1))
            elif part:
                grid.append(int(part))
        if not grid or min(grid) < 1:
            raise UsageError(f"bad dynamic k grid {text!r}")
        return sorted(set(grid))
    try:
        k = int(text)
    except ValueError:
        raise UsageError(f"--k must be a positive integer or dynamic:<grid>, got {text!r}") from None
    if k < 1:
        raise UsageError("--k must be positive")
    return k


def parse_n_mode(text: str) -> float | None:
    text = str(text).strip()
    if text == "estimated":
        return None
    if text.startswith("known:"):
        try:
            N = float(text[len("known:") :])
        except ValueError:
            raise UsageError(f"bad population size in {text!r}") from None
        if N <= 0:
            raise UsageError("population size must be positive")
        return N
    raise UsageError(f"--n-mode must be known:<N> or estimated, got {text!r}")


def _settings(cfg: dict) -> VarianceSettings:
    v2 = cfg["v2"]
    try:
        return VarianceSettings(
            mini_bootstrap_M=int(cfg["m"]),
            bootstrap_L=int(cfg["l"]),
            v2_mode="pairwise_cov" if v2 == "pairwise" else "replicate_mean",
            include_v2=v2 != "off",
            ci_level=float(cfg["ci_level"]),
            seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _columns(text):
    if text is None:
        return None
    cols = tuple(c.strip() for c in str(text).split(",") if c.strip())
    return cols or None


def _spec(cfg: dict) -> ImputationSpec:
    extra = cfg.get("extra_model") or []
    if isinstance(extra, str):
        extra = [e for e in extra.split(";") if e.strip()]
    model = ModelSpec(cfg["engine"], _columns(cfg.get("columns")))
    extras = tuple(ModelSpec(cfg["engine"], _columns(e)) for e in extra)
    if cfg["method"] == "multirobust" and not extras:
        raise UsageError("multirobust needs at least one --extra-model")
    return ImputationSpec(model, extras)


def _load(cfg: dict):
    if not cfg.get("nonprob") or not cfg.get("prob"):
        raise UsageError("--nonprob and --prob are required")
    N = parse_n_mode(cfg["n_mode"])
    if cfg["design"] == "srswor" and N is None:
        raise UsageError("--design srswor needs --n-mode known:<N>")
    donors = io.load_nonprob_csv(cfg["nonprob"])
    recipients = io.load_prob_csv(cfg["prob"], DesignSpec.poisson(None if N is None else int(N)))
    if cfg["design"] == "srswor":
        design = DesignSpec.srswor(int(N), recipients.n)
        recipients = ProbSample(recipients.x, recipients.pi, design, recipients.ids, recipients.strata)
    return donors, recipients, N


def _provenance(cfg: dict, command: str) -> dict:
    keep = {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS and v is not None}
    keep["command"] = command
    return dict(sorted(keep.items()))


def _emit(text: str, cfg: dict) -> None:
    if cfg.get("output"):
        with open(cfg["output"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _digits(cfg) -> int:
    return 17 if cfg.get("full_precision") in (True, "true", "1", "yes") else 6


RESULT_FIELDS = ("point", "se", "ci_low", "ci_high", "v1", "v2", "method", "k", "seed")


def cmd_estimate(cfg: dict) -> int:
    donors, recipients, N = _load(cfg)
    k = parse_k(cfg["k"])
    settings = _settings(cfg)
    if cfg["method"] == "naive":
        spec = ImputationSpec()
    else:
        spec = _spec(cfg)
    if isinstance(k, list) and cfg["k_search"] != "global":
        kk, _ = select_k_dynamic(donors, recipients, cfg["method"], spec, k, settings, N, search=cfg["k_search"])
        k = kk
    res = estimate(donors, recipients, cfg["method"], spec, k, N, cfg["variance"], settings)
    out = res.as_dict()
    prov = _provenance(cfg, "estimate")
    if cfg["format"] == "json":
        _emit(io.to_json({"command": "estimate", "config": prov, "config_hash": io.config_hash(prov), "result": out}), cfg)
    else:
        row = [out[f] for f in RESULT_FIELDS] + [io.config_hash(prov)]
        _emit(io.to_csv(RESULT_FIELDS + ("config_hash",), [row], _digits(cfg)), cfg)
    return EXIT_OK


def cmd_bootstrap(cfg: dict) -> int:
    donors, recipients, N = _load(cfg)
    if cfg["method"] == "naive":
        raise UsageError("the bootstrap command needs an imputation method")
    spec = _spec(cfg)
    settings = _settings(cfg)
    k = parse_k(cfg["k"])
    if isinstance(k, list):
        k, _ = select_k_dynamic(donors, recipients, cfg["method"], spec, k, settings, N, search=cfg["k_search"])
    res = estimate(donors, recipients, cfg["method"], spec, k, N, "bootstrap", settings)
    boot = bootstrap_variance(donors, recipients, cfg["method"], spec, k, settings, N, v2=res.variance_v2)
    summary = res.as_dict()
    prov = _provenance(cfg, "bootstrap")
    if cfg["format"] == "json":
        doc = {
            "command": "bootstrap",
            "config": prov,
            "config_hash": io.config_hash(prov),
            "summary": summary,
            "replicates": [float(v) for v in boot.replicates],
        }
        _emit(io.to_json(doc), cfg)
    else:
        digits = _digits(cfg)
        rows = [[i, float(v)] for i, v in enumerate(boot.replicates)]
        text = io.to_csv(("replicate", "estimate"), rows, digits)
        row = [summary[f] for f in RESULT_FIELDS] + [io.config_hash(prov)]
        text += "\n" + io.to_csv(RESULT_FIELDS + ("config_hash",), [row], digits)
        _emit(text, cfg)
    return EXIT_OK


def _scenario_params(cfg: dict) -> dict:
    params = {}
    raw = cfg.get("param") or []
    if isinstance(raw, str):
        raw = [p for p in raw.split(";") if p.strip()]
    for item in raw:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            params[key] = int(value)
        except ValueError:
            try:
                params[key] = float(value)
            except ValueError:
                raise UsageError(f"--param {key}: numeric value expected, got {value!r}") from None
    return params


def cmd_simulate(cfg: dict) -> int:
    from dataclasses import replace

    from .simulation import RunOptions, get_scenario, run_monte_carlo
    from .simulation.runner import resolve_threads

    if not cfg.get("scenario"):
        raise UsageError("--scenario is required")
    try:
        scenario = get_scenario(cfg["scenario"])
        params = _scenario_params(cfg)
        if params:
            scenario = scenario.with_params(**params)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    scenario = replace(scenario, seed=int(cfg["seed"]))
    settings = _settings(cfg)
    blocks = _columns(cfg.get("bootstrap_blocks")) or ()
    known = {b.label for b in scenario.blocks}
    if set(blocks) - known:
        raise UsageError(f"unknown blocks {sorted(set(blocks) - known)}; scenario has {sorted(known)}")
    R = int(cfg["r"]) if cfg.get("r") else None
    report = run_monte_carlo(
        scenario,
        threads=resolve_threads(int(cfg["threads"])),
        replicates=R,
        options=RunOptions(settings=settings, bootstrap_blocks=tuple(blocks)),
    )
    prov = _provenance(cfg, "simulate")
    prov["params"] = ";".join(f"{k}={v}" for k, v in sorted(scenario.params.items()))
    prov["replicates"] = report.replicates
    scale = float(cfg["scale"])
    if cfg["format"] == "json":
        _emit(io.to_json(io.report_dict(report, prov, scale)), cfg)
    else:
        tag = [report.seed, io.config_hash(prov)]
        rows = [r + tag for r in io.report_rows(report, scale)]
        _emit(io.to_csv(io.REPORT_HEADER + ("seed", "config_hash"), rows, _digits(cfg)), cfg)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "bootstrap": cmd_bootstrap, "simulate": cmd_simulate}

_DATA_ERRORS = (DataError, OSError, SampleLargerThanPopulation, AllocationExceedsStratum, UnsupportedDesign, KExceedsDonors)


def _fail(exc: BaseException, code: int) -> int:
    doc = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    for attr in ("row", "column"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        return _fail(exc, EXIT_USAGE)
    except _DATA_ERRORS as exc:
        return _fail(exc, EXIT_DATA)
    except (MassfuseError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return _fail(exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
