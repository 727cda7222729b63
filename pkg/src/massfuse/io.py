"""CSV loading, flat config files and deterministic serialisation."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .data import CovariateMatrix, DesignSpec, NonProbSample, ProbSample
from .errors import (
    ConfigError,
    DataError,
    InvalidProbability,
    MissingDesignColumn,
    MissingOutcomeColumn,
    NonFiniteValue,
    ParseError,
)

NONPROB_RESERVED = ("id", "y")
PROB_RESERVED = ("id", "pi", "d", "stratum")
PI_D_TOL = 1e-9


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ParseError(f"{path}: missing header row", 0, None)
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise ParseError(f"{path}: row {i} has {len(r)} fields, header has {len(header)}", i, None)
    return header, body


def _numeric_column(path, header, body, name) -> np.ndarray:
    j = header.index(name)
    out = np.empty(len(body))
    for i, r in enumerate(body, start=1):
        text = r[j].strip()
        try:
            v = float(text)
        except ValueError:
            raise ParseError(f"{path}: row {i}, column {name!r}: cannot parse {text!r}", i, name) from None
        if not math.isfinite(v):
            raise NonFiniteValue(f"{path}: row {i}, column {name!r}: non-finite value {text!r}", i, name)
        out[i - 1] = v
    return out


def _ids(path, header, body):
    if "id" not in header:
        return None
    ids = _numeric_column(path, header, body, "id")
    if np.any(ids != np.round(ids)):
        raise ParseError(f"{path}: ids must be integers", None, "id")
    return ids.astype(np.int64)


def _covariates(path, header, body, reserved) -> CovariateMatrix:
    names = [h for h in header if h not in reserved]
    if not names:
        raise DataError(f"{path}: no covariate columns")
    cols = {c: _numeric_column(path, header, body, c) for c in names}
    return CovariateMatrix(np.column_stack([cols[c] for c in names]).reshape(len(body), len(names)), tuple(names))


def load_nonprob_csv(path) -> NonProbSample:
    """Donor sample: column ``y`` is the outcome, ``id`` optional, the rest covariates."""
    header, body = _read_table(path)
    if "y" not in header:
        raise MissingOutcomeColumn(f"{path}: no 'y' column in header {header}")
    if not body:
        raise DataError(f"{path}: no data rows")
    x = _covariates(path, header, body, NONPROB_RESERVED)
    y = _numeric_column(path, header, body, "y")
    return NonProbSample(x, y, _ids(path, header, body))


def load_prob_csv(path, design: DesignSpec | None = None) -> ProbSample:
    """Recipient sample with inclusion probabilities ``pi`` or design weights ``d``.

    When both columns are present they must agree to ``|pi * d - 1| <= 1e-9``.
    An optional integer ``stratum`` column labels strata for stratified designs.
    """
    header, body = _read_table(path)
    if "pi" not in header and "d" not in header:
        raise MissingDesignColumn(f"{path}: need a 'pi' or 'd' column")
    if not body:
        raise DataError(f"{path}: no data rows")
    x = _covariates(path, header, body, PROB_RESERVED)
    if "pi" in header:
        pi = _numeric_column(path, header, body, "pi")
        if "d" in header:
            d = _numeric_column(path, header, body, "d")
            bad = np.flatnonzero(np.abs(pi * d - 1.0) > PI_D_TOL)
            if bad.size:
                i = int(bad[0]) + 1
                raise InvalidProbability(f"{path}: row {i}: pi={pi[i - 1]!r} and d={d[i - 1]!r} disagree", i)
    else:
        d = _numeric_column(path, header, body, "d")
        with np.errstate(divide="ignore"):
            pi = 1.0 / d
    bad = np.flatnonzero(~((pi > 0) & (pi <= 1)))
    if bad.size:
        i = int(bad[0]) + 1
        raise InvalidProbability(f"{path}: row {i}: inclusion probability {pi[i - 1]!r} not in (0, 1]", i)
    strata = None
    if "stratum" in header:
        s = _numeric_column(path, header, body, "stratum")
        strata = s.astype(np.int64)
    design = DesignSpec.poisson() if design is None else design
    return ProbSample(x, pi, design, _ids(path, header, body), strata)


def write_nonprob_csv(sample: NonProbSample, path) -> None:
    cols = list(sample.x.column_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["id"] if sample.ids is not None else []) + cols + ["y"])
        for i in range(sample.n):
            lead = [str(int(sample.ids[i]))] if sample.ids is not None else []
            w.writerow(lead + [repr(float(v)) for v in sample.x.values[i]] + [repr(float(sample.y[i]))])


def write_prob_csv(sample: ProbSample, path) -> None:
    cols = list(sample.x.column_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = (["id"] if sample.ids is not None else []) + cols + ["pi"]
        if sample.strata is not None:
            head.append("stratum")
        w.writerow(head)
        for i in range(sample.n):
            row = [str(int(sample.ids[i]))] if sample.ids is not None else []
            row += [repr(float(v)) for v in sample.x.values[i]] + [repr(float(sample.pi[i]))]
            if sample.strata is not None:
                row.append(str(int(sample.strata[i])))
            w.writerow(row)


# --- config files -------------------------------------------------------------


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment, keys use ``-`` or ``_``."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- serialisation ------------------------------------------------------------


def fmt_float(x: float, digits: int) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), f".{digits}g")


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    if isinstance(v, str):
        return _json_string(v)
    if isinstance(v, Mapping):
        return "{" + ", ".join(f"{_json_string(str(k))}: {_json_value(val)}" for k, val in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _json_string(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def to_json(obj) -> str:
    """JSON text with every float written to 17 significant digits (NaN -> null)."""
    return _json_value(obj) + "\n"


def config_hash(config: Mapping) -> str:
    """Stable digest of a configuration mapping (key order does not matter)."""
    canon = to_json(dict(sorted((str(k), v) for k, v in config.items())))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def to_csv(header: Iterable[str], rows: Iterable[Iterable], digits: int = 6) -> str:
    """Header plus rows; floats use ``digits`` significant digits, '.' decimal."""
    lines = [",".join(header)]
    for r in rows:
        cells = []
        for v in r:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt_float(v, digits))
            elif v is None:
                cells.append("")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


REPORT_HEADER = (
    "Outcome",
    "Estimator",
    "Bias",
    "SE",
    "RMSE",
    "CR",
    "CR_V1",
    "CR_boot",
    "V2_share",
    "mean_k",
    "n_ok",
)


def report_rows(report, scale: float = 100.0) -> list[list]:
    """Table rows of a simulation report; Bias, SE and RMSE are multiplied by ``scale``."""
    out = []
    for r in report.rows + report.baselines:
        out.append(
            [
                r.outcome,
                r.estimator,
                r.bias * scale,
                r.se * scale,
                r.rmse * scale,
                r.cr,
                r.cr_v1,
                r.cr_boot,
                r.mean_v2_share,
                r.mean_k,
                r.n_ok,
            ]
        )
    return out


def report_dict(report, config: Mapping, scale: float = 100.0) -> dict:
    rows = [dict(zip(REPORT_HEADER, r)) for r in report_rows(report, scale)]
    return {
        "command": "simulate",
        "config": dict(config),
        "config_hash": config_hash(config),
        "seed": report.seed,
        "scenario": report.scenario,
        "replicates": report.replicates,
        "scale": scale,
        "truth": report.truth,
        "failures": report.failures,
        "rows": rows[: len(report.rows)],
        "baselines": rows[len(report.rows) :],
    }
