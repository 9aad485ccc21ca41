"""Covariate files, run configuration, study files and report formatting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import tomli

from .exceptions import InputError, SchemaError
from .graph import Graph, GrowthReport, build_graph, read_edge_list
from .inference import DEFAULT_ALPHA, DEFAULT_M_MAX, Report
from .ols import ContrastSpec, Design
from .selection import DEFAULT_PERMUTATIONS

__all__ = [
    "RunConfig",
    "load_config",
    "read_covariates",
    "parse_covariates",
    "write_design_csv",
    "load_inputs",
    "resolve_contrasts",
    "format_report",
    "format_growth",
    "load_study",
]

MISSING = {"", "na", "nan", "null", "none", "."}
INTERCEPT = "(Intercept)"


@dataclass
class RunConfig:
    """Settings for one command-line run; config file values, then flags on top."""

    command: str = "test"
    graph: str | None = None
    data: str | None = None
    response: str | None = None
    predictors: list[str] | None = None
    categorical: list[str] = field(default_factory=list)
    intercept: bool = True
    id_column: str | None = None
    one_based: bool = False
    drop_missing: bool = False
    contrasts: list[dict] = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA
    permutations: int = DEFAULT_PERMUTATIONS
    m_max: int = DEFAULT_M_MAX
    seed: int = 0
    fixed_m: int | None = None
    study: str | None = None
    replications: int | None = None
    output: str | None = None
    format: str = "text"

    def validate(self) -> "RunConfig":
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m_max < 0:
            raise InputError(f"m_max must be non-negative, got {self.m_max}")
        if self.permutations < 1:
            raise InputError(f"permutations must be >= 1, got {self.permutations}")
        if self.fixed_m is not None and not 0 <= self.fixed_m <= self.m_max:
            raise InputError(f"fixed m={self.fixed_m} outside 0..{self.m_max}")
        return self


def load_config(path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a TOML run config and apply ``overrides`` (entries set to None are ignored).

    Relative file paths in the config resolve against the config's directory.
    """
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        with open(path, "rb") as fh:
            try:
                raw = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise SchemaError(f"{path}: {exc}") from None
        raw = {k.replace("-", "_"): v for k, v in raw.items()}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("graph", "data", "study", "output"):
            if raw.get(key) is not None:
                raw[key] = str(path.parent / raw[key])
        values.update(raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return RunConfig(**values).validate()


def _is_missing(v: str) -> bool:
    return v.strip().lower() in MISSING


def _as_number(v: str) -> float | None:
    try:
        return float(v)
    except ValueError:
        return None


def _sorted_levels(values) -> list[str]:
    levels = sorted(set(values))
    nums = [_as_number(v) for v in levels]
    if all(x is not None for x in nums):
        levels = [lv for _, lv in sorted(zip(nums, levels))]
    return levels


def read_covariates(path, config: RunConfig) -> tuple[Design, np.ndarray]:
    """Parse the covariate CSV into a :class:`Design`.

    Returns the design and, for each kept row, the graph node it belongs
    to: the row position, or the value of ``config.id_column``.

    Raises
    ------
    SchemaError
        Unknown columns, missing values (unless ``drop_missing``), or
        non-numeric entries in numeric columns.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    frame.columns = [c.strip() for c in frame.columns]
    if config.response is None:
        raise InputError("no response column given")
    reserved = {config.response} | ({config.id_column} if config.id_column else set())
    predictors = config.predictors
    if predictors is None:
        predictors = [c for c in frame.columns if c not in reserved]
    wanted = [config.response, *predictors] + ([config.id_column] if config.id_column else [])
    unknown = [c for c in wanted + list(config.categorical) if c not in frame.columns]
    if unknown:
        raise SchemaError(f"{path}: unknown column(s): {', '.join(unknown)}")
    stray = [c for c in config.categorical if c not in predictors]
    if stray:
        raise SchemaError(f"categorical column(s) not among the predictors: {', '.join(stray)}")

    missing = frame[wanted].apply(lambda col: col.map(_is_missing)).any(axis=1).to_numpy()
    if missing.any():
        lines = np.flatnonzero(missing) + 2
        if not config.drop_missing:
            shown = ", ".join(str(k) for k in lines[:20]) + (" ..." if len(lines) > 20 else "")
            raise SchemaError(f"{path}: missing values on line(s) {shown}; use drop_missing to drop them")
    keep = np.flatnonzero(~missing)
    frame = frame.iloc[keep].reset_index(drop=True)

    def numeric(col: str) -> np.ndarray:
        out = np.empty(len(frame))
        for k, v in enumerate(frame[col]):
            x = _as_number(v)
            if x is None or not math.isfinite(x):
                raise SchemaError(f"{path}: line {keep[k] + 2}, column {col!r}: {v!r} is not numeric")
            out[k] = x
        return out

    columns, names, groups = [], [], {}
    if config.intercept:
        columns.append(np.ones(len(frame)))
        names.append(INTERCEPT)
    for col in predictors:
        if col in config.categorical:
            values = frame[col].str.strip()
            levels = _sorted_levels(values)
            block = []
            for level in levels[1:]:
                columns.append((values == level).to_numpy(dtype=float))
                names.append(f"{col}{level}")
                block.append(names[-1])
            groups[col] = tuple(block)
        else:
            columns.append(numeric(col))
            names.append(col)
    X = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    design = Design(X, numeric(config.response), tuple(names), groups)

    if config.id_column:
        ids = numeric(config.id_column)
        if not np.all(ids == np.round(ids)):
            raise SchemaError(f"{path}: id column {config.id_column!r} must hold integers")
        node_ids = ids.astype(np.int64) - (1 if config.one_based else 0)
        if len(np.unique(node_ids)) != len(node_ids):
            raise SchemaError(f"{path}: id column {config.id_column!r} has duplicates")
    else:
        node_ids = keep.astype(np.int64)
    return design, node_ids


def parse_covariates(path, config: RunConfig) -> Design:
    return read_covariates(path, config)[0]


def write_design_csv(design: Design, path, response: str = "y") -> None:
    """Write a design as CSV (response first) so that it parses back unchanged."""
    if response in design.names:
        raise InputError(f"response name {response!r} clashes with a column name")
    frame = pd.DataFrame(design.X, columns=list(design.names))
    frame.insert(0, response, design.y)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def load_inputs(graph_path, covariates_path, config: RunConfig) -> tuple[Graph, Design]:
    """Read the edge list and covariates and align graph nodes with design rows."""
    design, node_ids = read_covariates(covariates_path, config)
    n_rows = len(pd.read_csv(covariates_path, dtype=str, keep_default_na=False))
    if config.id_column is None:
        try:
            graph = read_edge_list(graph_path, n=n_rows, one_based=config.one_based)
        except InputError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"edge list does not match the {n_rows} covariate rows: {exc}") from None
        if len(node_ids) != n_rows:
            graph = graph.subgraph(node_ids)
        return graph, design
    full = read_edge_list(graph_path, one_based=config.one_based)
    n = max(full.n, int(node_ids.max()) + 1 if len(node_ids) else 0)
    full = build_graph(n, full.edges)
    if node_ids.min(initial=0) < 0:
        raise SchemaError("negative node id in the id column")
    covered = np.zeros(n, bool)
    covered[node_ids] = True
    orphans = np.flatnonzero(~covered & (full.degrees > 0))
    if len(orphans) and not config.drop_missing:
        raise SchemaError(
            f"{len(orphans)} graph node(s) have no covariate row (first: {orphans[0]}); "
            "use drop_missing to drop them"
        )
    return full.subgraph(node_ids), design


def resolve_contrasts(design: Design, specs: list[dict]) -> list[ContrastSpec] | None:
    """Turn config contrast entries into :class:`ContrastSpec` objects.

    Each entry has a ``label`` and either ``columns`` (joint test that all
    listed coefficients are zero) or ``weights`` (one linear combination).
    A categorical variable name in ``columns`` stands for all its indicators.
    Returns None when no contrasts are configured.
    """
    if not specs:
        return None
    out = []
    for spec in specs:
        label = spec.get("label")
        if not label:
            raise SchemaError(f"contrast entry without a label: {spec}")
        if "weights" in spec:
            a = np.zeros(design.p)
            for col, w in spec["weights"].items():
                a[_column_index(design, col)] = float(w)
            out.append(ContrastSpec(a, label))
        elif "columns" in spec:
            cols = []
            for col in spec["columns"]:
                cols.extend(design.groups.get(col, (col,)))
            out.append(ContrastSpec.joint(design.p, [_column_index(design, c) for c in cols], label))
        else:
            raise SchemaError(f"contrast {label!r} needs 'columns' or 'weights'")
    return out


def _column_index(design: Design, col: str) -> int:
    try:
        return design.names.index(col)
    except ValueError:
        raise SchemaError(f"unknown design column {col!r}; have {', '.join(design.names)}") from None


def parse_contrast_flag(text: str) -> dict:
    """``label=col1,col2`` from the command line."""
    label, sep, cols = text.partition("=")
    if not sep or not label or not cols:
        raise InputError(f"contrast flag must look like label=col1[,col2...], got {text!r}")
    return {"label": label, "columns": [c.strip() for c in cols.split(",") if c.strip()]}


# ---------------------------------------------------------------- reports


def _num(x) -> str:
    x = float(x)
    return repr(x) if math.isfinite(x) else str(x)


def _fmt(x, width=11) -> str:
    x = float(x)
    if not math.isfinite(x):
        return f"{'nan':>{width}}"
    return f"{x:>{width}.4g}"


def format_growth(growth: GrowthReport) -> list[str]:
    lines = [f"  {'m':>3} {'mean N_m':>12} {'mean N_m^2':>14} {'(mean N_m^3)^1/2':>18}"]
    for m in range(growth.m_max + 1):
        lines.append(
            f"  {m:>3} {growth.mean_size[m]:>12.4f} {growth.square_term[m]:>14.4f} {growth.cubic_term[m]:>18.4f}"
        )
    return lines


def _growth_records(growth: GrowthReport):
    for m in range(growth.m_max + 1):
        yield m, growth.mean_size[m], growth.square_term[m], growth.cubic_term[m]


def _seed_text(seed) -> str:
    return str(seed) if isinstance(seed, (int, np.integer)) else ",".join(str(s) for s in seed)


def format_report(report: Report, fmt: str = "text") -> str:
    """Human-readable text with a trailing ``[machine]`` key=value block, or JSON lines."""
    if fmt == "jsonl":
        return _report_jsonl(report)
    if fmt != "text":
        raise InputError(f"unknown report format {fmt!r}; use text or jsonl")
    out = [
        "netols report",
        "=============",
        f"observations: {report.n}   edges: {report.n_edges}   mean degree: {report.mean_degree:.3f}",
        f"coefficients: {len(report.names)}   m_max: {report.m_max}   alpha: {report.alpha:g}   "
        f"permutations: {report.permutations}   seed: {_seed_text(report.seed)}"
        + ("" if report.fixed_m is None else f"   fixed m: {report.fixed_m}"),
        "",
        "Coefficients",
    ]
    for name, b in zip(report.names, report.beta_hat):
        out.append(f"  {name:<24}{_fmt(b, 14)}")
    out += ["", "Neighborhood growth", *format_growth(report.growth), "", "Tests"]
    out.append(
        f"  {'contrast':<20}{'df':>3}{'estimate':>12}{'std.err':>12}{'m_hat':>6}{'m_used':>7}"
        f"{'statistic':>11}{'p_value':>11}   95% CI"
    )
    notes = []
    for r in report.results:
        est = _fmt(r.estimate[0], 12) if r.df == 1 else f"{'-':>12}"
        se = _fmt(np.sqrt(r.variance[0, 0]), 12) if r.df == 1 else f"{'-':>12}"
        ci = f"[{r.ci[0]:.4g}, {r.ci[1]:.4g}]" if r.ci else "-"
        out.append(
            f"  {r.label:<20}{r.df:>3}{est}{se}{r.m_hat:>6}{r.m_used:>7}"
            f"{_fmt(r.statistic)}{_fmt(r.p_value)}   {ci}"
        )
        notes += [f"  {r.label}: {w}" for w in r.warnings]
    if notes:
        out += ["", "Warnings", *notes]
    out += ["", "[machine]"]
    out += [
        f"n={report.n}",
        f"n_edges={report.n_edges}",
        f"mean_degree={_num(report.mean_degree)}",
        f"m_max={report.m_max}",
        f"alpha={_num(report.alpha)}",
        f"permutations={report.permutations}",
        f"seed={_seed_text(report.seed)}",
    ]
    for k, (name, b) in enumerate(zip(report.names, report.beta_hat)):
        out += [f"coef.{k}.name={name}", f"coef.{k}.estimate={_num(b)}"]
    for m, mean, sq, cube in _growth_records(report.growth):
        out += [f"growth.{m}.mean_size={_num(mean)}", f"growth.{m}.square_term={_num(sq)}",
                f"growth.{m}.cubic_term={_num(cube)}"]
    for k, r in enumerate(report.results):
        pre = f"test.{k}"
        out += [
            f"{pre}.label={r.label}",
            f"{pre}.df={r.df}",
            f"{pre}.m_hat={r.m_hat}",
            f"{pre}.m_used={r.m_used}",
            f"{pre}.capped={str(r.capped).lower()}",
            f"{pre}.estimate={','.join(_num(e) for e in r.estimate)}",
            f"{pre}.variance={','.join(_num(v) for v in r.variance.ravel())}",
            f"{pre}.statistic={_num(r.statistic)}",
            f"{pre}.p_value={_num(r.p_value)}",
        ]
        if r.ci:
            out.append(f"{pre}.ci={_num(r.ci[0])},{_num(r.ci[1])}")
        for w in r.warnings:
            out.append(f"{pre}.warning={w}")
    return "\n".join(out) + "\n"


def _report_jsonl(report: Report) -> str:
    def clean(x):
        x = float(x)
        return x if math.isfinite(x) else None

    rows = [{
        "record": "run", "n": report.n, "n_edges": report.n_edges,
        "mean_degree": report.mean_degree, "m_max": report.m_max, "alpha": report.alpha,
        "permutations": report.permutations, "seed": _seed_text(report.seed),
        "fixed_m": report.fixed_m,
    }]
    rows += [{"record": "coef", "name": name, "estimate": float(b)}
             for name, b in zip(report.names, report.beta_hat)]
    rows += [{"record": "growth", "m": m, "mean_size": float(a), "square_term": float(b),
              "cubic_term": float(c)} for m, a, b, c in _growth_records(report.growth)]
    for r in report.results:
        rows.append({
            "record": "test", "label": r.label, "df": r.df, "m_hat": r.m_hat, "m_used": r.m_used,
            "capped": r.capped, "estimate": [clean(e) for e in r.estimate],
            "variance": [clean(v) for v in r.variance.ravel()],
            "statistic": clean(r.statistic), "p_value": clean(r.p_value),
            "ci": [clean(c) for c in r.ci] if r.ci else None, "warnings": list(r.warnings),
        })
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)


# ---------------------------------------------------------------- studies


def load_study(path, seed: int | None = None, replications: int | None = None):
    """Build a :class:`~netols.simlab.McStudySpec` from a TOML study file."""
    from .simlab import DEFAULT_BASE, McStudySpec, SbmSpec

    path = Path(path)
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    allowed = {"models", "rho", "gamma", "replications", "seed", "m_max", "alpha",
               "permutations", "sbm", "graph", "design"}
    unknown = set(raw) - allowed
    if unknown:
        raise SchemaError(f"{path}: unknown study keys: {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for key, target in (("models", "models"), ("rho", "rhos"), ("gamma", "gammas")):
        if key in raw:
            vals = raw[key] if isinstance(raw[key], list) else [raw[key]]
            kwargs[target] = tuple(str(v).upper() for v in vals) if key == "models" else tuple(float(v) for v in vals)
    for key in ("replications", "seed", "m_max", "permutations"):
        if key in raw:
            kwargs[key] = int(raw[key])
    if "alpha" in raw:
        kwargs["alpha"] = float(raw["alpha"])
    if seed is not None:
        kwargs["seed"] = seed
    if replications is not None:
        kwargs["replications"] = replications
    if "sbm" in raw:
        sbm = raw["sbm"]
        sizes = tuple(int(s) for s in sbm.get("block_sizes", (75, 75, 75, 75)))
        if "base" in sbm:
            base = np.asarray(sbm["base"], dtype=float)
        else:
            k = len(sizes)
            diag = np.asarray(sbm.get("diagonal", np.diag(DEFAULT_BASE)[:k]), dtype=float)
            base = np.full((k, k), float(sbm.get("offdiagonal", 0.005)))
            np.fill_diagonal(base, diag)
        kwargs["sbm"] = SbmSpec(sizes, base)
    if "graph" in raw:
        g = raw["graph"]
        cfg = RunConfig(one_based=bool(g.get("one_based", False)))
        edges = path.parent / g["edges"]
        if "design" in raw:
            d = dict(raw["design"])
            data = path.parent / d.pop("data")
            cfg = load_config(None, {**d, "one_based": cfg.one_based})
            graph, design = load_inputs(edges, data, cfg)
            kwargs["design"] = design
            if "contrasts" in d:
                kwargs["contrasts"] = resolve_contrasts(design, d["contrasts"])
        else:
            graph = read_edge_list(edges, n=g.get("n"), one_based=cfg.one_based)
        kwargs["graph"] = graph
    elif "design" in raw:
        raise SchemaError(f"{path}: a [design] section needs a [graph] section")
    return McStudySpec(**kwargs)
