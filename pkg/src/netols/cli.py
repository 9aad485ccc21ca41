"""Command-line entry point.

Exit status: 0 on success, 1 for runtime or numerical failures, 2 for usage
and schema errors. Failures print one line ``netols: error[<Class>]: ...``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import __version__
from .dataio import (
    RunConfig,
    format_growth,
    format_report,
    load_config,
    load_inputs,
    load_study,
    parse_contrast_flag,
    resolve_contrasts,
)
from .exceptions import NetOLSError
from .graph import build_neighborhoods, growth_report, read_edge_list
from .inference import analyze, default_contrasts
from .ols import fit_ols
from .sandwich import sandwich_family, variance_curve
from .selection import permutation_ensembles, select_m


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--graph", help="edge list file (two node ids per line)")
    p.add_argument("--one-based", dest="one_based", action="store_true", default=None,
                   help="node ids in files start at 1")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("text", "jsonl"), default=None)
    p.add_argument("--m-max", dest="m_max", type=int, help="largest truncation radius (default 6)")
    if not data:
        return
    p.add_argument("--data", help="covariates CSV with a header row")
    p.add_argument("--response", help="response column")
    p.add_argument("--predictors", help="comma-separated predictor columns (default: all others)")
    p.add_argument("--categorical", help="comma-separated columns to expand into indicators")
    p.add_argument("--no-intercept", dest="intercept", action="store_false", default=None,
                   help="do not add an intercept column")
    p.add_argument("--id-column", dest="id_column", help="column holding each row's node id")
    p.add_argument("--drop-missing", dest="drop_missing", action="store_true", default=None,
                   help="drop rows (and their nodes) with missing values")


def _add_selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="selection level (default 0.05)")
    p.add_argument("--permutations", "-T", type=int, help="residual permutations (default 200)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--contrast", action="append", metavar="LABEL=COL[,COL...]",
                   help="joint test that the listed coefficients are zero; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netols", description="OLS inference under network-dependent errors.")
    parser.add_argument("--version", action="version", version=f"netols {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("fit", help="least squares coefficients and m=0 standard errors")
    _add_common(p)

    p = sub.add_parser("test", help="select a radius per contrast and run Wald tests")
    _add_common(p)
    _add_selection(p)
    p.add_argument("--fixed-m", dest="fixed_m", type=int, help="skip selection, test at this radius")

    p = sub.add_parser("select-m", help="show variance curves and the radius selection")
    _add_common(p)
    _add_selection(p)

    p = sub.add_parser("simulate", help="Monte Carlo Type I error study")
    p.add_argument("--study", required=True, help="TOML study file")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", "-R", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: NETOLS_THREADS or 1)")
    p.add_argument("--layout", choices=("wide", "long"), default="wide")
    p.add_argument("--output", "-o")

    p = sub.add_parser("diagnose", help="neighborhood growth and degree summary of a graph")
    _add_common(p, data=False)
    p.add_argument("--n", type=int, help="node count (default: largest id + 1)")
    return parser


def _split(text):
    return None if text is None else [c.strip() for c in text.split(",") if c.strip()]


def _config(args) -> RunConfig:
    over = {k: getattr(args, k, None) for k in (
        "graph", "data", "response", "intercept", "id_column", "one_based", "drop_missing",
        "alpha", "permutations", "m_max", "seed", "fixed_m", "output", "format",
    )}
    over["command"] = args.command
    over["predictors"] = _split(getattr(args, "predictors", None))
    over["categorical"] = _split(getattr(args, "categorical", None))
    if getattr(args, "contrast", None):
        over["contrasts"] = [parse_contrast_flag(c) for c in args.contrast]
    return load_config(args.config, over)


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required (flag or config file)")


def _emit(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_fit(cfg: RunConfig) -> str:
    _require(cfg, "graph", "data", "response")
    graph, design = load_inputs(cfg.graph, cfg.data, cfg)
    fit = fit_ols(design)
    idx = build_neighborhoods(graph, 0)
    cov = sandwich_family(fit, idx).covariance(0)
    se = np.sqrt(np.diag(cov))
    if cfg.format == "jsonl":
        rows = [{"record": "coef", "name": nm, "estimate": float(b), "se_m0": float(s)}
                for nm, b, s in zip(design.names, fit.beta_hat, se)]
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    lines = [f"n={fit.n} p={fit.p} rss={float(fit.residuals @ fit.residuals)!r}",
             f"{'coefficient':<24}{'estimate':>14}{'se(m=0)':>14}"]
    lines += [f"{nm:<24}{b:>14.6g}{s:>14.6g}" for nm, b, s in zip(design.names, fit.beta_hat, se)]
    return "\n".join(lines) + "\n"


def _cmd_test(cfg: RunConfig) -> str:
    _require(cfg, "graph", "data", "response")
    graph, design = load_inputs(cfg.graph, cfg.data, cfg)
    report = analyze(
        graph, design, resolve_contrasts(design, cfg.contrasts),
        m_max=cfg.m_max, alpha=cfg.alpha, permutations=cfg.permutations,
        seed=cfg.seed, fixed_m=cfg.fixed_m,
    )
    return format_report(report, cfg.format)


def _cmd_select(cfg: RunConfig) -> str:
    _require(cfg, "graph", "data", "response")
    graph, design = load_inputs(cfg.graph, cfg.data, cfg)
    contrasts = resolve_contrasts(design, cfg.contrasts) or default_contrasts(design)
    fit = fit_ols(design)
    idx = build_neighborhoods(graph, cfg.m_max)
    fam = sandwich_family(fit, idx)
    curves = [variance_curve(fam, fit, c) for c in contrasts]
    ensembles = permutation_ensembles(fit, idx, contrasts, cfg.permutations, cfg.seed)
    rows = []
    for cv, ens in zip(curves, ensembles):
        sel = select_m(cv, ens, cfg.alpha)
        for m in range(cv.m_max + 1):
            s = cv.matrices[m]
            rows.append({
                "contrast": cv.contrast.label, "m": m,
                "sigma2": float(s[0, 0]) if cv.q == 1 else float(np.linalg.norm(s, 2)),
                "delta": float(cv.deltas[m, 0, 0]) if cv.q == 1 else float(np.linalg.norm(cv.deltas[m], 2)),
                "exceedance": float(sel.exceedance[m]) if m < cv.m_max else None,
                "selected": m == sel.m_hat, "capped": sel.capped,
            })
    if cfg.format == "jsonl":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    lines = [f"{'contrast':<20}{'m':>3}{'sigma2(m)':>14}{'delta(m)':>14}{'exceed(m)':>11}  selected"]
    for r in rows:
        ex = "-" if r["exceedance"] is None else f"{r['exceedance']:.3f}"
        mark = ("*" + (" (capped)" if r["capped"] else "")) if r["selected"] else ""
        lines.append(f"{r['contrast']:<20}{r['m']:>3}{r['sigma2']:>14.6g}{r['delta']:>14.6g}{ex:>11}  {mark}")
    lines.append("(sigma2 and delta are operator norms for joint contrasts)")
    return "\n".join(lines) + "\n"


def diagnose(graph_path, cfg: RunConfig, n: int | None = None) -> dict:
    """Growth curve and degree summary for an edge-list file."""
    graph = read_edge_list(graph_path, n=n, one_based=cfg.one_based)
    idx = build_neighborhoods(graph, cfg.m_max)
    deg = graph.degrees
    n_comp = connected_components(graph.adjacency(), directed=False)[0] if graph.n else 0
    return {
        "graph": graph,
        "growth": growth_report(idx),
        "mean_degree": float(deg.mean()) if graph.n else 0.0,
        "sd_degree": float(deg.std(ddof=1)) if graph.n > 1 else 0.0,
        "max_degree": int(deg.max()) if graph.n else 0,
        "isolated": int((deg == 0).sum()),
        "components": int(n_comp),
    }


def _cmd_diagnose(cfg: RunConfig, n) -> str:
    _require(cfg, "graph")
    d = diagnose(cfg.graph, cfg, n)
    g, growth = d["graph"], d["growth"]
    if cfg.format == "jsonl":
        rows = [{"record": "graph", "n": g.n, "n_edges": g.n_edges,
                 **{k: d[k] for k in ("mean_degree", "sd_degree", "max_degree", "isolated", "components")}}]
        rows += [{"record": "growth", "m": m, "mean_size": float(growth.mean_size[m]),
                  "square_term": float(growth.square_term[m]), "cubic_term": float(growth.cubic_term[m])}
                 for m in range(growth.m_max + 1)]
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    lines = [
        f"nodes: {g.n}   edges: {g.n_edges}   components: {d['components']}   isolated: {d['isolated']}",
        f"degree: mean {d['mean_degree']:.3f}   sd {d['sd_degree']:.3f}   max {d['max_degree']}",
        "",
        *format_growth(growth),
    ]
    return "\n".join(lines) + "\n"


def _cmd_simulate(args) -> str:
    from .simlab import type1_error_mc

    spec = load_study(args.study, seed=args.seed, replications=args.replications)
    table = type1_error_mc(spec, workers=args.workers)
    return table.to_wide() if args.layout == "wide" else table.to_long()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            _emit(_cmd_simulate(args), args.output)
            return 0
        cfg = _config(args)
        if args.command == "fit":
            text = _cmd_fit(cfg)
        elif args.command == "test":
            text = _cmd_test(cfg)
        elif args.command == "select-m":
            text = _cmd_select(cfg)
        else:
            text = _cmd_diagnose(cfg, args.n)
        _emit(text, cfg.output)
        return 0
    except UsageError as exc:
        print(f"netols: error[UsageError]: {exc}", file=sys.stderr)
        return 2
    except NetOLSError as exc:
        print(f"netols: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"netols: error[MissingFile]: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"netols: error[NumericError]: {exc}", file=sys.stderr)
        return 1


cli_dispatch = main


if __name__ == "__main__":
    sys.exit(main())
