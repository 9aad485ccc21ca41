"""Wald tests at the selected radius and the end-to-end analysis pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .exceptions import InputError, SchemaError
from .graph import Graph, GrowthReport, NeighborhoodIndex, build_neighborhoods, growth_report
from .ols import ContrastSpec, Design, RegressionFit, fit_ols
from .sandwich import VarianceCurve, sandwich_family, variance_curve
from .selection import (
    DEFAULT_PERMUTATIONS,
    SelectionResult,
    Seed,
    permutation_ensembles,
    select_m,
)

__all__ = [
    "TestResult",
    "Report",
    "wald_test",
    "default_contrasts",
    "analyze",
    "run_pipeline",
]

DEFAULT_M_MAX = 6
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True, eq=False)
class TestResult:
    """Outcome of one linear hypothesis test.

    ``variance`` is the estimated covariance of ``a' beta_hat`` (already
    divided by n). ``ci`` is only set for single-column contrasts.
    """

    __test__ = False  # keep pytest from collecting this class

    label: str
    m_hat: int
    m_used: int
    estimate: np.ndarray
    variance: np.ndarray
    statistic: float
    df: int
    p_value: float
    ci: tuple[float, float] | None
    capped: bool = False
    warnings: tuple[str, ...] = ()


def _valid(s: np.ndarray) -> bool:
    if not np.all(np.isfinite(s)):
        return False
    if s.shape[0] == 1:
        return s[0, 0] > 0
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return False
    return True


def wald_test(
    fit: RegressionFit,
    curve: VarianceCurve,
    sel: SelectionResult,
    level: float = 0.95,
) -> TestResult:
    """Normal (q = 1) or chi-square (q > 1) Wald test of ``a' beta = 0``.

    If the variance at the selected radius is not positive (definite), the
    largest smaller radius with a usable variance is taken instead and a
    warning is recorded.
    """
    c = curve.contrast
    n = fit.n
    est = c.a.T @ fit.beta_hat
    warnings = []
    if sel.capped:
        warnings.append(f"no radius below m_max={curve.m_max} passed the selection rule; using m_max")
    m_used = None
    for m in range(sel.m_hat, -1, -1):
        if _valid(curve.matrices[m]):
            m_used = m
            break
    if m_used is None:
        warnings.append("no radius gives a positive variance estimate")
        q = c.q
        return TestResult(c.label, sel.m_hat, sel.m_hat, est, np.full((q, q), np.nan),
                          float("nan"), q, float("nan"), None, sel.capped, tuple(warnings))
    if m_used != sel.m_hat:
        warnings.append(
            f"variance at m={sel.m_hat} is not positive definite; fell back to m={m_used}"
        )
    s = curve.matrices[m_used]
    variance = s / n
    if c.q == 1:
        se = float(np.sqrt(variance[0, 0]))
        z = float(est[0]) / se
        p = float(2 * stats.norm.sf(abs(z)))
        half = stats.norm.ppf(0.5 + level / 2) * se
        ci = (float(est[0]) - half, float(est[0]) + half)
        return TestResult(c.label, sel.m_hat, m_used, est, variance, z, 1, p, ci,
                          sel.capped, tuple(warnings))
    w = float(n * est @ np.linalg.solve(s, est))
    p = float(stats.chi2.sf(w, c.q))
    return TestResult(c.label, sel.m_hat, m_used, est, variance, w, c.q, p, None,
                      sel.capped, tuple(warnings))


def default_contrasts(design: Design) -> list[ContrastSpec]:
    """One test per coefficient plus a joint test for every multi-column categorical."""
    p = design.p
    out = [ContrastSpec.coefficient(p, k, name) for k, name in enumerate(design.names)]
    for var, cols in design.groups.items():
        if len(cols) > 1:
            ks = [design.names.index(col) for col in cols]
            out.append(ContrastSpec.joint(p, ks, var))
    return out


@dataclass(eq=False)
class Report:
    """Everything one analysis run produces, in contrast order."""

    n: int
    n_edges: int
    names: tuple[str, ...]
    beta_hat: np.ndarray
    m_max: int
    alpha: float
    permutations: int
    seed: Seed
    growth: GrowthReport
    mean_degree: float
    results: list[TestResult]
    curves: list[VarianceCurve] = field(default_factory=list)
    selections: list[SelectionResult] = field(default_factory=list)
    fixed_m: int | None = None


def analyze(
    graph: Graph,
    design: Design,
    contrasts: Sequence[ContrastSpec] | None = None,
    m_max: int = DEFAULT_M_MAX,
    alpha: float = DEFAULT_ALPHA,
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: Seed = 0,
    fixed_m: int | None = None,
    index: NeighborhoodIndex | None = None,
) -> Report:
    """Fit, select a radius per contrast and test.

    ``fixed_m`` skips the permutation step and tests every contrast at that
    radius instead.
    """
    fit = fit_ols(design)
    if graph.n != design.n:
        raise SchemaError(f"graph has {graph.n} nodes but the design has {design.n} rows")
    idx = index if index is not None else build_neighborhoods(graph, m_max)
    contrasts = list(contrasts) if contrasts is not None else default_contrasts(design)
    fam = sandwich_family(fit, idx)
    curves = [variance_curve(fam, fit, c) for c in contrasts]
    if fixed_m is not None:
        if not 0 <= fixed_m <= idx.m_max:
            raise InputError(f"fixed radius {fixed_m} outside 0..{idx.m_max}")
        sels = [SelectionResult(fixed_m, alpha, np.zeros(idx.m_max), False) for _ in contrasts]
    else:
        ensembles = permutation_ensembles(fit, idx, contrasts, permutations, seed)
        sels = [select_m(cv, ens, alpha) for cv, ens in zip(curves, ensembles)]
    results = [wald_test(fit, cv, sel) for cv, sel in zip(curves, sels)]
    return Report(
        n=graph.n,
        n_edges=graph.n_edges,
        names=design.names,
        beta_hat=fit.beta_hat,
        m_max=idx.m_max,
        alpha=alpha,
        permutations=permutations,
        seed=seed,
        growth=growth_report(idx),
        mean_degree=float(graph.degrees.mean()) if graph.n else 0.0,
        results=results,
        curves=curves,
        selections=sels,
        fixed_m=fixed_m,
    )


def run_pipeline(graph_path, covariates_path, config) -> Report:
    """File-level entry point: read the edge list and covariates, then :func:`analyze`."""
    from .dataio import load_inputs, resolve_contrasts

    graph, design = load_inputs(graph_path, covariates_path, config)
    contrasts = resolve_contrasts(design, config.contrasts)
    return analyze(
        graph,
        design,
        contrasts,
        m_max=config.m_max,
        alpha=config.alpha,
        permutations=config.permutations,
        seed=config.seed,
        fixed_m=config.fixed_m,
    )
