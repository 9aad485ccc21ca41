"""Simulation studies: SBM graphs, network noise transforms and Type I error tables."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import InputError, NumericError
from .graph import Graph, NeighborhoodIndex, build_graph, build_neighborhoods, degree_normalize
from .inference import wald_test
from .ols import ContrastSpec, Design, fit_ols
from .selection import (
    DEFAULT_PERMUTATIONS,
    SelectionResult,
    Seed,
    observed_curves,
    permutation_ensembles,
    select_m,
    substream,
)

__all__ = [
    "SbmSpec",
    "SbmDraw",
    "NoiseTransform",
    "DecayReport",
    "McStudySpec",
    "McTable",
    "gen_sbm",
    "build_noise_transform",
    "gen_design",
    "verify_correlation_decay",
    "type1_error_mc",
    "variable_contrasts",
    "standin_student_data",
    "default_workers",
]

DEFAULT_BASE = np.full((4, 4), 0.005) + np.diag([0.0, 0.005, 0.010, 0.015])
KINDS = ("AR", "MA", "DT", "NAR")


def default_workers() -> int:
    """Worker processes for Monte Carlo runs, from ``NETOLS_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("NETOLS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class SbmSpec:
    """Block sizes, base probability matrix and density multiplier ``gamma``."""

    block_sizes: tuple[int, ...] = (75, 75, 75, 75)
    base: np.ndarray = field(default_factory=lambda: DEFAULT_BASE.copy())
    gamma: float = 1.0

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        k = len(self.block_sizes)
        if base.shape != (k, k):
            raise InputError(f"base matrix must be {k} x {k}, got {base.shape}")
        if not np.allclose(base, base.T):
            raise InputError("base probability matrix must be symmetric")
        probs = self.gamma * base
        if probs.min() < 0 or probs.max() > 1:
            raise InputError(f"gamma * P has entries outside [0, 1] (max {probs.max():g})")
        object.__setattr__(self, "base", base)

    @property
    def probs(self) -> np.ndarray:
        return self.gamma * self.base

    @property
    def n(self) -> int:
        return int(sum(self.block_sizes))


@dataclass(frozen=True, eq=False)
class SbmDraw:
    """An SBM realization after isolated nodes were removed.

    ``kept`` holds the original node ids that survived and ``blocks`` their
    block labels, both aligned with the graph's node order.
    """

    graph: Graph
    blocks: np.ndarray
    kept: np.ndarray


def sbm_adjacency(spec: SbmSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Dense 0/1 adjacency of one draw (isolated nodes included) and block labels."""
    blocks = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    n = len(blocks)
    p = spec.probs[blocks[:, None], blocks[None, :]]
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(np.int8), blocks


def gen_sbm(spec: SbmSpec, seed: Seed) -> SbmDraw:
    adj, blocks = sbm_adjacency(spec, substream(seed))
    kept = np.flatnonzero(adj.sum(axis=1) > 0)
    sub = adj[np.ix_(kept, kept)]
    i, j = np.nonzero(np.triu(sub, k=1))
    return SbmDraw(build_graph(len(kept), np.column_stack([i, j])), blocks[kept], kept)


@dataclass(frozen=True, eq=False)
class NoiseTransform:
    """Matrix ``B`` turning white noise into network-correlated errors ``B @ w``.

    ``tau`` is the largest absolute row sum of the autoregressive weights and
    is only defined for the AR and NAR kinds.
    """

    kind: str
    rho: float
    B: np.ndarray
    an: np.ndarray | None = None
    weights: np.ndarray | None = None
    tau: float | None = None

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.B @ self.B.T


def build_noise_transform(
    g: Graph, kind: str, rho: float = 0.0, weights: np.ndarray | None = None
) -> NoiseTransform:
    """AR ``(I - rho A_n)^{-1}``, MA ``I + rho A_n``, DT ``(I + rho A_n)^2`` or NAR ``(I - W)^{-1}``.

    ``A_n`` is the row-normalized adjacency of ``g``. NAR needs explicit
    ``weights`` supported on the graph's edges with every absolute row sum
    below one.
    """
    kind = kind.upper()
    if kind not in KINDS:
        raise InputError(f"unknown noise model {kind!r}; choose from {', '.join(KINDS)}")
    n = g.n
    eye = np.eye(n)
    an = degree_normalize(g)
    if kind == "MA":
        return NoiseTransform(kind, rho, eye + rho * an, an)
    if kind == "DT":
        ma = eye + rho * an
        return NoiseTransform(kind, rho, ma @ ma, an)
    if kind == "AR":
        w = rho * an
    else:
        if weights is None:
            raise InputError("NAR noise needs a weight matrix")
        w = np.asarray(weights, dtype=float)
        if w.shape != (n, n):
            raise InputError(f"weight matrix must be {n} x {n}, got {w.shape}")
        off_graph = (w != 0) & (g.adjacency().toarray() == 0)
        if off_graph.any():
            i, j = np.argwhere(off_graph)[0]
            raise InputError(f"weight ({i}, {j}) is nonzero but the nodes are not adjacent")
    tau = float(np.abs(w).sum(axis=1).max()) if n else 0.0
    if tau >= 1:
        raise InputError(f"autoregressive weights have max absolute row sum {tau:g} >= 1")
    try:
        b = np.linalg.solve(eye - w, eye)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"I - W is singular: {exc}") from None
    if n and np.abs((eye - w) @ b - eye).max() > 1e-8:
        raise NumericError("I - W is too ill-conditioned to invert accurately")
    return NoiseTransform(kind, rho, b, an, w, tau)


def gen_design(g: Graph, transform: NoiseTransform, seed: Seed) -> Design:
    """Three-column design ``(1, B z2, z3)`` with response ``B w`` (all coefficients zero)."""
    n = g.n
    if transform.n != n:
        raise InputError(f"transform is {transform.n} x {transform.n} but the graph has {n} nodes")
    rng = substream(seed)
    white = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    z3 = rng.standard_normal(n)
    b = transform.B
    X = np.column_stack([np.ones(n), b @ z2, z3])
    return Design(X, b @ white, ("x1", "x2", "x3"))


@dataclass(frozen=True, eq=False)
class DecayReport:
    """Correlation decay of ``Sigma = B B'`` against graph distance.

    ``max_abs[d]`` is the largest ``|Sigma_ij|`` over pairs at distance d
    (``nan`` when no pair sits at that distance) and ``c_fit`` the smallest
    constant with ``|Sigma_ij| <= c_fit * rate ** d`` for every pair within
    ``m_max``.
    """

    tau: float
    rate: float
    max_abs: np.ndarray
    c_fit: float
    c_limit: float

    @property
    def bounded(self) -> bool:
        return bool(self.c_fit <= self.c_limit)

    @property
    def monotone(self) -> bool:
        vals = self.max_abs[~np.isnan(self.max_abs)]
        return bool(np.all(np.diff(vals) <= 1e-12))


def verify_correlation_decay(
    transform: NoiseTransform, idx: NeighborhoodIndex, c_limit: float = 10.0
) -> DecayReport:
    """Check exponential correlation decay with rate ``sqrt(tau)``."""
    if transform.tau is None:
        raise InputError(f"decay check needs an autoregressive transform, got {transform.kind}")
    if idx.n != transform.n:
        raise InputError(f"index has {idx.n} nodes but the transform is {transform.n} x {transform.n}")
    sigma = transform.covariance
    rate = float(np.sqrt(transform.tau))
    max_abs = np.full(idx.m_max + 1, np.nan)
    max_abs[0] = np.abs(np.diag(sigma)).max() if idx.n else np.nan
    for d in range(1, idx.m_max + 1):
        rows, cols = idx.layer_pairs(d)
        if len(rows):
            max_abs[d] = np.abs(sigma[rows, cols]).max()
    ratios = []
    for d, v in enumerate(max_abs):
        if np.isnan(v) or v == 0:
            continue
        ratios.append(v / rate**d if rate > 0 or d == 0 else np.inf)
    c_fit = float(max(ratios)) if ratios else 0.0
    return DecayReport(transform.tau, rate, max_abs, c_fit, c_limit)


def variable_contrasts(design: Design) -> list[ContrastSpec]:
    """One contrast per source variable: categoricals become a joint test over their indicators."""
    p = design.p
    grouped = {col: var for var, cols in design.groups.items() for col in cols}
    out, seen = [], set()
    for k, name in enumerate(design.names):
        var = grouped.get(name)
        if var is None:
            out.append(ContrastSpec.coefficient(p, k, name))
        elif var not in seen:
            seen.add(var)
            ks = [design.names.index(col) for col in design.groups[var]]
            out.append(ContrastSpec.joint(p, ks, var))
    return out


@dataclass(eq=False)
class McStudySpec:
    """Monte Carlo study grid.

    With ``graph`` unset a fresh SBM is drawn per ``gamma`` (and then held
    fixed across replicates). With ``design`` set, its columns stay fixed
    and only the response is redrawn; otherwise the three-column design is
    regenerated per replicate.
    """

    models: tuple[str, ...] = ("AR", "MA", "DT")
    rhos: tuple[float, ...] = (0.2, 0.4)
    gammas: tuple[float, ...] = (0.5, 1.0, 1.5)
    replications: int = 1000
    seed: int = 0
    m_max: int = 6
    alpha: float = 0.05
    permutations: int = DEFAULT_PERMUTATIONS
    sbm: SbmSpec = field(default_factory=SbmSpec)
    graph: Graph | None = None
    design: Design | None = None
    contrasts: list[ContrastSpec] | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise InputError(f"replications must be >= 1, got {self.replications}")
        if self.permutations < 1:
            raise InputError(f"permutations must be >= 1, got {self.permutations}")
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        for m in self.models:
            if m.upper() not in ("AR", "MA", "DT"):
                raise InputError(f"unknown model {m!r}; choose AR, MA or DT")
        if self.design is not None and self.graph is None:
            raise InputError("a fixed design needs a fixed graph")
        if self.design is not None and self.design.n != self.graph.n:
            raise InputError(f"design has {self.design.n} rows but the graph has {self.graph.n} nodes")


@dataclass(frozen=True)
class _Cell:
    model: str
    rho: float
    gamma: float | None


@dataclass
class _Context:
    """Everything a worker needs to run replicates of one cell."""

    transform: NoiseTransform
    graph: Graph
    index: NeighborhoodIndex
    design: Design | None
    contrasts: list[ContrastSpec]
    seed: int
    alpha: float
    permutations: int


def _replicate(ctx: _Context, r: int) -> np.ndarray:
    """Rejections (m=0, m_hat) and m_hat per contrast for replicate ``r``."""
    if ctx.design is None:
        design = gen_design(ctx.graph, ctx.transform, (ctx.seed, 2, r))
    else:
        white = substream(ctx.seed, 2, r).standard_normal(ctx.graph.n)
        design = ctx.design.with_response(ctx.transform.B @ white)
    fit = fit_ols(design)
    curves = observed_curves(fit, ctx.index, ctx.contrasts)
    ensembles = permutation_ensembles(fit, ctx.index, ctx.contrasts, ctx.permutations, (ctx.seed, 3, r))
    out = np.empty((len(ctx.contrasts), 3))
    for k, (cv, ens) in enumerate(zip(curves, ensembles)):
        sel = select_m(cv, ens, ctx.alpha)
        zero = wald_test(fit, cv, SelectionResult(0, ctx.alpha, sel.exceedance, False))
        hat = wald_test(fit, cv, sel)
        out[k] = (zero.p_value < ctx.alpha, hat.p_value < ctx.alpha, sel.m_hat)
    return out


def _run_chunk(args) -> np.ndarray:
    ctx, reps = args
    return np.stack([_replicate(ctx, r) for r in reps])


def _run_cell(ctx: _Context, replications: int, workers: int) -> np.ndarray:
    reps = list(range(replications))
    if workers <= 1:
        return _run_chunk((ctx, reps))
    size = -(-replications // (4 * workers))
    chunks = [(ctx, reps[i:i + size]) for i in range(0, replications, size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_run_chunk, chunks)))


@dataclass(eq=False)
class McTable:
    """Rejection rates in long form, one row per (model, rho, gamma, variant, contrast).

    ``m_hat_counts`` maps ``(model, rho, gamma, contrast)`` to the histogram
    of selected radii over replicates.
    """

    rows: pd.DataFrame
    replications: int
    m_hat_counts: dict = field(default_factory=dict)

    def rate(self, model: str, rho: float, gamma, contrast: str, variant: str) -> float:
        r = self.rows
        mask = (
            (r.model == model)
            & np.isclose(r.rho, rho)
            & (r.variant == variant)
            & (r.contrast == contrast)
        )
        if gamma is not None:
            mask &= np.isclose(r.gamma.astype(float), gamma)
        hit = r[mask]
        if len(hit) != 1:
            raise KeyError((model, rho, gamma, contrast, variant))
        return float(hit.rate.iloc[0])

    def to_long(self, sep: str = "\t") -> str:
        return self.rows.to_csv(sep=sep, index=False, float_format="%.4f", lineterminator="\n")

    def to_wide(self, sep: str = "\t") -> str:
        """Rows per (model, rho, variant); one column per (gamma, contrast), plus the largest SE."""
        r = self.rows.copy()
        r["column"] = [
            c if pd.isna(g) else f"g{g:g}:{c}" for g, c in zip(r.gamma, r.contrast)
        ]
        order = list(dict.fromkeys(r.column))
        keys = ["model", "rho", "variant"]
        wide = r.pivot_table(index=keys, columns="column", values="rate", sort=False)[order]
        wide["se_max"] = r.groupby(keys, sort=False).se.max()
        wide = wide.reset_index()
        return wide.to_csv(sep=sep, index=False, float_format="%.4f", lineterminator="\n")


def graph_stream(seed: int, gamma: float) -> tuple[int, int, int]:
    """Substream path of the SBM draw for density ``gamma`` (keyed by value, in thousandths)."""
    return (seed, 1, int(round(gamma * 1000)))


def type1_error_mc(spec: McStudySpec, workers: int | None = None) -> McTable:
    """Empirical rejection rates of true null hypotheses at level ``spec.alpha``.

    Every replicate is seeded from ``(spec.seed, r)`` alone, so tables do not
    depend on ``workers``.
    """
    workers = default_workers() if workers is None else workers
    gammas: Sequence = (None,) if spec.graph is not None else spec.gammas
    graphs = {}
    for gamma in gammas:
        if gamma is None:
            graphs[gamma] = spec.graph
        else:
            sbm = SbmSpec(spec.sbm.block_sizes, spec.sbm.base, gamma)
            graphs[gamma] = gen_sbm(sbm, graph_stream(spec.seed, gamma)).graph
    indices = {g: build_neighborhoods(graph, spec.m_max) for g, graph in graphs.items()}
    if spec.contrasts is not None:
        contrasts = list(spec.contrasts)
    elif spec.design is not None:
        contrasts = variable_contrasts(spec.design)
    else:
        contrasts = [ContrastSpec.coefficient(3, k, f"x{k + 1}") for k in range(3)]
    records, hist = [], {}
    R = spec.replications
    for model in spec.models:
        for rho in spec.rhos:
            for gamma in gammas:
                graph = graphs[gamma]
                ctx = _Context(
                    transform=build_noise_transform(graph, model, rho),
                    graph=graph,
                    index=indices[gamma],
                    design=spec.design,
                    contrasts=contrasts,
                    seed=spec.seed,
                    alpha=spec.alpha,
                    permutations=spec.permutations,
                )
                res = _run_cell(ctx, R, workers)
                for k, c in enumerate(contrasts):
                    for v, variant in enumerate(("m=0", "m_hat")):
                        rate = float(res[:, k, v].mean())
                        records.append(dict(
                            model=model.upper(), rho=rho, gamma=gamma, n=graph.n,
                            variant=variant, contrast=c.label, rate=rate,
                            se=float(np.sqrt(rate * (1 - rate) / R)), replications=R,
                        ))
                    hist[(model.upper(), rho, gamma, c.label)] = np.bincount(
                        res[:, k, 2].astype(int), minlength=spec.m_max + 1
                    )
    return McTable(pd.DataFrame.from_records(records), R, hist)


def standin_student_data(seed: int = 2018, n: int = 244) -> tuple[Graph, pd.DataFrame]:
    """Synthetic friendship network and covariates shaped like a school survey.

    Friendships form mostly within sex (two communities, mean degree about
    4.5) and every student has at least one friend. Columns: ``score``,
    ``hh.size``, ``age``, ``sex`` (female/male), ``play`` and ``homework``
    (0-3 frequency codes) and ``bio.parents`` (0 both, 1 one, 2 none).
    """
    rng = substream(seed)
    female = rng.random(n) < 0.52
    same = female[:, None] == female[None, :]
    n_f = int(female.sum())
    p_in = np.where(female[:, None], 4.0 / (n_f - 1), 4.0 / (n - n_f - 1))
    p_out = 0.5 / (n / 2)
    probs = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    adj = upper | upper.T
    for i in np.flatnonzero(~adj.any(axis=1)):
        pool = np.flatnonzero(same[i] & (np.arange(n) != i))
        j = rng.choice(pool)
        adj[i, j] = adj[j, i] = True
    i, j = np.nonzero(np.triu(adj, k=1))
    graph = build_graph(n, np.column_stack([i, j]))

    hh = 1 + rng.poisson(4.27, n)
    age = np.clip(np.rint(rng.normal(12.6, 1.0, n)), 9, 16).astype(int)
    play = rng.choice(4, n, p=[0.05, 0.10, 0.30, 0.55])
    homework = rng.choice(4, n, p=[0.30, 0.20, 0.23, 0.27])
    bio = rng.choice(3, n, p=[0.47, 0.44, 0.09])
    transform = build_noise_transform(graph, "AR", 0.3)
    latent = transform.B @ rng.standard_normal(n)
    latent = (latent - latent.mean()) / latent.std()
    score = 451.5 - 12.0 * (homework - 1.47) + 100.0 * latent
    frame = pd.DataFrame({
        "score": np.round(score, 1),
        "hh.size": hh,
        "age": age,
        "sex": np.where(female, "female", "male"),
        "play": play,
        "homework": homework,
        "bio.parents": bio,
    })
    return graph, frame
