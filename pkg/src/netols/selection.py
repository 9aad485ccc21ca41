"""Permutation calibration of the truncation radius.

Residuals are shuffled across nodes, which destroys any alignment between
their dependence and the graph. The off-radius-0 increments computed from
shuffled residuals therefore show how large an increment can get from noise
alone. A radius is extended only while the observed increment at the next
radius beats at least ``1 - alpha`` of the shuffled ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .exceptions import InputError
from .graph import NeighborhoodIndex
from .ols import ContrastSpec, RegressionFit, contrast_direction
from .sandwich import VarianceCurve, _curve_from_layers, magnitude

__all__ = [
    "PermutationEnsemble",
    "SelectionResult",
    "permutation_matrix",
    "permutation_ensemble",
    "permutation_ensembles",
    "select_m",
    "substream",
]

Seed = Union[int, Sequence[int]]

DEFAULT_PERMUTATIONS = 200


def substream(seed: Seed, *keys: int) -> np.random.Generator:
    """Independent generator for the path ``(seed, *keys)``.

    ``seed`` may itself be a tuple of non-negative ints naming a parent
    stream; the first entry is the entropy and the rest are spawn keys.
    """
    path = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    path = tuple(int(k) for k in path) + tuple(int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(path[0], spawn_key=path[1:])))


def permutation_matrix(n: int, T: int, seed: Seed) -> np.ndarray:
    """(T, n) array whose row t is the permutation drawn from substream ``(seed, t)``."""
    return np.stack([substream(seed, t).permutation(n) for t in range(T)]) if T else np.zeros((0, n), np.int64)


@dataclass(frozen=True)
class PermutationEnsemble:
    """Increments recomputed under T residual permutations.

    ``delta_star[t, m]`` is the signed increment for scalar contrasts and the
    operator norm of the increment matrix for joint contrasts.
    """

    label: str
    T: int
    seed: Seed
    delta_star: np.ndarray

    @property
    def m_max(self) -> int:
        return self.delta_star.shape[1] - 1

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.delta_star)


def permutation_ensembles(
    fit: RegressionFit,
    idx: NeighborhoodIndex,
    contrasts: Sequence[ContrastSpec],
    T: int = DEFAULT_PERMUTATIONS,
    seed: Seed = 0,
    permutations: np.ndarray | None = None,
) -> list[PermutationEnsemble]:
    """Permutation ensembles for several contrasts sharing one permutation draw.

    ``permutations`` overrides the seeded draw with an explicit (T, n) array.
    """
    if permutations is None:
        if T < 1:
            raise InputError(f"number of permutations must be >= 1, got {T}")
        permutations = permutation_matrix(fit.n, T, seed)
    else:
        permutations = np.asarray(permutations, dtype=np.int64).reshape(-1, fit.n)
        T = len(permutations)
        if T < 1:
            raise InputError("empty permutation array")
    if idx.n != fit.n:
        raise InputError(f"neighborhood index has {idx.n} nodes but the fit has {fit.n} rows")
    shuffled = fit.residuals[permutations].T
    out = []
    for c in contrasts:
        gamma = contrast_direction(fit, c)
        u = gamma[:, None, :] * shuffled[:, :, None]
        layers = idx.layered_gram(u)
        layers[1:] = (layers[1:] + np.swapaxes(layers[1:], -1, -2)) / 2
        deltas = np.zeros((T, idx.m_max + 1, c.q, c.q))
        deltas[:, 1:] = np.cumsum(layers[1:], axis=0).transpose(1, 0, 2, 3)
        star = deltas[:, :, 0, 0] if c.q == 1 else magnitude(deltas)
        out.append(PermutationEnsemble(label=c.label, T=T, seed=seed, delta_star=star))
    return out


def permutation_ensemble(
    fit: RegressionFit,
    idx: NeighborhoodIndex,
    c: ContrastSpec,
    T: int = DEFAULT_PERMUTATIONS,
    seed: Seed = 0,
    permutations: np.ndarray | None = None,
) -> PermutationEnsemble:
    return permutation_ensembles(fit, idx, [c], T, seed, permutations)[0]


@dataclass(frozen=True)
class SelectionResult:
    """Selected radius.

    ``exceedance[m]`` (``m = 0..m_max-1``) is the share of permutations whose
    increment at radius ``m + 1`` is no larger than the observed one.
    ``capped`` is set when no radius below ``m_max`` passed the rule and
    ``m_max`` was returned instead.
    """

    m_hat: int
    alpha: float
    exceedance: np.ndarray
    capped: bool


def select_m(curve: VarianceCurve, ens: PermutationEnsemble, alpha: float = 0.05) -> SelectionResult:
    """Smallest ``m >= 0`` whose next-radius increment is not significant.

    Ties between observed and permuted increments count as exceedances.
    """
    if ens.T < 1 or len(ens.delta_star) == 0:
        raise InputError("permutation ensemble is empty")
    if not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if ens.m_max != curve.m_max:
        raise InputError(f"curve has m_max={curve.m_max} but the ensemble has m_max={ens.m_max}")
    if ens.label != curve.contrast.label:
        raise InputError(f"ensemble for {ens.label!r} used with curve for {curve.contrast.label!r}")
    if curve.m_max == 0:
        return SelectionResult(0, alpha, np.zeros(0), False)
    observed = magnitude(curve.deltas)
    hits = (observed[None, 1:] >= ens.magnitudes[:, 1:]).sum(axis=0)
    exceedance = hits / ens.T
    # count-based comparison avoids float noise in 1 - alpha
    limit = math.floor((1 - alpha) * ens.T + 1e-9)
    passing = np.flatnonzero(hits <= limit)
    if len(passing):
        return SelectionResult(int(passing[0]), alpha, exceedance, False)
    return SelectionResult(curve.m_max, alpha, exceedance, True)


def observed_curves(
    fit: RegressionFit, idx: NeighborhoodIndex, contrasts: Sequence[ContrastSpec]
) -> list[VarianceCurve]:
    """Direct-path variance curves for several contrasts without building the meat family."""
    out = []
    for c in contrasts:
        u = contrast_direction(fit, c) * fit.residuals[:, None]
        out.append(_curve_from_layers(c, idx.layered_gram(u[:, None, :])[:, 0]))
    return out
