"""Distance-truncated sandwich estimates of ``X' Sigma X`` and contrast variances.

The meat matrix at radius ``m`` sums ``x_ir x_js e_i e_j`` over every ordered
pair ``(i, j)`` with graph distance at most ``m``. All radii up to ``m_max``
are produced in one pass, one distance layer at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .graph import NeighborhoodIndex
from .ols import ContrastSpec, RegressionFit, contrast_direction

__all__ = [
    "SandwichFamily",
    "VarianceCurve",
    "sandwich_family",
    "variance_curve",
    "delta_series",
    "magnitude",
]


@dataclass(frozen=True)
class SandwichFamily:
    """Truncated meat matrices for ``m = 0..m_max``.

    Attributes
    ----------
    meat : ndarray, shape (m_max + 1, p, p)
        ``meat[m]`` is the truncated estimate of ``X' Sigma X`` at radius m.
    layers : ndarray, shape (m_max + 1, p, p)
        Contribution of pairs at distance exactly k; ``meat`` is its cumsum.
    """

    m_max: int
    meat: np.ndarray
    layers: np.ndarray
    index: NeighborhoodIndex
    fit: RegressionFit

    def covariance(self, m: int) -> np.ndarray:
        """Sandwich covariance of ``beta_hat`` at radius ``m``."""
        b = self.fit.xtx_inv
        return b @ self.meat[m] @ b


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + np.swapaxes(a, -1, -2)) / 2


def sandwich_family(fit: RegressionFit, idx: NeighborhoodIndex) -> SandwichFamily:
    if idx.n != fit.n:
        raise InputError(f"neighborhood index has {idx.n} nodes but the fit has {fit.n} rows")
    w = fit.residuals[:, None] * fit.X
    layers = _symmetrize(idx.layered_gram(w[:, None, :])[:, 0])
    return SandwichFamily(
        m_max=idx.m_max,
        meat=np.cumsum(layers, axis=0),
        layers=layers,
        index=idx,
        fit=fit,
    )


@dataclass(frozen=True)
class VarianceCurve:
    """Truncated variance estimates for one contrast.

    ``matrices[m]`` is the q x q estimate at radius m and ``deltas[m]`` its
    increment over radius 0. For ``q == 1`` the :attr:`sigma2` and
    :attr:`delta` views are plain vectors.
    """

    contrast: ContrastSpec
    matrices: np.ndarray
    deltas: np.ndarray

    @property
    def m_max(self) -> int:
        return len(self.matrices) - 1

    @property
    def q(self) -> int:
        return self.matrices.shape[1]

    @property
    def sigma2(self) -> np.ndarray:
        return self.matrices[:, 0, 0] if self.q == 1 else self.matrices

    @property
    def delta(self) -> np.ndarray:
        return self.deltas[:, 0, 0] if self.q == 1 else self.deltas


def _curve_from_layers(c: ContrastSpec, layers: np.ndarray) -> VarianceCurve:
    layers = _symmetrize(layers)
    deltas = np.zeros_like(layers)
    deltas[1:] = np.cumsum(layers[1:], axis=0)
    return VarianceCurve(contrast=c, matrices=layers[0] + deltas, deltas=deltas)


def variance_curve(
    fam: SandwichFamily,
    fit: RegressionFit,
    c: ContrastSpec,
    method: str = "coefficient",
) -> VarianceCurve:
    """Variance curve of ``sqrt(n) a' beta_hat`` over truncation radii.

    ``method="coefficient"`` maps the meat matrices through
    ``sqrt(n) (X'X)^{-1} a``; ``method="direct"`` sums
    ``gamma_i gamma_j e_i e_j`` over the neighborhood layers with
    ``gamma = sqrt(n) X (X'X)^{-1} a``. The two agree to rounding.
    """
    if c.p != fit.p:
        raise InputError(f"contrast has {c.p} rows but the fit has {fit.p} coefficients")
    if method == "coefficient":
        lmat = np.sqrt(fit.n) * (fit.xtx_inv @ c.a)
        layers = np.einsum("pr,kpq,qs->krs", lmat, fam.layers, lmat)
    elif method == "direct":
        u = contrast_direction(fit, c) * fit.residuals[:, None]
        layers = fam.index.layered_gram(u[:, None, :])[:, 0]
    else:
        raise InputError(f"unknown method {method!r}; use 'coefficient' or 'direct'")
    return _curve_from_layers(c, layers)


def magnitude(delta) -> np.ndarray:
    """Absolute value for scalars, operator norm for (stacks of) matrices."""
    delta = np.asarray(delta, dtype=float)
    if delta.ndim >= 2 and delta.shape[-1] > 1:
        return np.linalg.norm(delta, ord=2, axis=(-2, -1))
    if delta.ndim >= 2:
        return np.abs(delta[..., 0, 0])
    return np.abs(delta)


def delta_series(v: VarianceCurve) -> list:
    """Increments over radius 0: floats when ``q == 1``, q x q arrays otherwise."""
    if v.q == 1:
        return [float(d) for d in v.delta]
    return [d.copy() for d in v.deltas]
