"""Least squares fits and hypothesis-specific directions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import FitError, InputError

__all__ = ["Design", "RegressionFit", "ContrastSpec", "fit_ols", "contrast_direction"]

COND_LIMIT = 1e12


@dataclass(frozen=True)
class Design:
    """Design matrix ``X`` (n x p), response ``y`` and column labels.

    No intercept is added; include a column of ones if one is wanted.
    """

    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] = ()
    # source variable -> indicator columns, for expanded categoricals
    groups: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        names = tuple(self.names) or tuple(f"x{k + 1}" for k in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InputError(f"{len(names)} column names for {X.shape[1]} columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, y) -> "Design":
        return Design(self.X, y, self.names, self.groups)


@dataclass(frozen=True)
class RegressionFit:
    X: np.ndarray
    y: np.ndarray
    beta_hat: np.ndarray
    residuals: np.ndarray
    xtx_inv: np.ndarray
    fitted: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    v = np.abs(vt[-1])
    return [names[k] for k in np.flatnonzero(v > 1e-3 * v.max())]


def fit_ols(d: Design) -> RegressionFit:
    """Ordinary least squares through a thin QR factorization.

    Raises
    ------
    FitError
        If ``n <= p`` or the condition number of ``X`` exceeds ``1e12``.
        The message names the columns involved in the near-dependence.
    """
    X, y = d.X, d.y
    n, p = X.shape
    if p < 1 or n <= p:
        raise FitError(f"need n > p >= 1, got n={n}, p={p}")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() == 0 or np.linalg.cond(r) > COND_LIMIT:
        cols = _collinear_columns(X, d.names)
        raise FitError("design is rank deficient; collinear columns: " + ", ".join(cols))
    beta = np.linalg.solve(r, q.T @ y)
    r_inv = np.linalg.solve(r, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    fitted = X @ beta
    return RegressionFit(
        X=X,
        y=y,
        beta_hat=beta,
        residuals=y - fitted,
        xtx_inv=(xtx_inv + xtx_inv.T) / 2,
        fitted=fitted,
        names=d.names,
    )


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    """Linear hypothesis ``a.T @ beta = 0`` with ``a`` of shape (p, q)."""

    a: np.ndarray
    label: str = "contrast"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[1] < 1:
            raise InputError(f"contrast must be a vector or a p x q matrix, got shape {a.shape}")
        if np.linalg.matrix_rank(a) < a.shape[1]:
            raise InputError(f"contrast {self.label!r} does not have full column rank")
        object.__setattr__(self, "a", a)

    @property
    def p(self) -> int:
        return self.a.shape[0]

    @property
    def q(self) -> int:
        return self.a.shape[1]

    @classmethod
    def coefficient(cls, p: int, k: int, label: str | None = None) -> "ContrastSpec":
        """The unit contrast ``e_k`` testing one coefficient."""
        a = np.zeros(p)
        a[k] = 1.0
        return cls(a, label if label is not None else f"beta[{k}]")

    @classmethod
    def joint(cls, p: int, ks: Sequence[int], label: str) -> "ContrastSpec":
        """Joint test that all coefficients in ``ks`` are zero."""
        a = np.zeros((p, len(ks)))
        a[list(ks), np.arange(len(ks))] = 1.0
        return cls(a, label)


def contrast_direction(fit: RegressionFit, c: ContrastSpec) -> np.ndarray:
    """``sqrt(n) * X (X'X)^{-1} a`` as an (n, q) array."""
    if c.p != fit.p:
        raise InputError(f"contrast has {c.p} rows but the fit has {fit.p} coefficients")
    return np.sqrt(fit.n) * (fit.X @ (fit.xtx_inv @ c.a))
