"""Shared oracles and fixtures.

The oracles here are written independently of the package code paths they
check: Floyd-Warshall distances and explicit all-pairs double sums.
"""

import numpy as np
import pytest

from netols import build_graph

ACCEPTANCE_LINES = []


def floyd_warshall(n, edges):
    """All-pairs shortest-path distances (inf when unreachable)."""
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for i, j in edges:
        if i != j:
            d[i, j] = d[j, i] = 1.0
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


def brute_meat(X, e, dist, m):
    """Sum of x_i x_j' e_i e_j over ordered pairs with d(i, j) <= m, one pair at a time."""
    n, p = X.shape
    out = np.zeros((p, p))
    for i in range(n):
        for j in range(n):
            if dist[i, j] <= m:
                out += np.outer(X[i], X[j]) * e[i] * e[j]
    return out


def brute_variance(gamma, e, dist, m):
    """Sum of gamma_i gamma_j' e_i e_j over ordered pairs with d(i, j) <= m."""
    mask = dist <= m
    g = gamma * e[:, None]
    return g.T @ mask.astype(float) @ g


def random_graph(rng, n, p_edge):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p_edge
    return build_graph(n, np.column_stack([iu[keep], ju[keep]]))


def path_graph(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n):
    return build_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def finite_diameter(dist):
    finite = dist[np.isfinite(dist)]
    return int(finite.max()) if finite.size else 0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
