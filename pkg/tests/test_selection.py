import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from netols import (
    ContrastSpec,
    Design,
    InputError,
    build_graph,
    build_neighborhoods,
    contrast_direction,
    fit_ols,
    permutation_ensemble,
    sandwich_family,
    select_m,
    variance_curve,
)
from netols.sandwich import VarianceCurve
from netols.selection import PermutationEnsemble, permutation_ensembles, permutation_matrix

from conftest import brute_variance, floyd_warshall, path_graph, random_graph


def _setup(rng, n=30, p_edge=0.15, m_max=4):
    g = random_graph(rng, n, p_edge)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    fit = fit_ols(Design(X, rng.standard_normal(n)))
    idx = build_neighborhoods(g, m_max)
    return g, fit, idx


def test_identity_permutation_reproduces_curve(rng):
    g, fit, idx = _setup(rng)
    c = ContrastSpec.coefficient(3, 0)
    cv = variance_curve(sandwich_family(fit, idx), fit, c)
    ident = np.arange(fit.n)[None, :]
    ens = permutation_ensemble(fit, idx, c, permutations=np.repeat(ident, 3, axis=0))
    assert ens.T == 3
    assert_allclose(ens.delta_star, np.tile(cv.delta, (3, 1)), rtol=1e-12, atol=1e-14)
    assert np.all(ens.delta_star[:, 0] == 0.0)


def test_identity_permutation_joint(rng):
    g, fit, idx = _setup(rng)
    c = ContrastSpec.joint(3, [1, 2], "j")
    cv = variance_curve(sandwich_family(fit, idx), fit, c)
    ens = permutation_ensemble(fit, idx, c, permutations=np.arange(fit.n)[None, :])
    assert_allclose(ens.delta_star[0], [np.linalg.norm(d, 2) for d in cv.deltas], rtol=1e-12, atol=1e-14)


def test_edgeless_graph_zero_ensemble_capped(rng):
    n = 12
    g = build_graph(n, [])
    fit = fit_ols(Design(np.column_stack([np.ones(n), rng.standard_normal(n)]), rng.standard_normal(n)))
    idx = build_neighborhoods(g, 3)
    c = ContrastSpec.coefficient(2, 1)
    ens = permutation_ensemble(fit, idx, c, T=20, seed=1)
    assert np.all(ens.delta_star == 0.0)
    sel = select_m(variance_curve(sandwich_family(fit, idx), fit, c), ens)
    assert sel.capped and sel.m_hat == 3
    assert_allclose(sel.exceedance, 1.0)


def test_five_node_path_against_oracle():
    rng = np.random.default_rng(5)
    n = 5
    g = path_graph(n)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    fit = fit_ols(Design(X, rng.standard_normal(n)))
    idx = build_neighborhoods(g, 3)
    c = ContrastSpec.coefficient(2, 1)
    ens = permutation_ensemble(fit, idx, c, T=25, seed=(9, 4))
    perms = permutation_matrix(n, 25, (9, 4))
    dist = floyd_warshall(n, g.edges)
    gam = contrast_direction(fit, c)
    for t, perm in enumerate(perms):
        e = fit.residuals[perm]
        base = brute_variance(gam, e, dist, 0)[0, 0]
        want = [brute_variance(gam, e, dist, m)[0, 0] - base for m in range(4)]
        assert_allclose(ens.delta_star[t], want, atol=1e-12)


def test_permutations_are_uniform_and_seeded():
    perms = permutation_matrix(6, 3000, 11)
    assert np.all(np.sort(perms, axis=1) == np.arange(6))
    assert_array_equal(perms, permutation_matrix(6, 3000, 11))
    assert not np.array_equal(perms, permutation_matrix(6, 3000, 12))
    # position of element 0 is uniform over the 6 slots
    counts = np.bincount(np.argmax(perms == 0, axis=1), minlength=6)
    expected = 3000 / 6
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected * 5 / 6))
    # row t only depends on (seed, t)
    assert_array_equal(permutation_matrix(6, 10, 11), perms[:10])


def _curve(deltas):
    deltas = np.asarray(deltas, float)
    mats = (1.0 + deltas)[:, None, None]
    return VarianceCurve(ContrastSpec([1.0], "c"), mats, deltas[:, None, None])


def _ens(star):
    star = np.asarray(star, float)
    return PermutationEnsemble("c", len(star), 0, star)


def test_small_increment_selects_zero():
    star = np.column_stack([np.zeros(40), np.full(40, 5.0), np.full(40, 5.0)])
    sel = select_m(_curve([0.0, 0.1, 0.2]), _ens(star))
    assert sel.m_hat == 0 and not sel.capped
    assert_allclose(sel.exceedance, [0.0, 0.0])


def test_large_increment_moves_on():
    star = np.column_stack([np.zeros(40), np.full(40, 0.1), np.full(40, 5.0)])
    sel = select_m(_curve([0.0, 1.0, 1.2]), _ens(star))
    assert sel.m_hat == 1
    assert_allclose(sel.exceedance, [1.0, 0.0])


def test_threshold_is_inclusive():
    # 95 of 100 permutations beaten gives exactly 1 - alpha and passes
    star = np.zeros((100, 2))
    star[:95, 1] = 0.5
    star[95:, 1] = 2.0
    sel = select_m(_curve([0.0, 1.0]), _ens(star), alpha=0.05)
    assert sel.exceedance[0] == pytest.approx(0.95)
    assert sel.m_hat == 0 and not sel.capped
    star[95, 1] = 0.5
    assert select_m(_curve([0.0, 1.0]), _ens(star), alpha=0.05).capped


def test_ties_count_as_exceedance():
    star = np.column_stack([np.zeros(10), np.full(10, 1.0)])
    sel = select_m(_curve([0.0, -1.0]), _ens(star))
    assert_allclose(sel.exceedance, [1.0])
    assert sel.capped


def test_m_max_zero():
    sel = select_m(_curve([0.0]), _ens(np.zeros((5, 1))))
    assert sel.m_hat == 0 and not sel.capped


def test_select_validation():
    cv = _curve([0.0, 1.0])
    with pytest.raises(InputError, match="empty"):
        select_m(cv, _ens(np.zeros((0, 2))))
    with pytest.raises(InputError, match="alpha"):
        select_m(cv, _ens(np.zeros((3, 2))), alpha=1.0)
    with pytest.raises(InputError, match="m_max"):
        select_m(cv, _ens(np.zeros((3, 3))))
    with pytest.raises(InputError, match="ensemble for"):
        select_m(cv, PermutationEnsemble("other", 3, 0, np.zeros((3, 2))))


def test_zero_permutations_rejected(rng):
    g, fit, idx = _setup(rng)
    with pytest.raises(InputError):
        permutation_ensemble(fit, idx, ContrastSpec.coefficient(3, 0), T=0)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    alphas=st.tuples(st.floats(0.01, 0.5), st.floats(0.01, 0.5)),
)
def test_level_monotone_and_exceedance_recomputed(seed, alphas):
    rng = np.random.default_rng(seed)
    g, fit, idx = _setup(rng, n=20, p_edge=0.2, m_max=3)
    c = ContrastSpec.coefficient(3, 0)
    cv = variance_curve(sandwich_family(fit, idx), fit, c)
    ens = permutation_ensemble(fit, idx, c, T=50, seed=seed)
    lo, hi = sorted(alphas)
    s_lo, s_hi = select_m(cv, ens, lo), select_m(cv, ens, hi)
    assert s_hi.m_hat >= s_lo.m_hat
    assert 0 <= s_lo.m_hat <= idx.m_max
    raw = np.mean(np.abs(cv.delta[None, 1:]) >= np.abs(ens.delta_star[:, 1:]), axis=0)
    assert_array_equal(s_lo.exceedance, raw)
    assert np.all((raw >= 0) & (raw <= 1))
    # the rule as stated: smallest m with fraction <= 1 - alpha
    ok = [m for m in range(idx.m_max) if raw[m] <= 1 - lo + 1e-12]
    assert s_lo.m_hat == (ok[0] if ok else idx.m_max)


def test_selection_is_deterministic(rng):
    g, fit, idx = _setup(rng)
    cs = [ContrastSpec.coefficient(3, k, f"b{k}") for k in range(3)]
    a = permutation_ensembles(fit, idx, cs, T=30, seed=3)
    b = permutation_ensembles(fit, idx, cs, T=30, seed=3)
    for x, y in zip(a, b):
        assert_array_equal(x.delta_star, y.delta_star)
