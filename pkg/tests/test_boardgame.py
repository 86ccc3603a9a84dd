import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gphl._validation import DivergenceError, DomainError, NumericalError, SizeRefusal
from gphl.boardgame import (
    CollapsingMap,
    boardgame_table,
    canonicalize,
    class_count,
    dyadic_exponent,
    dyadic_min_sum,
    dyadic_tail_bound,
    enumerate_maps,
    equivalence_classes,
    expand_L,
    iterates3_check,
    iterates4_find_t,
    iterates4_holds,
    move,
    orbit,
)


def brute_classes(k, q):
    """Independent oracle: maps as tuples, moves by explicit conjugation, components by scipy."""
    maps = list(itertools.product(*[range(k, l) for l in range(k + 1, k + q + 1)]))
    index = {m: i for i, m in enumerate(maps)}
    rows, cols = [], []
    for m in maps:
        mu = dict(zip(range(k + 1, k + q + 1), m))
        for l in range(k + 2, k + q):
            if mu[l + 1] == l:
                continue
            swap = {l: l + 1, l + 1: l}
            t = lambda v: swap.get(v, v)
            new = tuple(t(mu[t(p)]) for p in range(k + 1, k + q + 1))
            rows.append(index[m])
            cols.append(index[new])
    n = len(maps)
    A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(A, directed=False)
    return maps, labels


@pytest.mark.parametrize("q", range(0, 8))
def test_admissible_count_is_factorial(q):
    assert len(enumerate_maps(2, q)) == math.factorial(q)


def test_class_counts_bounded():
    counts = [class_count(1, q) for q in range(7)]
    assert counts == [1, 1, 2, 5, 12, 30, 74]
    assert all(c <= 4**q for q, c in enumerate(counts))


@pytest.mark.parametrize("k,q", [(1, 3), (1, 4), (2, 5), (3, 5)])
def test_canonicalize_against_brute_force(k, q):
    maps, labels = brute_classes(k, q)
    canon = {}
    for m, lab in zip(maps, labels):
        c = canonicalize(CollapsingMap(k, q, m))
        canon.setdefault(lab, set()).add(c)
    # one canonical form per component, and it is the least member
    assert all(len(s) == 1 for s in canon.values())
    for lab, s in canon.items():
        members = [m for m, l2 in zip(maps, labels) if l2 == lab]
        assert next(iter(s)).mu == min(members)
    assert len(canon) == class_count(k, q)


def test_canonicalize_idempotent_and_orbit_consistent():
    for m in enumerate_maps(1, 5):
        c = canonicalize(m)
        assert canonicalize(c) == c
        assert c == orbit(m)[0]
        assert all(canonicalize(o) == c for o in orbit(m))


def test_equivalence_class_sizes_sum():
    cl = equivalence_classes(1, 5, with_members=True)
    assert sum(c.size for c in cl) == 120
    assert all(c.representative == c.members[0] for c in cl)


def test_move_is_involution():
    for m in enumerate_maps(1, 5):
        for l in range(3, 6):
            n = move(m, l)
            if n is not None:
                assert move(n, l) == m


def test_invalid_map_rejected():
    with pytest.raises(DomainError):
        CollapsingMap(1, 2, (1, 3))
    with pytest.raises(DomainError):
        CollapsingMap(1, 2, (1,))


def test_depth_refusal():
    with pytest.raises(SizeRefusal):
        enumerate_maps(1, 9)


def test_boardgame_table_rows():
    rows = boardgame_table(1, [3, 4])
    assert rows[0].admissible_count == 6 and rows[1].class_count == 12
    assert rows[1].bound_4q == 256


@pytest.mark.parametrize("k", range(1, 6))
def test_expand_L_counts(k):
    for l in range(1, k + 1):
        for side in ("unprimed", "primed"):
            monos = expand_L(k, l, side)
            assert len(monos) == 2 ** (2 * k - 1) - 1
            assert len(set(m.factors for m in monos)) == len(monos)


def test_expand_L_bad_label():
    with pytest.raises(DomainError):
        expand_L(2, 3)


@given(st.integers(1, 8), st.integers(0, 6), st.integers(0, 6))
def test_iterates3_dp_matches_enumeration(j, a, b):
    lo, hi = sorted((a, b))
    dp = iterates3_check(j, 2**lo, 2**hi)
    en = iterates3_check(j, 2**lo, 2**hi, method="enumerate")
    assert dp == en
    assert dp[0] == math.comb(hi - lo + j, j)
    assert dp[0] <= dp[1]


def test_iterates3_exhaustive():
    for j in range(1, 9):
        for m in range(0, 13):
            lhs, rhs = iterates3_check(j, 1, 2**m)
            assert lhs <= rhs


def test_iterates3_domain():
    with pytest.raises(DomainError):
        iterates3_check(2, 3, 8)
    with pytest.raises(DomainError):
        iterates3_check(2, 8, 4)


def test_iterates4_found_t_is_sharp_and_robust():
    t = iterates4_find_t(1.0, 0.1, 8, 2**12)
    assert iterates4_holds(t, 1.0, 0.1, 8, 2**12, density=16)
    assert not iterates4_holds(t * (1 + 1e-9), 1.0, 0.1, 8, 2**12)


def test_iterates4_bounded_by_M_equal_one():
    # at M = 1 the condition reads t^j j^j <= j!
    t = iterates4_find_t(1.0, 10.0, 10, 2**20)
    assert t == pytest.approx(min(math.factorial(j) ** (1 / j) / j for j in range(1, 11)), rel=1e-10)


def test_dyadic_exponents():
    Ns = [2**e for e in range(10, 31, 2)]
    for beta in (0.3, 0.5, 0.9):
        kip, _ = dyadic_exponent(Ns, beta, 0.1, weight_exponent=1)
        pp, _ = dyadic_exponent(Ns, beta, 0.1, weight_exponent=3)
        assert kip <= 0.2 + 0.02
        assert pp <= 2 * beta + 0.2 + 0.02


def test_dyadic_tail_small():
    assert dyadic_tail_bound(2**20, 0.5, 0.1) < 1e-6 * dyadic_min_sum(2**20, 0.5, 0.1)


def test_dyadic_divergence_and_domain():
    with pytest.raises(DivergenceError):
        dyadic_min_sum(16, 0.5, 0.5)
    with pytest.raises(DomainError):
        dyadic_min_sum(10, 0.5, 0.1)
    assert issubclass(DivergenceError, NumericalError)
