"""Duhamel-expansion combinatorics: collapsing maps, board-game classes, counting lemmas."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ._validation import (
    DivergenceError,
    DomainError,
    NumericalError,
    SizeRefusal,
    check_count,
    check_dyadic,
    check_positive,
    is_dyadic,
)

MAX_DEPTH = 8
DYADIC_CAP_LOG2 = 40


@dataclass(frozen=True, order=True)
class CollapsingMap:
    """mu: {k+1, ..., k+q} -> {k, ..., k+q-1}; mu[i] is the value at k+1+i."""

    k: int
    q: int
    mu: tuple

    def __post_init__(self):
        if len(self.mu) != self.q:
            raise DomainError(f"mu has {len(self.mu)} entries, expected q={self.q}")
        for i, v in enumerate(self.mu):
            l = self.k + 1 + i
            if not (self.k <= v < l):
                raise DomainError(f"mu({l}) = {v} violates k <= mu(l) < l")
        if self.q and self.mu[0] != self.k:
            raise DomainError(f"mu({self.k + 1}) must equal k={self.k}")

    def __call__(self, l):
        return self.mu[l - self.k - 1]

    def __str__(self):
        return " ".join(str(v) for v in self.mu)


def _check_kq(k, q):
    k = check_count("k", k, 1)
    q = check_count("q", q, 0)
    if q > MAX_DEPTH:
        raise SizeRefusal(f"q={q} exceeds {MAX_DEPTH}; enumeration would produce {math.factorial(q)} maps")
    return k, q


def enumerate_maps(k, q):
    """All admissible maps in lexicographic order of the mu vector (q! of them)."""
    k, q = _check_kq(k, q)
    if q == 0:
        return [CollapsingMap(k, 0, ())]
    ranges = [range(k, k + 1)] + [range(k, l) for l in range(k + 2, k + q + 1)]
    return [CollapsingMap(k, q, mu) for mu in itertools.product(*ranges)]


def move(m, l):
    """Exchange columns l and l+1 (k+1 < l < k+q), relabeling by the transposition (l l+1).

    Allowed when mu(l+1) != l; returns None otherwise.
    """
    k, q = m.k, m.q
    if not (k + 1 < l < k + q):
        return None
    if m(l + 1) == l:
        return None
    tau = lambda v: l + 1 if v == l else (l if v == l + 1 else v)
    new = tuple(tau(m(tau(p))) for p in range(k + 1, k + q + 1))
    return CollapsingMap(k, q, new)


def neighbours(m):
    out = []
    for l in range(m.k + 2, m.k + m.q):
        n = move(m, l)
        if n is not None:
            out.append(n)
    return out


def orbit(m):
    seen = {m}
    todo = deque([m])
    while todo:
        cur = todo.popleft()
        for n in neighbours(cur):
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return sorted(seen)


@lru_cache(maxsize=32)
def _canonical_table(k, q):
    maps = enumerate_maps(k, q)
    parent = {m: m for m in maps}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m in maps:
        for n in neighbours(m):
            a, b = find(m), find(n)
            if a != b:
                # keep the lexicographically least root
                if b < a:
                    a, b = b, a
                parent[b] = a
    return {m: find(m) for m in maps}


def canonicalize(m):
    """Lexicographically least member of the orbit of m."""
    _check_kq(m.k, m.q)
    return _canonical_table(m.k, m.q)[m]


@dataclass(frozen=True)
class EquivalenceClass:
    representative: CollapsingMap
    size: int
    members: tuple = ()


def equivalence_classes(k, q, with_members=False):
    table = _canonical_table(*_check_kq(k, q))
    groups = {}
    for m, c in table.items():
        groups.setdefault(c, []).append(m)
    return [EquivalenceClass(c, len(ms), tuple(sorted(ms)) if with_members else ())
            for c, ms in sorted(groups.items())]


def class_count(k, q):
    return len(set(_canonical_table(*_check_kq(k, q)).values()))


class BoardgameRow(NamedTuple):
    k: int
    q: int
    admissible_count: int
    class_count: int
    bound_4q: int


def boardgame_table(k, q_values):
    return [BoardgameRow(k, q, len(enumerate_maps(k, q)), class_count(k, q), 4**q) for q in q_values]


# ---- localization expansion ----------------------------------------------------

@dataclass(frozen=True)
class LMonomial:
    """sign * prod of w(x_j^(') - x_{k+1}); factors are (j, primed) pairs; sigma is the leading one."""

    sign: int
    factors: tuple
    sigma: tuple

    def __str__(self):
        f = " ".join(f"w(x{j}{'´' if p else ''}-x*)" for j, p in self.factors)
        return f"{'+' if self.sign > 0 else '-'} {f}"


def L_factors(k, l, side="unprimed"):
    """Pair factors G(x_s - x_{k+1}) whose product minus one is L_{l,k+1} (side='primed': L_{l',k+1})."""
    if not (1 <= l <= k):
        raise DomainError(f"l must lie in 1..{k}, got {l}")
    if side not in ("unprimed", "primed"):
        raise DomainError("side must be 'unprimed' or 'primed'")
    special = (l, side == "unprimed")
    rest = [(j, p) for j in range(1, k + 1) if j != l for p in (False, True)]
    return [special] + rest


def expand_L(k, l, side="unprimed"):
    """Binomial expansion of prod (1 - w_s) - 1 into 2^(2k-1) - 1 signed monomials."""
    fac = L_factors(k, l, side)
    out = []
    for size in range(1, len(fac) + 1):
        for sub in itertools.combinations(fac, size):
            out.append(LMonomial((-1) ** size, tuple(sub), sub[0]))
    return out


# ---- counting lemmas ---------------------------------------------------------

def _chain_count_dp(j, m):
    # nondecreasing sequences of length j with values in 0..m
    ways = [1] * (m + 1)
    for _ in range(j - 1):
        acc = 0
        nxt = []
        for w in ways:
            acc += w
            nxt.append(acc)
        ways = nxt
    return sum(ways) if j > 0 else 1


def _chain_count_enum(j, m):
    return sum(1 for _ in itertools.combinations_with_replacement(range(m + 1), j))


def iterates3_check(j, M_low, M_high, method="dp"):
    """(count of dyadic chains M_low <= M_1 <= ... <= M_j <= M_high, bound (log2 ratio + j)^j / j!)."""
    j = check_count("j", j, 1)
    if j > 10:
        raise DomainError(f"j must be <= 10, got {j}")
    lo, hi = check_dyadic("M_low", M_low), check_dyadic("M_high", M_high)
    if hi < lo:
        raise DomainError("M_low must not exceed M_high")
    m = hi - lo
    if method == "enumerate":
        lhs = _chain_count_enum(j, m)
    else:
        lhs = _chain_count_dp(j, m)
    rhs = (m + j) ** j / math.factorial(j)
    if lhs > rhs * (1 + 1e-12):
        raise NumericalError(f"chain count {lhs} exceeds bound {rhs} at j={j}, ratio 2^{m}")
    return lhs, rhs


def _log_slack(t, alpha, eps, j, u):
    # log M^eps - log( t^j (alpha log M + j)^j / j! ), with u = log M
    return eps * u - j * math.log(t) - j * np.log(alpha * u + j) + math.lgamma(j + 1)


def _test_points(alpha, eps, j, umax, dyadic_only=False, density=1):
    us = np.log(2.0) * np.arange(0, int(round(umax / math.log(2.0))) * density + 1) / density
    if not dyadic_only:
        # the slack is convex in u; add its stationary point when it lies in range
        ustar = j / eps - j / alpha
        if 0 < ustar < umax:
            us = np.append(us, ustar)
    return us


def iterates4_holds(t, alpha, eps, j_max, M_max, density=1, dyadic_only=False):
    umax = math.log(M_max)
    for j in range(1, j_max + 1):
        us = _test_points(alpha, eps, j, umax, dyadic_only, density)
        if np.min(_log_slack(t, alpha, eps, j, us)) < -1e-12:
            return False
    return True


def iterates4_find_t(alpha, epsilon, j_max, M_max, rtol=1e-13):
    """Largest t with t^j (alpha log M + j)^j / j! <= M^eps for 1 <= j <= j_max and 1 <= M <= M_max.

    The scan covers the dyadic M and, since the log-slack is convex in log M, the
    interior minimizer, so the answer also holds between dyadic points.
    """
    alpha = check_positive("alpha", alpha)
    eps = check_positive("epsilon", epsilon)
    j_max = check_count("j_max", j_max, 1)
    check_dyadic("M_max", M_max)
    lo, hi = 1e-300, 1.0
    while iterates4_holds(hi, alpha, eps, j_max, M_max):
        lo, hi = hi, 2 * hi
    while not iterates4_holds(lo, alpha, eps, j_max, M_max):
        hi, lo = lo, lo * 1e-3
    # bisection in log t
    a, b = math.log(lo), math.log(hi)
    while b - a > rtol * max(1.0, abs(a)):
        mid = 0.5 * (a + b)
        if iterates4_holds(math.exp(mid), alpha, eps, j_max, M_max):
            a = mid
        else:
            b = mid
    t = math.exp(a)
    if not t > 0:
        raise NumericalError("no positive t found")
    return t


def dyadic_min_sum(N, beta, epsilon, M_start=1, weight_exponent=1):
    """sum over dyadic M >= M_start (M <= 2^40) of min(M^(-1+2 eps) N^(p beta), M^(p-1+2 eps)).

    p = weight_exponent: 1 is the KIP form, 3 the PP form.
    """
    check_dyadic("N", N)
    check_dyadic("M_start", M_start)
    p = float(weight_exponent)
    if 2 * epsilon - 1 >= 0:
        raise DivergenceError(f"tail exponent -1 + 2 eps = {2 * epsilon - 1:g} >= 0; the sum diverges")
    lo = int(round(math.log2(M_start)))
    ls = np.arange(lo, DYADIC_CAP_LOG2 + 1, dtype=float)
    M = 2.0**ls
    head = M ** (p - 1 + 2 * epsilon)
    tail = M ** (-1 + 2 * epsilon) * float(N) ** (p * beta)
    return float(np.sum(np.minimum(head, tail)))


def dyadic_tail_bound(N, beta, epsilon, weight_exponent=1):
    """What the 2^40 cap drops: sum over M > 2^40 of the tail branch."""
    r = 2.0 ** (-1 + 2 * epsilon)
    return float(N) ** (weight_exponent * beta) * 2.0 ** ((DYADIC_CAP_LOG2 + 1) * (-1 + 2 * epsilon)) / (1 - r)


def dyadic_exponent(N_list, beta, epsilon, M_start=1, weight_exponent=1):
    """Least-squares slope of log value vs log N."""
    Ns = np.array([float(n) for n in N_list])
    vals = np.array([dyadic_min_sum(n, beta, epsilon, M_start, weight_exponent) for n in Ns])
    return float(np.polyfit(np.log(Ns), np.log(vals), 1)[0]), vals
