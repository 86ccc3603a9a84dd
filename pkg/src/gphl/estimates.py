"""Littlewood-Paley projectors, X_b norms, shears and collapsing operators on space-time densities,
plus empirical probes of the Strichartz-type inequalities used for the dressed hierarchy.

A density carries `nvars` single-particle variables, each with `grid.d` spatial axes,
optionally preceded by a time axis.  `signs[v]` is +1 for an unprimed variable and -1
for a primed one; it enters the X_b weight <tau + sum_v signs[v] |xi_v|^2>.
"""

from __future__ import annotations

import math
import string
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from ._validation import DomainError, check_budget, check_dyadic
from .manybody import LatticeGrid

MIN_POINTS = 8


@dataclass
class SpaceTimeDensity:
    grid: LatticeGrid
    data: np.ndarray
    nvars: int
    dt: float | None = None
    signs: tuple | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        sp = self.grid.d * self.nvars
        extra = self.data.ndim - sp
        if extra not in (0, 1) or self.data.shape[extra:] != (self.grid.n,) * sp:
            raise DomainError(f"data shape {self.data.shape} does not match {self.nvars} variables on the grid")
        if extra and self.dt is None:
            raise DomainError("time-dependent density needs dt")
        if self.signs is None:
            half = self.nvars // 2
            self.signs = tuple([1] * (self.nvars - half) + [-1] * half)
        if len(self.signs) != self.nvars:
            raise DomainError("signs must have one entry per variable")

    @classmethod
    def kernel(cls, grid, data, k, dt=None):
        """Order-k kernel alpha(t?, x_1..x_k, x_1'..x_k')."""
        return cls(grid, data, 2 * k, dt, tuple([1] * k + [-1] * k))

    @property
    def timed(self):
        return self.data.ndim > self.grid.d * self.nvars

    @property
    def spatial_axes(self):
        off = 1 if self.timed else 0
        return tuple(range(off, self.data.ndim))

    def var_axes(self, v):
        off = 1 if self.timed else 0
        return tuple(off + self.grid.d * v + c for c in range(self.grid.d))

    def with_data(self, data):
        return replace(self, data=data)

    def l2(self):
        w = self.grid.cell**self.nvars * (self.dt if self.timed else 1.0)
        return math.sqrt(float(np.sum(np.abs(self.data) ** 2)) * w)

    def freq(self, v, c=0):
        """Frequency of component c of variable v, broadcast against data."""
        shape = [1] * self.data.ndim
        shape[self.var_axes(v)[c]] = self.grid.n
        return self.grid.xi.reshape(shape)

    def freq_sq(self, v):
        return sum(self.freq(v, c) ** 2 for c in range(self.grid.d))


@dataclass
class LowRankDensity:
    """sum_r c_r g_r(t, active) (x) h_r(passive), rank <= 8.

    Active variables come first, then passive ones; g_r carries the time axis when dt is set.
    """

    grid: LatticeGrid
    coeffs: np.ndarray
    active: list
    passive: list
    n_active: int
    n_passive: int
    dt: float | None = None
    signs: tuple | None = None

    def __post_init__(self):
        if len(self.coeffs) > 8:
            raise DomainError("rank must be <= 8")
        if not (len(self.coeffs) == len(self.active) == len(self.passive)):
            raise DomainError("coeffs, active and passive must have equal length")

    def to_dense(self):
        out = 0.0
        for c, g, h in zip(self.coeffs, self.active, self.passive):
            out = out + c * np.multiply.outer(np.asarray(g), np.asarray(h))
        return SpaceTimeDensity(self.grid, out, self.n_active + self.n_passive, self.dt, self.signs)

    def l2(self):
        """Norm from the Gram matrices of the factors, without forming the dense field."""
        cell = self.grid.cell
        wt = (self.dt if self.dt is not None else 1.0) * cell**self.n_active
        wp = cell**self.n_passive
        R = len(self.coeffs)
        Ga = np.array([[np.vdot(self.active[r], self.active[s]) * wt for s in range(R)] for r in range(R)])
        Gp = np.array([[np.vdot(self.passive[r], self.passive[s]) * wp for s in range(R)] for r in range(R)])
        c = np.asarray(self.coeffs, dtype=complex)
        return math.sqrt(max(float(np.real(np.conj(c) @ (Ga * Gp) @ c)), 0.0))


# ---- Littlewood-Paley ---------------------------------------------------------

def _grid_max_freq(grid):
    return float(np.max(np.abs(grid.xi))) * math.sqrt(grid.d)


def lp_mask(alpha, M, mode, v):
    check_dyadic("M", M)
    r = np.sqrt(alpha.freq_sq(v))
    if mode == "leq":
        return r <= M
    if mode == "annular":
        return (r <= 1.0) if M == 1 else (r > 0.5 * M) & (r <= M)
    raise DomainError(f"mode must be 'leq' or 'annular', got {mode!r}")


def lp_project(alpha, M, mode="leq", axes=None):
    """Sharp Fourier cutoff |xi_v| <= M (leq) or M/2 < |xi_v| <= M (annular; |xi| <= 1 at M = 1)
    applied to every listed variable."""
    axes = range(alpha.nvars) if axes is None else axes
    top = _grid_max_freq(alpha.grid)
    if (mode == "leq" and M >= top) or (mode == "annular" and M / 2 >= top):
        warnings.warn(f"M={M} is above the largest grid frequency {top:.3g}", RuntimeWarning, stacklevel=2)
    mask = True
    for v in axes:
        mask = mask & lp_mask(alpha, M, mode, v)
    sa = alpha.spatial_axes
    f = sfft.fftn(alpha.data, axes=sa)
    return alpha.with_data(sfft.ifftn(f * mask, axes=sa))


def dyadic_levels(grid):
    top = _grid_max_freq(grid)
    out, M = [], 1
    while M / 2 < top:
        out.append(M)
        M *= 2
    return out


# ---- X_b ------------------------------------------------------------------------

def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def smooth_cutoff(t, T=1.0):
    """theta(t) = 1 on [-T, T], 0 outside [-2T, 2T], smooth in between."""
    return smooth_step(2.0 - np.abs(np.asarray(t, dtype=float)) / T)


def time_window(T=1.0, samples=64, pad=1.0):
    """Uniform samples covering the support of theta with `pad` extra length on each side."""
    half = 2.0 * T + pad
    dt = 2 * half / samples
    t = -half + dt * np.arange(samples)
    return t, dt


def _dispersion(alpha):
    phi = 0.0
    for v in range(alpha.nvars):
        phi = phi + alpha.signs[v] * alpha.freq_sq(v)
    return phi


def xb_norm(alpha, b, budget=None):
    """sqrt( sum <tau + sum_v s_v |xi_v|^2>^(2b) |alpha^(tau, xi)|^2 ) with Plancherel weights."""
    if not alpha.timed:
        raise DomainError("xb_norm needs a time axis")
    check_budget(3 * alpha.data.nbytes, "X_b transform", budget)
    T = alpha.data.shape[0]
    F = sfft.fftn(alpha.data)
    tau = (2 * np.pi * np.fft.fftfreq(T, alpha.dt)).reshape((T,) + (1,) * (alpha.data.ndim - 1))
    w = (1.0 + (tau + _dispersion(alpha)) ** 2) ** b
    nsp = alpha.data.size
    val = float(np.sum(w * np.abs(F) ** 2)) * alpha.dt * alpha.grid.cell**alpha.nvars / nsp
    return math.sqrt(val)


class TemporalKernel:
    """K_b(phi) = discrete sum_tau <tau + phi>^(2b) |Theta(tau)|^2 dt / T for a fixed time profile.

    For a density theta(t) f(x), the squared X_b norm is sum_xi |f^(xi)|^2 K_b(phi(xi)).
    """

    def __init__(self, theta, dt):
        self.theta = np.asarray(theta, dtype=complex)
        self.dt = dt
        T = self.theta.size
        self.tau = 2 * np.pi * np.fft.fftfreq(T, dt)
        self.power = np.abs(sfft.fft(self.theta)) ** 2 * dt / T

    def __call__(self, phi, b):
        phi = np.asarray(phi, dtype=float)
        uniq, inv = np.unique(phi.ravel(), return_inverse=True)
        return self._table(uniq, b)[inv].reshape(phi.shape)

    def _table(self, phis, b):
        phis = np.asarray(phis, dtype=float)
        w = (1.0 + (self.tau[None, :] + phis.reshape(-1, 1)) ** 2) ** b
        return (w @ self.power).reshape(phis.shape)

    def on_density(self, alpha, b):
        """K_b(sum_v s_v |xi_v|^2) on the Fourier grid of alpha, via per-variable lookup tables."""
        uniqs, invs = [], []
        for v in range(alpha.nvars):
            q = alpha.signs[v] * alpha.freq_sq(v)
            u, inv = np.unique(q.ravel(), return_inverse=True)
            uniqs.append(u)
            invs.append(inv.reshape(q.shape))
        grid = 0.0
        for i, u in enumerate(uniqs):
            shape = [1] * len(uniqs)
            shape[i] = u.size
            grid = grid + u.reshape(shape)
        table = self._table(grid, b)
        return table[tuple(invs)]

    def l2(self):
        return math.sqrt(float(np.sum(np.abs(self.theta) ** 2)) * self.dt)


def xb_norm_separable(alpha, kernel, b):
    """X_b norm of theta(t) alpha(x) for a time-independent density alpha."""
    if alpha.timed:
        raise DomainError("separable form expects a time-independent density")
    F = sfft.fftn(alpha.data)
    K = kernel.on_density(alpha, b)
    val = float(np.sum(K * np.abs(F) ** 2)) * alpha.grid.cell**alpha.nvars / F.size
    return math.sqrt(val)


def free_evolution(f, times):
    """U(t) f = exp(i t Delta_x) exp(-i t Delta_x') f sampled at `times`."""
    F = sfft.fftn(f.data)
    phi = _dispersion(f)
    out = np.empty((len(times),) + f.data.shape, dtype=complex)
    for i, t in enumerate(times):
        out[i] = sfft.ifftn(np.exp(-1j * t * phi) * F)
    return out


# ---- shears ---------------------------------------------------------------------

def shear_add(alpha, target, source, sign=1):
    """g(..., x_target, ...) = f(..., x_target + sign * x_source, ...) on the periodic grid."""
    g = alpha.grid
    n = g.n
    a = alpha.data
    for c in range(g.d):
        ta, sa = alpha.var_axes(target)[c], alpha.var_axes(source)[c]
        it = np.arange(n).reshape([n if ax == ta else 1 for ax in range(a.ndim)])
        is_ = np.arange(n).reshape([n if ax == sa else 1 for ax in range(a.ndim)])
        idx = np.broadcast_to((it + sign * (is_ - n // 2)) % n, a.shape)
        a = np.take_along_axis(a, idx, axis=ta)
    return alpha.with_data(a)


SHEARS = {
    "T1": [(0, 1)],
    "T2": [(1, 0)],
    "T12": [(0, 2), (1, 2)],
    "T23": [(1, 0), (2, 0)],
    "T13": [(0, 1), (2, 1)],
}


def shear(alpha, which, inverse=False):
    """T1 f = f(x1+x2, x2), T2 f = f(x1, x2+x1), T12 f = f(x1+x3, x2+x3, x3),
    T23 f = f(x1, x2+x1, x3+x1), T13 f = f(x1+x2, x2, x3+x2)."""
    if which not in SHEARS:
        raise DomainError(f"unknown shear {which!r}; expected one of {sorted(SHEARS)}")
    out = alpha
    for tgt, src in SHEARS[which]:
        out = shear_add(out, tgt, src, -1 if inverse else 1)
    return out


# ---- collapsing ------------------------------------------------------------------

def collapsing_apply(gamma, j, side="commutator"):
    """R^(k) B_{j,k+1} gamma^(k+1) with the delta realized as x_{k+1} = x'_{k+1} = x_j (resp. x_j').

    Returns (field, norm): L^2 for a static kernel, L^1_T L^2 (trapezoid) with a time axis.
    side='plus' keeps only the x_j restriction.
    """
    g = gamma.grid
    if g.n < MIN_POINTS:
        raise DomainError(f"collapsing_apply needs >= {MIN_POINTS} points per axis, got {g.n}")
    if gamma.nvars % 2:
        raise DomainError("expected a kernel with x and x' variables")
    k = gamma.nvars // 2 - 1
    if not (1 <= j <= k):
        raise DomainError(f"j must lie in 1..{k}")
    m = g.n**g.d
    lead = gamma.data.shape[:1] if gamma.timed else ()
    a = gamma.data.reshape(lead + (m,) * (2 * k + 2))
    letters = string.ascii_letters
    xs, ys = letters[:k], letters[k:2 * k]
    t = "Z" if gamma.timed else ""
    sub1 = t + xs + xs[j - 1] + ys + xs[j - 1]
    sub2 = t + xs + ys[j - 1] + ys + ys[j - 1]
    res = t + xs + ys
    D = np.einsum(f"{sub1}->{res}", a)
    if side == "commutator":
        D = D - np.einsum(f"{sub2}->{res}", a)
    elif side != "plus":
        raise DomainError("side must be 'commutator' or 'plus'")
    out = SpaceTimeDensity.kernel(g, D.reshape(lead + (g.n,) * (2 * g.d * k)), k, gamma.dt)
    sym = 1.0
    for v in range(2 * k):
        sym = sym * np.sqrt(out.freq_sq(v))
    sa = out.spatial_axes
    field_ = sfft.ifftn(sym * sfft.fftn(out.data, axes=sa), axes=sa)
    out = out.with_data(field_)
    if out.timed:
        per_t = np.sqrt(np.sum(np.abs(field_) ** 2, axis=sa) * g.cell ** (2 * k))
        norm = float(np.sum(0.5 * (per_t[1:] + per_t[:-1])) * out.dt)
    else:
        norm = out.l2()
    return out, norm


# ---- probes ---------------------------------------------------------------------

PROBES = ("str_2body_L32", "str_2body_L65_shared", "str_3body", "collapse_LP_sum")
PROBE_DIM = {"str_2body_L32": 3, "str_2body_L65_shared": 3, "str_3body": 1, "collapse_LP_sum": 3}
PROBE_NVARS = {"str_2body_L32": 2, "str_2body_L65_shared": 2, "str_3body": 3, "collapse_LP_sum": 2}
B_MINUS = -0.5 + 0.01
LP_EPS = 0.1


def lp_norm(grid, V, p):
    return float(np.sum(np.abs(V) ** p) * grid.cell) ** (1.0 / p)


def band_limited(grid, nvars, rng, modes=2):
    """Random density whose Fourier coefficients live on |m_c| <= modes; samples are
    the same trigonometric polynomial at every resolution."""
    shape = (2 * modes + 1,) * (grid.d * nvars)
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return trig_poly(grid, coef, modes)


def trig_poly(grid, coef, modes):
    nd = coef.ndim
    spec = np.zeros((grid.n,) * nd, dtype=complex)
    idx = np.r_[0:modes + 1, grid.n - modes:grid.n]
    src = np.r_[modes:2 * modes + 1, 0:modes]
    spec[np.ix_(*[idx] * nd)] = coef[np.ix_(*[src] * nd)]
    return sfft.ifftn(spec) * spec.size


def bump_potential(grid, width=0.6):
    """Periodized Gaussian bump exp(-|x|^2 / width^2) on one variable."""
    r2 = 0.0
    for c in range(grid.d):
        shape = [1] * grid.d
        shape[c] = grid.n
        r2 = r2 + grid.wrap(grid.x).reshape(shape) ** 2
    return np.exp(-r2 / width**2) * np.ones((grid.n,) * grid.d)


def _pair_values(grid, nvars, a, b, V):
    """V(x_a - x_b) as a field over nvars variables, by index arithmetic on the periodic grid."""
    n, d = grid.n, grid.d
    idx = []
    for c in range(d):
        ia = np.arange(n).reshape([n if ax == d * a + c else 1 for ax in range(d * nvars)])
        ib = np.arange(n).reshape([n if ax == d * b + c else 1 for ax in range(d * nvars)])
        idx.append((ia - ib + n // 2) % n)
    return V[tuple(idx)]


def _bracket(alpha, v, power=1.0):
    return (1.0 + alpha.freq_sq(v)) ** (0.5 * power)


def _multiplier_norm(alpha, sym):
    F = sfft.fftn(alpha.data)
    return math.sqrt(float(np.sum(np.abs(sym * F) ** 2)) * alpha.grid.cell**alpha.nvars / F.size)


class ProbeRow(NamedTuple):
    name: str
    resolution: int
    seed: int
    max_ratio: float
    median_ratio: float


@dataclass
class ProbeReport:
    name: str
    resolution: int
    seed: int
    ratios: np.ndarray
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    @property
    def max_ratio(self):
        return float(np.max(self.ratios))

    @property
    def median_ratio(self):
        return float(np.median(self.ratios))

    def row(self):
        return ProbeRow(self.name, self.resolution, self.seed, self.max_ratio, self.median_ratio)


def _ratio(lhs, rhs):
    if lhs == 0:
        return 0.0
    return lhs / rhs


def probe_sides(name, grid, gamma, V, W=None, kernel=None, passive=None):
    """(LHS, RHS) of the named inequality for one density.  theta(t) is the time profile in `kernel`."""
    nv = PROBE_NVARS[name]
    alpha = SpaceTimeDensity(grid, gamma, nv, signs=(1,) * nv)
    th = kernel.l2()
    if name in ("str_2body_L32", "str_2body_L65_shared"):
        lhs = xb_norm_separable(alpha.with_data(_pair_values(grid, 2, 0, 1, V) * alpha.data), kernel, B_MINUS)
        if name == "str_2body_L32":
            rhs = lp_norm(grid, V, 1.5) * _multiplier_norm(alpha, _bracket(alpha, 0)) * th
        else:
            sym = _bracket(alpha, 0, 0.75) * _bracket(alpha, 1, 0.75)
            rhs = lp_norm(grid, V, 1.2) * _multiplier_norm(alpha, sym) * th
        return lhs, rhs
    if name == "str_3body":
        W = V if W is None else W
        f = _pair_values(grid, 3, 0, 1, V) * _pair_values(grid, 3, 0, 2, W) * alpha.data
        lhs = xb_norm_separable(alpha.with_data(f), kernel, B_MINUS)
        sym = _bracket(alpha, 0) * _bracket(alpha, 1) * _bracket(alpha, 2)
        rhs = lp_norm(grid, V, 1.5) * lp_norm(grid, W, 1.5) * _multiplier_norm(alpha, sym) * th
        return lhs, rhs
    if name == "collapse_LP_sum":
        return _collapse_lp_sides(grid, alpha, V, kernel, passive)
    raise DomainError(f"unknown probe {name!r}; expected one of {PROBES}")


def _collapse_lp_sides(grid, g0, V, kernel, passive, M=1, method="spectral"):
    """k=1 localized collapse of U(t) f with f = g(x1, x2) e^{i eta1.x1'} e^{i eta2.x2'} / vol.

    `passive` holds the integer lattice modes of the two plane waves.  The LHS is
    || theta(t) R_{<=M} B^+ U(t) f ||_{L^2_t L^2}; the x1' factor contributes |eta1| 1[|eta1| <= M].
    method='direct' evaluates the y-contraction on the grid at every time sample,
    'spectral' uses the equivalent sum over the nonzero Fourier coefficients of g.
    """
    e1m, e2m = (np.asarray(e, dtype=int) for e in passive)
    eta1 = 2 * np.pi * e1m / grid.box_length
    eta2 = 2 * np.pi * e2m / grid.box_length
    n, d = grid.n, grid.d
    vol = grid.box_length**d
    cell = grid.cell
    G = sfft.fftn(g0.data)
    ts = np.arange(kernel.theta.size) * kernel.dt
    ts = ts - ts.mean()
    one = SpaceTimeDensity(grid, np.zeros((n,) * d), 1, signs=(1,))
    lp1 = lp_mask(one, M, "leq", 0) * np.sqrt(one.freq_sq(0))
    e1 = math.sqrt(float(eta1 @ eta1))
    pas = e1 * (e1 <= M)
    norms = np.zeros(ts.size)
    live = np.abs(kernel.theta) > 0
    if method == "direct":
        phi = g0.freq_sq(0) + g0.freq_sq(1)
        Vp = _pair_values(grid, 2, 0, 1, V)
        ph = 0.0
        for c in range(d):
            sh = [1] * (2 * d)
            sh[d + c] = n
            ph = ph + eta2[c] * grid.x.reshape(sh)
        K = Vp * np.exp(1j * ph) / math.sqrt(vol) * cell
        y_axes = tuple(range(d, 2 * d))
        for i in np.nonzero(live)[0]:
            q = np.sum(K * sfft.ifftn(np.exp(-1j * ts[i] * phi) * G), axis=y_axes)
            Q = sfft.fftn(q)
            norms[i] = float(np.sum(np.abs(lp1 * Q) ** 2)) * cell / Q.size
    elif method == "spectral":
        Vh = sfft.fftn(V)
        nz = np.nonzero(np.abs(G) > 1e-14 * np.max(np.abs(G), initial=0.0))
        m1, m2 = np.array(nz[:d]), np.array(nz[d:])
        kk = (m2 + e2m[:, None]) % n
        pp = (m1 + kk) % n
        sign = (-1.0) ** np.sum(kk, axis=0)
        C = G[nz] * Vh[tuple(kk)] * sign * cell / n**d / math.sqrt(vol)
        xi = grid.xi
        phi = np.sum(xi[m1] ** 2, axis=0) + np.sum(xi[m2] ** 2, axis=0)
        flat = np.ravel_multi_index(tuple(pp), (n,) * d)
        w = lp1.ravel() ** 2
        for i in np.nonzero(live)[0]:
            c = C * np.exp(-1j * ts[i] * phi)
            Q = np.bincount(flat, c.real, n**d) + 1j * np.bincount(flat, c.imag, n**d)
            norms[i] = float(np.sum(w * np.abs(Q) ** 2)) * cell / n**d
    else:
        raise DomainError("method must be 'spectral' or 'direct'")
    lhs = math.sqrt(float(np.sum(np.abs(kernel.theta) ** 2 * norms)) * kernel.dt) * pas
    # sum over M' >= M of (M/M')^(1-eps) || R_{<=M'} f ||, with the analytic tail past the grid
    e2 = math.sqrt(float(eta2 @ eta2))
    R12 = np.sqrt(g0.freq_sq(0)) * np.sqrt(g0.freq_sq(1))
    rad0 = np.sqrt(g0.freq_sq(0))
    rad1 = np.sqrt(g0.freq_sq(1))
    top = _grid_max_freq(grid)
    total = 0.0
    Mp = M
    while True:
        mask = (rad0 <= Mp) & (rad1 <= Mp)
        nf = math.sqrt(float(np.sum(np.abs(R12 * mask * G) ** 2)) * grid.cell**2 / G.size)
        nf *= e1 * e2 * (e1 <= Mp) * (e2 <= Mp)
        w = (M / Mp) ** (1 - LP_EPS)
        if Mp >= max(top, e1, e2):
            r = 2.0 ** -(1 - LP_EPS)
            total += w * nf / (1 - r)
            break
        total += w * nf
        Mp *= 2
    rhs = float(np.sum(np.abs(V)) * cell) * total * kernel.l2()
    return lhs, rhs


def probe_inequality(name, ensemble_size=20, resolution=8, seed=0, box_length=2 * np.pi,
                     V=None, T=1.0, time_samples=64, budget=None):
    """Ratios LHS/RHS over a fixed-seed band-limited ensemble at one resolution."""
    if name not in PROBES:
        raise DomainError(f"unknown probe {name!r}; expected one of {PROBES}")
    d, nv = PROBE_DIM[name], PROBE_NVARS[name]
    grid = LatticeGrid(d, resolution, box_length)
    check_budget(8 * 16 * resolution ** (d * nv), f"probe {name}", budget)
    t, dt = time_window(T, time_samples)
    kernel = TemporalKernel(smooth_cutoff(t, T), dt)
    Vg = bump_potential(grid) if V is None else V(grid)
    lhs, rhs = [], []
    for member in range(ensemble_size):
        rng = np.random.default_rng([seed, member])
        gamma = band_limited(grid, nv, rng)
        passive = None
        if name == "collapse_LP_sum":
            # eta1 a unit lattice mode (so it survives P_{<=1}), eta2 any nonzero mode in {-1,0,1}^d
            eta1 = np.zeros(d, dtype=int)
            eta1[rng.integers(d)] = rng.choice([-1, 1])
            eta2 = np.zeros(d, dtype=int)
            while not eta2.any():
                eta2 = rng.integers(-1, 2, size=d)
            passive = [eta1, eta2]
        a, b = probe_sides(name, grid, gamma, Vg, kernel=kernel, passive=passive)
        lhs.append(a)
        rhs.append(b)
    lhs, rhs = np.array(lhs), np.array(rhs)
    ratios = np.array([_ratio(a, b) for a, b in zip(lhs, rhs)])
    return ProbeReport(name, resolution, seed, ratios, lhs, rhs)


# ---- envelopes --------------------------------------------------------------------

class EnvelopeRow(NamedTuple):
    N: float
    peak_pot: float
    peak_grad_sq: float
    pot_envelope: float
    grad_envelope: float


@dataclass
class EnvelopeReport:
    beta: float
    rows: list
    exponent: float
    grad_constant: float
    pot_constant: float


def potential_shape_compare(base, beta, Ns=None, samples=2000, s_max=8.0):
    """Compare N^-1 V_N and |grad w_N|^2 with their envelopes over a radial scan in s = N^beta r.

    pot_envelope = max N^-1 V_N / (N^(3b-1) <s>^-100),
    grad_envelope = max |grad w_N| / (N^(2b-1) <s>^-2),
    exponent = fitted slope of max |grad w_N|^2 / max N^-1 V_N against N.
    """
    from .scattering import ScaledPotential

    Ns = [2.0**e for e in range(6, 21)] if Ns is None else [float(n) for n in Ns]
    R = base.support if base.support > 0 else 1.0
    s = np.linspace(0.0, s_max * R, samples)
    rows = []
    for N in Ns:
        sp = ScaledPotential(base, N, beta, d=3)
        r = s / sp.scale
        pot = sp.V_N(r, side="left") / N
        grad = np.abs(sp.dw_N(r))
        br = np.sqrt(1.0 + s * s)
        pe = float(np.max(pot * br**100 / N ** (3 * beta - 1)))
        ge = float(np.max(grad * br**2 / N ** (2 * beta - 1)))
        rows.append(EnvelopeRow(N, float(np.max(pot)), float(np.max(grad) ** 2), pe, ge))
    ratio = np.array([r.peak_grad_sq / r.peak_pot for r in rows])
    slope = float(np.polyfit(np.log(Ns), np.log(ratio), 1)[0]) if len(Ns) > 1 else float("nan")
    return EnvelopeReport(beta, rows, slope, max(r.grad_envelope for r in rows), max(r.pot_envelope for r in rows))
