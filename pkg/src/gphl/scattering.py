"""Zero-energy scattering for radial pair potentials on R^3.

The screened problem at particle number N and exponent beta is

    (-Delta + lam/2 V) w0 = V/2,   w0 -> 0 at infinity,   lam = N^(beta-1).

With u = r (1 - lam w0) this is the radial shooting problem u'' = lam/2 V u,
u(0) = 0, normalized so that u = r - a outside the support of V.  Then
a = scat(lam V) and the returned a0 = lim r w0(r) = a / lam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from ._validation import (
    ConvergenceError,
    DomainError,
    InsufficientDataError,
    check_beta,
    check_positive,
)

DECAY_FLOOR = 1e-14


class RadialPotential:
    """Nonnegative spherically symmetric pair potential V(|x|) on R^3.

    Use the constructors `square_barrier`, `gaussian`, `tabulated` or `zero`.
    """

    KINDS = ("square_barrier", "gaussian", "tabulated")

    def __init__(self, kind, params, r_max=None, strict=True):
        if kind not in self.KINDS:
            raise DomainError(f"unknown potential kind {kind!r}; expected one of {self.KINDS}")
        self.kind = kind
        self.params = dict(params)
        if kind == "square_barrier":
            check_positive("height", self.params["height"], strict=False)
            check_positive("radius", self.params["radius"])
        elif kind == "gaussian":
            check_positive("amplitude", self.params["amplitude"], strict=False)
            check_positive("width", self.params["width"])
        else:
            r = np.asarray(self.params["r"], dtype=float)
            v = np.asarray(self.params["values"], dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 4:
                raise DomainError("tabulated potential needs matching 1d r and values with >= 4 samples")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise DomainError("tabulated r samples must be nonnegative and strictly increasing")
            if np.any(v < 0):
                i = int(np.argmin(v))
                raise DomainError(f"negative potential sample V({r[i]:g}) = {v[i]:g}")
            self.params["r"], self.params["values"] = r, v
            self._spline = CubicSpline(r, v)
        sup = self.support
        self.r_max = float(r_max) if r_max is not None else (4.0 * sup if sup > 0 else 1.0)
        if strict and self.r_max < 2.0 * sup:
            raise DomainError(f"r_max={self.r_max:g} is below twice the support radius {sup:g}")

    @classmethod
    def square_barrier(cls, height, radius, r_max=None, **kw):
        return cls("square_barrier", {"height": float(height), "radius": float(radius)}, r_max, **kw)

    @classmethod
    def gaussian(cls, amplitude, width, r_max=None, **kw):
        """V(r) = amplitude * exp(-(r/width)^2)."""
        return cls("gaussian", {"amplitude": float(amplitude), "width": float(width)}, r_max, **kw)

    @classmethod
    def tabulated(cls, r, values, r_max=None, **kw):
        return cls("tabulated", {"r": r, "values": values}, r_max, **kw)

    @classmethod
    def zero(cls, radius=1.0):
        return cls.square_barrier(0.0, radius)

    @property
    def is_zero(self):
        if self.kind == "square_barrier":
            return self.params["height"] == 0
        if self.kind == "gaussian":
            return self.params["amplitude"] == 0
        return not np.any(self.params["values"] > 0)

    @property
    def support(self):
        """Radius beyond which V vanishes (or drops below DECAY_FLOOR)."""
        p = self.params
        if self.kind == "square_barrier":
            return p["radius"]
        if self.kind == "gaussian":
            A = p["amplitude"]
            return p["width"] * math.sqrt(math.log(A / DECAY_FLOOR)) if A > DECAY_FLOOR else 0.0
        nz = np.nonzero(p["values"] > 0)[0]
        return float(p["r"][nz[-1]]) if nz.size else 0.0

    @property
    def breakpoints(self):
        if self.kind == "square_barrier":
            return [self.params["radius"]]
        if self.kind == "tabulated":
            return [float(self.params["r"][-1])]
        return []

    def __call__(self, r, side="right"):
        """V at radius r.  At a jump, side='right' gives the outer limit, 'left' the inner one."""
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "square_barrier":
            inside = r <= p["radius"] if side == "left" else r < p["radius"]
            return np.where(inside, p["height"], 0.0)
        if self.kind == "gaussian":
            return p["amplitude"] * np.exp(-((r / p["width"]) ** 2))
        rr, last = p["r"], p["r"][-1]
        val = np.clip(self._spline(np.clip(r, rr[0], last)), 0.0, None)
        outside = r >= last if side == "right" else r > last
        return np.where(outside, 0.0, val)

    def max_value(self):
        p = self.params
        if self.kind == "square_barrier":
            return p["height"]
        if self.kind == "gaussian":
            return p["amplitude"]
        fine = np.linspace(p["r"][0], p["r"][-1], 20 * p["r"].size)
        return float(np.max(self(fine, side="left")))

    def integral(self):
        """Closed-form int_{R^3} V where available, else radial quadrature."""
        p = self.params
        if self.kind == "square_barrier":
            return 4.0 * math.pi / 3.0 * p["height"] * p["radius"] ** 3
        if self.kind == "gaussian":
            return p["amplitude"] * math.pi**1.5 * p["width"] ** 3
        return radial_integral(self)

    def rescaled(self, amp, length):
        """The potential r -> amp * V(r / length)."""
        p = self.params
        rmax = self.r_max * length
        if self.kind == "square_barrier":
            return RadialPotential.square_barrier(amp * p["height"], length * p["radius"], rmax)
        if self.kind == "gaussian":
            return RadialPotential.gaussian(amp * p["amplitude"], length * p["width"], rmax)
        return RadialPotential.tabulated(length * p["r"], amp * p["values"], rmax)

    def to_dict(self):
        p = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, **p, "r_max": self.r_max}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.to_dict().items() if k not in ("r", "values"))
        return f"RadialPotential({args})"


def radial_integral(V, power=2):
    """4 pi int_0^r_max r^power V(r) dr by adaptive quadrature (power=2 gives int_{R^3} V)."""
    pts = [b for b in V.breakpoints if 0 < b < V.r_max]
    val, _ = integrate.quad(lambda r: r**power * float(V(r)), 0.0, V.r_max,
                            points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-12)
    return 4.0 * math.pi * val


@dataclass
class ScatteringSolution:
    r_grid: np.ndarray
    u: np.ndarray
    du: np.ndarray
    w0: np.ndarray
    a0: float
    beta: float
    N: float
    screening: float
    residual: float
    potential: RadialPotential = field(repr=False)

    @property
    def scat(self):
        """Scattering length of the screened potential lam*V (= lam * a0)."""
        return self.screening * self.a0

    def w0_at(self, r):
        r = np.asarray(r, dtype=float)
        inside = np.interp(r, self.r_grid, self.w0)
        return np.where(r > self.r_grid[-1], self.a0 / np.maximum(r, 1e-300), inside)

    def profile(self):
        """f(s) = 1 - lam w0(s) with first and second derivatives."""
        return SplineProfile(self)


def _rk4(qa, qm, qb, h):
    # u'' = q u, u(0)=0, u'(0)=1; qa/qm/qb are q at the start, middle and end of each step
    n = len(qa)
    us = [0.0] * (n + 1)
    ps = [0.0] * (n + 1)
    u, p = 0.0, 1.0
    ps[0] = 1.0
    h2, h6 = 0.5 * h, h / 6.0
    for i in range(n):
        a, b, c = qa[i], qm[i], qb[i]
        k1u, k1p = p, a * u
        k2u, k2p = p + h2 * k1p, b * (u + h2 * k1u)
        k3u, k3p = p + h2 * k2p, b * (u + h2 * k2u)
        k4u, k4p = p + h * k3p, c * (u + h * k3u)
        u += h6 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        p += h6 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        us[i + 1] = u
        ps[i + 1] = p
    return np.array(us), np.array(ps)


def _shoot(V, lam, h, n):
    r = h * np.arange(n)
    qa = (0.5 * lam * V(r, side="right")).tolist()
    qm = (0.5 * lam * V(r + 0.5 * h)).tolist()
    qb = (0.5 * lam * V(r + h, side="left")).tolist()
    return _rk4(qa, qm, qb, h)


def solve_zero_energy(V, N=1, beta=1.0, tol=1e-10, n_support=512, max_refine=8):
    """Solve the screened zero-energy problem; returns a ScatteringSolution.

    Fixed-step RK4 on a grid whose nodes sit on the potential's breakpoints,
    refined by doubling until the Richardson error estimate is below `tol`.
    `residual` is that estimate, relative to max |u|.
    """
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N!r}")
    beta = check_beta(beta)
    lam = float(N) ** (beta - 1.0)
    sup = V.support
    rmax = V.r_max
    if V.is_zero:
        r = np.linspace(0.0, rmax, n_support + 1)
        return ScatteringSolution(r_grid=r, u=r.copy(), du=np.ones_like(r), w0=np.zeros_like(r), a0=0.0,
                                  beta=beta, N=N, screening=lam, residual=0.0, potential=V)

    if sup > 0:
        kappa = math.sqrt(0.5 * lam * V.max_value())
        n_in = max(n_support, int(math.ceil(40 * kappa * sup)))
        unit = sup
    else:
        n_in, unit = n_support, rmax
    if sup > 0 and rmax < 1.5 * sup:
        raise ConvergenceError(f"r_max={rmax:g} too small for tail fit; need r_max >= {2 * sup:g}")

    for _ in range(max_refine):
        h = unit / n_in
        n = int(math.ceil(rmax / h - 1e-9))
        uc, pc = _shoot(V, lam, h, n)
        uf, pf = _shoot(V, lam, 0.5 * h, 2 * n)
        uf, pf = uf[::2], pf[::2]
        scale = max(np.max(np.abs(uf)), 1e-300)
        err = max(np.max(np.abs(uf - uc)), h * np.max(np.abs(pf - pc))) / 15.0 / scale
        if err < tol:
            break
        n_in *= 2
    else:
        raise ConvergenceError(f"radial integrator did not reach tol={tol:g} (estimate {err:.3g})")

    u = uf + (uf - uc) / 15.0
    du = pf + (pf - pc) / 15.0
    r = h * np.arange(n + 1)

    tail = r >= 1.5 * sup
    if sup == 0:
        tail = r >= 0
    if np.count_nonzero(tail) < 10:
        raise ConvergenceError(f"tail fit has too few nodes; need r_max >= {2 * max(sup, rmax):g}")
    c, d = np.polyfit(r[tail], u[tail], 1)
    lin = np.max(np.abs(u[tail] - (c * r[tail] + d))) / scale
    if lin > max(100 * tol, 1e-9):
        raise ConvergenceError(
            f"solution not affine on [{1.5 * sup:g}, {rmax:g}] (deviation {lin:.2e}); "
            f"need r_max >= {2 * rmax:g}")
    u, du = u / c, du / c
    a = -d / c
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(r > 0, u / np.where(r > 0, r, 1.0), du[0])
    w0 = (1.0 - f) / lam
    return ScatteringSolution(r_grid=r, u=u, du=du, w0=w0, a0=a / lam, beta=beta, N=N,
                              screening=lam, residual=float(err), potential=V)


def scattering_length(V, tol=1e-10):
    return solve_zero_energy(V, N=1, beta=1.0, tol=tol).a0


def coupling_constant(V, beta):
    """c0 = int V for beta < 1 and 8 pi a0 for beta = 1."""
    beta = check_beta(beta)
    if beta < 1.0:
        return radial_integral(V)
    return 8.0 * math.pi * scattering_length(V)


class ScanRow(NamedTuple):
    N: float
    beta: float
    value: float
    residual: float


def born_limit_scan(V, beta, N_list, tol=1e-10):
    """Rows (N, beta, 8 pi N scat(N^-1 V_N), solver residual)."""
    beta = check_beta(beta)
    Ns = [float(n) for n in N_list]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise DomainError("N_list must be strictly increasing")
    rows = []
    for n in Ns:
        sol = solve_zero_energy(V, N=n, beta=beta, tol=tol)
        rows.append(ScanRow(n, beta, 8.0 * math.pi * sol.a0, sol.residual))
    return rows


def decay_profile(sol, min_samples=10):
    """Log-log slopes (p_w, p_grad) of w0 and |w0'| outside 1.5x the support."""
    sup = sol.potential.support
    r = sol.r_grid
    ext = r >= 1.5 * sup
    ext &= r > 0
    if np.count_nonzero(ext) < min_samples:
        raise InsufficientDataError(f"exterior region has {np.count_nonzero(ext)} samples, need {min_samples}")
    w = sol.w0[ext]
    dw = np.gradient(sol.w0, r, edge_order=2)[ext]
    if np.any(w <= 0) or np.any(dw == 0):
        raise InsufficientDataError("w0 vanishes on the exterior; no decay to fit")
    lr = np.log(r[ext])
    p_w = np.polyfit(lr, np.log(w), 1)[0]
    p_g = np.polyfit(lr, np.log(np.abs(dw)), 1)[0]
    return float(p_w), float(p_g)


# radial profiles f(s) = 1 - lam w0(s), so that w_N(x) = 1 - f(N^beta |x|)

def _series(x, coeffs):
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x * x + c
    return out


# sinh(x)/x = sum x^2n/(2n+1)!, and its first two derivatives
_S0 = [1.0 / math.factorial(2 * n + 1) for n in range(12)]
_S1 = [(2 * n + 2) / math.factorial(2 * n + 3) for n in range(12)]  # times x
_S2 = [(2 * n + 2) * (2 * n + 1) / math.factorial(2 * n + 3) for n in range(12)]


class ClosedFormProfile:
    """Exact square-barrier solution: f = sinh(k s)/(k s cosh kR) inside, 1 - a/s outside."""

    def __init__(self, height, radius, lam):
        self.R = float(radius)
        self.kappa = math.sqrt(0.5 * lam * height)
        k, R = self.kappa, self.R
        X = k * R
        if k == 0:
            self.a = 0.0
        elif X < 1e-2:
            # X - tanh X without cancellation
            self.a = X**3 * (1 / 3 - X * X * (2 / 15 - X * X * (17 / 315 - X * X * 62 / 2835))) / k
        else:
            self.a = R - math.tanh(X) / k

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        k, R, a = self.kappa, self.R, self.a
        if k == 0:
            return np.ones_like(s) if order == 0 else np.zeros_like(s)
        X = k * R
        x = k * s
        inside = s <= R
        xi = np.where(inside, x, 0.5)
        e = 1.0 + math.exp(-2 * X)
        sc = (np.exp(xi - X) - np.exp(-xi - X)) / e  # sinh(x)/cosh(X)
        cc = (np.exp(xi - X) + np.exp(-xi - X)) / e
        ich = 2.0 * math.exp(-X) / e  # 1/cosh(X)
        small = xi < 0.5
        with np.errstate(divide="ignore", invalid="ignore"):
            if order == 0:
                fin = np.where(small, _series(xi, _S0) * ich, sc / xi)
                fout = 1.0 - a / s
            elif order == 1:
                fin = k * np.where(small, xi * _series(xi, _S1) * ich, (xi * cc - sc) / xi**2)
                fout = a / s**2
            else:
                fin = k * k * np.where(small, _series(xi, _S2) * ich,
                                       (xi * xi * sc - 2 * xi * cc + 2 * sc) / xi**3)
                fout = -2.0 * a / s**3
        return np.where(inside, fin, fout)

    @property
    def scat(self):
        return self.a


class SplineProfile:
    """f from a numerical solution, via a Hermite spline of u with exact nodal slopes."""

    def __init__(self, sol):
        self.sol = sol
        self.lam = sol.screening
        self.a = sol.scat
        self._u = CubicHermiteSpline(sol.r_grid, sol.u, sol.du)
        self._rend = sol.r_grid[-1]
        self._V = sol.potential

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        far = s > self._rend
        sc = np.clip(s, 0, self._rend)
        u = self._u(sc)
        up = self._u(sc, 1)
        tiny = sc < 1e-8
        ss = np.where(tiny, 1.0, sc)
        if order == 0:
            f = np.where(tiny, self.sol.du[0], u / ss)
            return np.where(far, 1.0 - self.a / np.where(far, s, 1), f)
        fp = np.where(tiny, 0.0, (up * ss - u) / ss**2)
        if order == 1:
            return np.where(far, self.a / np.where(far, s, 1) ** 2, fp)
        f = np.where(tiny, self.sol.du[0], u / ss)
        q = 0.5 * self.lam * self._V(sc)
        fpp = np.where(tiny, q * f / 3.0, q * f - 2.0 * fp / ss)
        return np.where(far, -2.0 * self.a / np.where(far, s, 1) ** 3, fpp)

    @property
    def scat(self):
        return self.a


class _UnitProfile:
    a = 0.0
    scat = 0.0

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        return np.ones_like(s) if order == 0 else np.zeros_like(s)


class ScaledPotential:
    """V_N(x) = N^(d beta) V(N^beta x) together with w_N and the dressed potential.

    `d` is the per-particle dimension used for V_N (3, or 1 for the surrogate).
    w_N is always the three-dimensional scattering solution N^(beta-1) w0(N^beta x),
    evaluated on |x|.  With `correlations=False` w_N is identically zero.
    """

    def __init__(self, base, N, beta, d=3, correlations=True, tol=1e-10):
        if N < 1:
            raise DomainError(f"N must be >= 1, got {N!r}")
        if d not in (1, 2, 3):
            raise DomainError(f"d must be 1, 2 or 3, got {d!r}")
        self.base = base
        self.N = N
        self.beta = check_beta(beta)
        self.d = d
        self.correlations = bool(correlations)
        self.tol = tol
        self.scale = float(N) ** self.beta
        self.lam = float(N) ** (self.beta - 1.0)
        self._profile = None

    @property
    def profile(self):
        if self._profile is None:
            b = self.base
            if not self.correlations or b.is_zero:
                self._profile = _UnitProfile()
            elif b.kind == "square_barrier":
                self._profile = ClosedFormProfile(b.params["height"], b.params["radius"], self.lam)
            else:
                self._profile = solve_zero_energy(b, self.N, self.beta, self.tol).profile()
        return self._profile

    @property
    def support(self):
        return self.base.support / self.scale

    def V_N(self, r, side="right"):
        return self.scale**self.d * self.base(self.scale * np.abs(r), side=side)

    def w_N(self, r):
        return 1.0 - self.profile(self.scale * np.abs(np.asarray(r, dtype=float)))

    def dw_N(self, r):
        """Radial derivative of w_N."""
        return -self.scale * self.profile(self.scale * np.abs(np.asarray(r, dtype=float)), 1)

    def d2w_N(self, r):
        return -self.scale**2 * self.profile(self.scale * np.abs(np.asarray(r, dtype=float)), 2)

    def Vt_N(self, r):
        return self.V_N(r) * (1.0 - self.w_N(r))

    def integral(self):
        """int V_N over R^d by quadrature (equals int V in the same dimension)."""
        b = self.base
        pts = [p / self.scale for p in b.breakpoints]
        rmax = b.r_max / self.scale
        if self.d == 3:
            g = lambda r: 4 * math.pi * r * r * float(self.V_N(r))
        elif self.d == 1:
            g = lambda r: 2.0 * float(self.V_N(r))
        else:
            g = lambda r: 2 * math.pi * r * float(self.V_N(r))
        val, _ = integrate.quad(g, 0.0, rmax, points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-12)
        return val

    def base_integral(self):
        """int V over R^d with the unscaled profile."""
        b = self.base
        pts = b.breakpoints
        if self.d == 3:
            return radial_integral(b)
        w = (lambda r: 2.0 * float(b(r))) if self.d == 1 else (lambda r: 2 * math.pi * r * float(b(r)))
        val, _ = integrate.quad(w, 0.0, b.r_max, points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-12)
        return val

    def __repr__(self):
        return f"ScaledPotential({self.base!r}, N={self.N}, beta={self.beta}, d={self.d}, correlations={self.correlations})"
