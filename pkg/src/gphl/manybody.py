"""Small-N bosonic dynamics on a periodic lattice, marginals, and the dressed hierarchy operators.

Particle labels in the public API start at 1 (x_1, ..., x_k), as in the hierarchy.
A field over N particles has shape (n,)*(d*N) with the axes of particle p at
d*(p-1) ... d*p-1.  An order-k kernel has 2k variables: x_1..x_k then x_1'..x_k'.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from ._validation import (
    DomainError,
    SingularDressingError,
    check_budget,
    check_count,
)

SINGULAR_FLOOR = 1e-6


@dataclass(frozen=True)
class LatticeGrid:
    d: int
    points_per_axis: int
    box_length: float

    def __post_init__(self):
        n = self.points_per_axis
        if self.d not in (1, 2, 3):
            raise DomainError(f"d must be 1, 2 or 3, got {self.d!r}")
        if n not in (8, 16, 32, 64):
            raise DomainError(f"points_per_axis must be a power of two in [8, 64], got {n!r}")
        if not self.box_length > 0:
            raise DomainError("box_length must be positive")

    @property
    def n(self):
        return self.points_per_axis

    @property
    def spacing(self):
        return self.box_length / self.points_per_axis

    @property
    def cell(self):
        """Volume of one cell of the single-particle grid."""
        return self.spacing**self.d

    @property
    def x(self):
        return -0.5 * self.box_length + self.spacing * np.arange(self.n)

    @property
    def xi(self):
        return 2 * np.pi * np.fft.fftfreq(self.n, self.spacing)

    def max_kinetic(self, N):
        return N * self.d * float(np.max(self.xi**2))

    def wrap(self, v):
        L = self.box_length
        return (v + 0.5 * L) % L - 0.5 * L

    # broadcast helpers over a field of `nvars` single-particle variables
    def coord(self, nvars, var, comp=0):
        shape = [1] * (self.d * nvars)
        shape[self.d * var + comp] = self.n
        return self.x.reshape(shape)

    def freq(self, nvars, var, comp=0):
        shape = [1] * (self.d * nvars)
        shape[self.d * var + comp] = self.n
        return self.xi.reshape(shape)

    def disp(self, nvars, a, b):
        """Minimum-image displacement components of variable a minus variable b (0-based)."""
        return [self.wrap(self.coord(nvars, a, c) - self.coord(nvars, b, c)) for c in range(self.d)]

    def dist(self, nvars, a, b):
        return np.sqrt(sum(c * c for c in self.disp(nvars, a, b)))

    def axes(self, var):
        return tuple(range(self.d * var, self.d * var + self.d))

    def kinetic_symbol(self, nvars, vars_=None):
        """|xi|^2 summed over the listed variables (all by default), broadcast shape."""
        vars_ = range(nvars) if vars_ is None else vars_
        out = 0.0
        for v in vars_:
            for c in range(self.d):
                out = out + self.freq(nvars, v, c) ** 2
        return out

    def bracket_symbol(self, nvars, vars_):
        """prod <xi_v> over the listed variables."""
        out = 1.0
        for v in vars_:
            s = 0.0
            for c in range(self.d):
                s = s + self.freq(nvars, v, c) ** 2
            out = out * np.sqrt(1.0 + s)
        return out


@dataclass
class WaveFunction:
    N: int
    grid: LatticeGrid
    amplitudes: np.ndarray
    time: float = 0.0

    def norm(self):
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)) * self.grid.cell**self.N)

    def symmetry_defect(self):
        """Max deviation under adjacent particle transpositions (they generate S_N)."""
        d, a = self.grid.d, self.amplitudes
        worst = 0.0
        for p in range(self.N - 1):
            perm = list(range(a.ndim))
            for c in range(d):
                perm[d * p + c], perm[d * (p + 1) + c] = d * (p + 1) + c, d * p + c
            worst = max(worst, float(np.max(np.abs(a - a.transpose(perm)))))
        return worst

    def copy(self):
        return WaveFunction(self.N, self.grid, self.amplitudes.copy(), self.time)


def _l2(grid, phi):
    return math.sqrt(float(np.sum(np.abs(phi) ** 2)) * grid.cell)


def init_product_state(phi, N, grid):
    """psi = prod_j phi(x_j).  An unnormalized phi is normalized with a warning."""
    N = check_count("N", N)
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.shape != (grid.n,) * grid.d:
        raise DomainError(f"phi has shape {phi.shape}, grid expects {(grid.n,) * grid.d}")
    nrm = _l2(grid, phi)
    if nrm == 0:
        raise DomainError("phi vanishes identically")
    if abs(nrm - 1.0) > 1e-12:
        warnings.warn(f"phi had norm {nrm:.6g}; normalized", RuntimeWarning, stacklevel=2)
        phi = phi / nrm
    check_budget(16 * grid.n ** (grid.d * N), f"{N}-particle wavefunction")
    psi = phi
    for _ in range(N - 1):
        psi = np.multiply.outer(psi, phi)
    return WaveFunction(N, grid, psi, 0.0)


def pair_potential_field(sp, grid, N):
    """(1/N) sum_{i<j} V_N(x_i - x_j) over the N-particle grid."""
    out = np.zeros((grid.n,) * (grid.d * N))
    for i in range(N):
        for j in range(i + 1, N):
            out = out + sp.V_N(grid.dist(N, i, j))
    return out / N


def propagation_bytes(N, grid):
    return 4 * 16 * grid.n ** (grid.d * N)


def propagate(psi, sp, dt, steps, budget=None):
    """Strang split-step: half kinetic, full potential phase, half kinetic."""
    steps = check_count("steps", steps, minimum=0)
    grid, N = psi.grid, psi.N
    check_budget(propagation_bytes(N, grid), f"propagation of {N} particles", budget)
    if dt * grid.max_kinetic(N) >= 0.5:
        warnings.warn(f"dt * max kinetic eigenvalue = {dt * grid.max_kinetic(N):.3g} >= 0.5",
                      RuntimeWarning, stacklevel=2)
    axes = tuple(range(grid.d * N))
    half = np.exp(-0.5j * dt * grid.kinetic_symbol(N))
    phase = np.exp(-1j * dt * pair_potential_field(sp, grid, N))
    a = psi.amplitudes
    for _ in range(steps):
        a = sfft.ifftn(half * sfft.fftn(a, axes=axes), axes=axes)
        a = phase * a
        a = sfft.ifftn(half * sfft.fftn(a, axes=axes), axes=axes)
    return WaveFunction(N, grid, a, psi.time + steps * dt)


def evolve(psi, sp, dt, steps, every=1, budget=None):
    """Snapshots at t0, t0 + every*dt, ..."""
    out = [psi]
    done = 0
    while done < steps:
        m = min(every, steps - done)
        psi = propagate(psi, sp, dt, m, budget)
        done += m
        out.append(psi)
    return out


@dataclass
class MarginalKernel:
    k: int
    grid: LatticeGrid
    kernel: np.ndarray

    @property
    def size(self):
        return self.grid.n ** (self.grid.d * self.k)

    @property
    def matrix(self):
        return self.kernel.reshape(self.size, self.size)

    def trace(self):
        return complex(np.trace(self.matrix)) * self.grid.cell**self.k

    def hermiticity_defect(self):
        m = self.matrix
        return float(np.max(np.abs(m - m.conj().T)))

    def eigenvalues(self):
        m = self.matrix
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T)) * self.grid.cell**self.k

    def partial_trace(self):
        """Trace out x_k; returns the order k-1 kernel."""
        if self.k < 1:
            raise DomainError("nothing left to trace out")
        m, s = self.grid.n ** self.grid.d, self.grid.n ** (self.grid.d * (self.k - 1))
        red = np.einsum("ayby->ab", self.kernel.reshape(s, m, s, m)) * self.grid.cell
        return MarginalKernel(self.k - 1, self.grid, red.reshape((self.grid.n,) * (2 * self.grid.d * (self.k - 1))))

    def hs_norm(self):
        return math.sqrt(float(np.sum(np.abs(self.kernel) ** 2))) * self.grid.cell**self.k


def marginal(psi, k, budget=None):
    """gamma^(k)(x; x') = sum_y psi(x, y) conj psi(x', y) * cell^(N-k)."""
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= psi.N):
        raise DomainError(f"marginal order must be in 1..{psi.N}, got {k!r}")
    g = psi.grid
    A = g.n ** (g.d * k)
    check_budget(2 * 16 * A * A + 16 * psi.amplitudes.size, f"order-{k} marginal", budget)
    a = psi.amplitudes.reshape(A, -1)
    gam = (a @ a.conj().T) * g.cell ** (psi.N - k)
    return MarginalKernel(k, g, gam.reshape((g.n,) * (2 * g.d * k)))


def product_kernel(phi, k, grid):
    """prod_j phi(x_j) conj phi(x_j') with axes x_1..x_k, x_1'..x_k'."""
    phi = np.asarray(phi, dtype=np.complex128)
    k = check_count("k", k)
    out = phi
    for _ in range(k - 1):
        out = np.multiply.outer(out, phi)
    return np.multiply.outer(out, out.conj())


def chaos_distance(gamma_k, phi):
    """Hilbert-Schmidt norm of gamma^(k) - prod |phi><phi| (phi assumed normalized)."""
    g, k = gamma_k.grid, gamma_k.k
    diff = gamma_k.kernel - product_kernel(phi, k, g)
    return math.sqrt(float(np.sum(np.abs(diff) ** 2))) * g.cell**k


# ---- dressing ---------------------------------------------------------------

def dressing_field(sp, grid, k, nvars=None, offset=0, check=True):
    """G^(k) = prod_{i<j} (1 - w_N(x_i - x_j)) over variables offset..offset+k-1."""
    nvars = k if nvars is None else nvars
    G = np.ones((1,) * (grid.d * nvars))
    for i in range(k):
        for j in range(i + 1, k):
            r = grid.dist(nvars, offset + i, offset + j)
            f = 1.0 - sp.w_N(r)
            if check:
                _check_singular(f, r)
            G = G * f
    return np.broadcast_to(G, (grid.n,) * (grid.d * nvars)) if G.ndim else G


def _check_singular(f, r):
    bad = f < SINGULAR_FLOOR
    if np.any(bad):
        rr = np.broadcast_to(r, np.shape(f))[bad]
        raise SingularDressingError(f"1 - w_N = {float(np.min(f)):.3g} < {SINGULAR_FLOOR} at pair distance {float(rr.flat[0]):.6g}")


@dataclass
class DressedMarginal:
    k: int
    grid: LatticeGrid
    kernel: np.ndarray
    G: np.ndarray = field(repr=False)

    def undress(self):
        Gx, Gy = self._GG()
        return MarginalKernel(self.k, self.grid, self.kernel * Gx * Gy)

    def _GG(self):
        d, k = self.grid.d, self.k
        Gx = self.G.reshape(self.G.shape + (1,) * (d * k))
        Gy = self.G.reshape((1,) * (d * k) + self.G.shape)
        return Gx, Gy


def dress(gamma, sp):
    """alpha^(k) = gamma^(k) / (G^(k)(x) G^(k)(x'))."""
    g, k = gamma.grid, gamma.k
    G = np.array(dressing_field(sp, g, k), dtype=float)
    out = DressedMarginal(k, g, gamma.kernel, G)
    Gx, Gy = out._GG()
    out.kernel = gamma.kernel / (Gx * Gy)
    return out


class DressingGap:
    """Multiplier norm of the one-pair dressing minus one, and the full order-k bound."""

    def __init__(self, gap):
        self.gap = float(gap)

    def bound(self, k):
        return (1.0 + self.gap) ** (k * (k - 1)) - 1.0

    def __float__(self):
        return self.gap

    def __repr__(self):
        return f"DressingGap({self.gap:.6g})"


def dressing_gap(sp, grid=None, samples=4001):
    """max |w_N / (1 - w_N)| over a radial scan (and over grid pair distances if given)."""
    rmax = 2.0 * max(sp.support, 1e-300)
    r = np.linspace(0.0, rmax, samples)
    if grid is not None:
        r = np.concatenate([r, np.unique(np.abs(grid.wrap(grid.x - grid.x[0])))])
    w = sp.w_N(r)
    f = 1.0 - w
    _check_singular(f, r)
    return DressingGap(float(np.max(np.abs(w / f))))


# ---- pair geometry shared by grid and pointwise evaluation --------------------

def _grad_pair(sp, disp):
    """grad_{x_a} G_ab and G_ab for a displacement x_a - x_b (list of components)."""
    r = np.sqrt(sum(c * c for c in disp))
    dw = sp.dw_N(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(r > 0, -dw / np.where(r > 0, r, 1.0), 0.0)
    return [s * c for c in disp], 1.0 - sp.w_N(r)


def A_multiplier(sp, disp_li, disp_lj):
    """-(grad_l G_li . grad_l G_lj) / (G_li G_lj) from displacements x_l - x_i and x_l - x_j."""
    gi, Gi = _grad_pair(sp, disp_li)
    gj, Gj = _grad_pair(sp, disp_lj)
    _check_singular(Gi, 0.0)
    _check_singular(Gj, 0.0)
    return -sum(a * b for a, b in zip(gi, gj)) / (Gi * Gj)


def _kernel_order(alpha, grid):
    k2 = alpha.ndim // grid.d
    if k2 % 2 or alpha.shape != (grid.n,) * alpha.ndim:
        raise DomainError(f"kernel shape {alpha.shape} does not match the grid")
    return k2 // 2


def _kernel_array(alpha):
    if isinstance(alpha, (MarginalKernel, DressedMarginal)):
        return alpha.kernel, alpha.grid
    raise DomainError("expected a MarginalKernel or DressedMarginal")


def _labels(k, *idx):
    for i in idx:
        if not (1 <= i <= k):
            raise DomainError(f"particle label {i} outside 1..{k}")
    if len(set(idx)) != len(idx):
        raise DomainError(f"labels {idx} must be distinct")


def apply_A(alpha, i, j, l, sp, primed=False):
    """One term of A_N^(k): multiply by -(grad_l G_li . grad_l G_lj)/(G_li G_lj)."""
    a, g = _kernel_array(alpha)
    k = _kernel_order(a, g)
    _labels(k, i, j, l)
    off = k if primed else 0
    nv = 2 * k
    m = A_multiplier(sp, g.disp(nv, off + l - 1, off + i - 1), g.disp(nv, off + l - 1, off + j - 1))
    return m * a


def spectral_grad(a, grid, var):
    """Gradient of a field along the d axes of variable `var` (0-based), Nyquist mode dropped."""
    nv = a.ndim // grid.d
    out = []
    xi = grid.xi.copy()
    if grid.n % 2 == 0:
        xi[grid.n // 2] = 0.0
    for c in range(grid.d):
        ax = grid.d * var + c
        shape = [1] * a.ndim
        shape[ax] = grid.n
        out.append(sfft.ifft(1j * xi.reshape(shape) * sfft.fft(a, axis=ax), axis=ax))
    return out


def apply_E(alpha, j, l, sp, primed=False):
    """One term of E_N^(k): 2 (grad_l G_jl / G_jl) . grad_l alpha."""
    a, g = _kernel_array(alpha)
    k = _kernel_order(a, g)
    _labels(k, j, l)
    off = k if primed else 0
    nv = 2 * k
    gr, G = _grad_pair(sp, g.disp(nv, off + l - 1, off + j - 1))
    _check_singular(G, 0.0)
    da = spectral_grad(a, g, off + l - 1)
    return 2.0 * sum(c * dc for c, dc in zip(gr, da)) / G


# ---- collapsing operators ---------------------------------------------------

def _collapse_weights(sp, g, k, l, which):
    """Potential kernels on (x, y) and (x', y) with y = x_{k+1}, flattened to (A, m)."""
    pot = sp.Vt_N if which in ("tilde", "many") else sp.V_N
    nv = k + 1
    W = pot(g.dist(nv, l - 1, k))
    W = np.broadcast_to(W, (g.n,) * (g.d * nv))
    return W.reshape(g.n ** (g.d * k), g.n**g.d)


def L_field(sp, g, k, l, side="unprimed"):
    """L_{N,l,k+1} (or its primed version) on (x, y, x'), summed from the expand_L monomials."""
    from .boardgame import expand_L

    nv = 2 * k + 1  # x_1..x_k, y, x_1'..x_k'
    var = lambda idx, primed: (k + 1 + idx - 1) if primed else (idx - 1)
    w_cache = {}
    total = np.zeros((1,) * (g.d * nv))
    for mono in expand_L(k, l, side=side):
        term = np.full((1,) * (g.d * nv), float(mono.sign))
        for idx, primed in mono.factors:
            key = (idx, primed)
            if key not in w_cache:
                w_cache[key] = sp.w_N(g.dist(nv, var(idx, primed), k))
            term = term * w_cache[key]
        total = total + term
    return np.broadcast_to(total, (g.n,) * (g.d * nv))


def apply_B_collapse(alpha_kplus1, l, sp, variant="plain", budget=None):
    """(N-k)/N int (U(x_l - y) - U(x_l' - y)) [L] alpha(x, y; x', y) dy.

    plain: U = V_N.  tilde: U = V_N (1 - w_N).  many: tilde weights times L_l (resp. L_l').
    """
    if variant not in ("plain", "tilde", "many"):
        raise DomainError(f"variant must be plain, tilde or many, got {variant!r}")
    a, g = _kernel_array(alpha_kplus1)
    k = _kernel_order(a, g) - 1
    if k < 1:
        raise DomainError("collapse needs a kernel of order >= 2")
    _labels(k, l)
    A, m = g.n ** (g.d * k), g.n**g.d
    check_budget(16 * (4 * A * m * A), "collapsing operator", budget)
    D = np.einsum("iyjy->iyj", a.reshape(A, m, A, m))
    W1 = _collapse_weights(sp, g, k, l, variant)
    pref = (sp.N - k) / sp.N * g.cell
    if variant == "many":
        L1 = L_field(sp, g, k, l, "unprimed").reshape(A, m, A)
        L2 = L_field(sp, g, k, l, "primed").reshape(A, m, A)
        out = np.einsum("iy,iyj->ij", W1, L1 * D) - np.einsum("jy,iyj->ij", W1, L2 * D)
    else:
        out = np.einsum("iy,iyj->ij", W1, D) - np.einsum("jy,iyj->ij", W1, D)
    out = pref * out
    res = out.reshape((g.n,) * (2 * g.d * k))
    if isinstance(alpha_kplus1, DressedMarginal):
        return res
    return MarginalKernel(k, g, res)


def b_decomposition_residual(alpha_kplus1, l, sp):
    """Relative mismatch of W^(k) B (W^(k+1))^-1 alpha against B_many + B_tilde."""
    a, g = _kernel_array(alpha_kplus1)
    k = _kernel_order(a, g) - 1
    G1 = np.array(dressing_field(sp, g, k + 1), dtype=float)
    d = g.d
    undressed = a * G1.reshape(G1.shape + (1,) * (d * (k + 1))) * G1.reshape((1,) * (d * (k + 1)) + G1.shape)
    direct = apply_B_collapse(MarginalKernel(k + 1, g, undressed), l, sp, "plain").kernel
    G0 = np.array(dressing_field(sp, g, k), dtype=float)
    direct = direct / (G0.reshape(G0.shape + (1,) * (d * k)) * G0.reshape((1,) * (d * k) + G0.shape))
    wrapped = MarginalKernel(k + 1, g, a)
    split = apply_B_collapse(wrapped, l, sp, "many").kernel + apply_B_collapse(wrapped, l, sp, "tilde").kernel
    scale = float(np.max(np.abs(direct)))
    return float(np.max(np.abs(direct - split))) / scale if scale > 0 else float(np.max(np.abs(split)))


# ---- pointwise identities in R^(3k) -----------------------------------------

class SmoothPairFactor:
    """Generic positive radial pair factor g(r) = 1 - c exp(-(r/width)^2)."""

    def __init__(self, c=0.3, width=1.0):
        if not (0 <= c < 1):
            raise DomainError("c must lie in [0, 1) to keep g positive")
        self.c, self.width = float(c), float(width)

    def __call__(self, r, order=0):
        r = np.asarray(r, dtype=float)
        s = self.width
        e = np.exp(-((r / s) ** 2))
        if order == 0:
            return 1.0 - self.c * e
        if order == 1:
            return 2.0 * self.c * r / s**2 * e
        return 2.0 * self.c / s**2 * e * (1.0 - 2.0 * r * r / s**2)


class _SPFactor:
    """G = 1 - w_N as a radial pair factor with exact derivatives."""

    def __init__(self, sp):
        self.sp = sp

    def __call__(self, r, order=0):
        if order == 0:
            return 1.0 - self.sp.w_N(r)
        if order == 1:
            return -self.sp.dw_N(r)
        return -self.sp.d2w_N(r)


def _pair_terms(factor, X, a, b):
    """For the pair (a, b) of configs X (M, k, 3): value, gradient wrt x_a, 3D Laplacian."""
    D = X[:, a, :] - X[:, b, :]
    r = np.sqrt(np.sum(D * D, axis=-1))
    f0, f1, f2 = factor(r, 0), factor(r, 1), factor(r, 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r[:, None] > 0, D / np.where(r > 0, r, 1.0)[:, None], 0.0)
        lap = f2 + np.where(r > 0, 2.0 * f1 / np.where(r > 0, r, 1.0), 3.0 * f2)
    return f0, f1[:, None] * u, lap


def _product_rule_laplacian(factor, X, l):
    """Delta_{x_l} prod_{p<q} F(x_p - x_q), by the generic product rule over all factor pairs."""
    M, k, _ = X.shape
    pairs = [(p, q) for p in range(k) for q in range(p + 1, k)]
    vals, grads, laps = [], [], []
    for p, q in pairs:
        f0, g, lap = _pair_terms(factor, X, p, q)
        if l == p:
            gl, ll = g, lap
        elif l == q:
            gl, ll = -g, lap
        else:
            gl, ll = np.zeros_like(g), np.zeros_like(lap)
        vals.append(f0)
        grads.append(gl)
        laps.append(ll)
    out = np.zeros(M)
    P = len(pairs)
    for s in range(P):
        others = np.prod([vals[t] for t in range(P) if t != s], axis=0) if P > 1 else 1.0
        out = out + laps[s] * others
        for t in range(P):
            if t == s:
                continue
            rest = np.prod([vals[u] for u in range(P) if u not in (s, t)], axis=0) if P > 2 else 1.0
            out = out + np.sum(grads[s] * grads[t], axis=-1) * rest
    return out, np.prod(vals, axis=0) if P else np.ones(M)


def _three_body_sum(factor, X, l):
    """sum over ordered i != j, both != l, of grad_l F_li . grad_l F_lj / (F_li F_lj)."""
    M, k, _ = X.shape
    others = [i for i in range(k) if i != l]
    logs = {}
    for i in others:
        f0, g, _ = _pair_terms(factor, X, l, i)
        logs[i] = g / f0[:, None]
    out = np.zeros(M)
    for i in others:
        for j in others:
            if i != j:
                out = out + np.sum(logs[i] * logs[j], axis=-1)
    return out


def wave_operator_identity_residual(sp, k, configs, g=None):
    """Max relative residual of the wave-operator identity at the configs (M, k, 3).

    Without `g`: H_N^(k) G = -G sum_l sum_{i != j != l} grad G_li . grad G_lj / (G_li G_lj),
    where the left side uses the product-rule Laplacian of G and the exact w_N''.
    With a radial factor `g` (callable g(r, order)): the Leibniz form of -Delta_l log-type
    identity before the scattering equation is used.
    """
    X = np.asarray(configs, dtype=float)
    if X.ndim != 3 or X.shape[1] != k or X.shape[2] != 3:
        raise DomainError(f"configs must have shape (M, {k}, 3)")
    if g is not None:
        worst = 0.0
        for l in range(k):
            lapG, G = _product_rule_laplacian(g, X, l)
            lhs = -lapG / G
            rhs = np.zeros(X.shape[0])
            for j in range(k):
                if j == l:
                    continue
                f0, _, lap = _pair_terms(g, X, l, j)
                rhs = rhs - lap / f0
            rhs = rhs - _three_body_sum(g, X, l)
            scale = np.maximum(np.abs(lhs), np.abs(rhs))
            scale = np.where(scale > 0, scale, 1.0)
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
        return worst
    F = _SPFactor(sp)
    kin = np.zeros(X.shape[0])
    G = None
    for l in range(k):
        lap, G = _product_rule_laplacian(F, X, l)
        kin = kin - lap
    if G is None or k < 2:
        return 0.0
    pot = np.zeros(X.shape[0])
    for i in range(k):
        for j in range(i + 1, k):
            r = np.linalg.norm(X[:, i] - X[:, j], axis=-1)
            pot = pot + sp.V_N(r)
    pot = pot / sp.N * G
    rhs = np.zeros(X.shape[0])
    for l in range(k):
        rhs = rhs - G * _three_body_sum(F, X, l)
    lhs = kin + pot
    scale = np.maximum.reduce([np.abs(kin), np.abs(pot), np.abs(rhs)])
    res = np.where(scale > 0, np.abs(lhs - rhs) / np.where(scale > 0, scale, 1.0), 0.0)
    return float(np.max(res))


def random_configs(sp, k, count, rng, box=None, margin=2e-3):
    """Uniform 3D configs in a cube, resampled away from the barrier shell."""
    R = sp.support if sp.support > 0 else 1.0
    box = 2.0 * R if box is None else box
    out = []
    while len(out) < count:
        X = rng.uniform(-0.5 * box, 0.5 * box, size=(k, 3))
        ok = True
        for i in range(k):
            for j in range(i + 1, k):
                r = np.linalg.norm(X[i] - X[j])
                if abs(r - R) < margin * R or r < margin * R:
                    ok = False
        if ok:
            out.append(X)
    return np.array(out)


# ---- BBGKY residual, energy functionals, metrics -----------------------------

def _apply_symbol(a, sym):
    return sfft.ifftn(sym * sfft.fftn(a))


def kinetic_commutator(gamma):
    """[-Delta, gamma] as a kernel."""
    g, k = gamma.grid, gamma.k
    nv = 2 * k
    sym = g.kinetic_symbol(nv, range(k)) - g.kinetic_symbol(nv, range(k, 2 * k))
    return _apply_symbol(gamma.kernel, sym)


def pair_commutator(gamma, sp):
    """(1/N) sum_{i<j<=k} [V_N(x_i - x_j), gamma]."""
    g, k = gamma.grid, gamma.k
    nv = 2 * k
    m = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            m = m + sp.V_N(g.dist(nv, i, j)) - sp.V_N(g.dist(nv, k + i, k + j))
    return m / sp.N * gamma.kernel


def bbgky_residual(trajectory, k, sp):
    """Relative Frobenius mismatch of the ordinary hierarchy along snapshots at uniform dt."""
    if len(trajectory) < 3:
        raise DomainError("need at least 3 snapshots for a centered time derivative")
    ts = np.array([p.time for p in trajectory])
    dts = np.diff(ts)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise DomainError("snapshots must be uniformly spaced in time")
    dt = dts[0]
    N = trajectory[0].N
    if not (1 <= k < N):
        raise DomainError(f"k must satisfy 1 <= k < N={N}")
    worst = 0.0
    for n in range(1, len(trajectory) - 1):
        gm, g0, gp = (marginal(trajectory[n + s], k) for s in (-1, 0, 1))
        g1 = marginal(trajectory[n], k + 1)
        dtterm = 1j * (gp.kernel - gm.kernel) / (2 * dt)
        kin = kinetic_commutator(g0)
        pair = pair_commutator(g0, sp)
        coll = 0.0
        for j in range(1, k + 1):
            coll = coll + apply_B_collapse(g1, j, sp, "plain").kernel
        mis = dtterm - kin - pair - coll
        big = max(np.linalg.norm(t) for t in (dtterm, kin, pair, np.asarray(coll)) if np.ndim(t))
        worst = max(worst, float(np.linalg.norm(mis) / big))
    return worst


def energy_functional(alpha, k=None):
    """(Tr S^(k) alpha, Tr S_1 S_1' S^(k) alpha) with S_j = <grad_{x_j}>."""
    a, g = _kernel_array(alpha)
    kk = _kernel_order(a, g)
    if k is not None and k != kk:
        raise DomainError(f"kernel has order {kk}, not {k}")
    nv = 2 * kk
    S = g.bracket_symbol(nv, range(nv))
    S1 = g.bracket_symbol(nv, [0, kk])
    A = g.n ** (g.d * kk)
    out = []
    for sym in (S, S * S1):
        b = _apply_symbol(a, sym).reshape(A, A)
        out.append(float(np.real(np.trace(b))) * g.cell**kk)
    return tuple(out)


@lru_cache(maxsize=8)
def _dk_family(shape, A, I, seed, cell):
    rng = np.random.default_rng(seed)
    fam = []
    for _ in range(I):
        z = rng.standard_normal((A, A)) + 1j * rng.standard_normal((A, A))
        h = 0.5 * (z + z.conj().T)
        h = h / (np.linalg.norm(h) * cell)  # HS norm of the operator is 1, so op norm <= 1
        fam.append(h.reshape(shape))
    return tuple(fam)


def dk_metric(gamma, gamma_tilde, family_size=16, seed=20240101):
    """sum_i 2^-i |<J_i, gamma - gamma~>| over a fixed-seed Hermitian family in the HS unit ball."""
    g, k = gamma.grid, gamma.k
    A = g.n ** (g.d * k)
    cell = g.cell**k
    fam = _dk_family(gamma.kernel.shape, A, int(family_size), int(seed), cell)
    diff = gamma.kernel - gamma_tilde.kernel
    total = 0.0
    for i, J in enumerate(fam, start=1):
        total += 2.0**-i * abs(np.vdot(J, diff)) * cell * cell
    return total


def dk_truncation_bound(gamma, gamma_tilde, family_size):
    """Upper bound on the dropped terms i > I: 2^-I ||gamma - gamma~||_HS."""
    d = MarginalKernel(gamma.k, gamma.grid, gamma.kernel - gamma_tilde.kernel)
    return 2.0 ** -family_size * d.hs_norm()


# ---- file formats -----------------------------------------------------------

CHECKPOINT_MAGIC = b"GPHL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd")


def write_checkpoint(path, psi):
    g = psi.grid
    head = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, psi.N, g.d, g.n, g.box_length, psi.time)
    body = np.ascontiguousarray(psi.amplitudes, dtype="<c8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DomainError(f"{path}: truncated checkpoint header")
    magic, ver, N, d, n, L, t = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise DomainError(f"{path}: bad magic {magic!r}")
    if ver != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {ver}")
    grid = LatticeGrid(d, n, L)
    count = n ** (d * N)
    body = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if body.size != count:
        raise DomainError(f"{path}: expected {count} amplitudes, found {body.size}")
    return WaveFunction(N, grid, body.astype(np.complex128).reshape((n,) * (d * N)), t)


def write_marginal_csv(path, gamma):
    import csv

    flat = gamma.kernel.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re", "im"])
        for i, z in enumerate(flat):
            w.writerow([i, repr(float(z.real)), repr(float(z.imag))])


def read_marginal_csv(path, k, grid):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    z = data[:, 1] + 1j * data[:, 2]
    return MarginalKernel(k, grid, z.reshape((grid.n,) * (2 * grid.d * k)))
