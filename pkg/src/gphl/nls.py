"""Cubic NLS  i d_t phi = -Delta phi + c0 |phi|^2 phi  on a periodic box, and the ESY / KM functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from ._validation import DomainError, check_count
from .manybody import LatticeGrid


@dataclass
class NLSField:
    grid: LatticeGrid
    phi: np.ndarray
    c0: float
    time: float = 0.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.complex128)
        if self.phi.shape != (self.grid.n,) * self.grid.d:
            raise DomainError(f"phi has shape {self.phi.shape}, grid expects {(self.grid.n,) * self.grid.d}")


def _ksq(grid):
    return grid.kinetic_symbol(1)


def nls_propagate(field, dt, steps):
    """Strang splitting: half free step, exact nonlinear phase exp(-i c0 |phi|^2 dt), half free step."""
    steps = check_count("steps", steps, 0)
    half = np.exp(-0.5j * dt * _ksq(field.grid))
    phi = field.phi
    c = field.c0
    for _ in range(steps):
        phi = sfft.ifftn(half * sfft.fftn(phi))
        phi = np.exp(-1j * dt * c * np.abs(phi) ** 2) * phi
        phi = sfft.ifftn(half * sfft.fftn(phi))
    return NLSField(field.grid, phi, c, field.time + steps * dt)


def nls_trajectory(field, dt, steps, every=10):
    out = [field]
    done = 0
    while done < steps:
        m = min(every, steps - done)
        field = nls_propagate(field, dt, m)
        done += m
        out.append(field)
    return out


def mass(field):
    return float(np.sum(np.abs(field.phi) ** 2)) * field.grid.cell


def _symbol_norm(field, sym):
    g = field.grid
    f = sfft.fftn(field.phi)
    return math.sqrt(float(np.sum(sym**2 * np.abs(f) ** 2)) * g.cell / g.n**g.d)


def energy(field):
    """int |grad phi|^2 + (c0/2) |phi|^4."""
    g = field.grid
    kin = _symbol_norm(field, np.sqrt(_ksq(g))) ** 2
    return kin + 0.5 * field.c0 * float(np.sum(np.abs(field.phi) ** 4)) * g.cell


def bracket_norm(field):
    """|| <grad> phi ||_{L^2}."""
    return _symbol_norm(field, np.sqrt(1.0 + _ksq(field.grid)))


def km_integrand(field):
    """|| |grad| (|phi|^2 phi) ||_{L^2}."""
    cub = NLSField(field.grid, np.abs(field.phi) ** 2 * field.phi, field.c0, field.time)
    return _symbol_norm(cub, np.sqrt(_ksq(field.grid)))


def _check_uniform(traj):
    if len(traj) < 1:
        raise DomainError("empty trajectory")
    ts = np.array([f.time for f in traj])
    if len(ts) > 2 and not np.allclose(np.diff(ts), ts[1] - ts[0], rtol=1e-9, atol=0):
        raise DomainError("snapshots must be uniformly spaced")
    return ts


def km_functional(traj):
    """int_0^T || |grad|(|phi|^2 phi) ||_{L^2} dt by the trapezoid rule."""
    ts = _check_uniform(traj)
    if len(traj) < 2:
        return 0.0
    vals = np.array([km_integrand(f) for f in traj])
    return float(np.trapezoid(vals, ts)) if hasattr(np, "trapezoid") else float(np.trapz(vals, ts))


def esy_functional(traj):
    """sup_t || <grad> phi(t) ||_{L^2} over the snapshots."""
    _check_uniform(traj)
    return max(bracket_norm(f) for f in traj)


class NormRow(NamedTuple):
    t: float
    mass: float
    energy: float
    esy: float
    km_partial: float


def trajectory_table(traj):
    """Rows (t, mass, energy, running esy sup, running km integral)."""
    ts = _check_uniform(traj)
    km_vals = [km_integrand(f) for f in traj]
    rows = []
    acc, sup = 0.0, 0.0
    for i, f in enumerate(traj):
        if i:
            acc += 0.5 * (km_vals[i] + km_vals[i - 1]) * (ts[i] - ts[i - 1])
        sup = max(sup, bracket_norm(f))
        rows.append(NormRow(float(ts[i]), mass(f), energy(f), sup, acc))
    return rows


def plane_wave(grid, mode, amplitude=None):
    """A exp(i xi.x) for the integer lattice mode; unit L^2 norm by default."""
    mode = np.atleast_1d(mode)
    xi = 2 * np.pi * mode / grid.box_length
    ph = 0.0
    for c in range(grid.d):
        shape = [1] * grid.d
        shape[c] = grid.n
        ph = ph + xi[c] * grid.x.reshape(shape)
    if amplitude is None:
        amplitude = grid.box_length ** (-grid.d / 2)
    return amplitude * np.exp(1j * ph) * np.ones((grid.n,) * grid.d), xi


def smooth_datum(grid, rng, modes=3, amplitude=1.0):
    """Random band-limited datum with unit mass, used for ensembles."""
    coef = np.zeros((grid.n,) * grid.d, dtype=complex)
    idx = [slice(None)] * grid.d
    ks = [np.r_[0:modes + 1, grid.n - modes:grid.n] for _ in range(grid.d)]
    sub = np.ix_(*ks)
    coef[sub] = rng.standard_normal(coef[sub].shape) + 1j * rng.standard_normal(coef[sub].shape)
    phi = sfft.ifftn(coef)
    phi = phi / math.sqrt(float(np.sum(np.abs(phi) ** 2)) * grid.cell)
    return amplitude * phi
