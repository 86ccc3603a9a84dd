import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gphl._validation import DomainError, MemoryBudgetError, SingularDressingError
from gphl.manybody import (
    DressingGap,
    LatticeGrid,
    MarginalKernel,
    WaveFunction,
    chaos_distance,
    dk_metric,
    dk_truncation_bound,
    dress,
    dressing_gap,
    evolve,
    init_product_state,
    marginal,
    product_kernel,
    propagate,
    read_checkpoint,
    read_marginal_csv,
    write_checkpoint,
    write_marginal_csv,
)
from gphl.scattering import RadialPotential, ScaledPotential

G1 = LatticeGrid(1, 16, 2 * math.pi)


def datum(grid, shift=0.0):
    x = grid.x
    phi = np.exp(1j * np.cos(x + shift)) * (1 + 0.5 * np.cos(x))
    return phi / math.sqrt(float(np.sum(np.abs(phi) ** 2)) * grid.cell)


def random_state(grid, N, rng):
    a = rng.standard_normal((grid.n,) * N) + 1j * rng.standard_normal((grid.n,) * N)
    # symmetrize
    import itertools
    a = sum(a.transpose(p) for p in itertools.permutations(range(N)))
    a = a / math.sqrt(float(np.sum(np.abs(a) ** 2)) * grid.cell**N)
    return WaveFunction(N, grid, a)


def test_grid_validation():
    with pytest.raises(DomainError):
        LatticeGrid(1, 12, 1.0)
    with pytest.raises(DomainError):
        LatticeGrid(4, 8, 1.0)


def test_product_state_normalizes_with_warning():
    with pytest.warns(RuntimeWarning):
        psi = init_product_state(2 * datum(G1), 2, G1)
    assert psi.norm() == pytest.approx(1.0, abs=1e-13)
    assert psi.symmetry_defect() < 1e-15


def test_budget_refusal(monkeypatch):
    monkeypatch.setenv("GPHL_MEM_BUDGET_BYTES", "1000")
    with pytest.raises(MemoryBudgetError):
        init_product_state(datum(G1), 3, G1)


def test_propagation_preserves_norm_and_symmetry(rng):
    sp = ScaledPotential(RadialPotential.gaussian(2, 1), 3, 0.5, d=1)
    psi = random_state(G1, 3, rng)
    out = propagate(psi, sp, 1e-3, 50)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert out.symmetry_defect() < 1e-12
    assert out.time == pytest.approx(0.05)


def test_free_product_stays_product():
    sp = ScaledPotential(RadialPotential.zero(), 3, 0.5, d=1)
    phi = datum(G1)
    psi = propagate(init_product_state(phi, 3, G1), sp, 1e-3, 100)
    from scipy import fft
    phit = fft.ifft(np.exp(-1j * 0.1 * G1.xi**2) * fft.fft(phi))
    assert chaos_distance(marginal(psi, 1), phit) < 1e-12


def test_marginal_properties(rng):
    psi = random_state(G1, 3, rng)
    g2 = marginal(psi, 2)
    assert g2.trace().real == pytest.approx(1.0, abs=1e-12)
    assert g2.hermiticity_defect() < 1e-13
    assert np.min(g2.eigenvalues()) > -1e-12
    g1 = marginal(psi, 1)
    assert np.max(np.abs(g2.partial_trace().kernel - g1.kernel)) < 1e-12


def test_marginal_order_checked(rng):
    psi = random_state(G1, 2, rng)
    with pytest.raises(DomainError):
        marginal(psi, 3)


def test_product_marginal_is_product_kernel():
    phi = datum(G1)
    psi = init_product_state(phi, 3, G1)
    for k in (1, 2):
        assert np.max(np.abs(marginal(psi, k).kernel - product_kernel(phi, k, G1))) < 1e-14
    assert chaos_distance(marginal(psi, 1), phi) < 1e-14


def test_evolve_snapshots():
    sp = ScaledPotential(RadialPotential.zero(), 2, 0.5, d=1)
    tr = evolve(init_product_state(datum(G1), 2, G1), sp, 1e-3, 10, every=4)
    assert [round(p.time, 6) for p in tr] == [0.0, 0.004, 0.008, 0.01]


def test_checkpoint_roundtrip(tmp_path, rng):
    psi = random_state(G1, 2, rng)
    path = tmp_path / "psi.ckpt"
    write_checkpoint(path, psi)
    back = read_checkpoint(path)
    assert back.N == 2 and back.grid == G1
    # complex64 storage
    assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-6 * np.max(np.abs(psi.amplitudes))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DomainError, match="magic"):
        read_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(DomainError):
        read_checkpoint(path)


def test_marginal_csv_roundtrip(tmp_path, rng):
    g = marginal(random_state(G1, 2, rng), 1)
    write_marginal_csv(tmp_path / "g.csv", g)
    back = read_marginal_csv(tmp_path / "g.csv", 1, G1)
    assert np.array_equal(back.kernel, g.kernel)


def test_dress_roundtrip(rng):
    sp = ScaledPotential(RadialPotential.square_barrier(2, 1), 10, 0.5, d=1)
    g = marginal(random_state(G1, 3, rng), 2)
    assert np.max(np.abs(dress(g, sp).undress().kernel - g.kernel)) < 1e-14


def test_dress_with_zero_w_is_identity(rng):
    sp = ScaledPotential(RadialPotential.zero(), 10, 0.5, d=1)
    g = marginal(random_state(G1, 3, rng), 2)
    assert np.array_equal(dress(g, sp).kernel, g.kernel)


def test_dressing_gap_closed_form_and_scaling():
    V = RadialPotential.square_barrier(2, 1)
    gap = dressing_gap(ScaledPotential(V, 100, 0.5))
    assert float(gap) == pytest.approx(math.cosh(math.sqrt(0.1)) - 1, rel=1e-10)
    big = dressing_gap(ScaledPotential(V, 1e4, 0.5))
    # gap ~ N^(beta-1) for small coupling
    assert float(big) / float(gap) == pytest.approx(0.1, rel=0.02)
    assert DressingGap(0.1).bound(3) == pytest.approx(1.1**6 - 1)


def test_singular_dressing_refused():
    # a huge barrier at beta=1 drives 1 - w_N to ~0 at the origin
    sp = ScaledPotential(RadialPotential.square_barrier(5000.0, 1.0), 1, 1.0, d=1)
    with pytest.raises(SingularDressingError):
        dressing_gap(sp)


def test_dk_metric(rng):
    a = marginal(random_state(G1, 2, rng), 1)
    b = marginal(random_state(G1, 2, rng), 1)
    assert dk_metric(a, a) == 0
    assert dk_metric(a, b) == pytest.approx(dk_metric(b, a))
    # each test operator has HS norm 1, so the sum is at most ||a - b||_HS
    diff = MarginalKernel(1, G1, a.kernel - b.kernel).hs_norm()
    assert dk_metric(a, b) <= diff
    assert dk_truncation_bound(a, b, 16) == pytest.approx(2.0**-16 * diff)


@given(st.integers(0, 2**31 - 1))
def test_dk_triangle(seed):
    r = np.random.default_rng(seed)
    a, b, c = (marginal(random_state(G1, 2, r), 1) for _ in range(3))
    assert dk_metric(a, c) <= dk_metric(a, b) + dk_metric(b, c) + 1e-15
