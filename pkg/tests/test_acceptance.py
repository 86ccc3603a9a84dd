"""Acceptance suite: one reported line per criterion, at the stated tolerances and runtimes."""

import itertools
import json
import math
import time
import warnings

import numpy as np
import pytest

from gphl import boardgame as bg
from gphl import estimates as est
from gphl import manybody as mb
from gphl import nls
from gphl.cli import EXPERIMENTS, main
from gphl.scattering import RadialPotential, ScaledPotential, born_limit_scan, solve_zero_energy

SQ = RadialPotential.square_barrier(2.0, 1.0)


def clock():
    t0 = time.perf_counter()
    return lambda: time.perf_counter() - t0


def test_c01_scattering_closed_form(accept):
    el = clock()
    sol = solve_zero_energy(SQ, N=1, beta=1.0)
    a_err = abs(sol.a0 - (1 - math.tanh(1))) / (1 - math.tanh(1))
    w_err = abs(sol.w0[0] - (1 - 1 / math.cosh(1)))
    t = el()
    accept(1, "scattering closed form", a_err < 1e-6 and w_err < 1e-6 and t < 1,
           f"a0 rel err {a_err:.2e}, w0(0) err {w_err:.2e}, {t:.2f}s")


def test_c02_coupling_dichotomy(accept):
    el = clock()
    target = 8 * math.pi / 3
    half = born_limit_scan(SQ, 0.5, [1e2, 1e4, 1e6])
    gaps = [abs(r.value - target) / target for r in half]
    one = born_limit_scan(SQ, 1.0, [1e2, 1e4, 1e6])
    exact = 8 * math.pi * (1 - math.tanh(1))
    dev = max(abs(r.value - exact) for r in one)
    t = el()
    ok = gaps[0] > gaps[1] > gaps[2] and dev < 1e-10 and t < 10
    accept(2, "coupling dichotomy", ok,
           f"beta=0.5 gaps {', '.join(f'{g:.2e}' for g in gaps)}; beta=1 max dev {dev:.1e}; {t:.2f}s")


def test_c03_wave_operator_identity(accept):
    el = clock()
    rng = np.random.default_rng(3)
    worst = 0.0
    for N, beta in [(1000, 0.5), (100, 1.0)]:
        sp = ScaledPotential(SQ, N, beta)
        X = mb.random_configs(sp, 3, 100, rng)
        worst = max(worst, mb.wave_operator_identity_residual(sp, 3, X))
    t = el()
    accept(3, "wave-operator identity", worst < 1e-10 and t < 5, f"k=3, 100 configs, max rel residual {worst:.2e}; {t:.2f}s")


def _random_kernel(grid, k, rng):
    shape = (grid.n,) * (2 * grid.d * k)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    A = grid.n ** (grid.d * k)
    m = a.reshape(A, A)
    return mb.MarginalKernel(k, grid, (0.5 * (m + m.conj().T)).reshape(shape))


def test_c04_b_conjugation(accept):
    el = clock()
    rng = np.random.default_rng(4)
    g = mb.LatticeGrid(1, 8, 2 * math.pi)
    worst = 0.0
    for k in (1, 2):
        sp = ScaledPotential(SQ, 20, 0.3, d=1)
        alpha = _random_kernel(g, k + 1, rng)
        for l in range(1, k + 1):
            worst = max(worst, mb.b_decomposition_residual(alpha, l, sp))
    sp0 = ScaledPotential(SQ, 20, 0.3, d=1, correlations=False)
    many0 = float(np.max(np.abs(mb.apply_B_collapse(_random_kernel(g, 3, rng), 1, sp0, "many").kernel)))
    t = el()
    accept(4, "B conjugation identity", worst < 1e-10 and many0 == 0.0 and t < 10,
           f"max rel err {worst:.2e}, |B_many| at w=0: {many0}; {t:.2f}s")


def test_c05_bbgky_second_order(accept):
    el = clock()
    g = mb.LatticeGrid(1, 16, 2 * math.pi)
    sp = ScaledPotential(RadialPotential.gaussian(2.0, 1.0), 3, 0.5, d=1)
    x = g.x
    phi = np.exp(1j * np.cos(x)) * (1 + 0.5 * np.cos(x))
    phi /= math.sqrt(float(np.sum(np.abs(phi) ** 2)) * g.cell)
    psi = mb.init_product_state(phi, 3, g)
    trajs = {dt: mb.evolve(psi, sp, dt, int(round(0.02 / dt))) for dt in (2e-3, 1e-3)}
    ratios = [mb.bbgky_residual(trajs[2e-3], k, sp) / mb.bbgky_residual(trajs[1e-3], k, sp) for k in (1, 2)]
    t = el()
    accept(5, "BBGKY residual order", all(3.5 <= r <= 4.5 for r in ratios) and t < 120,
           f"halving ratios k=1: {ratios[0]:.3f}, k=2: {ratios[1]:.3f}; {t:.1f}s")


def _run(tmp_path, cfg, name):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / name
    assert main(["run", str(p), "--out-dir", str(out)]) == 0
    return out


@pytest.mark.slow
def test_c06_propagation_of_chaos(accept, tmp_path):
    el = clock()
    cfg = {"schema_version": 1, "experiment": "chaos",
           "potential": {"kind": "gaussian", "amplitude": 2.0, "width": 1.0},
           "params": {"N_list": [2, 3, 4, 5], "beta": 0.3, "dt": 1.25e-3, "steps": 400, "every": 400}}
    out = _run(tmp_path, cfg, "chaos")
    rows = [l.split(",") for l in (out / "chaos.csv").read_text().splitlines()[2:]]
    final = {int(r[0]): float(r[2]) for r in rows if abs(float(r[1]) - 0.5) < 1e-9}
    d = [final[n] for n in (2, 3, 4, 5)]
    ok = all(b <= 1.1 * a for a, b in zip(d, d[1:])) and el() < 900
    accept(6, "propagation of chaos", ok, f"HS distance at t=0.5 for N=2..5: {', '.join(f'{v:.4f}' for v in d)}; {el():.0f}s")


def _brute_components(k, q):
    maps = list(itertools.product(*[range(k, l) for l in range(k + 1, k + q + 1)]))
    parent = {m: m for m in maps}

    def find(m):
        while parent[m] != m:
            m = parent[m]
        return m

    for m in maps:
        mu = dict(zip(range(k + 1, k + q + 1), m))
        for l in range(k + 2, k + q):
            if mu[l + 1] == l:
                continue
            t = lambda v: {l: l + 1, l + 1: l}.get(v, v)
            n = tuple(t(mu[t(p)]) for p in range(k + 1, k + q + 1))
            a, b = find(m), find(n)
            if a != b:
                parent[max(a, b)] = min(a, b)
    return {m: find(m) for m in maps}


def test_c07_board_game(accept):
    el = clock()
    fact = all(len(bg.enumerate_maps(1, q)) == math.factorial(q) for q in range(8))
    counts = [bg.class_count(1, q) for q in range(7)]
    bounded = all(c <= 4**q for q, c in enumerate(counts))
    consistent = True
    for q in range(6):
        brute = _brute_components(1, q)
        for m in bg.enumerate_maps(1, q):
            c = bg.canonicalize(m)
            consistent &= bg.canonicalize(c) == c and c.mu == brute[m.mu]
    t = el()
    accept(7, "board game counts", fact and bounded and consistent and t < 60,
           f"q! counts ok={fact}, classes q=0..6 {counts} <= 4^q, canonical forms match brute force={consistent}; {t:.2f}s")


def test_c08_L_expansion(accept):
    el = clock()
    rng = np.random.default_rng(8)
    count_ok, worst = True, 0.0
    for k in range(1, 6):
        for l in range(1, k + 1):
            monos = bg.expand_L(k, l)
            count_ok &= len(monos) == 2 ** (2 * k - 1) - 1
            w = {(j, p): rng.uniform(-0.5, 0.5) for j in range(1, k + 1) for p in (False, True)}
            total = sum(m.sign * np.prod([w[f] for f in m.factors]) for m in monos)
            prod = (1 - w[(l, True)]) * np.prod([1 - w[(j, p)] for j in range(1, k + 1) if j != l for p in (False, True)])
            worst = max(worst, abs(total - (prod - 1)))
    t = el()
    accept(8, "L expansion", count_ok and worst < 1e-12 and t < 10,
           f"monomial counts 2^(2k-1)-1 for k<=5: {count_ok}, max product error {worst:.1e}; {t:.2f}s")


def test_c09_counting_lemmas(accept):
    el = clock()
    ok3 = all(bg.iterates3_check(j, 1, 2**m)[0] <= bg.iterates3_check(j, 1, 2**m)[1]
              for j in range(1, 9) for m in range(13))
    ts = {}
    ok4 = True
    for eps in (0.05, 0.1, 0.25):
        t4 = bg.iterates4_find_t(1.0, eps, 8, 2**12)
        ts[eps] = t4
        ok4 &= bg.iterates4_holds(t4, 1.0, eps, 8, 2**12, density=32)
    t = el()
    accept(9, "counting lemmas", ok3 and ok4 and t < 60,
           f"chain bound j<=8, ratio<=2^12: {ok3}; t(eps) {', '.join(f'{e}:{v:.4f}' for e, v in ts.items())} re-verified at 32x density: {ok4}; {t:.2f}s")


def test_c10_dyadic(accept):
    el = clock()
    Ns = [2**e for e in range(10, 31, 2)]
    eps = 0.1
    parts, ok = [], True
    for beta in (0.3, 0.5, 0.9):
        kip, _ = bg.dyadic_exponent(Ns, beta, eps, weight_exponent=1)
        pp, _ = bg.dyadic_exponent(Ns, beta, eps, weight_exponent=3)
        ok &= kip <= 2 * eps + 0.02 and pp <= 2 * beta + 2 * eps + 0.02
        parts.append(f"b={beta}: KIP {kip:.3f}, PP {pp:.3f}")
    t = el()
    accept(10, "dyadic min-sums", ok and t < 30, "; ".join(parts) + f"; {t:.2f}s")


def test_c11_nls(accept):
    el = clock()
    g = mb.LatticeGrid(1, 32, 2 * math.pi)
    f0 = nls.NLSField(g, nls.smooth_datum(g, np.random.default_rng(11)), 1.0)
    f1 = nls.nls_propagate(f0, 1e-4, 10_000)
    dm = abs(nls.mass(f1) - nls.mass(f0))
    de = abs(nls.energy(f1) - nls.energy(f0))
    phi, xi = nls.plane_wave(g, [2], amplitude=0.7)
    T = 2.0
    fp = nls.nls_propagate(nls.NLSField(g, phi, 1.5), 1e-3, 2000)
    ph = float(np.max(np.abs(fp.phi - phi * np.exp(-1j * (float(xi @ xi) + 1.5 * 0.49) * T)))) / 0.7 / T
    finite = True
    for s in range(5):
        tr = nls.nls_trajectory(nls.NLSField(g, nls.smooth_datum(g, np.random.default_rng(s)), 1.0), 1e-3, 500, 50)
        finite &= math.isfinite(nls.esy_functional(tr)) and math.isfinite(nls.km_functional(tr))
    t = el()
    ok = dm < 1e-10 and de < 1e-8 and ph < 1e-8 and finite and t < 120
    accept(11, "NLS conservation and norms", ok,
           f"mass drift {dm:.1e}, energy drift {de:.1e} over 1e4 steps, plane-wave phase err {ph:.1e}/unit t, functionals finite={finite}; {t:.1f}s")


@pytest.mark.slow
def test_c12_estimate_probes(accept):
    el = clock()
    rng = np.random.default_rng(12)
    g = mb.LatticeGrid(3, 8, 2 * math.pi)
    a = est.SpaceTimeDensity(g, est.band_limited(g, 2, rng, 2), 2)
    idem = max(float(np.max(np.abs(est.lp_project(est.lp_project(a, M), M).data - est.lp_project(a, M).data)))
               for M in (1, 2, 4)) / float(np.max(np.abs(a.data)))
    planch = abs(sum(est.lp_project(a, M, "annular", axes=[0]).l2() ** 2 for M in est.dyadic_levels(g)) / a.l2() ** 2 - 1)
    orth = float(np.max(np.abs(est.lp_project(est.lp_project(a, 4, "annular"), 1, "annular").data)))
    g1 = mb.LatticeGrid(1, 16, 2 * math.pi)
    d = est.SpaceTimeDensity(g1, rng.standard_normal((32, 16, 16)) + 1j * rng.standard_normal((32, 16, 16)), 2, dt=0.05)
    xb0 = abs(est.xb_norm(d, 0.0) / d.l2() - 1)
    algebra = max(idem, planch, orth, xb0)
    parts, ok = [], algebra < 1e-12
    for name in est.PROBES:
        lo = est.probe_inequality(name, 20, 8, seed=0)
        hi = est.probe_inequality(name, 20, 16, seed=0)
        growth = hi.max_ratio / lo.max_ratio
        ok &= bool(np.all(np.isfinite(lo.ratios)) and np.all(np.isfinite(hi.ratios)) and growth < 1.5)
        parts.append(f"{name} max {lo.max_ratio:.3g}->{hi.max_ratio:.3g} (x{growth:.3f})")
    t = el()
    accept(12, "estimate probes", ok and t < 600,
           f"projector/Plancherel/X_0 algebra err {algebra:.1e}; " + "; ".join(parts) + f"; {t:.0f}s")


LIGHT = {
    "scattering-scan": {"N_list": [1, 100], "beta_list": [0.5, 1.0]},
    "born-limit": {"N_list": [100, 10000]},
    "chaos": {"N_list": [2, 3], "points_per_axis": 8, "dt": 1e-3, "steps": 20, "every": 10, "checkpoint": True},
    "bbgky-residual": {"points_per_axis": 8, "t_final": 0.004},
    "identity-check": {"N_list": [10], "count": 20},
    "boardgame": {"q_list": [0, 1, 2, 3, 4, 5]},
    "dyadic": {},
    "probes": {"names": ["str_3body", "str_2body_L32"], "ensemble_size": 2, "resolutions": [8]},
    "nls-norms": {"steps": 200, "every": 50},
}


def test_c13_determinism(accept, tmp_path):
    el = clock()
    same = {}
    for exp in EXPERIMENTS:
        cfg = {"schema_version": 1, "experiment": exp, "seed": 5, "workers": 1, "params": LIGHT[exp]}
        outs = [_run(tmp_path / r, cfg, exp) for r in ("a", "b")]
        files = sorted(p.name for p in outs[0].iterdir() if not p.name.endswith(".timing.json"))
        same[exp] = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    t = el()
    bad = [e for e, v in same.items() if not v]
    accept(13, "determinism", not bad, f"{len(same)} experiments rerun byte-identical (csv, meta, checkpoints); mismatches: {bad or 'none'}; {t:.1f}s")
