"""Experiment runner: `gphl run cfg.json`, `gphl validate cfg.json`.

Each run writes <experiment>.csv (first line '# config_hash: ...', then a header row),
<experiment>.meta.json and <experiment>.timing.json into the output directory.
The CSV and meta files depend only on (config, seed, workers); wall time lives in
the timing file so reruns stay byte-identical.

Exit codes: 0 ok, 2 schema/domain error, 3 memory or size refusal, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from . import __version__, boardgame, estimates, manybody, nls, scattering
from ._validation import (
    DomainError,
    GPHLError,
    SchemaError,
    check_budget,
    memory_budget,
)

SCHEMA_VERSION = 1
EXPERIMENTS = ("scattering-scan", "born-limit", "chaos", "bbgky-residual", "identity-check",
               "boardgame", "dyadic", "probes", "nls-norms")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_beta = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_count = {"type": "integer", "minimum": 1}
_n = {"type": "integer", "enum": [8, 16, 32, 64]}


def _list(item, min_items=1):
    return {"type": "array", "items": item, "minItems": min_items}


POTENTIAL_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["kind"],
         "properties": {"kind": {"const": "zero"}, "radius": _pos}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "height", "radius"],
         "properties": {"kind": {"const": "square_barrier"}, "height": {"type": "number", "minimum": 0},
                        "radius": _pos, "r_max": _pos}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "amplitude", "width"],
         "properties": {"kind": {"const": "gaussian"}, "amplitude": {"type": "number", "minimum": 0},
                        "width": _pos, "r_max": _pos}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "r", "values"],
         "properties": {"kind": {"const": "tabulated"}, "r": _list(_num, 4),
                        "values": _list({"type": "number", "minimum": 0}, 4), "r_max": _pos}},
    ]
}

# per-experiment parameters and their defaults
PARAMS = {
    "scattering-scan": ({"N_list": _list({"type": "number", "minimum": 1}), "beta_list": _list(_beta),
                         "tol": _pos},
                        {"N_list": [1, 100, 10000], "beta_list": [0.5, 1.0], "tol": 1e-10}),
    "born-limit": ({"beta": _beta, "N_list": _list({"type": "number", "minimum": 1}), "tol": _pos},
                   {"beta": 0.5, "N_list": [100, 10000, 1000000], "tol": 1e-10}),
    "chaos": ({"N_list": _list({"type": "integer", "minimum": 1, "maximum": 6}), "beta": _beta,
               "points_per_axis": _n, "box_length": _pos, "dt": _pos, "steps": _count,
               "every": _count, "checkpoint": {"type": "boolean"}},
              {"N_list": [2, 3, 4, 5], "beta": 0.3, "points_per_axis": 16, "box_length": 2 * math.pi,
               "dt": 1.25e-3, "steps": 400, "every": 100, "checkpoint": False}),
    "bbgky-residual": ({"N": {"type": "integer", "minimum": 2, "maximum": 5}, "k_list": _list(_count),
                        "beta": _beta, "points_per_axis": _n, "box_length": _pos,
                        "dt_list": _list(_pos), "t_final": _pos},
                       {"N": 3, "k_list": [1, 2], "beta": 0.5, "points_per_axis": 16,
                        "box_length": 2 * math.pi, "dt_list": [2e-3, 1e-3], "t_final": 0.02}),
    "identity-check": ({"k": {"type": "integer", "minimum": 2, "maximum": 6}, "N_list": _list(_pos),
                        "beta_list": _list(_beta), "count": _count},
                       {"k": 3, "N_list": [10, 1000], "beta_list": [0.5, 1.0], "count": 100}),
    "boardgame": ({"k": _count, "q_list": _list({"type": "integer", "minimum": 0, "maximum": 8})},
                  {"k": 1, "q_list": [0, 1, 2, 3, 4, 5, 6, 7]}),
    "dyadic": ({"beta_list": _list(_beta), "epsilon": {"type": "number", "exclusiveMinimum": 0,
                                                        "exclusiveMaximum": 0.5},
                "log2_N_list": _list({"type": "integer", "minimum": 0, "maximum": 40}, 2)},
               {"beta_list": [0.3, 0.5, 0.9], "epsilon": 0.1, "log2_N_list": list(range(10, 31, 2))}),
    "probes": ({"names": _list({"enum": list(estimates.PROBES)}), "ensemble_size": _count,
                "resolutions": _list(_n)},
               {"names": list(estimates.PROBES), "ensemble_size": 20, "resolutions": [8, 16]}),
    "nls-norms": ({"d": {"enum": [1, 2, 3]}, "points_per_axis": _n, "box_length": _pos, "c0": _num,
                   "dt": _pos, "steps": _count, "every": _count, "datum": {"enum": ["plane_wave", "random"]},
                   "mode": _list({"type": "integer"})},
                  {"d": 1, "points_per_axis": 32, "box_length": 2 * math.pi, "c0": 1.0, "dt": 1e-4,
                   "steps": 10000, "every": 1000, "datum": "random", "mode": [1]}),
}

DEFAULT_POTENTIAL = {"kind": "square_barrier", "height": 2.0, "radius": 1.0}


def config_schema(experiment):
    props, _ = PARAMS[experiment]
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["schema_version", "experiment"],
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "experiment": {"const": experiment},
            "seed": {"type": "integer", "minimum": 0},
            "workers": _count,
            "memory_budget_bytes": {"type": ["integer", "null"], "minimum": 1},
            "output_dir": {"type": "string"},
            "potential": POTENTIAL_SCHEMA,
            "params": {"type": "object", "additionalProperties": False, "properties": props},
        },
    }


def normalize(raw):
    """Validate and fill defaults; raises SchemaError."""
    if not isinstance(raw, dict):
        raise SchemaError("config must be a JSON object")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise SchemaError(f"unknown experiment {exp!r}; valid names: {', '.join(EXPERIMENTS)}")
    try:
        jsonschema.validate(raw, config_schema(exp))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {e.message}") from None
    cfg = copy.deepcopy(raw)
    cfg.setdefault("seed", 0)
    cfg.setdefault("workers", 1)
    cfg.setdefault("memory_budget_bytes", None)
    cfg.setdefault("potential", dict(DEFAULT_POTENTIAL))
    params = dict(PARAMS[exp][1])
    params.update(cfg.get("params", {}))
    cfg["params"] = params
    return cfg


def config_hash(cfg):
    """sha256 of the canonical JSON of everything that affects the numbers."""
    keep = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = json.dumps(keep, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_potential(pot):
    pot = dict(pot)
    kind = pot.pop("kind")
    if kind == "zero":
        return scattering.RadialPotential.zero(pot.get("radius", 1.0))
    r_max = pot.pop("r_max", None)
    if kind == "square_barrier":
        return scattering.RadialPotential.square_barrier(pot["height"], pot["radius"], r_max)
    if kind == "gaussian":
        return scattering.RadialPotential.gaussian(pot["amplitude"], pot["width"], r_max)
    return scattering.RadialPotential.tabulated(pot["r"], pot["values"], r_max)


# ---- resource prediction --------------------------------------------------------

def predicted_bytes(cfg):
    p = cfg["params"]
    exp = cfg["experiment"]
    if exp == "chaos":
        g = manybody.LatticeGrid(1, p["points_per_axis"], p["box_length"])
        N = max(p["N_list"])
        return max(manybody.propagation_bytes(N, g), 2 * 16 * g.n ** (2 * 1))
    if exp == "bbgky-residual":
        g = manybody.LatticeGrid(1, p["points_per_axis"], p["box_length"])
        steps = int(round(p["t_final"] / min(p["dt_list"])))
        return manybody.propagation_bytes(p["N"], g) + (steps + 1) * 16 * g.n ** p["N"]
    if exp == "probes":
        r = max(p["resolutions"])
        return max(16 * 16 * r ** (estimates.PROBE_DIM[nm] * estimates.PROBE_NVARS[nm]) for nm in p["names"])
    if exp == "nls-norms":
        return 8 * 16 * p["points_per_axis"] ** p["d"]
    if exp == "boardgame":
        return 512 * math.factorial(max(p["q_list"]))
    return 1 << 20


def preflight(cfg):
    need = predicted_bytes(cfg)
    budget = memory_budget(cfg["memory_budget_bytes"])
    return {"predicted_bytes": int(need), "budget_bytes": int(budget), "fits": need <= budget}


# ---- experiments ----------------------------------------------------------------

def _pmap(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _scan_one(args):
    V, N, beta, tol = args
    sol = scattering.solve_zero_energy(V, N, beta, tol)
    c0 = scattering.coupling_constant(V, beta) if not V.is_zero else 0.0
    return [N, beta, sol.a0, sol.scat, 8 * math.pi * sol.a0, c0, sol.residual]


def exp_scattering_scan(cfg, V, out_dir):
    p = cfg["params"]
    jobs = [(V, float(N), float(b), p["tol"]) for b in p["beta_list"] for N in p["N_list"]]
    rows = _pmap(_scan_one, jobs, cfg["workers"])
    return ["N", "beta", "a0", "scat", "born_entry", "c0", "residual"], rows


def exp_born_limit(cfg, V, out_dir):
    p = cfg["params"]
    target = scattering.radial_integral(V) if not V.is_zero else 0.0
    rows = []
    for r in scattering.born_limit_scan(V, p["beta"], p["N_list"], p["tol"]):
        gap = abs(r.value - target) / target if target else 0.0
        rows.append([r.N, r.beta, r.value, target, gap, r.residual])
    return ["N", "beta", "born_entry", "integral_V", "relative_gap", "residual"], rows


def chaos_datum(grid):
    x = grid.x
    phi = np.exp(1j * np.cos(x)) * (1 + 0.5 * np.cos(x))
    return phi / math.sqrt(float(np.sum(np.abs(phi) ** 2)) * grid.cell)


def _chaos_one(args):
    V, N, p, out_dir, budget = args
    g = manybody.LatticeGrid(1, p["points_per_axis"], p["box_length"])
    sp = scattering.ScaledPotential(V, N, p["beta"], d=1)
    phi0 = chaos_datum(g)
    c0 = sp.base_integral() if not V.is_zero else 0.0
    psi = manybody.init_product_state(phi0, N, g)
    field = nls.NLSField(g, phi0, c0)
    rows = []
    done = 0
    while True:
        gam = manybody.marginal(psi, 1, budget)
        rows.append([N, psi.time, manybody.chaos_distance(gam, field.phi), float(np.real(gam.trace())), c0])
        if done >= p["steps"]:
            break
        m = min(p["every"], p["steps"] - done)
        psi = manybody.propagate(psi, sp, p["dt"], m, budget)
        field = nls.nls_propagate(field, p["dt"], m)
        done += m
    if p["checkpoint"]:
        manybody.write_checkpoint(os.path.join(out_dir, f"chaos_N{N}.ckpt"), psi)
    return rows


def exp_chaos(cfg, V, out_dir):
    p = cfg["params"]
    budget = cfg["memory_budget_bytes"]
    parts = _pmap(_chaos_one, [(V, N, p, out_dir, budget) for N in p["N_list"]], cfg["workers"])
    return ["N", "t", "hs_distance", "trace", "c0"], [r for part in parts for r in part]


def exp_bbgky(cfg, V, out_dir):
    p = cfg["params"]
    g = manybody.LatticeGrid(1, p["points_per_axis"], p["box_length"])
    sp = scattering.ScaledPotential(V, p["N"], p["beta"], d=1)
    psi = manybody.init_product_state(chaos_datum(g), p["N"], g)
    rows = []
    for dt in p["dt_list"]:
        steps = int(round(p["t_final"] / dt))
        if not math.isclose(steps * dt, p["t_final"], rel_tol=1e-9):
            raise DomainError(f"t_final={p['t_final']} is not a multiple of dt={dt}")
        traj = manybody.evolve(psi, sp, dt, steps, every=1, budget=cfg["memory_budget_bytes"])
        for k in p["k_list"]:
            rows.append([p["N"], k, dt, manybody.bbgky_residual(traj, k, sp)])
    rows.sort(key=lambda r: (r[1], -r[2]))
    return ["N", "k", "dt", "residual"], rows


def exp_identity(cfg, V, out_dir):
    p = cfg["params"]
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for N in p["N_list"]:
        for beta in p["beta_list"]:
            sp = scattering.ScaledPotential(V, N, beta, d=3)
            X = manybody.random_configs(sp, p["k"], p["count"], rng)
            res = manybody.wave_operator_identity_residual(sp, p["k"], X)
            rows.append([p["k"], N, beta, p["count"], res])
    return ["k", "N", "beta", "configs", "max_relative_residual"], rows


def exp_boardgame(cfg, V, out_dir):
    p = cfg["params"]
    return list(boardgame.BoardgameRow._fields), [list(r) for r in boardgame.boardgame_table(p["k"], p["q_list"])]


def exp_dyadic(cfg, V, out_dir):
    p = cfg["params"]
    eps = p["epsilon"]
    Ns = [2**e for e in p["log2_N_list"]]
    rows = []
    for form, w in (("KIP", 1), ("PP", 3)):
        for beta in p["beta_list"]:
            slope, _ = boardgame.dyadic_exponent(Ns, beta, eps, weight_exponent=w)
            bound = 2 * eps if w == 1 else 2 * beta + 2 * eps
            rows.append([form, beta, eps, slope, bound])
    return ["form", "beta", "epsilon", "exponent", "bound"], rows


def _probe_one(args):
    name, n, size, seed, budget = args
    return list(estimates.probe_inequality(name, size, n, seed, budget=budget).row())


def exp_probes(cfg, V, out_dir):
    p = cfg["params"]
    jobs = [(nm, n, p["ensemble_size"], cfg["seed"], cfg["memory_budget_bytes"])
            for nm in p["names"] for n in p["resolutions"]]
    return list(estimates.ProbeRow._fields), _pmap(_probe_one, jobs, cfg["workers"])


def exp_nls(cfg, V, out_dir):
    p = cfg["params"]
    g = manybody.LatticeGrid(p["d"], p["points_per_axis"], p["box_length"])
    if p["datum"] == "plane_wave":
        mode = (p["mode"] + [0] * g.d)[:g.d]
        phi, _ = nls.plane_wave(g, mode)
    else:
        phi = nls.smooth_datum(g, np.random.default_rng(cfg["seed"]))
    traj = nls.nls_trajectory(nls.NLSField(g, phi, p["c0"]), p["dt"], p["steps"], p["every"])
    return list(nls.NormRow._fields), [list(r) for r in nls.trajectory_table(traj)]


RUNNERS = {
    "scattering-scan": exp_scattering_scan,
    "born-limit": exp_born_limit,
    "chaos": exp_chaos,
    "bbgky-residual": exp_bbgky,
    "identity-check": exp_identity,
    "boardgame": exp_boardgame,
    "dyadic": exp_dyadic,
    "probes": exp_probes,
    "nls-norms": exp_nls,
}


# ---- output -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(columns, rows, chash):
    buf = io.StringIO()
    buf.write(f"# config_hash: {chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def run(cfg, out_dir):
    """Execute a normalized config; returns (columns, rows, paths)."""
    os.makedirs(out_dir, exist_ok=True)
    pre = preflight(cfg)
    check_budget(pre["predicted_bytes"], f"experiment {cfg['experiment']}", cfg["memory_budget_bytes"])
    V = build_potential(cfg["potential"])
    chash = config_hash(cfg)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        columns, rows = RUNNERS[cfg["experiment"]](cfg, V, out_dir)
    wall = time.perf_counter() - t0
    stem = os.path.join(out_dir, cfg["experiment"])
    _write(stem + ".csv", render_csv(columns, rows, chash))
    meta = {"config_hash": chash, "code_version": __version__, "schema_version": SCHEMA_VERSION,
            "experiment": cfg["experiment"], "workers": cfg["workers"], "seed": cfg["seed"],
            "columns": columns, "rows": len(rows), "config": {k: v for k, v in cfg.items() if k != "output_dir"}}
    _write(stem + ".meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write(stem + ".timing.json", json.dumps({"config_hash": chash, "wall_time_s": wall}, indent=2) + "\n")
    return columns, rows, [stem + ".csv", stem + ".meta.json", stem + ".timing.json"]


def _load(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from None
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror}") from None


def _apply_overrides(raw, args):
    raw = dict(raw) if isinstance(raw, dict) else raw
    if isinstance(raw, dict):
        if args.workers is not None:
            raw["workers"] = args.workers
        if args.seed_override is not None:
            raw["seed"] = args.seed_override
    return raw


def _fail(err, out_dir):
    payload = err.to_dict()
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            _write(os.path.join(out_dir, "error.json"), json.dumps(payload, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
    return err.exit_code


def cmd_run(args):
    out_dir = args.out_dir
    try:
        raw = _apply_overrides(_load(args.config), args)
        cfg = normalize(raw)
        out_dir = out_dir or cfg.get("output_dir") or "."
        _, rows, paths = run(cfg, out_dir)
    except GPHLError as e:
        return _fail(e, out_dir)
    except MemoryError as e:
        return _fail(_as_gphl(e, 3, "memory"), out_dir)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as e:
        return _fail(_as_gphl(e, 4, "numerical"), out_dir)
    print(json.dumps({"status": "ok", "rows": len(rows), "files": paths}))
    return 0


def _as_gphl(e, code, kind):
    err = GPHLError(str(e) or type(e).__name__)
    err.exit_code, err.kind = code, kind
    return err


def cmd_validate(args):
    diag = {"config": args.config}
    try:
        raw = _apply_overrides(_load(args.config), args)
        cfg = normalize(raw)
        pre = preflight(cfg)
    except SchemaError as e:
        diag.update(status="error", error=str(e), exit_code=e.exit_code)
        if "unknown experiment" in str(e):
            diag["valid_experiments"] = list(EXPERIMENTS)
        print(json.dumps(diag, indent=2))
        return e.exit_code
    except GPHLError as e:
        diag.update(status="error", error=str(e), exit_code=e.exit_code)
        print(json.dumps(diag, indent=2))
        return e.exit_code
    diag.update(experiment=cfg["experiment"], config_hash=config_hash(cfg), resources=pre)
    if pre["fits"]:
        diag["status"] = "ok"
        code = 0
    else:
        diag["status"] = "refused"
        diag["reason"] = (f"predicted {pre['predicted_bytes']} bytes exceeds the budget of "
                          f"{pre['budget_bytes']} bytes")
        code = 3
    print(json.dumps(diag, indent=2))
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(prog="gphl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gphl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("validate", cmd_validate)):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--seed-override", type=int, default=None)
        sp.set_defaults(func=fn)
    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
