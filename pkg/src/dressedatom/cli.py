"""Command line front end: `dressedatom <subcommand> [--config F] [--set k=v ...]`."""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io
from .commutator import (
    ConjugateOperatorSpec,
    conjugate_operator,
    feshbach,
    mourre_estimate,
    second_quantized_dilation,
    compressed_identity_residual,
    virial,
)
from .dynamics import (
    asymptotic_observable,
    bump,
    cook_integrand,
    com_propagation_check,
    direct_integral_grid,
    dressed_packet,
    excited_window_state,
    interaction_tail,
)
from .errors import ConfigError, Refusal
from .fiber import assemble, assemble_modified, ionization_estimate, sector_energies, thresholds
from .quadrature import smoothstep
from .resonance import fgr_matrix, h2_scan
from .spectral import dispersion_scan, dressing_deficit, ground_state, lowest_eigs

log = logging.getLogger("dressedatom")

SUBCOMMANDS = (
    "spectrum", "dispersion", "thresholds", "fgr", "h2scan", "mourre",
    "feshbach", "virial", "cook", "wproxy", "compex", "report",
)


def ray_points(analysis, n=None):
    ray = analysis["ray"]
    d = np.asarray(ray["direction"], dtype=float)
    d = d / np.linalg.norm(d)
    return np.linspace(0.0, ray["p_max"], ray["n"] if n is None else n)[:, None] * d[None, :]


@lru_cache(maxsize=4)
def _ionization(config_json):
    model = cfgmod.build_model(json.loads(config_json))
    return ionization_estimate(model.fiber())


def ceiling(model):
    """Sigma = min(Sigma_beta, Sigma_ion) - margin |E_0|."""
    a = model.config["analysis"]
    s_ion, s_err, _ = _ionization(json.dumps(model.config, sort_keys=True))
    e0 = model.atom.energies[0]
    mass = model.atom.potential.total_mass
    s_beta = e0 + 0.5 * mass * a["beta"] ** 2 if np.isfinite(mass) else np.inf
    return min(s_beta, s_ion) - a["margin"] * abs(e0), s_ion, s_err


def distinct(values, rel=1e-9):
    """Sorted values with near-duplicates merged; Lanczos sees one vector per eigenspace."""
    values = np.sort(np.asarray(values))
    keep = np.concatenate([[True], np.diff(values) > rel * np.maximum(np.abs(values[1:]), 1e-300)])
    return values[keep]


# -- subcommands ------------------------------------------------------------


def run_spectrum(model, args):
    cfg = model.fiber()
    op = assemble(cfg)
    gs = ground_state(cfg, op)
    out = {
        "energy": gs.energy, "gap": gs.gap, "deficit": dressing_deficit(gs.vector, cfg),
        "residual": gs.residual, "simple": gs.simple, "soft_leak": gs.soft_leak,
        "dim": cfg.dim, "flags": gs.flags,
    }
    checks = {"ground_state_simple": gs.simple}
    if cfg.g == 0:
        vals, _, _ = lowest_eigs(op, min(20, cfg.dim))
        found = distinct(vals)
        exact = distinct(sector_energies(cfg))[: len(found)]
        rel = float(np.max(np.abs(found - exact) / np.maximum(np.abs(exact), 1e-300)))
        out["sector_energies"] = exact
        out["sector_relative_error"] = rel
        checks["sector_formula"] = rel < 1e-9
    return out, checks, None


def run_dispersion(model, args):
    cfg = model.fiber()
    curve = dispersion_scan(cfg, ray_points(model.config["analysis"]))
    speed = np.linalg.norm(curve.grad_fd, axis=1)
    out = {
        "relative_deviation": curve.relative_deviation, "max_speed": float(np.max(speed)),
        "energy": curve.energy, "flags": curve.flags,
    }
    checks = {"fh_matches_fd": curve.relative_deviation < 1e-6, "speed_below_one": bool(np.all(speed <= 1 + 1e-6))}
    cols = ["Pi_x", "Pi_y", "Pi_z", "E", "fh_x", "fh_y", "fh_z", "fd_x", "fd_y", "fd_z", "gap", "deficit"]
    return out, checks, (cols, list(curve.rows()))


def run_thresholds(model, args):
    a = model.config["analysis"]
    cfg = model.fiber()
    rep = thresholds(cfg, a["beta"], a["margin"], ion=_ionization(json.dumps(model.config, sort_keys=True)))
    return rep.as_dict(), {"velocity_bound": rep.velocity_ok, "ionization_converged": rep.converged}, None


def run_fgr(model, args):
    a = model.config["analysis"]
    res = fgr_matrix(model.atom, model.ff, a["j"], a["Pi"], a["fgr_directions"])
    out = {"matrix": res.matrix, "gamma": res.gamma, "trace": res.trace, "flags": res.flags}
    return out, {"psd": res.is_psd()}, None


def run_h2scan(model, args):
    a = model.config["analysis"]
    sigma, _, _ = ceiling(model)
    levels = range(1, len(model.atom.energies))
    scan = h2_scan(model.atom, model.ff, ray_points(a), levels, sigma, a["fgr_directions"])
    out = {"rows": scan.rows, "infimum": scan.infimum, "argmin": scan.argmin, "excluded": scan.excluded, "ceiling": sigma}
    rows = [[*r["Pi"], r["j"], r["gamma"]] for r in scan.rows]
    return out, {"h2_holds": scan.holds}, (["Pi_x", "Pi_y", "Pi_z", "j", "gamma"], rows)


def _mourre_point(config, g):
    model = cfgmod.build_model(config)
    a = config["analysis"]
    cfg = model.fiber("mourre_grid", g=g)
    gamma = fgr_matrix(model.atom, model.ff, a["j"], cfg.Pi, a["fgr_directions"]).gamma
    spec = ConjugateOperatorSpec.from_exponents(cfg, a["j"], a["kappa"], a["alpha"], a["beta"])
    ops = conjugate_operator(spec)
    rep = mourre_estimate(ops, a["half_width"], gamma, a["kappa"], a["alpha"])
    res, _, _ = compressed_identity_residual(ops)
    fes = feshbach(ops, a["half_width"])
    return {
        "g": g, "gamma": gamma, "min_eigenvalue": rep.min_eigenvalue, "predicted_scale": rep.predicted_scale,
        "window_size": rep.size, "matrix_window_min": rep.matrix_window_min, "compressed_identity_residual": res,
        "feshbach_min": fes.min_eigenvalue, "feshbach_lambda0": fes.lambda0, "norm_D": ops.norm_D,
        "flags": rep.flags,
    }


def mourre_sweep(config, jobs=1):
    gs = list(config["analysis"]["g_sweep"])
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_mourre_point, [config] * len(gs), gs))
    return [_mourre_point(config, g) for g in gs]


def run_mourre(model, args):
    a = model.config["analysis"]
    rows = mourre_sweep(model.config, args.jobs)
    gs = np.array([r["g"] for r in rows])
    mins = np.array([r["min_eigenvalue"] for r in rows])
    target = 2 + a["kappa"] - a["alpha"]
    slope = float(np.polyfit(np.log(gs), np.log(mins), 1)[0]) if np.all(mins > 0) else float("nan")
    out = {"rows": rows, "slope": slope, "target_slope": target}
    checks = {
        "positive": bool(np.all(mins > 0)),
        "slope": bool(abs(slope - target) <= 0.2),
        "compressed_identity": bool(max(r["compressed_identity_residual"] for r in rows) < 1e-10),
    }
    cols = ["g", "min_eigenvalue", "predicted_scale", "compressed_identity_residual"]
    return out, checks, (cols, [[r[c] for c in cols] for r in rows])


def run_feshbach(model, args):
    a = model.config["analysis"]
    row = _mourre_point(model.config, model.ff.g)
    bound = row["gamma"] * model.ff.g ** (2 + a["kappa"] - a["alpha"]) * 0.5
    out = {**row, "lower_bound": bound}
    return out, {"feshbach_positive": row["feshbach_min"] >= bound}, None


def run_virial(model, args):
    cfg = model.fiber()
    op = assemble(cfg)
    gs = ground_state(cfg, op)
    res = virial(op.matrix, second_quantized_dilation(cfg), gs.vector)
    out = {"value": res.residual, "bound": res.bound, "eigen_residual": res.eigen_residual, "norm_A_psi": res.norm_A_psi}
    return out, {"virial": res.ok}, None


def _times(a, budget=None):
    budget = a["time_budget"] if budget is None else budget
    return np.linspace(budget / a["n_times"], budget, a["n_times"])


def run_cook(model, args):
    a = model.config["analysis"]
    cfg = model.fiber("dynamics_grid")
    op = assemble(cfg)
    psi = ground_state(cfg, op).vector
    times = _times(a)
    hard = cook_integrand(cfg, bump(*a["photon_band"]), psi, times, op=op)
    soft = cook_integrand(cfg, bump(0.1 * model.ff.sigma, 0.9 * model.ff.sigma), psi, times, op=op)
    tail = interaction_tail(cfg, a["tail_R"], a["tail_Rprime"])
    out = {
        "mu": hard.mu, "prefactor": hard.prefactor, "fit_range": hard.fit_range, "soft_max": float(np.max(soft.values)),
        "tail": {"R": tail.R, "Rprime": tail.Rprime, "bound": tail.bound, "mu": tail.mu, "flags": tail.flags},
        "flags": hard.flags,
    }
    checks = {"cook_integrable": hard.mu > 1, "soft_decoupled": bool(np.all(soft.values == 0)), "tail_mu": tail.mu >= 2}
    rows = [[t, s] for t, s in zip(times, hard.values)]
    return out, checks, (["t", "s"], rows)


def run_wproxy(model, args):
    a = model.config["analysis"]
    cfg = model.fiber("dynamics_grid")
    op = assemble_modified(cfg)
    sigma, _, _ = ceiling(model)
    times = _times(a)
    half = times <= 0.5 * a["time_budget"]
    psi = ground_state(cfg, op).vector
    dressed = asymptotic_observable(cfg, sigma, a["gamma"], a["beta3"], times, psi, a["beta"], op=op)
    phi = excited_window_state(cfg, *a["photon_band"], op=op)
    excited = asymptotic_observable(cfg, sigma, a["gamma"], a["beta3"], times, phi, a["beta"], op=op)
    first = float(np.min(excited.values[half][len(excited.values[half]) // 2 :]))
    second = excited.liminf
    out = {
        "ceiling": sigma, "dressed_final": float(dressed.values[-1]), "excited_liminf_half_budget": first,
        "excited_liminf_full_budget": second, "excited_settled": excited.settled, "flags": dressed.flags + excited.flags,
    }
    checks = {
        "dressed_vanishes": float(dressed.values[-1]) < 1e-6,
        "excited_positive": second > 0,
        "excited_stable": abs(second - first) <= 0.1 * max(abs(first), 1e-300),
    }
    rows = [[t, d, e] for t, d, e in zip(times, dressed.values, excited.values)]
    return out, checks, (["t", "w_dressed", "w_excited"], rows)


def com_cutoff(beta):
    return lambda s: smoothstep((np.asarray(s) - beta) / beta)


def run_compex(model, args):
    a = model.config["analysis"]
    com = a["com"]
    cfg = model.fiber("com")
    sigma, _, _ = ceiling(model)
    dig = direct_integral_grid(cfg, com["p_max"], com["n"], a["ray"]["direction"], ceiling=sigma)
    fine = direct_integral_grid(cfg, com["p_max"], 2 * com["n"] - 1, a["ray"]["direction"])
    blocks = dressed_packet(dig)
    times = _times(a)
    cut = com_cutoff(com["cutoff_from"])
    res = com_propagation_check(dig, cut, blocks, times, refine=(fine, dressed_packet(fine)))
    rev = com_propagation_check(dig, cut, blocks.conj(), -times, conjugate=True)
    zero = com_propagation_check(dig, lambda s: np.zeros_like(s), blocks, times)
    out = {
        "rate": res.rate, "stencil_error": res.stencil_error, "first": float(res.values[0]),
        "last": float(res.values[-1]), "reversal_difference": float(np.max(np.abs(rev.values - res.values))),
    }
    checks = {
        "decays": bool(res.values[-1] < 0.01 * res.values[0]),
        "stencil_resolved": res.stencil_error < 0.1,
        "time_reversal": out["reversal_difference"] < 1e-10,
        "zero_cutoff": bool(np.all(zero.values == 0)),
    }
    return out, checks, (["t", "norm"], [[t, v] for t, v in zip(times, res.values)])


def run_report(out_dir):
    summary = {}
    for path in sorted(Path(out_dir).glob("*.json")) if Path(out_dir).is_dir() else []:
        if path.name == "summary.json":
            continue
        doc = io.read_json(path)
        if "checks" in doc:
            summary[path.stem] = doc["checks"]
    passed = all(all(c.values()) for c in summary.values())
    return {"tables": summary, "all_passed": passed}


RUNNERS = {name: globals()[f"run_{name}"] for name in SUBCOMMANDS if name != "report"}


def build_parser():
    p = argparse.ArgumentParser(prog="dressedatom", description=__doc__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON run configuration; defaults fill missing fields")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, value parsed as JSON")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.random.seed(args.seed)
    try:
        config = cfgmod.load(args.config, args.set)
        out_dir = Path(args.out or config["output"]["directory"])
        chash = cfgmod.config_hash(config)
        if args.subcommand == "report":
            summary = run_report(out_dir)
            io.write_json(out_dir / "summary.json", io.provenance(chash, seed=args.seed), summary)
            for name, checks in summary["tables"].items():
                for check, ok in checks.items():
                    print(f"{name:12s} {check:28s} {'PASS' if ok else 'FAIL'}")
            return 0
        model = cfgmod.build_model(config)
        payload, checks, table = RUNNERS[args.subcommand](model, args)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print(json.dumps(io.to_jsonable(exc.report), indent=2), file=sys.stderr)
        return 3
    header = io.provenance(chash, model, seed=args.seed)
    header["config"] = config
    formats = config["output"].get("formats", ["json"])
    if "json" in formats:
        io.write_json(out_dir / f"{args.subcommand}.json", header, {"result": payload, "checks": checks})
    if table is not None and "csv" in formats:
        io.write_csv(out_dir / f"{args.subcommand}.csv", *table)
    for check, ok in checks.items():
        print(f"{args.subcommand:12s} {check:28s} {'PASS' if ok else 'FAIL'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
