"""Command-line entry point: `rodlimit <verb> [--config FILE] [--out DIR] [--set sec.key=val]`."""

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from .. import beam1d, correctors, energy, fem, geometry
from . import config as config_mod
from . import report, sweep
from .rates import ConvergenceTable, fit_rate

log = logging.getLogger("rodlimit")


def _overrides(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p or "." not in p.split("=", 1)[0]:
            raise config_mod.ConfigError(f"--set expects section.key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def disk_corrector_errors(resolutions=(0.2, 0.1, 0.05, 0.025)):
    """L2 error of the computed a2 against the closed form on the unit-area disk."""
    rows = []
    for r in resolutions:
        mesh = geometry.section_from_config({"shape": "disk", "resolution": r})
        a2, _ = correctors.solve_corrector_a(mesh)
        R = float(np.max(np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1])))
        R = 1.0 / math.sqrt(math.pi) if abs(R * math.sqrt(math.pi) - 1) < 1e-9 else R
        ex = correctors.disk_a2_exact(mesh.nodes[:, 0], mesh.nodes[:, 1], R)
        e = a2 - ex
        M = fem.mass_matrix(mesh)
        rows.append((r, float(math.sqrt(e @ (M @ e)))))
    return rows


# ---------------------------------------------------------------- verbs

def cmd_correctors(cfg, args):
    t = ConvergenceTable()
    checks = {}
    if cfg["section"]["shape"] == "disk":
        rows = disk_corrector_errors()
        for r, e in rows:
            t.add(r, "a2_exact_error", e)
        fit = fit_rate([r for r, _ in rows], [e for _, e in rows])
        checks["corrector_exactness"] = bool(fit.slope >= 2 and rows[-1][1] <= 1e-4)
    mesh = geometry.section_from_config(cfg["section"])
    cs = correctors.solve_correctors(mesh, geometry.section_moments(mesh),
                                     cfg["solver"]["corrector_variant"])
    t.notes["residuals"] = cs.residuals
    d = report.write_report(cfg, t, args.out, checks,
                            figures={"correctors.png": ["a2_exact_error"]}, subdir="correctors")
    correctors.export_correctors(mesh, cs, d / "correctors.dat")
    geometry.export_mesh(mesh, d / "mesh.dat")
    return d


def cmd_beam(cfg, args):
    pb = sweep.build_problem(cfg)
    tr = pb.traj
    E = tr.energy()
    drift = float(np.max(np.abs(E - E[0]) / np.maximum(np.abs(E[0]), 1e-300) * (E[0] > 0)))
    t = ConvergenceTable()
    t.notes.update(scale=pb.scale, energy_drift=drift, omega=tr.omega.tolist())
    d = report.write_report(cfg, t, args.out, {"energy_drift_1e-10": drift <= 1e-10},
                            subdir="beam")
    tr.export(d / "beam.dat")
    return d


def cmd_ansatz_residual(cfg, args):
    t = ConvergenceTable()
    pb = sweep.build_problem(cfg)
    sweep.run_residual_sweep(cfg, pb, table=t)
    if cfg["sweep"]["floor_protocol"]:
        pbf = sweep.build_problem(cfg, cfg["section"]["floor_resolution"])
        sweep.run_residual_sweep(cfg, pbf, table=t, suffix="@fine")
    names = ("interior_residual", "boundary_residual")
    t.notes["floor_protocol"] = sweep.floor_report(t, names)
    s = {n: t.slope(n) for n in names}
    checks = {
        "interior_slope_2.7": bool(s["interior_residual"] and s["interior_residual"].slope >= 2.7),
        "boundary_slope_4.7": bool(s["boundary_residual"] and s["boundary_residual"].slope >= 4.7),
    }
    return report.write_report(cfg, t, args.out, checks,
                               figures={"residuals.png": list(names)}, subdir="ansatz-residual")


def cmd_initdata(cfg, args):
    d = config_mod.output_dir(cfg, args.out) / "initdata"
    d.mkdir(parents=True, exist_ok=True)
    t = sweep.run_initdata_sweep(cfg, save_dir=d)
    checks = {}
    cf = [v for _, n, v in t.rows if n == "contraction_factor"]
    if cf:
        checks["contraction_0.5"] = bool(max(cf) <= 0.5 + 1e-3)
    for n, lo in (("proximity_u0", 2.7), ("proximity_u1", 2.7), ("proximity_u2", 1.8),
                  ("magnitude_u0", 1.8), ("magnitude_u12", 1.8)):
        f = t.slope(n)
        checks[f"{n}_slope_{lo}"] = bool(f and f.slope >= lo)
    return report.write_report(cfg, t, args.out, checks,
                               figures={"initdata.png": list(sweep.PROXIMITY)}, subdir="initdata")


def cmd_simulate(cfg, args):
    h = args.h if args.h is not None else cfg["sweep"]["h"][0]
    pb = sweep.build_problem(cfg)
    d = config_mod.output_dir(cfg, args.out) / "simulate"
    d.mkdir(parents=True, exist_ok=True)
    res = sweep.simulate_case(pb, h, checkpoint=d / f"checkpoint_h{h:g}.npz",
                              checkpoint_stride=args.checkpoint_every)
    res.initial.data.save(d / f"initial_h{h:g}.npz")
    t = ConvergenceTable()
    for k, v in res.values.items():
        t.add(h, k, v)
    t.notes["seconds"] = res.seconds
    return report.write_report(cfg, t, args.out, series={(h, ""): res.series}, subdir="simulate")


def cmd_converge(cfg, args):
    def progress(h, suffix, r):
        log.info("h = %g%s: L2 %.3e strain %.3e (%.0f s)", h, suffix,
                 r.values["error_L2"], r.values["error_strain_integral"], r.seconds)

    t, series = sweep.run_convergence_sweep(cfg, progress=progress)
    checks = {}
    for n in sweep.ERROR_NORMS:
        f = t.slope(n)
        checks[f"{n}_slope_2.5"] = bool(f and f.slope >= 2.5)
    return report.write_report(cfg, t, args.out, checks, series=series,
                               figures={"convergence.png": list(sweep.ERROR_NORMS),
                                        "proximity.png": list(sweep.PROXIMITY)})


def cmd_korn(cfg, args):
    t = sweep.korn_sweep(cfg)
    checks = {"drift_below_2": bool(t.notes["korn_drift"] < 2.0)}
    return report.write_report(cfg, t, args.out, checks,
                               figures={"korn.png": ["korn_pointwise", "korn_family_max"]},
                               subdir="korn")


def selftest():
    """Fast checks of the building blocks; returns {name: bool}."""
    out = {}
    out["legendre"] = abs(correctors.legendre_constant() - 0.25) <= 1e-12
    rng = np.random.default_rng(0)
    G = rng.standard_normal((3, 3))
    out["d2w_zero"] = bool(np.allclose(energy.D2W_tilde(np.zeros((3, 3)), G), energy.sym(G),
                                       atol=1e-12))
    F = 0.05 * rng.standard_normal((3, 3))
    eps = 1e-6
    fd = (energy.W_tilde(F + eps * G) - energy.W_tilde(F - eps * G)) / (2 * eps)
    out["dw_fd"] = abs(fd - energy.dot(energy.DW_tilde(F), G)) <= 1e-7
    hs = np.array([0.2, 0.1, 0.05])
    out["fit_rate"] = abs(fit_rate(hs, hs ** 3).slope - 3.0) <= 1e-12
    mesh = geometry.section_from_config({"shape": "disk", "resolution": 0.2})
    mom = geometry.section_moments(mesh)
    K = 3
    v0 = beam1d.single_mode(1, 1e-3, 2, K)
    tr = beam1d.solve_beam(None, v0, 0 * v0, mom, 1.0, 0.1, K, 1e-3)
    w = tr.omega[0, 1]
    out["beam"] = bool(abs(tr.vhat[-1, 0, 1] - 0.5e-3 * math.cos(w * 0.1)) <= 1e-12)
    return out


VERBS = {
    "correctors": cmd_correctors,
    "beam": cmd_beam,
    "ansatz-residual": cmd_ansatz_residual,
    "initdata": cmd_initdata,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "korn": cmd_korn,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rodlimit", description=__doc__)
    p.add_argument("verb", choices=sorted(VERBS) + ["selftest"])
    p.add_argument("--config", help="INI file with [section] [beam] [sweep] [solver]")
    p.add_argument("--out", default=None, help="output root (default: [sweep] output)")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                   help="override one configuration value (repeatable)")
    p.add_argument("--h", type=float, default=None, help="thickness for `simulate`")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                   help="`simulate`: save the rod state every N steps (0: never)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "selftest":
        res = selftest()
        for k, ok in res.items():
            print(f"{'PASS' if ok else 'FAIL'} {k}")
        return 0 if all(res.values()) else 1
    try:
        cfg = config_mod.load_config(args.config, _overrides(args.set))
    except (config_mod.ConfigError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    t0 = time.time()
    d = VERBS[args.verb](cfg, args)
    with open(d / "report.json") as fh:
        checks = json.load(fh).get("checks", {})
    for k, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {k}")
    print(f"wrote {d} ({time.time() - t0:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
