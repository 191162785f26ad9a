"""h-sweeps through the full pipeline.

For each thickness h: correctors and beam data (h-independent), compatible
initial data, the nonlinear rod solve, and the error of the rod solution
against the ansatz.  Every stage failure is recorded per h and the sweep
moves on.
"""

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import time

import numpy as np

from .. import beam1d, correctors, geometry, initial_data, norms, rod3d
from . import ansatz
from .rates import ConvergenceTable, floor_protocol

log = logging.getLogger(__name__)


@dataclass
class Problem:
    cfg: dict
    mesh: object
    moments: object
    grid: object
    cs: object
    v0: np.ndarray
    v1: np.ndarray
    g: object
    traj: object
    scale: float
    resolution: float

    @property
    def K(self):
        return self.grid.n_modes - 1


def beam_data(cfg, moments, K):
    """(v0, v1, g, factor): a single mode in x2 direction, optionally with a
    quarter-period-shifted x3 velocity (whirl), scaled per amplitude_mode."""
    b = cfg["beam"]
    k, L = int(b["mode"]), float(b["L"])
    v0 = beam1d.single_mode(k, 1.0, 2, K)
    v1 = np.zeros_like(v0)
    if b["whirl"]:
        w3 = math.sqrt(moments.I3) * (2.0 * math.pi * k / L) ** 2
        v1 = w3 * beam1d.single_mode(k, 1.0, 3, K, phase=-0.5 * math.pi)
    if b["forcing"] in ("zero", "none") or b["forcing_amplitude"] == 0.0:
        g = beam1d.zero_forcing()
    else:
        g = beam1d.make_forcing(b["forcing"], k=k, amplitude=float(b["forcing_amplitude"]),
                                component=3, L=L, frequency=float(b["forcing_frequency"]))
    if b["amplitude_mode"] == "direct":
        a = float(b["amplitude"])
        return a * v0, a * v1, g, a
    sn = beam1d.smallness_norms(v0, v1, g, L, K)
    size = max(sn.values())
    a = float(b["M"]) / size if size > 0 else 0.0
    return a * v0, a * v1, g.scaled(a), a


def build_problem(cfg, resolution=None, variant=None):
    sec = dict(cfg["section"])
    res = float(resolution if resolution is not None else sec["resolution"])
    sec.pop("floor_resolution", None)
    sec["resolution"] = res
    mesh = geometry.section_from_config(sec)
    moments = geometry.section_moments(mesh)
    grid = rod3d.assemble_grid(mesh, cfg["beam"]["L"], cfg["sweep"]["n1"])
    cs = correctors.solve_correctors(mesh, moments, variant or cfg["solver"]["corrector_variant"])
    K = grid.n_modes - 1
    v0, v1, g, a = beam_data(cfg, moments, K)
    traj = beam1d.solve_beam(g, v0, v1, moments, cfg["beam"]["L"], cfg["sweep"]["T"], K,
                             cfg["solver"]["beam_dt"])
    return Problem(cfg, mesh, moments, grid, cs, v0, v1, g, traj, a, res)


def rod_forcing(pb):
    """Nodal f_h(t) = (0, g(t)) for the rod solver, or None."""
    if pb.g.coeffs_fn is None:
        return None
    return lambda t: ansatz.beam_forcing_field(pb.grid, pb.traj, t)


# ---------------------------------------------------------------- residuals

def run_residual_sweep(cfg, pb=None, hs=None, table=None, suffix=""):
    pb = pb or build_problem(cfg)
    hs = hs or cfg["sweep"]["residual_h"]
    table = table or ConvergenceTable()
    n_t = cfg["sweep"]["residual_times"]
    theta = cfg["solver"]["theta"]
    for h in hs:
        r = ansatz.interior_residual(pb.grid, pb.traj, pb.cs, h, n_times=n_t, theta=theta)
        b = ansatz.boundary_residual(pb.grid, pb.traj, pb.cs, h, n_times=n_t)
        table.add(h, "interior_residual" + suffix, r.sup)
        table.add(h, "boundary_residual" + suffix, b.sup)
        table.add(h, "boundary_h6_block" + suffix, b.extra["h6_block"])
        table.notes.setdefault("a_neumann" + suffix, {
            "weak": b.extra["a_neumann_weak"], "pointwise": b.extra["a_neumann_pointwise"]})
    return table


# ---------------------------------------------------------------- initial data

@dataclass
class InitialCase:
    h: float
    data: object
    corrected: tuple
    tilde: tuple
    values: dict = field(default_factory=dict)


def construct_initial(pb, h):
    cfg = pb.cfg
    sv = cfg["solver"]
    grid = pb.grid
    D = pb.traj.derivatives
    if D is None:
        raise beam1d.CapabilityError("the forcing lacks the time derivatives initial data need")
    u3, u4 = initial_data.build_u34(D[3], D[4], h, grid)
    data = initial_data.fixed_point_u012(grid, h, pb.g, u3, u4, tol=sv["fixed_point_tol"],
                                         maxiter=sv["maxiter"], delta=sv["delta"],
                                         theta=sv["theta"])
    g2, g3, g4, u2c, u3b, u4b = initial_data.gamma_corrections(grid, h, data, delta=sv["delta"])
    tilde = ansatz.ansatz_initial(D, pb.cs, grid, h, orders=(0, 1, 2))
    case = InitialCase(h, data, (u2c, u3b, u4b), tilde)
    fields = (data.u0, data.u1, u2c)
    v = case.values
    v["contraction_factor"] = data.contraction_factor
    v["fixed_point_iterations"] = len(data.log.residuals)
    for j, (u, ut) in enumerate(zip(fields, tilde)):
        v[f"proximity_u{j}"] = initial_data.b_norm(grid, u - ut, h)
    v["magnitude_u0"] = norms.aggregate_norm(grid, data.u0, h)
    v["magnitude_u12"] = max(norms.aggregate_norm(grid, data.u1, h),
                             norms.aggregate_norm(grid, u2c, h))
    v["gamma2"], v["gamma3"], v["gamma4"] = abs(g2), abs(g3), abs(g4)
    v["defining_residual"] = max(data.residuals.values())
    return case


def run_initdata_sweep(cfg, pb=None, hs=None, table=None, suffix="", save_dir=None):
    """Initial-data quantities per h; with save_dir each InitialDataSet is
    written as initial_h<h>.npz plus its iteration log CSV."""
    pb = pb or build_problem(cfg)
    hs = hs or cfg["sweep"]["h"]
    table = table or ConvergenceTable()
    for h in hs:
        try:
            case = construct_initial(pb, h)
        except Exception as exc:          # recorded per h, sweep continues
            table.failures[f"{h}{suffix}"] = f"initial data: {type(exc).__name__}: {exc}"
            continue
        for k, val in case.values.items():
            table.add(h, k + suffix, val)
        if save_dir is not None:
            case.data.save(Path(save_dir) / f"initial_h{h:g}{suffix.replace('@', '_')}.npz")
    return table


# ---------------------------------------------------------------- full pipeline

@dataclass
class CaseResult:
    h: float
    values: dict
    series: dict
    seconds: float
    initial: object = None


def simulate_case(pb, h, case=None, record_stride=1, checkpoint=None, checkpoint_stride=0):
    """Nonlinear rod solve from the compatible data and the error against the
    ansatz: sup_t ||u - u~||_L2 and sup_t ||(1/h) e_h(int_0^t (u - u~))||_L2.
    checkpoint/checkpoint_stride are passed to the rod solver."""
    cfg = pb.cfg
    sv = cfg["solver"]
    grid = pb.grid
    T = cfg["sweep"]["T"]
    t0 = time.time()
    case = case or construct_initial(pb, h)
    err = {"t": [], "l2": [], "strain_int": []}
    state = {"acc": np.zeros_like(case.data.u0), "prev": None, "tprev": 0.0}

    def callback(n, t, u, w):
        E = u - ansatz.assemble_ansatz(pb.traj, pb.cs, grid, h, t).total
        if state["prev"] is not None:
            state["acc"] = state["acc"] + 0.5 * (t - state["tprev"]) * (E + state["prev"])
        state["prev"], state["tprev"] = E, t
        I = state["acc"]
        e_int = math.sqrt(max(float(np.sum(I * rod3d.apply_stiffness(grid, h, I))), 0.0))
        if n % record_stride == 0:
            err["t"].append(t)
            err["l2"].append(grid.l2(E))
            err["strain_int"].append(e_int)
        else:
            err["l2"][-1] = max(err["l2"][-1], grid.l2(E))
            err["strain_int"][-1] = max(err["strain_int"][-1], e_int)

    traj = rod3d.solve_nonlinear_wave(grid, h, rod_forcing(pb), case.data.u0, case.data.u1, T,
                                      sv["dt"], delta=sv["delta"], tol=sv["tol"],
                                      theta=sv["theta"], callback=callback, stride=0,
                                      max_halvings=sv["max_halvings"], checkpoint=checkpoint,
                                      checkpoint_stride=checkpoint_stride)
    e = np.asarray(traj.energy)
    w = np.asarray(traj.work)
    values = dict(case.values)
    values["error_L2"] = float(np.max(err["l2"]))
    values["error_strain_integral"] = float(np.max(err["strain_int"]))
    values["solution_L2"] = grid.l2(case.tilde[0])
    values["energy_balance"] = float(np.max(np.abs(e - w - e[0])) / max(abs(e[0]), 1e-300))
    values["newton_mean"] = float(np.mean(traj.newton)) if traj.newton else 0.0
    seconds = time.time() - t0
    if seconds > sv["case_budget_s"]:
        log.warning("h = %g took %.0f s, above the per-case budget of %.0f s",
                    h, seconds, sv["case_budget_s"])
    series = {k: np.asarray(v) for k, v in err.items()}
    series["energy"] = e
    return CaseResult(h, values, series, seconds, case)


ERROR_NORMS = ("error_L2", "error_strain_integral")
PROXIMITY = ("proximity_u0", "proximity_u1", "proximity_u2")


def run_convergence_sweep(cfg, resolutions=None, progress=None, record_stride=10):
    """Full sweep; with the floor protocol the h-list is repeated at a second
    section resolution and every slope is compared between the two."""
    table = ConvergenceTable()
    if resolutions is None:
        resolutions = [cfg["section"]["resolution"]]
        if cfg["sweep"]["floor_protocol"]:
            resolutions.append(cfg["section"]["floor_resolution"])
    series = {}
    for r_i, res in enumerate(resolutions):
        suffix = "" if r_i == 0 else "@fine"
        try:
            pb = build_problem(cfg, res)
        except Exception as exc:
            table.failures[f"setup{suffix}"] = f"{type(exc).__name__}: {exc}"
            continue
        for h in cfg["sweep"]["h"]:
            try:
                res_case = simulate_case(pb, h, record_stride=record_stride)
            except Exception as exc:
                table.failures[f"{h}{suffix}"] = f"{type(exc).__name__}: {exc}"
                log.warning("h = %g failed: %s", h, exc)
                continue
            for k, val in res_case.values.items():
                table.add(h, k + suffix, val)
            series[(h, suffix)] = res_case.series
            table.notes.setdefault("seconds", {})[f"{h}{suffix}"] = res_case.seconds
            if progress:
                progress(h, suffix, res_case)
    table.notes["floor_protocol"] = floor_report(table, ERROR_NORMS + PROXIMITY)
    return table, series


def floor_report(table, names, max_change=0.2):
    out = {}
    for n in names:
        a, b = table.slope(n), table.slope(n + "@fine")
        if b is None:
            out[n] = {"accepted": None, "change": None,
                      "slope": a.slope if a else None, "slope_fine": None}
            continue
        rep = floor_protocol(a.slope if a else None, b.slope if b else None, max_change)
        rep.update(slope=a.slope if a else None, slope_fine=b.slope if b else None)
        out[n] = rep
    return out


# ---------------------------------------------------------------- Korn

def korn_family(grid, h, n_random=4, seed=0):
    """Test fields: rigid rotation x_perp, bending-type fields, a gradient
    field and filtered random fields."""
    rng = np.random.default_rng(seed)
    x2, x3 = grid.nodes[:, 0], grid.nodes[:, 1]
    c = np.cos(2.0 * np.pi * grid.x1 / grid.L)[:, None]
    s = np.sin(2.0 * np.pi * grid.x1 / grid.L)[:, None]
    fam = {"rotation": grid.x_perp()}
    bend = np.zeros((grid.n1, grid.N, 3))
    bend[:, :, 1] = h * c
    bend[:, :, 0] = -x2[None] * 2.0 * np.pi / grid.L * (-s) * h ** 2
    fam["bending"] = bend
    grad = np.zeros_like(bend)
    phi = c * (x2 ** 2 - x3 ** 2)[None]
    grad[:, :, 0] = grid.d1(phi)
    d2, d3 = grid.recover(phi[..., None])
    grad[:, :, 1] = h * d2[..., 0]
    grad[:, :, 2] = h * d3[..., 0]
    fam["gradient"] = grad
    fam["rotation+noise"] = grid.x_perp() + 1e-3 * grid.filter(rng.standard_normal(bend.shape))
    for i in range(n_random):
        fam[f"random{i}"] = grid.filter(rng.standard_normal(bend.shape))
    return fam


def korn_sweep(cfg, hs=None, resolution=None):
    sec = dict(cfg["section"])
    sec.pop("floor_resolution", None)
    if resolution is not None:
        sec["resolution"] = resolution
    mesh = geometry.section_from_config(sec)
    grid = rod3d.assemble_grid(mesh, cfg["beam"]["L"], cfg["sweep"]["n1"])
    hs = hs or cfg["sweep"]["korn_h"]
    table = ConvergenceTable()
    family_rows = {}
    for h in hs:
        C, per_mode = norms.korn_constant(grid, h, corrected=True, return_modes=True)
        table.add(h, "korn_pointwise", C)
        table.add(h, "korn_pointwise_mode0", per_mode[0])
        table.add(h, "korn_pointwise_bending", max(per_mode[1:]))
        fam = korn_family(grid, h)
        rows = {}
        for name, u in fam.items():
            lhs, rhs, ratio = norms.korn_measure(grid, u, h, "pointwise")
            lhs_i, rhs_i, ratio_i = norms.korn_measure(grid, u, h, "integral")
            rows[name] = {"pointwise": ratio, "integral": ratio_i}
        finite = [r["pointwise"] for r in rows.values() if math.isfinite(r["pointwise"])]
        table.add(h, "korn_family_max", max(finite))
        table.add(h, "korn_integral_rotation_noise", rows["rotation+noise"]["integral"])
        # without the 1/h weight the integral-form ratio of a rotation grows like 1/h
        lhs_i, rhs_i, _ = norms.korn_measure(grid, fam["rotation"], h, "integral")
        table.add(h, "korn_integral_rotation_unweighted", lhs_i / (h * rhs_i))
        # residual of a rigid rotation after subtracting B(u)/h, with and without the 1/2
        table.add(h, "korn_rotation_lhs_corrected",
                  norms.korn_measure(grid, fam["rotation"], h, "pointwise", True)[0])
        table.add(h, "korn_rotation_lhs_uncorrected",
                  norms.korn_measure(grid, fam["rotation"], h, "pointwise", False)[0])
        family_rows[h] = rows
    vals = [v for h_, n, v in table.rows if n == "korn_pointwise"]
    table.notes["korn_drift"] = max(vals) / min(vals)
    sub = [v for h_, n, v in table.rows if n == "korn_pointwise" and h_ < 1.0]
    table.notes["korn_drift_h_below_1"] = max(sub) / min(sub) if sub else None
    table.notes["family"] = family_rows
    return table
