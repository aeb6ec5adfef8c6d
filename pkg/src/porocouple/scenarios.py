"""Channel-with-porous-obstacle scenarios and their flux observables.

A scenario is a channel flowing left to right over a porous block mounted
on the bottom wall. The block's permeability is an anisotropic tensor
whose weak principal axis is rotated against the flow; varying that angle
and the anisotropy ratio is what the three shipped cases probe. All
observables are mass fluxes: through the three rim segments of the block
(positive into the block) and through a vertical cut line in the channel.
"""

import os
import time as _time

import numpy as np

from .coupling import build_coupled_problem, pm_boundary_tagger
from .fluid import make_fluid
from .mesh import (Mesh, build_cartesian_mesh, build_ff_mesh,
                   crisscross_triangulation, import_triangle_mesh)
from .output import FieldWriter, flux_csv_header, flux_csv_row, write_summary
from .solver import CoupledSystem, advance, steady_solve


class ScenarioError(ValueError):
    """Raised for scenario definitions or probes that do not fit the grid."""


def weak_axis_permeability(k, alpha_degrees, beta):
    """Anisotropic tensor with principal value k/beta along `alpha_degrees`.

    The direction at the given angle is the hard one; its perpendicular
    keeps the full permeability k. With beta = 1 the tensor is k times the
    identity for every angle.
    """
    if k <= 0.0:
        raise ScenarioError(f"permeability must be positive, got {k!r}")
    if beta < 1.0:
        raise ScenarioError(f"anisotropy ratio must be at least 1, got {beta!r}")
    a = np.deg2rad(float(alpha_degrees))
    c, s = np.cos(a), np.sin(a)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([float(k) / float(beta), float(k)]) @ rot.T


class Scenario:
    """One built scenario: meshes, monolithic system, and probe indices."""

    def __init__(self, cfg, problem, system, segments, fluid):
        self.cfg = cfg
        self.problem = problem
        self.system = system
        self.segments = segments    # rim segment name -> interface unit indices
        self.fluid = fluid
        self.ff_mesh = problem.ff_mesh
        self.pm_mesh = problem.pm_mesh

    def initial_state(self):
        return self.system.initial_state(self.cfg.p_right)

    def dof_counts(self):
        sy = self.system
        return {"ff_pressure": sy.n_ffc, "ff_velocity": sy.n_v,
                "pm_pressure": sy.n_pmc, "total": sy.n}


def _build_pm_mesh(cfg, tagger):
    box = cfg.pm_box
    if not cfg.pm_triangulated:
        return build_cartesian_mesh((box[0], box[1]),
                                    (box[2] - box[0], box[3] - box[1]),
                                    cfg.pm_nx, cfg.pm_ny, boundary_tag=tagger)
    if cfg.pm_nodes_file:
        return import_triangle_mesh(cfg.pm_nodes_file, cfg.pm_elements_file,
                                    boundary_tag=tagger)
    nodes, tris = crisscross_triangulation(box, cfg.pm_nx, cfg.pm_ny)
    return Mesh(nodes, tris, boundary_tag=tagger)


def scenario_meshes(cfg):
    """Meshes only, for dof inspection without paying for full assembly."""
    ff_mesh = build_ff_mesh(cfg.domain, cfg.ff_nx, cfg.ff_ny, pm_box=cfg.pm_box)
    pm_mesh = _build_pm_mesh(cfg, pm_boundary_tagger(cfg.pm_box, cfg.domain))
    return ff_mesh, pm_mesh


def build_scenario(cfg):
    domain = cfg.domain
    pm_box = cfg.pm_box
    ff_mesh = build_ff_mesh(domain, cfg.ff_nx, cfg.ff_ny, pm_box=pm_box)
    pm_mesh = _build_pm_mesh(cfg, pm_boundary_tagger(pm_box, domain))
    fluid = make_fluid(cfg.fluid_kind, **cfg.fluid_parameters())
    perm = weak_axis_permeability(cfg.perm_k, cfg.perm_alpha_degrees, cfg.perm_beta)

    wall = ("velocity", (0.0, 0.0))
    ff_bcs = {"left": ("pressure", cfg.p_left), "right": ("pressure", cfg.p_right),
              "top": wall, "bottom": wall}
    pm_bcs = {"bottom": ("velocity", 0.0)}

    problem = build_coupled_problem(ff_mesh, ff_bcs, fluid, pm_mesh, perm,
                                    pm_bcs, fluid, scheme=cfg.scheme,
                                    alpha_bf=cfg.alpha_bf, xi=cfg.xi,
                                    p_ref=cfg.p_ref)
    system = CoupledSystem(problem)
    segments = _rim_segments(problem, pm_box)
    return Scenario(cfg, problem, system, segments, fluid)


def _rim_segments(problem, pm_box):
    """Split the interface units into upstream, downstream, and top runs."""
    mesh = problem.ff_mesh
    atol = 1e-9 * max(pm_box[2] - pm_box[0], pm_box[3] - pm_box[1])
    centers = mesh.face_centers[problem.t_face]
    axes = mesh.face_axis[problem.t_face]
    segments = {
        "in": np.nonzero((axes == 0) & (np.abs(centers[:, 0] - pm_box[0]) <= atol))[0],
        "out": np.nonzero((axes == 0) & (np.abs(centers[:, 0] - pm_box[2]) <= atol))[0],
        "top": np.nonzero((axes == 1) & (np.abs(centers[:, 1] - pm_box[3]) <= atol))[0],
    }
    counted = sum(len(ix) for ix in segments.values())
    if counted != len(problem.t_face):
        raise ScenarioError(
            f"rim classification covered {counted} of {len(problem.t_face)} "
            f"interface faces; the block must expose left, right, and top runs")
    return segments


def boundary_mass_flux(scenario, u, segment):
    """Total mass flux through one rim segment, positive into the block."""
    idx = scenario.segments.get(segment)
    if idx is None:
        raise ScenarioError(f"unknown rim segment {segment!r} "
                            f"(expected one of {sorted(scenario.segments)})")
    if len(idx) == 0:
        raise ScenarioError(f"rim segment {segment!r} has no faces")
    p, v, q = scenario.system.split(u)
    phi = scenario.problem.transfer_fluxes(p, v, q)
    return float(np.sum(phi[idx]))


def interface_exchange(scenario, u):
    """Total mass flux entering the block, the positive part of the transfer."""
    p, v, q = scenario.system.split(u)
    phi = scenario.problem.transfer_fluxes(p, v, q)
    return float(np.sum(np.maximum(phi, 0.0)))


def ff_cut_line_flux(mesh, fluid, p_ref, p, v, x, y0, y1):
    """Mass flux in +x through the vertical segment x = const, y0 < y < y1.

    Sums measure * upwinded density * velocity over the column of x-faces
    the segment covers; the segment must lie on a face column and span
    whole cells.
    """
    h = mesh.h
    ox, oy = mesh.box[0], mesh.box[1]

    def lattice(value, what):
        r = (value - (ox if what == "x" else oy)) / h
        if abs(r - round(r)) > 1e-9 * max(abs(r), 1.0):
            raise ScenarioError(
                f"cut line {what} = {value:g} does not lie on the face lattice "
                f"(spacing {h:g})")
        return round(r)

    i = lattice(x, "x")
    j0, j1 = lattice(y0, "y"), lattice(y1, "y")
    if j1 <= j0:
        raise ScenarioError(f"cut line spans no faces (y0 = {y0:g}, y1 = {y1:g})")
    faces = []
    for j in range(j0, j1):
        f = int(mesh.xface_id[i, j])
        if f < 0:
            raise ScenarioError(
                f"cut line x = {x:g} crosses removed cells at y = {oy + (j + 0.5) * h:g}")
        faces.append(f)

    p = np.asarray(p, dtype=float)
    total = 0.0
    for f in faces:
        cm, cp = (int(c) for c in mesh.face_cells[f])
        rho_m = fluid.density(p[cm] + p_ref) if cm >= 0 else None
        rho_p = fluid.density(p[cp] + p_ref) if cp >= 0 else None
        if rho_m is None:
            rho_m = rho_p
        if rho_p is None:
            rho_p = rho_m
        q = float(v[f])
        w = 1.0 if q > 0.0 else (0.0 if q < 0.0 else 0.5)
        total += h * (w * rho_m + (1.0 - w) * rho_p) * q
    return float(total)


def cut_line_mass_flux(scenario, u, x=None, y0=None, y1=None):
    cfg = scenario.cfg
    p, v, _ = scenario.system.split(u)
    return ff_cut_line_flux(scenario.ff_mesh, scenario.fluid, scenario.system.p_ref,
                            p, v,
                            cfg.cut_x if x is None else x,
                            cfg.cut_y0 if y0 is None else y0,
                            cfg.cut_y1 if y1 is None else y1)


def flux_report(scenario, u):
    """The four tracked fluxes of one state, in CSV column order."""
    return (boundary_mass_flux(scenario, u, "in"),
            boundary_mass_flux(scenario, u, "out"),
            boundary_mass_flux(scenario, u, "top"),
            cut_line_mass_flux(scenario, u))


def steady_state(scenario, **newton_kw):
    """Direct steady solve from rest; suits the gently driven scenarios."""
    kw = {**scenario.cfg.solver.newton_kw(), **newton_kw}
    return steady_solve(scenario.system, scenario.initial_state(), **kw)


class RunResult:
    def __init__(self, scenario, u, t, stationary, steps, fluxes, out_dir):
        self.scenario = scenario
        self.u = u
        self.t = t
        self.stationary = stationary
        self.steps = steps
        self.fluxes = fluxes        # dict over FLUX column names
        self.out_dir = out_dir


def run_scenario(cfg, out_dir=None, observer=None):
    """March one scenario to its horizon, writing fluxes, fields, and a summary.

    Emits fluxes.csv (one row per accepted step), VTK field pairs every
    `output.interval` steps plus one pair per snapshot time and the final
    state, and summary.txt. An extra `observer(t, dt, u, iterations)` is
    called after every accepted step.
    """
    scenario = build_scenario(cfg)
    out = out_dir or cfg.out_dir or "."
    os.makedirs(out, exist_ok=True)
    sol = cfg.solver
    fields = FieldWriter(scenario, out, p_offset=cfg.out_p_ref)
    wall_start = _time.perf_counter()

    step_index = [0]
    with open(os.path.join(out, "fluxes.csv"), "w", encoding="utf-8",
              newline="\n") as csv:
        csv.write(flux_csv_header())

        def record(t, dt, u, iterations):
            step_index[0] += 1
            csv.write(flux_csv_row(t, flux_report(scenario, u)))
            if cfg.out_interval > 0 and step_index[0] % cfg.out_interval == 0:
                fields.write(f"step{step_index[0]:05d}", u, time=t)
            if observer is not None:
                observer(t, dt, u, iterations)

        result = advance(scenario.system, scenario.initial_state(),
                         sol.t_end, sol.dt_initial,
                         snapshot_times=sol.snapshots,
                         stationary_tol=sol.stationary_tol,
                         growth=sol.growth, backoff=sol.backoff,
                         dt_max=sol.dt_max, newton_kw=sol.newton_kw(),
                         observer=record)

    for t in sorted(result.snapshots):
        fields.write(f"snapshot_t{t:g}", result.snapshots[t], time=t)
    fields.write("final", result.u, time=result.t)

    names = ("gamma_in", "gamma_out", "gamma_top", "constriction")
    final = dict(zip(names, flux_report(scenario, result.u)))
    iters = [s[2] for s in result.steps]
    counts = scenario.dof_counts()
    write_summary(os.path.join(out, "summary.txt"), [
        ("scenario.kind", cfg.kind),
        ("darcy.scheme", cfg.scheme),
        ("perm.beta", float(cfg.perm_beta)),
        ("perm.alpha_degrees", float(cfg.perm_alpha_degrees)),
        ("run.stationary", "yes" if result.stationary else "no"),
        ("run.t_final", float(result.t)),
        ("run.steps", str(len(result.steps))),
        ("run.newton_total", str(sum(iters))),
        ("run.newton_max", str(max(iters, default=0))),
        ("run.wall_seconds", float(_time.perf_counter() - wall_start)),
        *((f"flux.{k}", float(vv)) for k, vv in final.items()),
        ("flux.rim_closure", float(final["gamma_in"] + final["gamma_out"]
                                   + final["gamma_top"])),
        *((f"dof.{k}", str(vv)) for k, vv in counts.items()),
    ])
    return RunResult(scenario, result.u, result.t, result.stationary,
                     result.steps, final, out)
