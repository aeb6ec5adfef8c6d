"""Verification toolbox.

Independent reference solves and manufactured-solution studies used by the
test suite and the `verify` command. The dense reference solver keeps every
sub-face pressure as an explicit unknown and assembles one global system,
so it shares no assembly code with the table-based production path.
"""

from __future__ import annotations

import time as _time

import numpy as np

from . import darcy
from .fluid import make_fluid
from .freeflow import build_freeflow_assembly
from .mesh import (INTERIOR, Mesh, box_boundary_tagger, build_cartesian_mesh,
                   build_ff_mesh, build_interaction_regions,
                   crisscross_triangulation, diagonal_triangulation)
from .solver import FreeFlowSystem, PorousSystem, advance, steady_solve


def triangulated_mesh(box, nx, ny, pattern=diagonal_triangulation):
    """Triangulated box with the usual side tags."""
    nodes, tris = pattern(box, nx, ny)
    atol = 1e-12 * max(box[2] - box[0], box[3] - box[1])
    return Mesh(nodes, tris, box_boundary_tagger(box, atol))


def dense_reference_solve(mesh, xi, perm, bcs, mu, q_vol=None):
    """Steady multi-point solve with explicit sub-face unknowns.

    Solves sum_out F = mu |K| q_vol per cell together with flux continuity
    per interior sub-face, as one dense linear system. Intended for meshes
    of a few hundred cells; raises on anything larger.
    """
    if mesh.n_cells > 500:
        raise ValueError(f"reference solve limited to 500 cells, got {mesh.n_cells}")
    perm = np.asarray(perm, dtype=float)
    if perm.shape == (2, 2):
        perm = np.broadcast_to(perm, (mesh.n_cells, 2, 2))

    regions = build_interaction_regions(mesh, xi)

    def bc_of(tag):
        if tag == INTERIOR:
            return None
        if tag not in bcs:
            raise ValueError(f"no boundary condition for tag {tag!r}")
        return bcs[tag]

    def value_at(value, point):
        if callable(value):
            return float(value(point[0], point[1]))
        value = np.asarray(value, dtype=float)
        return float(value)

    # enumerate sub-face pressure unknowns; Dirichlet ones are known data
    n = mesh.n_cells
    sub_id = {}
    sub_known = {}
    for ri, region in enumerate(regions):
        for sj, sf in enumerate(region.subfaces):
            bc = bc_of(sf.tag)
            if bc is not None and bc[0] == "pressure":
                sub_known[(ri, sj)] = value_at(bc[1], sf.cont_point)
            else:
                sub_id[(ri, sj)] = n + len(sub_id)
    m = len(sub_id)

    a = np.zeros((n + m, n + m))
    b = np.zeros(n + m)
    if q_vol is not None:
        b[:n] = mu * mesh.cell_volumes * np.asarray(q_vol, dtype=float)

    def flux_terms(ri, region, a_local, j):
        """Linear terms of F_{K, j}, K the a_local-th region cell."""
        K = region.cells[a_local]
        j1, j2 = region.cell_subfaces[a_local]
        xk = mesh.cell_centers[K]
        d = np.column_stack([np.asarray(region.subfaces[j1].cont_point) - xk,
                             np.asarray(region.subfaces[j2].cont_point) - xk])
        sf = region.subfaces[j]
        sgn = 1.0 if sf.cells[0] == K else -1.0
        w = np.linalg.solve(d, perm[K].T @ np.asarray(sf.normal))
        scale = -sf.measure * sgn
        terms = []
        const = 0.0
        delta_sum = 0.0
        for jj, wc in zip((j1, j2), w):
            coef = scale * wc
            if (ri, jj) in sub_id:
                terms.append((sub_id[(ri, jj)], coef))
            else:
                const += coef * sub_known[(ri, jj)]
            delta_sum += coef
        terms.append((K, -delta_sum))
        return terms, const

    for ri, region in enumerate(regions):
        for a_local, K in enumerate(region.cells):
            for j in region.cell_subfaces[a_local]:
                terms, const = flux_terms(ri, region, a_local, j)
                # cell balance uses the cell's own one-sided flux
                for col, coef in terms:
                    a[K, col] += coef
                b[K] -= const
                sf = region.subfaces[j]
                key = (ri, j)
                if key in sub_id and sf.cells[0] == K:
                    row = sub_id[key]
                    bc = bc_of(sf.tag)
                    if bc is None:
                        # continuity: F_K + F_L = 0, both halves land here
                        pass
                    elif bc[0] == "velocity":
                        v = bc[1]
                        if callable(v):
                            v = v(sf.cont_point[0], sf.cont_point[1])
                        v = np.asarray(v, dtype=float)
                        if v.ndim:
                            v = float(v @ np.asarray(sf.normal))
                        b[row] += mu * sf.measure * float(v)
                    for col, coef in terms:
                        a[row, col] += coef
                    b[row] -= const
                elif key in sub_id:
                    row = sub_id[key]
                    for col, coef in terms:
                        a[row, col] += coef
                    b[row] -= const

    sol = np.linalg.solve(a, b)
    return sol[:n]


# ---------------------------------------------------------------------------
# manufactured solution


def manufactured_pressure(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def manufactured_source(perm, mu):
    """Volumetric source balancing -div((K / mu) grad p) for the sine product."""
    kxx, kxy, kyy = perm[0, 0], perm[0, 1], perm[1, 1]

    def q(x, y):
        ss = np.sin(np.pi * x) * np.sin(np.pi * y)
        cc = np.cos(np.pi * x) * np.cos(np.pi * y)
        return (np.pi ** 2 / mu) * ((kxx + kyy) * ss - 2.0 * kxy * cc)

    return q


def pressure_l2_error(mesh, p, exact):
    x = mesh.cell_centers
    diff = p - exact(x[:, 0], x[:, 1])
    return float(np.sqrt(np.sum(mesh.cell_volumes * diff ** 2)))


def convergence_study(scheme, sizes=(4, 8, 16, 32), perm=None, mu=1.0, xi=0.5):
    """Mesh-refinement study on diagonal triangulations of the unit square.

    Returns (h_list, error_list, slope) where slope is the least-squares
    fit of log error against log h.
    """
    if perm is None:
        perm = darcy.rotated_permeability(1.0, 30.0, 10.0)
    bcs = {tag: ("pressure", manufactured_pressure)
           for tag in ("left", "right", "bottom", "top")}
    q = manufactured_source(perm, mu)
    hs, errs = [], []
    for nx in sizes:
        mesh = triangulated_mesh((0.0, 0.0, 1.0, 1.0), nx, nx)
        regions = build_interaction_regions(mesh, xi)
        table = darcy.build_darcy_table(mesh, regions, perm, bcs, mu, scheme=scheme)
        x = mesh.cell_centers
        p = darcy.steady_volumetric_solve(table, q(x[:, 0], x[:, 1]))
        hs.append(1.0 / nx)
        errs.append(pressure_l2_error(mesh, p, manufactured_pressure))
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return hs, errs, slope


def linear_patch_error(mesh, scheme, perm, xi=0.5, gradient=(1.0, -0.7), offset=2.0):
    """Max nodal error for an exact linear pressure field, Dirichlet everywhere."""
    gx, gy = gradient

    def p_exact(x, y):
        return offset + gx * x + gy * y

    tags = {mesh.face_tags[f] for f in range(mesh.n_faces)} - {INTERIOR}
    bcs = {tag: ("pressure", p_exact) for tag in tags}
    regions = build_interaction_regions(mesh, xi)
    table = darcy.build_darcy_table(mesh, regions, perm, bcs, 1.0, scheme=scheme)
    p = darcy.steady_volumetric_solve(table)
    x = mesh.cell_centers
    return float(np.max(np.abs(p - p_exact(x[:, 0], x[:, 1]))))


def divergence_matrix(mesh, table):
    """Dense cell-balance matrix of the unit fluxes, plus the constant part."""
    n = mesh.n_cells
    a = np.zeros((n, n))
    k0 = np.zeros(n)
    for f, (coef, const) in darcy.parent_flux_stencils(table).items():
        cm, cp = (int(c) for c in mesh.face_cells[f])
        a[cm] += coef
        k0[cm] += const
        if cp >= 0:
            a[cp] -= coef
            k0[cp] -= const
    return a, k0


# ---------------------------------------------------------------------------
# channel flow reference


class PoiseuilleCase:
    """Plane channel flow driven by a constant pressure drop.

    For a constant fluid the exact solution is a parabolic profile
    vx(y) = dp / (2 mu L) * y (H - y) with vy = 0 and the pressure falling
    linearly from +dp/2 at the inlet to -dp/2 at the outlet.
    """

    def __init__(self, height=0.25, dp=1.0e-6, mu=1.8e-5, length=1.0, density=1.2):
        self.height = float(height)
        self.dp = float(dp)
        self.mu = float(mu)
        self.length = float(length)
        self.density = float(density)

    def vx(self, y):
        return self.dp / (2.0 * self.mu * self.length) * y * (self.height - y)

    def centerline(self):
        return self.dp * self.height ** 2 / (8.0 * self.mu * self.length)

    def pressure(self, x):
        return self.dp * (0.5 - x / self.length)

    def sampled_mass_flux(self, y0, y1, h):
        """Midpoint-rule mass flux of the exact profile over [y0, y1].

        This is the quadrature the face sums use, so a discrete solution
        that nails the profile matches it to solver precision while the
        continuous integral differs at O(h^2).
        """
        centers = np.arange(y0 + 0.5 * h, y1, h)
        return float(self.density * h * np.sum(self.vx(centers)))


def solve_poiseuille(case=None, nx=80, ny=20, abs_tol=1.0e-20):
    """Converge the channel onto the exact profile and return the pieces.

    The default Newton floor is far below the usual residual tolerance:
    velocity error tracks residual / mu, so matching a parabola to 1e-9
    relative with mu ~ 1e-5 means driving the residual to the roundoff
    floor. The drop is applied as +-dp/2 around a zero base so every
    boundary constant is exactly representable.
    """
    case = case or PoiseuilleCase()
    mesh = build_ff_mesh((0.0, 0.0, case.length, case.height), nx, ny)
    fluid = make_fluid("constant", density=case.density, viscosity=case.mu)
    wall = ("velocity", (0.0, 0.0))
    bcs = {"left": ("pressure", 0.5 * case.dp), "right": ("pressure", -0.5 * case.dp),
           "top": wall, "bottom": wall}
    system = FreeFlowSystem(build_freeflow_assembly(mesh, bcs, fluid))
    res = steady_solve(system, system.initial_state(0.0),
                       abs_tol=abs_tol, rel_tol=0.0)
    return case, mesh, system, res.u


def poiseuille_errors(case, mesh, system, u):
    """Max relative profile errors at interior face and cell dofs."""
    p, v = system.split(u)
    vmax = case.centerline()
    rel_x = 0.0
    rel_y = 0.0
    for f in range(mesh.n_faces):
        if mesh.face_tags[f] != INTERIOR:
            continue
        y = mesh.face_centers[f][1]
        if mesh.face_axis[f] == 0:
            exact = case.vx(y)
            rel_x = max(rel_x, abs(v[f] - exact) / abs(exact))
        else:
            rel_y = max(rel_y, abs(v[f]) / vmax)
    exact_p = case.pressure(mesh.cell_centers[:, 0])
    rel_p = float(np.max(np.abs(p - exact_p)) / np.max(np.abs(exact_p)))
    return {"vx": float(rel_x), "vy": float(rel_y), "p": rel_p}


# ---------------------------------------------------------------------------
# time integration reference


def single_cell_decay(k=2.0e-12, dp=0.5, p_ref=1.0e5):
    """One porous cell venting through a pressure boundary: a stiff-free
    exponential pressure decay with a time constant near 2 s."""
    mesh = build_cartesian_mesh((0.0, 0.0), (0.2, 0.2), 1, 1)
    regions = build_interaction_regions(mesh, 0.5)
    bcs = {"left": ("pressure", p_ref), "right": ("velocity", 0.0),
           "top": ("velocity", 0.0), "bottom": ("velocity", 0.0)}
    fluid = make_fluid("ideal_gas_air")
    table = darcy.build_darcy_table(mesh, regions, k * np.eye(2), bcs,
                                    fluid.viscosity(p_ref), scheme="tpfa",
                                    p_ref=p_ref)
    system = PorousSystem(table, fluid)
    return system, system.initial_state(p_ref + dp)


def linear_slab(k=1.0e-12, p_in=1.0e5 + 0.02, p_ref=1.0e5, scheme="mpfa"):
    """Gently driven porous slab whose Newton behavior is effectively linear.

    Deviations stay around 0.1 Pa, keeping the finite-difference Jacobian
    error well below the relative tolerance so the steady solve lands in a
    single iteration.
    """
    mesh = build_cartesian_mesh((0.0, 0.0), (0.2, 0.2), 4, 4)
    regions = build_interaction_regions(mesh, 0.5)
    bcs = {"left": ("pressure", p_in), "right": ("velocity", 0.0),
           "top": ("velocity", 0.0), "bottom": ("velocity", 0.0)}
    fluid = make_fluid("ideal_gas_air")
    table = darcy.build_darcy_table(mesh, regions, k * np.eye(2), bcs,
                                    fluid.viscosity(p_ref), scheme=scheme,
                                    p_ref=p_ref)
    return PorousSystem(table, fluid)


def euler_order_study(t_end=2.0, dts=(0.2, 0.1, 0.05, 0.025), ref_refine=1024):
    """Observed implicit Euler orders on the single-cell decay.

    Errors against a self-converged fine-step reference; returns the error
    per step size and the log2 ratios of consecutive errors.
    """
    system, u0 = single_cell_decay()

    def endpoint(dt):
        res = advance(system, u0, t_end, dt, adaptive=False,
                      newton_kw={"abs_tol": 1.0e-13})
        return float(res.u[0])

    ref = endpoint(t_end / ref_refine)
    errors = [abs(endpoint(dt) - ref) for dt in dts]
    orders = [float(np.log2(errors[i] / errors[i + 1]))
              for i in range(len(errors) - 1)]
    return errors, orders


# ---------------------------------------------------------------------------
# named check suites


class CheckResult:
    """One verification check; `seconds` is the wall time of its suite."""

    def __init__(self, name, passed, value, bound, seconds):
        self.name = name
        self.passed = bool(passed)
        self.value = float(value)
        self.bound = bound
        self.seconds = float(seconds)


def _patch_checks():
    mesh = triangulated_mesh((0.0, 0.0, 1.0, 1.0), 10, 10)
    perm = darcy.rotated_permeability(1.0, 45.0, 10.0)
    scale = 3.0   # max |p_exact| of the default gradient on the unit square
    em = linear_patch_error(mesh, "mpfa", perm) / scale
    et = linear_patch_error(mesh, "tpfa", perm) / scale
    return [("patch_mpfa_exact", em <= 1.0e-10, em, "<= 1e-10"),
            ("patch_tpfa_inconsistent", et >= 1.0e-3, et, ">= 1e-3")]


def _equivalence_checks():
    mesh = build_cartesian_mesh((0.0, 0.0), (1.0, 0.8), 5, 4)
    perm = np.diag([0.1, 1.0])
    bcs = {"left": ("pressure", 2.0), "right": ("pressure", 1.0),
           "top": ("velocity", 0.0), "bottom": ("velocity", 0.0)}
    regions = build_interaction_regions(mesh, 0.0)
    rel = 0.0
    mats = []
    for scheme in ("mpfa", "tpfa"):
        table = darcy.build_darcy_table(mesh, regions, perm, bcs, 1.0,
                                        scheme=scheme)
        mats.append(divergence_matrix(mesh, table))
    (am, km), (at, kt) = mats
    scale = max(float(np.max(np.abs(at))), float(np.max(np.abs(kt))))
    rel = max(float(np.max(np.abs(am - at))), float(np.max(np.abs(km - kt)))) / scale
    return [("tpfa_mpfa_matrix_equivalence", rel <= 1.0e-12, rel, "<= 1e-12")]


def _oracle_checks():
    cases = [
        ("oracle_diagonal_tris", triangulated_mesh((0.0, 0.0, 1.0, 1.0), 6, 6),
         darcy.rotated_permeability(1.0, 30.0, 10.0)),
        ("oracle_crisscross_tris",
         triangulated_mesh((0.4, 0.0, 0.6, 0.2), 4, 4,
                           pattern=crisscross_triangulation),
         darcy.rotated_permeability(1.0, 45.0, 10.0)),
        ("oracle_cartesian", build_cartesian_mesh((0.0, 0.0), (1.0, 1.0), 5, 5),
         darcy.rotated_permeability(1.0, 60.0, 4.0)),
    ]
    out = []
    for name, mesh, perm in cases:
        tags = {mesh.face_tags[f] for f in range(mesh.n_faces)} - {INTERIOR}
        bcs = {tag: ("pressure", manufactured_pressure) for tag in tags}
        q = manufactured_source(perm, 1.0)
        x = mesh.cell_centers
        q_vol = q(x[:, 0], x[:, 1])
        regions = build_interaction_regions(mesh, 0.5)
        table = darcy.build_darcy_table(mesh, regions, perm, bcs, 1.0,
                                        scheme="mpfa")
        p = darcy.steady_volumetric_solve(table, q_vol)
        p_ref = dense_reference_solve(mesh, 0.5, perm, bcs, 1.0, q_vol)
        rel = float(np.max(np.abs(p - p_ref)) / np.max(np.abs(p_ref)))
        out.append((name, rel <= 1.0e-12, rel, "<= 1e-12"))
    return out


def _poiseuille_checks():
    errs = poiseuille_errors(*solve_poiseuille())
    worst = max(errs.values())
    return [("poiseuille_profile", worst <= 1.0e-9, worst, "<= 1e-9")]


def _euler_checks():
    _, orders = euler_order_study()
    lo, hi = min(orders), max(orders)
    ok = 0.9 <= lo and hi <= 1.1
    worst = lo if abs(lo - 1.0) >= abs(hi - 1.0) else hi
    out = [("euler_first_order", ok, worst, "in [0.9, 1.1]")]

    system = linear_slab()
    res = steady_solve(system, system.initial_state(1.0e5 + 0.1))
    out.append(("linear_one_newton_iteration", res.iterations == 1,
                res.iterations, "== 1"))
    return out


SUITES = {
    "patch": _patch_checks,
    "equivalence": _equivalence_checks,
    "oracle": _oracle_checks,
    "poiseuille": _poiseuille_checks,
    "euler": _euler_checks,
}


def run_suite(name):
    """Run one named suite (or 'all') and return its CheckResults."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        known = ", ".join([*SUITES, "all"])
        raise ValueError(f"unknown suite {name!r} (expected one of {known})")
    results = []
    for n in names:
        start = _time.perf_counter()
        rows = SUITES[n]()
        dt = _time.perf_counter() - start
        for cname, passed, value, bound in rows:
            results.append(CheckResult(cname, passed, value, bound, dt))
    return results
