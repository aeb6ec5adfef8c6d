"""Coupling of the channel flow with the porous block across a shared rim.

Three conditions close the monolithic system. Mass continuity ties the
porous flux through every rim sub-face to the channel velocity dof on the
same segment, turning those sub-faces into coupled columns of the porous
flux table; one transfer flux per rim face then enters the cell balances
on both sides with opposite sign, so the exchange is conservative to the
last bit. The normal momentum balance of a rim velocity reads the
reconstructed porous-side pressure through the table's stencil rows. The
tangential momentum follows the Beavers-Joseph-Saffman law: a sample
behind the rim becomes (1 - c)/(1 + c) times its mirror dof, with

    c = alpha_bf * h / (2 sqrt(t . K t))

evaluated from the permeability the rim vertex sees.

The pairing is geometric and strict: every porous rim sub-face must line
up midpoint-to-midpoint with exactly one channel face, which pins the
porous grid spacing along the rim to twice the channel spacing and the
continuity-point offset to one half. Anything else refuses to assemble.
"""

import numpy as np

from .darcy import SubfaceCondition, _perm_lookup, build_darcy_table
from .freeflow import InterfaceData, build_freeflow_assembly
from .mesh import INTERFACE, build_interaction_regions, build_interface_mapping


class CouplingError(ValueError):
    """Raised when the two regions cannot be stitched together."""


def pm_boundary_tagger(pm_box, domain_box, atol=None):
    """Tag porous boundary faces: domain sides keep their name, the rest is rim.

    A porous box side lying on the surrounding domain boundary is a wall or
    an open side and gets the usual side tag; every other boundary face
    touches the channel and is tagged as interface.
    """
    px0, py0, px1, py1 = (float(v) for v in pm_box)
    dx0, dy0, dx1, dy1 = (float(v) for v in domain_box)
    if atol is None:
        atol = 1e-12 * max(dx1 - dx0, dy1 - dy0)

    def tag(point):
        x, y = float(point[0]), float(point[1])
        if abs(x - px0) <= atol:
            return "left" if abs(px0 - dx0) <= atol else INTERFACE
        if abs(x - px1) <= atol:
            return "right" if abs(px1 - dx1) <= atol else INTERFACE
        if abs(y - py0) <= atol:
            return "bottom" if abs(py0 - dy0) <= atol else INTERFACE
        if abs(y - py1) <= atol:
            return "top" if abs(py1 - dy1) <= atol else INTERFACE
        return INTERFACE

    return tag


def bjs_factor(perm, tangent_axis, h, alpha_bf):
    """Slip factor c of the Beavers-Joseph-Saffman closure at one rim vertex."""
    ktt = float(np.asarray(perm, dtype=float)[tangent_axis, tangent_axis])
    if ktt <= 0.0:
        raise CouplingError("permeability component along the rim tangent must be positive")
    return float(alpha_bf) * h / (2.0 * np.sqrt(ktt))


def _check_viscosities(ff_fluid, pm_fluid):
    probes = (5.0e4, 2.0e5)
    mf = [float(ff_fluid.viscosity(p)) for p in probes]
    mp = [float(pm_fluid.viscosity(p)) for p in probes]
    scale = max(mf + mp)
    if abs(mf[0] - mf[1]) > 1e-12 * scale or abs(mp[0] - mp[1]) > 1e-12 * scale:
        raise CouplingError("pressure-dependent viscosity is not supported at the interface")
    if abs(mf[0] - mp[0]) > 1e-12 * scale:
        raise CouplingError(
            f"the interface closure assumes one viscosity on both sides, "
            f"got {mf[0]!r} and {mp[0]!r}")
    return mf[0]


class CoupledProblem:
    """Both assemblies plus the transfer bookkeeping of one coupled setup."""

    def __init__(self, ff_mesh, ff_bcs, ff_fluid, pm_mesh, perm, pm_bcs, pm_fluid,
                 scheme="mpfa", alpha_bf=1.0, xi=0.5, gravity=None, p_ref=0.0):
        if alpha_bf <= 0.0:
            raise CouplingError(f"alpha_bf must be positive, got {alpha_bf!r}")
        self.p_ref = float(p_ref)
        self.ff_fluid = ff_fluid
        self.pm_fluid = pm_fluid
        self.mu = _check_viscosities(ff_fluid, pm_fluid)
        self.regions = build_interaction_regions(pm_mesh, xi)
        self.mapping = build_interface_mapping(ff_mesh, pm_mesh, self.regions)

        h = ff_mesh.h
        conditions = {}
        vertex_cells = {}
        vertex_axes = {}
        for e in self.mapping.entries:
            sf = self.regions[e.region].subfaces[e.subface]
            axis = int(ff_mesh.face_axis[e.ff_face])
            n = sf.normal
            if abs(n[axis] + e.chi) > 1e-12 or abs(n[1 - axis]) > 1e-12:
                raise CouplingError(
                    f"rim normal {tuple(n)} at {sf.cont_point} does not point out of "
                    f"the porous block toward channel face {e.ff_face}")
            conditions[(e.region, e.subface)] = SubfaceCondition(
                kind="coupled", column=e.ff_face,
                coeff=-self.mu * sf.measure * e.chi)

            i, j = (int(a) for a in ff_mesh.face_ij[e.ff_face])
            keys = ((i, j), (i, j + 1)) if axis == 0 else ((i, j), (i + 1, j))
            for key in keys:
                vertex_cells.setdefault(key, set()).add(int(e.pm_cell))
                vertex_axes.setdefault(key, set()).add(1 - axis)

        self.table = build_darcy_table(pm_mesh, self.regions, perm, pm_bcs, self.mu,
                                       scheme=scheme, interface=conditions,
                                       gravity=gravity, p_ref=p_ref)

        perm_arr = _perm_lookup(perm, pm_mesh.n_cells)
        slip = {}
        for key, axes in vertex_axes.items():
            if len(axes) != 1:
                continue  # block corners: no single tangent, and never sampled
            cells = sorted(vertex_cells[key])
            mean_k = np.mean(perm_arr[cells], axis=0)
            slip[key] = bjs_factor(mean_k, next(iter(axes)), h, alpha_bf)

        self.data = InterfaceData(
            slip=slip,
            vertex_cells={k: tuple(sorted(c)) for k, c in vertex_cells.items()},
            behind={u.ff_face: int(u.pm_cell) for u in self.table.interface_units},
            pressure=dict(self.table.recon))
        self.ff = build_freeflow_assembly(ff_mesh, ff_bcs, ff_fluid,
                                          interface=self.data, gravity=gravity,
                                          p_ref=p_ref)
        self.ff_mesh = ff_mesh
        self.pm_mesh = pm_mesh

        units = self.table.interface_units
        self.t_face = np.array([u.ff_face for u in units], dtype=int)
        self.t_chi = np.array([u.chi for u in units], dtype=float)
        self.t_pmcell = np.array([u.pm_cell for u in units], dtype=int)
        self.t_meas = np.array([u.measure for u in units], dtype=float)
        fc = ff_mesh.face_cells[self.t_face] if len(units) else np.zeros((0, 2), dtype=int)
        self.t_ffcell = np.where(fc[:, 0] >= 0, fc[:, 0], fc[:, 1])

    # -- transfer -------------------------------------------------------------

    def transfer_fluxes(self, p_ff, v, p_pm):
        """Mass flux into the porous block, one value per interface face.

        Upwinded between the channel cell ahead of the face and the porous
        cell behind it by the sign of the normal velocity.
        """
        rho_ff = self.ff_fluid.density(
            np.asarray(p_ff, dtype=float)[self.t_ffcell] + self.p_ref)
        rho_pm = self.pm_fluid.density(
            np.asarray(p_pm, dtype=float)[self.t_pmcell] + self.p_ref)
        q = self.t_chi * np.asarray(v, dtype=float)[self.t_face]
        w = np.where(q > 0.0, 1.0, np.where(q < 0.0, 0.0, 0.5))
        return (w * rho_ff + (1.0 - w) * rho_pm) * self.t_meas * q

    def add_transfer(self, phi, res_ff_mass, res_pm_mass):
        """Scatter one transfer vector into both mass balances, exactly opposite."""
        np.add.at(res_ff_mass, self.t_ffcell, phi)
        np.add.at(res_pm_mass, self.t_pmcell, -phi)

    def transfer_columns(self):
        """(channel cell, porous cell, face) per interface face, for sparsity."""
        return list(zip(self.t_ffcell.tolist(), self.t_pmcell.tolist(),
                        self.t_face.tolist()))


def build_coupled_problem(ff_mesh, ff_bcs, ff_fluid, pm_mesh, perm, pm_bcs, pm_fluid,
                          scheme="mpfa", alpha_bf=1.0, xi=0.5, gravity=None, p_ref=0.0):
    """Stitch the channel and porous assemblies along their shared rim."""
    return CoupledProblem(ff_mesh, ff_bcs, ff_fluid, pm_mesh, perm, pm_bcs, pm_fluid,
                          scheme=scheme, alpha_bf=alpha_bf, xi=xi, gravity=gravity,
                          p_ref=p_ref)
