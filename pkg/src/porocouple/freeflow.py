"""Staggered finite volumes for compressible flow in the open channel.

Pressure unknowns sit at cell centers of the uniform grid, the normal
velocity component at face midpoints. Every velocity dof owns a secondary
control volume whose dual faces carry a single quadrature point each: at
primary cell centers (P), at primary vertices (V), and on the boundary
line itself for the half volumes hugging a domain side or the porous rim
(B). With v_a^-, v_a^+ the two nearest a-component samples straddling a
point, the operators are

    avg_a = (v_a^- + v_a^+) / 2
    jump  = 2 (v_a^+ - v_a^-) / h                    at P points
    jump  = (v_x^+ - v_x^-) / h + (v_y^+ - v_y^-) / h  at V points

(a the component carried by the control volume; the V jump is shared by
both components). The momentum flux out of a control volume through a
dual face with outward normal sign * e_b is

    m * [ sign * p  -  mu * sign * jump  +  (avg . n) (rho v_a)^up ]

with the pressure term at P and B points, the viscous term at P and V
points, and full-product upwinding of rho v_a against the sign of
avg . n. Velocity samples that fall outside the flow region (ghost slots
of the dual topology) are substituted from boundary data at assembly
time: quadratic extrapolation through the wall value for the
wall-parallel component, the wall value itself for the wall-normal one, a
plain copy across pressure boundaries, and the Beavers-Joseph slip
reduction across the porous interface.

Mass balances live on the primary cells. Interface faces are left out of
them here; the coupling adds the single shared transfer flux to both
sides so conservation across the rim is exact by construction.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import (
    B_POINT,
    INTERFACE,
    INTERIOR,
    P_POINT,
    SLOT_DOF,
    CartesianFFMesh,
    build_staggered_topology,
)

PRESSURE = "pressure"
VELOCITY = "velocity"

# rho source codes for the beyond-sample of the V-point advective term
_RHO_FACE = 0
_RHO_CONST = 1
_RHO_PM = 2


class FreeFlowError(ValueError):
    """Raised for inconsistent boundary data or assembly misuse."""


@dataclass
class InterfaceData:
    """Closure data the porous side contributes to free-flow assembly.

    `slip` maps a grid vertex (i, j) on the rim to the Beavers-Joseph
    factor c; ghost samples across the rim become (1-c)/(1+c) times their
    partner dof and transported samples v/(1+c). `vertex_cells` lists the
    porous cells touching a rim vertex (density of the transported
    sample), `behind` the porous cell behind each interface face, and
    `pressure` a stencil row per interface face evaluating the
    porous-side pressure for the B-point flux.
    """

    slip: dict
    vertex_cells: dict
    behind: dict
    pressure: dict


def _as_field(value, components):
    if callable(value):
        return value
    if components == 1:
        scalar = float(value)
        return lambda x, y: scalar
    vec = tuple(float(c) for c in np.atleast_1d(value))
    if len(vec) != 2:
        raise FreeFlowError(f"velocity boundary values are (vx, vy) pairs, got {value!r}")
    return lambda x, y: vec


def _upwind(q, inside, beyond):
    w = np.where(q > 0.0, 1.0, np.where(q < 0.0, 0.0, 0.5))
    return w * inside + (1.0 - w) * beyond


class FreeFlowAssembly:
    """Flattened residual tables for one free-flow region.

    Boundary conditions come as {tag: (kind, value)} with kind "pressure"
    or "velocity"; values may be constants or callables of (x, y). Faces
    on velocity sides become identity rows pinning the dof to the wall
    value, all other faces carry a momentum balance.
    """

    def __init__(self, mesh, bcs, fluid, interface=None, gravity=None, topology=None,
                 p_ref=0.0):
        if not isinstance(mesh, CartesianFFMesh):
            raise FreeFlowError("free-flow assembly requires the uniform Cartesian mesh")
        self.mesh = mesh
        # pressure fluxes act on p - p_ref; densities always see absolute p
        self.p_ref = float(p_ref)
        self.topology = topology if topology is not None else build_staggered_topology(mesh)
        self.fluid = fluid
        self.interface = interface
        self.gravity = np.zeros(2) if gravity is None else np.asarray(gravity, dtype=float)
        self.bcs = {}
        for tag, (kind, value) in bcs.items():
            if kind not in (PRESSURE, VELOCITY):
                raise FreeFlowError(f"unknown boundary condition kind '{kind}' on side '{tag}'")
            self.bcs[tag] = (kind, _as_field(value, 1 if kind == PRESSURE else 2))
        for tag in mesh.face_tags:
            if tag not in (INTERIOR, INTERFACE) and tag not in self.bcs:
                raise FreeFlowError(f"no boundary condition for free-flow side '{tag}'")
        if interface is None and mesh.interface_faces():
            raise FreeFlowError("mesh has interface faces but no interface data was given")
        self._build()

    # -- assembly-time helpers ----------------------------------------------

    def _vertex_key(self, center):
        x0, y0 = self.mesh.box[0], self.mesh.box[1]
        h = self.mesh.h
        return (int(round((center[0] - x0) / h)), int(round((center[1] - y0) / h)))

    def _slip_at(self, center):
        key = self._vertex_key(center)
        try:
            return float(self.interface.slip[key])
        except (KeyError, AttributeError, TypeError):
            raise FreeFlowError(f"no slip factor at interface vertex {key}") from None

    def _pm_cells_at(self, center):
        key = self._vertex_key(center)
        cells = self.interface.vertex_cells.get(key, ()) if self.interface else ()
        if not cells:
            raise FreeFlowError(f"no porous cells recorded at interface vertex {key}")
        return cells

    def _vertex_mu_cells(self, center):
        m = self.mesh
        vi, vj = self._vertex_key(center)
        out = []
        for a in (vi - 1, vi):
            for b in (vj - 1, vj):
                if 0 <= a < m.nx and 0 <= b < m.ny:
                    c = int(m.cell_id[a, b])
                    if c >= 0:
                        out.append(c)
        return out

    def _face_cells(self, f):
        return [int(c) for c in self.mesh.face_cells[f] if c >= 0]

    def _wall_component(self, side, center, axis):
        kind, fn = self.bcs[side]
        if kind != VELOCITY:
            raise FreeFlowError(f"side '{side}' carries no wall velocity")
        return float(fn(center[0], center[1])[axis])

    def _ghost_affine(self, slot, cv, df):
        """Affine substitution (i1, c1, i2, c2, k) for a missing sample."""
        if slot.side == INTERFACE:
            if slot.partner < 0:
                return (-1, 0.0, -1, 0.0, 0.0)
            c = self._slip_at(df.center)
            return (slot.partner, (1.0 - c) / (1.0 + c), -1, 0.0, 0.0)
        kind, fn = self.bcs[slot.side]
        if kind == PRESSURE:
            if slot.partner < 0:
                return (-1, 0.0, -1, 0.0, 0.0)
            return (slot.partner, 1.0, -1, 0.0, 0.0)
        wall = float(fn(df.center[0], df.center[1])[slot.axis])
        if slot.axis == cv.axis and slot.partner >= 0:
            if slot.partner2 >= 0:
                return (slot.partner, -2.0, slot.partner2, 1.0 / 3.0, 8.0 / 3.0 * wall)
            return (slot.partner, -1.0, -1, 0.0, 2.0 * wall)
        return (-1, 0.0, -1, 0.0, wall)

    def _transport(self, far, cv, df):
        """Beyond-sample of the V-point advection: affine value and rho source.

        Returns (t_idx, t_coef, t_const, rho_kind, rho_i1, rho_i2, rho_const).
        """
        f = cv.face
        if far.kind == SLOT_DOF:
            return (far.idx, 1.0, 0.0, _RHO_FACE, far.idx, -1, 0.0)
        if far.side == INTERFACE:
            c = self._slip_at(df.center)
            cells = self._pm_cells_at(df.center)
            return (f, 1.0 / (1.0 + c), 0.0, _RHO_PM, int(cells[0]), int(cells[-1]), 0.0)
        kind, fn = self.bcs[far.side]
        if kind == PRESSURE:
            rho_bc = float(self.fluid.density(float(fn(df.center[0], df.center[1]))))
            return (f, 1.0, 0.0, _RHO_CONST, -1, -1, rho_bc)
        wall = float(fn(df.center[0], df.center[1])[cv.axis])
        return (-1, 0.0, wall, _RHO_FACE, f, -1, 0.0)

    # -- table construction --------------------------------------------------

    def _build(self):
        m = self.mesh
        topo = self.topology
        n_faces = m.n_faces

        d_rows, d_vals = [], []
        free, st_vol, st_axis = [], [], []
        pe = {k: [] for k in ("row", "s", "cell", "self", "opp")}
        ve = {k: [] for k in ("row", "s", "m", "self", "npair")}
        ve_i1 = []
        ve_i2 = []
        ve_c1 = []
        ve_c2 = []
        ve_k = []
        ve_mu = []
        ve_t = {k: [] for k in ("idx", "coef", "const", "rk", "ri1", "ri2", "rc")}
        be = {k: [] for k in ("row", "s", "m", "self", "pb", "rho_in", "pm_cell")}
        be_recon = []

        mom_p = [set() for _ in range(n_faces)]
        mom_v = [set() for _ in range(n_faces)]
        mom_pm = [set() for _ in range(n_faces)]

        for f in range(n_faces):
            cv = topo.cvs[f]
            tag = m.face_tags[f]
            cx, cy = m.face_centers[f]
            axis = cv.axis
            if tag not in (INTERIOR, INTERFACE) and self.bcs[tag][0] == VELOCITY:
                d_rows.append(f)
                d_vals.append(float(self.bcs[tag][1](cx, cy)[axis]))
                mom_v[f].add(f)
                continue

            free.append(f)
            st_vol.append(cv.volume)
            st_axis.append(axis)
            mom_v[f].add(f)
            mom_p[f].update(self._face_cells(f))

            for df in cv.dual_faces:
                if df.kind == P_POINT:
                    lo, hi = df.slots[0:2] if axis == 0 else df.slots[2:4]
                    assert lo.kind == SLOT_DOF and hi.kind == SLOT_DOF
                    opp = lo.idx if hi.idx == f else hi.idx
                    pe["row"].append(f)
                    pe["s"].append(df.sign)
                    pe["cell"].append(df.cell)
                    pe["self"].append(f)
                    pe["opp"].append(opp)
                    mom_p[f].add(df.cell)
                    mom_v[f].update((f, opp))
                    mom_p[f].update(self._face_cells(opp))
                elif df.kind == B_POINT:
                    be["row"].append(f)
                    be["s"].append(df.sign)
                    be["m"].append(df.measure)
                    be["self"].append(f)
                    if tag == INTERFACE:
                        try:
                            row = self.interface.pressure[f]
                            pm_cell = int(self.interface.behind[f])
                        except (KeyError, AttributeError, TypeError):
                            raise FreeFlowError(
                                f"interface data misses face {f} at ({cx}, {cy})") from None
                        be["pb"].append(0.0)
                        be["rho_in"].append(0.0)
                        be["pm_cell"].append(pm_cell)
                        be_recon.append((len(be["row"]) - 1, row))
                        mom_pm[f].update(int(c) for c in row.cells)
                        mom_pm[f].update(int(c) for c in row.gcells)
                        mom_pm[f].add(pm_cell)
                        mom_v[f].update(int(c) for c in row.vcols)
                    else:
                        kind, fn = self.bcs[tag]
                        if kind != PRESSURE:
                            raise FreeFlowError(
                                f"face {f} on side '{tag}' needs a pressure condition")
                        pb = float(fn(cx, cy))
                        be["pb"].append(pb - self.p_ref)
                        be["rho_in"].append(float(self.fluid.density(pb)))
                        be["pm_cell"].append(-1)
                else:
                    slots_aff = [self._ghost_affine(s, cv, df) if s.kind != SLOT_DOF
                                 else (s.idx, 1.0, -1, 0.0, 0.0) for s in df.slots]
                    pair = df.slots[0:2] if axis == 0 else df.slots[2:4]
                    far = pair[1] if (pair[0].kind == SLOT_DOF and pair[0].idx == f) else pair[0]
                    assert any(s.kind == SLOT_DOF and s.idx == f for s in pair)
                    t = self._transport(far, cv, df)
                    mu_cells = self._vertex_mu_cells(df.center)

                    ve["row"].append(f)
                    ve["s"].append(df.sign)
                    ve["m"].append(df.measure)
                    ve["self"].append(f)
                    ve["npair"].append(0 if axis == 1 else 2)
                    ve_i1.append([a[0] for a in slots_aff])
                    ve_i2.append([a[2] for a in slots_aff])
                    ve_c1.append([a[1] for a in slots_aff])
                    ve_c2.append([a[3] for a in slots_aff])
                    ve_k.append([a[4] for a in slots_aff])
                    ve_mu.append(mu_cells + [-1] * (4 - len(mu_cells)))
                    for key, val in zip(("idx", "coef", "const", "rk", "ri1", "ri2", "rc"), t):
                        ve_t[key].append(val)

                    mom_p[f].update(mu_cells)
                    for a in slots_aff:
                        for idx in (a[0], a[2]):
                            if idx >= 0:
                                mom_v[f].add(idx)
                    if t[0] >= 0:
                        mom_v[f].add(t[0])
                    if t[3] == _RHO_FACE:
                        mom_p[f].update(self._face_cells(t[4]))
                    elif t[3] == _RHO_PM:
                        mom_pm[f].update((t[4], t[5]))

        self.d_rows = np.array(d_rows, dtype=int)
        self.d_vals = np.array(d_vals, dtype=float)
        self.free_faces = np.array(free, dtype=int)
        self.st_vol = np.array(st_vol, dtype=float)
        self.st_axis = np.array(st_axis, dtype=int)

        self.pe = {k: np.array(v, dtype=(float if k == "s" else int)) for k, v in pe.items()}

        self.ve = {k: np.array(v, dtype=(float if k in ("s", "m") else int))
                   for k, v in ve.items()}
        self.ve_i1 = np.array(ve_i1, dtype=int).reshape(-1, 4)
        self.ve_i2 = np.array(ve_i2, dtype=int).reshape(-1, 4)
        self.ve_c1 = np.array(ve_c1, dtype=float).reshape(-1, 4)
        self.ve_c2 = np.array(ve_c2, dtype=float).reshape(-1, 4)
        self.ve_k = np.array(ve_k, dtype=float).reshape(-1, 4)
        self.ve_mu = np.array(ve_mu, dtype=int).reshape(-1, 4)
        self.ve_mu_cnt = np.maximum((self.ve_mu >= 0).sum(axis=1), 1)
        self.ve_t = {
            "idx": np.array(ve_t["idx"], dtype=int),
            "coef": np.array(ve_t["coef"], dtype=float),
            "const": np.array(ve_t["const"], dtype=float),
            "rk": np.array(ve_t["rk"], dtype=int),
            "ri1": np.array(ve_t["ri1"], dtype=int),
            "ri2": np.array(ve_t["ri2"], dtype=int),
            "rc": np.array(ve_t["rc"], dtype=float),
        }

        self.be = {
            "row": np.array(be["row"], dtype=int),
            "s": np.array(be["s"], dtype=float),
            "m": np.array(be["m"], dtype=float),
            "self": np.array(be["self"], dtype=int),
            "pb": np.array(be["pb"], dtype=float),
            "rho_in": np.array(be["rho_in"], dtype=float),
            "pm_cell": np.array(be["pm_cell"], dtype=int),
        }
        self.be_recon = be_recon

        self._mom_p = mom_p
        self._mom_v = mom_v
        self._mom_pm = mom_pm
        self._build_mass()

    def _build_mass(self):
        m = self.mesh
        n_faces = m.n_faces
        fk = np.zeros(n_faces, dtype=int)
        f_own = np.zeros(n_faces, dtype=int)
        f_out = np.ones(n_faces, dtype=float)
        f_rho_bc = np.zeros(n_faces, dtype=float)
        ms_cell, ms_face, ms_sign = [], [], []
        mass_p = [set() for _ in range(m.n_cells)]
        mass_v = [set() for _ in range(m.n_cells)]

        for f in range(n_faces):
            tag = m.face_tags[f]
            cm, cp = (int(c) for c in m.face_cells[f])
            if tag == INTERFACE:
                fk[f] = 3
                continue
            if tag == INTERIOR:
                fk[f] = 0
            else:
                kind, fn = self.bcs[tag]
                fk[f] = 1 if kind == VELOCITY else 2
                f_own[f] = cm if cm >= 0 else cp
                f_out[f] = 1.0 if cm >= 0 else -1.0
                if kind == PRESSURE:
                    cx, cy = m.face_centers[f]
                    f_rho_bc[f] = float(self.fluid.density(float(fn(cx, cy))))
            for c, sign in ((cm, 1.0), (cp, -1.0)):
                if c >= 0:
                    ms_cell.append(c)
                    ms_face.append(f)
                    ms_sign.append(sign)
                    mass_v[c].add(f)
                    mass_p[c].update(self._face_cells(f))

        for c in range(m.n_cells):
            mass_p[c].add(c)

        self.fk = fk
        self.f_own = f_own
        self.f_out = f_out
        self.f_rho_bc = f_rho_bc
        self.ms_cell = np.array(ms_cell, dtype=int)
        self.ms_face = np.array(ms_face, dtype=int)
        self.ms_sign = np.array(ms_sign, dtype=float)
        self._mass_p = mass_p
        self._mass_v = mass_v

        fc = m.face_cells
        self.fd1 = np.where(fc[:, 0] >= 0, fc[:, 0], fc[:, 1])
        self.fd2 = np.where(fc[:, 1] >= 0, fc[:, 1], fc[:, 0])

    # -- evaluation -----------------------------------------------------------

    def face_densities(self, rho):
        """Face density as the mean of the adjacent cell values, one-sided at rims."""
        rho = np.asarray(rho, dtype=float)
        return 0.5 * (rho[self.fd1] + rho[self.fd2])

    def momentum(self, p, v):
        pa = np.asarray(p, dtype=float) + self.p_ref
        return self.face_densities(self.fluid.density(pa)) * np.asarray(v, dtype=float)

    def momentum_residuals(self, p, v, dt_inv=0.0, mom_old=None, p_pm=None, rho_pm=None):
        """Residual of every velocity row for the given state.

        `mom_old` is the momentum vector of the previous time level (see
        `momentum`); it is only read when dt_inv is nonzero. `p_pm` and
        `rho_pm` feed the interface rows and may stay None without an
        interface.
        """
        m = self.mesh
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        rho = self.fluid.density(p + self.p_ref)
        mu = self.fluid.viscosity(p + self.p_ref)
        rho_f = self.face_densities(rho)
        h = m.h
        n = m.n_faces
        res = np.zeros(n)

        fr = self.free_faces
        if dt_inv != 0.0:
            if mom_old is None:
                raise FreeFlowError("transient momentum residual needs the previous momentum")
            mom_old = np.asarray(mom_old, dtype=float)
            res[fr] = self.st_vol * dt_inv * (rho_f[fr] * v[fr] - mom_old[fr])
        if self.gravity.any():
            res[fr] -= self.st_vol * rho_f[fr] * self.gravity[self.st_axis]

        pe = self.pe
        if len(pe["row"]):
            vs, vo = v[pe["self"]], v[pe["opp"]]
            q = pe["s"] * 0.5 * (vs + vo)
            flux = (h * pe["s"] * p[pe["cell"]]
                    - 2.0 * mu[pe["cell"]] * (vo - vs)
                    + h * q * _upwind(q, rho_f[pe["self"]] * vs, rho_f[pe["opp"]] * vo))
            res += np.bincount(pe["row"], weights=flux, minlength=n)

        ve = self.ve
        if len(ve["row"]):
            vp = np.append(v, 0.0)
            S = self.ve_c1 * vp[self.ve_i1] + self.ve_c2 * vp[self.ve_i2] + self.ve_k
            J = (S[:, 1] - S[:, 0] + S[:, 3] - S[:, 2]) / h
            mu_pad = np.append(mu, 0.0)
            mu_v = mu_pad[self.ve_mu].sum(axis=1) / self.ve_mu_cnt
            q = ve["s"] * 0.5 * np.where(ve["npair"] == 0, S[:, 0] + S[:, 1], S[:, 2] + S[:, 3])
            t = self.ve_t
            t_val = t["coef"] * vp[t["idx"]] + t["const"]
            rho_out = np.empty(len(t["rk"]))
            mk = t["rk"] == _RHO_FACE
            rho_out[mk] = rho_f[t["ri1"][mk]]
            mk = t["rk"] == _RHO_CONST
            rho_out[mk] = t["rc"][mk]
            mk = t["rk"] == _RHO_PM
            if mk.any():
                if rho_pm is None:
                    raise FreeFlowError("interface advection needs the porous density vector")
                rho_pm = np.asarray(rho_pm, dtype=float)
                rho_out[mk] = 0.5 * (rho_pm[t["ri1"][mk]] + rho_pm[t["ri2"][mk]])
            psi_in = rho_f[ve["self"]] * v[ve["self"]]
            flux = ve["m"] * (-mu_v * ve["s"] * J + q * _upwind(q, psi_in, rho_out * t_val))
            res += np.bincount(ve["row"], weights=flux, minlength=n)

        be = self.be
        if len(be["row"]):
            pb = be["pb"].copy()
            rho_in = be["rho_in"].copy()
            if self.be_recon:
                if p_pm is None or rho_pm is None:
                    raise FreeFlowError("interface momentum rows need the porous state vectors")
                p_pm = np.asarray(p_pm, dtype=float)
                for e, row in self.be_recon:
                    pb[e] = row.evaluate(p_pm, v=v, rho=rho_pm)
                pm_mask = be["pm_cell"] >= 0
                rho_in[pm_mask] = np.asarray(rho_pm, dtype=float)[be["pm_cell"][pm_mask]]
            vs = v[be["self"]]
            q = be["s"] * vs
            flux = be["m"] * (be["s"] * pb + q * _upwind(q, rho_f[be["self"]], rho_in) * vs)
            res += np.bincount(be["row"], weights=flux, minlength=n)

        res[self.d_rows] = v[self.d_rows] - self.d_vals
        return res

    def mass_residuals(self, p, v, dt_inv=0.0, rho_old=None, source=None):
        """Residual of every cell mass balance; interface faces excluded."""
        m = self.mesh
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        rho = self.fluid.density(p + self.p_ref)
        rho_own = rho[self.f_own]
        rho_up = np.where(
            self.fk == 0,
            _upwind(v, rho[self.fd1], rho[self.fd2]),
            np.where(self.fk == 1, rho_own,
                     _upwind(self.f_out * v, rho_own, self.f_rho_bc)))
        flux = self.ms_sign * m.h * rho_up[self.ms_face] * v[self.ms_face]
        res = np.bincount(self.ms_cell, weights=flux, minlength=m.n_cells)
        if dt_inv != 0.0:
            if rho_old is None:
                raise FreeFlowError("transient mass residual needs the previous density")
            res += m.h * m.h * dt_inv * (rho - np.asarray(rho_old, dtype=float))
        if source is not None:
            res -= m.h * m.h * np.asarray(source, dtype=float)
        return res

    # -- sparsity --------------------------------------------------------------

    def momentum_columns(self):
        """Per velocity row: the (cell, face, porous cell) columns it touches."""
        return self._mom_p, self._mom_v, self._mom_pm

    def mass_columns(self):
        """Per cell row: the (cell, face) columns it touches."""
        return self._mass_p, self._mass_v

    # -- slow reference path -----------------------------------------------------

    def _slot_value(self, slot, cv, df, v):
        if slot.kind == SLOT_DOF:
            return float(v[slot.idx])
        if slot.side == INTERFACE:
            if slot.partner < 0:
                return 0.0
            c = self._slip_at(df.center)
            return (1.0 - c) / (1.0 + c) * float(v[slot.partner])
        kind, fn = self.bcs[slot.side]
        if kind == PRESSURE:
            return float(v[slot.partner]) if slot.partner >= 0 else 0.0
        wall = float(fn(df.center[0], df.center[1])[slot.axis])
        if slot.axis == cv.axis and slot.partner >= 0:
            if slot.partner2 >= 0:
                return 8.0 / 3.0 * wall - 2.0 * float(v[slot.partner]) \
                    + float(v[slot.partner2]) / 3.0
            return 2.0 * wall - float(v[slot.partner])
        return wall

    def avg_and_jump(self, df, cv, v):
        """Averages (both components) and the shared jump at a P or V point."""
        h = self.mesh.h
        s = [self._slot_value(slot, cv, df, v) for slot in df.slots]
        avg = np.array([0.5 * (s[0] + s[1]), 0.5 * (s[2] + s[3])])
        if df.kind == P_POINT:
            lo, hi = (s[0], s[1]) if cv.axis == 0 else (s[2], s[3])
            return avg, 2.0 * (hi - lo) / h
        return avg, (s[1] - s[0] + s[3] - s[2]) / h

    def reference_momentum_residual(self, f, p, v, dt_inv=0.0, p_old=None, v_old=None,
                                    p_pm=None, rho_pm=None):
        """Momentum residual of one row, assembled straight from the dual topology."""
        m = self.mesh
        cv = self.topology.cvs[f]
        tag = m.face_tags[f]
        cx, cy = m.face_centers[f]
        if tag not in (INTERIOR, INTERFACE) and self.bcs[tag][0] == VELOCITY:
            return float(v[f]) - float(self.bcs[tag][1](cx, cy)[cv.axis])

        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        rho = self.fluid.density(p + self.p_ref)
        mu = self.fluid.viscosity(p + self.p_ref)
        rho_f = self.face_densities(rho)
        h = m.h

        res = 0.0
        if dt_inv != 0.0:
            rho_f_old = self.face_densities(
                self.fluid.density(np.asarray(p_old, dtype=float) + self.p_ref))
            res += cv.volume * dt_inv * (rho_f[f] * v[f] - rho_f_old[f] * v_old[f])
        res -= cv.volume * rho_f[f] * self.gravity[cv.axis]

        for df in cv.dual_faces:
            avg, jump = self.avg_and_jump(df, cv, v) if df.kind != B_POINT else (None, None)
            if df.kind == P_POINT:
                pair = df.slots[0:2] if cv.axis == 0 else df.slots[2:4]
                opp = pair[0].idx if pair[1].idx == f else pair[1].idx
                q = df.sign * avg[cv.axis]
                up = _upwind(q, rho_f[f] * v[f], rho_f[opp] * v[opp])
                res += h * (df.sign * p[df.cell] + q * up) - mu[df.cell] * h * df.sign * jump
            elif df.kind == B_POINT:
                if df.boundary_tag == INTERFACE:
                    pb = self.interface.pressure[f].evaluate(
                        np.asarray(p_pm, dtype=float), v=v, rho=rho_pm)
                    rho_in = float(np.asarray(rho_pm, dtype=float)[self.interface.behind[f]])
                else:
                    pb_abs = float(self.bcs[df.boundary_tag][1](cx, cy))
                    rho_in = float(self.fluid.density(pb_abs))
                    pb = pb_abs - self.p_ref
                q = df.sign * v[f]
                res += df.measure * (df.sign * pb + q * _upwind(q, rho_f[f], rho_in) * v[f])
            else:
                mu_cells = self._vertex_mu_cells(df.center)
                mu_v = float(np.mean(mu[mu_cells]))
                q = df.sign * avg[1 - cv.axis]
                pair = df.slots[0:2] if cv.axis == 0 else df.slots[2:4]
                far = pair[1] if (pair[0].kind == SLOT_DOF and pair[0].idx == f) else pair[0]
                if far.kind == SLOT_DOF:
                    psi_out = rho_f[far.idx] * v[far.idx]
                elif far.side == INTERFACE:
                    c = self._slip_at(df.center)
                    cells = list(self._pm_cells_at(df.center))
                    psi_out = float(np.mean(np.asarray(rho_pm, dtype=float)[cells])) \
                        * v[f] / (1.0 + c)
                elif self.bcs[far.side][0] == PRESSURE:
                    p_bc = float(self.bcs[far.side][1](df.center[0], df.center[1]))
                    psi_out = float(self.fluid.density(p_bc)) * v[f]
                else:
                    wall = float(self.bcs[far.side][1](df.center[0], df.center[1])[cv.axis])
                    psi_out = rho_f[f] * wall
                up = _upwind(q, rho_f[f] * v[f], psi_out)
                res += df.measure * (q * up - mu_v * df.sign * jump)
        return float(res)

    def reference_mass_residual(self, c, p, v, dt_inv=0.0, rho_old=None, source=0.0):
        """Mass residual of one cell, face by face; interface faces excluded."""
        m = self.mesh
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        rho = self.fluid.density(p + self.p_ref)
        i, j = (int(a) for a in m.cell_ij[c])
        faces = ((int(m.xface_id[i, j]), -1.0), (int(m.xface_id[i + 1, j]), 1.0),
                 (int(m.yface_id[i, j]), -1.0), (int(m.yface_id[i, j + 1]), 1.0))
        res = 0.0
        for f, out in faces:
            tag = m.face_tags[f]
            if tag == INTERFACE:
                continue
            cm, cp = (int(a) for a in m.face_cells[f])
            if tag == INTERIOR:
                rho_up = _upwind(v[f], rho[cm], rho[cp])
            elif self.bcs[tag][0] == VELOCITY:
                rho_up = rho[c]
            else:
                cx, cy = m.face_centers[f]
                rho_bc = float(self.fluid.density(float(self.bcs[tag][1](cx, cy))))
                rho_up = _upwind(out * v[f], rho[c], rho_bc)
            res += out * m.h * rho_up * v[f]
        if dt_inv != 0.0:
            res += m.h * m.h * dt_inv * (rho[c] - np.asarray(rho_old, dtype=float)[c])
        return float(res - m.h * m.h * source)


def build_freeflow_assembly(mesh, bcs, fluid, interface=None, gravity=None, topology=None,
                            p_ref=0.0):
    """Flatten the staggered discretization of one free-flow region."""
    return FreeFlowAssembly(mesh, bcs, fluid, interface=interface, gravity=gravity,
                            topology=topology, p_ref=p_ref)
