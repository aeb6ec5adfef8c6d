"""Cell-centered Darcy discretizations.

Two flux families over the same table format: a multi-point scheme built
from vertex interaction regions (one unknown pressure per sub-face
continuity point, eliminated region by region), and a two-point scheme with
harmonic transmissibilities. Fluxes are stored mu-scaled,

    F = -|sigma| n^T K (grad p - rho g),

so F / mu is the volumetric flux through the (sub-)face, oriented out of
the minus cell. Each flux unit is an affine stencil over cell pressures,
external velocity columns (the coupled interface dofs) and cell densities
(the gravity part); mobility upwinding happens at evaluation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import INTERIOR, Mesh, MeshError

COND_LIMIT = 1e8

GROUP_INTERIOR = 0
GROUP_DIRICHLET = 1
GROUP_NEUMANN = 2


class DarcyAssemblyError(ValueError):
    """Local system construction failed."""


def rotated_permeability(k, angle_degrees, anisotropy):
    """Tensor with principal value `k` along `angle_degrees` and k/anisotropy across."""
    if k <= 0.0 or anisotropy <= 0.0:
        raise ValueError(f"permeability parameters must be positive, got k={k}, "
                         f"anisotropy={anisotropy}")
    a = np.radians(angle_degrees)
    c, s = np.cos(a), np.sin(a)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([k, k / anisotropy]) @ rot.T


def _perm_lookup(perm, n_cells):
    perm = np.asarray(perm, dtype=float)
    if perm.shape == (2, 2):
        perm = np.broadcast_to(perm, (n_cells, 2, 2))
    if perm.shape != (n_cells, 2, 2):
        raise ValueError(f"permeability must be (2, 2) or (n_cells, 2, 2), got {perm.shape}")
    return perm


@dataclass(frozen=True)
class SubfaceCondition:
    """What holds at one sub-face: interior continuity, a boundary value,
    or a flux forced by an external velocity column (coeff * u[column])."""

    kind: str             # "interior" | "dirichlet" | "neumann" | "coupled"
    value: float = 0.0    # dirichlet: p at the continuity point; neumann: forced flux
    column: int = -1
    coeff: float = 0.0


@dataclass
class StencilRow:
    """Affine expression c.p + v.u + g.rho + const over global indices."""

    cells: np.ndarray
    ccoef: np.ndarray
    vcols: np.ndarray
    vcoef: np.ndarray
    gcells: np.ndarray
    gcoef: np.ndarray
    const: float

    def evaluate(self, p, v=None, rho=None):
        out = self.const
        if len(self.cells):
            out = out + float(self.ccoef @ p[self.cells])
        if len(self.vcols):
            if v is None:
                raise ValueError("stencil references velocity columns but none given")
            out = out + float(self.vcoef @ v[self.vcols])
        if len(self.gcells):
            if rho is None:
                raise ValueError("stencil references density columns but none given")
            out = out + float(self.gcoef @ rho[self.gcells])
        return out


def _make_row(cells, ccoef, vcols, vcoef, gcells, gcoef, const):
    return StencilRow(np.asarray(cells, dtype=int), np.asarray(ccoef, dtype=float),
                      np.asarray(vcols, dtype=int), np.asarray(vcoef, dtype=float),
                      np.asarray(gcells, dtype=int), np.asarray(gcoef, dtype=float),
                      float(const))


def local_system(region, perm, conditions, cell_centers, gravity=None):
    """Eliminate one interaction region.

    `conditions[j]` describes sub-face j of the region; `perm[K]` is the
    (2, 2) tensor and `cell_centers[K]` the center of global cell K.
    Returns (flux_rows, recon_rows): per sub-face, the flux stencil oriented
    out of the parent's minus cell and the continuity-point pressure, both
    as affine expressions over global inputs.
    """
    cells = region.cells
    m = len(cells)
    s = len(region.subfaces)
    pos_of_cell = {K: a for a, K in enumerate(cells)}

    perm = np.asarray(perm, dtype=float)
    if perm.ndim == 2:
        perm = {K: perm for K in cells}

    grav = None if gravity is None else np.asarray(gravity, dtype=float)
    if grav is not None and not np.any(grav):
        grav = None

    # per (cell, local subface slot): w over the cell's two continuity deltas
    w_rows = np.zeros((m, 2, 2))
    grav_coef = np.zeros((m, 2))
    for a, K in enumerate(cells):
        j1, j2 = region.cell_subfaces[a]
        xk = np.asarray(cell_centers[K])
        d = np.column_stack([np.asarray(region.subfaces[j1].cont_point) - xk,
                             np.asarray(region.subfaces[j2].cont_point) - xk])
        cond = np.linalg.cond(d)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise DarcyAssemblyError(
                f"interaction region at vertex {region.vertex} {region.point}: "
                f"continuity points of cell {K} are ill-conditioned (cond {cond:.2e})")
        g = np.linalg.inv(d.T)
        for slot, j in enumerate((j1, j2)):
            sf = region.subfaces[j]
            sgn = 1.0 if sf.cells[0] == K else -1.0
            nk = np.asarray(sf.normal) @ perm[K]
            w_rows[a, slot] = -sf.measure * sgn * (nk @ g)
            if grav is not None:
                grav_coef[a, slot] = sf.measure * sgn * float(nk @ grav)

    def slot_of(a, j):
        j1, j2 = region.cell_subfaces[a]
        return 0 if j == j1 else 1

    unknown = [j for j in range(s) if conditions[j].kind != "dirichlet"]
    pos_of_unknown = {j: r for r, j in enumerate(unknown)}
    n = len(unknown)
    coupled_cols = []
    col_pos = {}
    for j in range(s):
        c = conditions[j]
        if c.kind == "coupled" and c.column not in col_pos:
            col_pos[c.column] = len(coupled_cols)
            coupled_cols.append(c.column)
    n_u = len(coupled_cols)

    a_mat = np.zeros((n, n))
    b_p = np.zeros((n, m))
    b_u = np.zeros((n, n_u))
    b_g = np.zeros((n, m))
    b_c = np.zeros(n)

    def add_flux_terms(row, a, j, sign=1.0):
        """Accumulate sign * F_{cell a, subface j} into equation `row`."""
        j1, j2 = region.cell_subfaces[a]
        w = w_rows[a, slot_of(a, j)]
        for jj, wc in zip((j1, j2), w):
            cjj = conditions[jj]
            if cjj.kind == "dirichlet":
                b_c[row] -= sign * wc * cjj.value
            else:
                a_mat[row, pos_of_unknown[jj]] += sign * wc
        b_p[row, a] += sign * (w[0] + w[1])
        if grav is not None:
            b_g[row, a] -= sign * grav_coef[a, slot_of(a, j)]

    for j in unknown:
        row = pos_of_unknown[j]
        sf = region.subfaces[j]
        cond = conditions[j]
        if cond.kind == "interior":
            if sf.cells[1] < 0:
                raise DarcyAssemblyError(
                    f"sub-face of face {sf.parent} marked interior but has one cell "
                    f"(vertex {region.vertex})")
            for K in sf.cells:
                add_flux_terms(row, pos_of_cell[K], j)
        elif cond.kind == "neumann":
            add_flux_terms(row, pos_of_cell[sf.cells[0]], j)
            b_c[row] += cond.value
        elif cond.kind == "coupled":
            add_flux_terms(row, pos_of_cell[sf.cells[0]], j)
            b_u[row, col_pos[cond.column]] += cond.coeff
        else:
            raise DarcyAssemblyError(f"unknown sub-face condition {cond.kind!r}")

    if n:
        try:
            x_all = np.linalg.solve(a_mat, np.column_stack([b_p, b_u, b_g,
                                                            b_c[:, None]]))
        except np.linalg.LinAlgError:
            raise DarcyAssemblyError(
                f"interaction region at vertex {region.vertex} {region.point}: "
                f"singular local system") from None
        x_p = x_all[:, :m]
        x_u = x_all[:, m:m + n_u]
        x_g = x_all[:, m + n_u:m + n_u + m]
        x_c = x_all[:, -1]
    else:
        x_p = np.zeros((0, m))
        x_u = np.zeros((0, n_u))
        x_g = np.zeros((0, m))
        x_c = np.zeros(0)

    cells_arr = np.asarray(cells, dtype=int)
    cols_arr = np.asarray(coupled_cols, dtype=int)

    def pack(pc, uc, gc, const):
        if grav is None:
            return _make_row(cells_arr, pc, cols_arr, uc, [], [], const)
        return _make_row(cells_arr, pc, cols_arr, uc, cells_arr, gc, const)

    recon_rows = []
    for j in range(s):
        if conditions[j].kind == "dirichlet":
            recon_rows.append(pack(np.zeros(m), np.zeros(n_u), np.zeros(m),
                                   conditions[j].value))
        else:
            r = pos_of_unknown[j]
            recon_rows.append(pack(x_p[r], x_u[r], x_g[r], x_c[r]))

    flux_rows = []
    for j in range(s):
        cj = conditions[j]
        if cj.kind == "coupled":
            # the imposed flux itself; re-deriving it from the eliminated
            # pressures only reproduces it up to the local solve's round-off
            uc = np.zeros(n_u)
            uc[col_pos[cj.column]] = cj.coeff
            flux_rows.append(pack(np.zeros(m), uc, np.zeros(m), 0.0))
            continue
        if cj.kind == "neumann":
            flux_rows.append(pack(np.zeros(m), np.zeros(n_u), np.zeros(m),
                                  cj.value))
            continue
        sf = region.subfaces[j]
        a = pos_of_cell[sf.cells[0]]
        j1, j2 = region.cell_subfaces[a]
        w = w_rows[a, slot_of(a, j)]
        pc = np.zeros(m)
        uc = np.zeros(n_u)
        gc = np.zeros(m)
        const = 0.0
        for jj, wc in zip((j1, j2), w):
            cjj = conditions[jj]
            if cjj.kind == "dirichlet":
                const += wc * cjj.value
            else:
                r = pos_of_unknown[jj]
                pc += wc * x_p[r]
                uc += wc * x_u[r]
                gc += wc * x_g[r]
                const += wc * x_c[r]
        pc[a] -= w[0] + w[1]
        if grav is not None:
            gc[a] += grav_coef[a, slot_of(a, j)]
        flux_rows.append(pack(pc, uc, gc, const))

    return flux_rows, recon_rows


# ---------------------------------------------------------------------------
# table assembly


@dataclass
class UpwindGroup:
    kind: int
    units: list
    cell_minus: int
    cell_plus: int = -1
    p_bc: float = float("nan")
    parent: int = -1


@dataclass
class InterfaceUnit:
    unit: int
    ff_face: int
    chi: int
    pm_cell: int
    measure: float


@dataclass
class DarcyTable:
    scheme: str
    mesh: Mesh
    mu: float
    unit_rows: list                  # StencilRow per flux unit
    unit_parent: np.ndarray          # parent pm face of each unit
    unit_minus: np.ndarray           # cell the flux is oriented out of
    unit_center: np.ndarray          # (n_units, 2) centroid for reconstruction
    bud_cell: np.ndarray             # per-cell budget triplets, interface excluded
    bud_unit: np.ndarray
    bud_sign: np.ndarray
    groups: list                     # UpwindGroup
    group_of_unit: np.ndarray        # -1 for interface units
    interface_units: list            # InterfaceUnit
    recon: dict                      # ff_face -> StencilRow (interface pressure)
    # pressure arguments to every evaluation are measured from p_ref
    # (boundary constants are rebased at build time); densities and the
    # steady solve translate back to absolute pressure where needed
    p_ref: float = 0.0
    cell_units: list = field(default_factory=list)   # per cell: [(unit, sign)]
    # flattened flux stencils
    fp_unit: np.ndarray = None
    fp_cell: np.ndarray = None
    fp_coef: np.ndarray = None
    fv_unit: np.ndarray = None
    fv_col: np.ndarray = None
    fv_coef: np.ndarray = None
    fg_unit: np.ndarray = None
    fg_cell: np.ndarray = None
    fg_coef: np.ndarray = None
    f_const: np.ndarray = None

    @property
    def n_units(self):
        return len(self.unit_rows)

    def finalize(self):
        fp, fv, fg = [], [], []
        for u, row in enumerate(self.unit_rows):
            for c, w in zip(row.cells, row.ccoef):
                fp.append((u, c, w))
            for c, w in zip(row.vcols, row.vcoef):
                fv.append((u, c, w))
            for c, w in zip(row.gcells, row.gcoef):
                fg.append((u, c, w))

        def split(trip):
            if not trip:
                return (np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
            a = np.array([t[0] for t in trip], dtype=int)
            b = np.array([t[1] for t in trip], dtype=int)
            c = np.array([t[2] for t in trip], dtype=float)
            return a, b, c

        self.fp_unit, self.fp_cell, self.fp_coef = split(fp)
        self.fv_unit, self.fv_col, self.fv_coef = split(fv)
        self.fg_unit, self.fg_cell, self.fg_coef = split(fg)
        self.f_const = np.array([row.const for row in self.unit_rows])

        self.cell_units = [[] for _ in range(self.mesh.n_cells)]
        for c, u, s in zip(self.bud_cell, self.bud_unit, self.bud_sign):
            self.cell_units[c].append((int(u), int(s)))
        return self

    def unit_fluxes(self, p, v=None, rho=None):
        f = self.f_const.copy()
        np.add.at(f, self.fp_unit, self.fp_coef * p[self.fp_cell])
        if len(self.fv_unit):
            if v is None:
                raise ValueError("table has coupled columns; velocity vector required")
            np.add.at(f, self.fv_unit, self.fv_coef * v[self.fv_col])
        if len(self.fg_unit):
            if rho is None:
                raise ValueError("table has gravity terms; density vector required")
            np.add.at(f, self.fg_unit, self.fg_coef * rho[self.fg_cell])
        return f


def _bc_value(value, point):
    if callable(value):
        return float(value(point[0], point[1]))
    return float(value)


def _neumann_outward(value, point, normal):
    if callable(value):
        value = value(point[0], point[1])
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value)
    return float(value @ np.asarray(normal))


def build_mpfa_table(mesh, regions, perm, bcs, mu, interface=None, gravity=None,
                     p_ref=0.0):
    """Multi-point flux table: one flux unit per interaction-region sub-face.

    `bcs` maps boundary tags to ("pressure", value) or ("velocity", value);
    values may be constants, callables of (x, y), or 2-vectors for velocity.
    `interface` maps (region index, local sub-face) to a SubfaceCondition
    for sub-faces tagged interface.
    """
    perm = _perm_lookup(perm, mesh.n_cells)
    interface = interface or {}

    table = DarcyTable(scheme="mpfa", mesh=mesh, mu=float(mu), p_ref=float(p_ref),
                       unit_rows=[],
                       unit_parent=None, unit_minus=None, unit_center=None,
                       bud_cell=None, bud_unit=None, bud_sign=None,
                       groups=[], group_of_unit=None, interface_units=[],
                       recon={})
    unit_parent = []
    unit_minus = []
    unit_center = []
    buds = []
    parent_units = {}
    unit_group = []

    for ri, region in enumerate(regions):
        conditions = []
        for sj, sf in enumerate(region.subfaces):
            tag = sf.tag
            if tag == INTERIOR:
                conditions.append(SubfaceCondition("interior"))
            elif (ri, sj) in interface:
                conditions.append(interface[(ri, sj)])
            elif tag in bcs:
                kind, value = bcs[tag]
                if kind == "pressure":
                    conditions.append(SubfaceCondition(
                        "dirichlet", _bc_value(value, sf.cont_point) - p_ref))
                elif kind == "velocity":
                    v_out = _neumann_outward(value, sf.cont_point, sf.normal)
                    conditions.append(SubfaceCondition(
                        "neumann", mu * sf.measure * v_out))
                else:
                    raise DarcyAssemblyError(
                        f"boundary kind must be 'pressure' or 'velocity', got {kind!r}")
            else:
                raise DarcyAssemblyError(
                    f"no boundary condition for tag {tag!r} (face {sf.parent})")

        flux_rows, recon_rows = local_system(region, perm, conditions,
                                             mesh.cell_centers, gravity)
        for sj, sf in enumerate(region.subfaces):
            u = len(table.unit_rows)
            table.unit_rows.append(flux_rows[sj])
            unit_parent.append(sf.parent)
            unit_minus.append(sf.cells[0])
            unit_center.append(0.5 * (np.asarray(region.point)
                                      + mesh.face_centers[sf.parent]))
            cond = conditions[sj]
            if cond.kind == "coupled":
                table.interface_units.append(InterfaceUnit(
                    unit=u, ff_face=cond.column,
                    chi=int(round(-cond.coeff / (mu * sf.measure))),
                    pm_cell=sf.cells[0], measure=sf.measure))
                table.recon[cond.column] = recon_rows[sj]
                unit_group.append(-1)
            else:
                parent_units.setdefault(sf.parent, []).append(u)
                unit_group.append(-2)   # fixed up below
                buds.append((sf.cells[0], u, 1))
                if sf.cells[1] >= 0:
                    buds.append((sf.cells[1], u, -1))

    for parent, units in sorted(parent_units.items()):
        tag = mesh.face_tags[parent]
        k_minus, k_plus = mesh.face_cells[parent]
        if tag == INTERIOR:
            grp = UpwindGroup(GROUP_INTERIOR, units, int(k_minus), int(k_plus),
                              parent=parent)
        else:
            kind, value = bcs[tag]
            if kind == "pressure":
                grp = UpwindGroup(GROUP_DIRICHLET, units, int(k_minus),
                                  p_bc=_bc_value(value, mesh.face_centers[parent]),
                                  parent=parent)
            else:
                grp = UpwindGroup(GROUP_NEUMANN, units, int(k_minus), parent=parent)
        gi = len(table.groups)
        table.groups.append(grp)
        for u in units:
            unit_group[u] = gi

    table.unit_parent = np.asarray(unit_parent, dtype=int)
    table.unit_minus = np.asarray(unit_minus, dtype=int)
    table.unit_center = np.asarray(unit_center, dtype=float)
    table.group_of_unit = np.asarray(unit_group, dtype=int)
    buds = buds or [(0, 0, 0)][:0]
    table.bud_cell = np.array([b[0] for b in buds], dtype=int)
    table.bud_unit = np.array([b[1] for b in buds], dtype=int)
    table.bud_sign = np.array([b[2] for b in buds], dtype=float)
    return table.finalize()


def build_tpfa_table(mesh, regions, perm, bcs, mu, interface=None, gravity=None,
                     p_ref=0.0):
    """Two-point flux table: one unit per parent face, except at the coupled
    interface where the sub-face geometry of `regions` is reused so each
    half couples to its own external velocity column."""
    perm = _perm_lookup(perm, mesh.n_cells)
    interface = interface or {}
    grav = None if gravity is None else np.asarray(gravity, dtype=float)
    if grav is not None and not np.any(grav):
        grav = None

    def trans(cell, face):
        n = mesh.outward_normal(cell, face)
        d = mesh.normal_distance(cell, face)
        return float(mesh.face_measures[face] * (n @ perm[cell] @ n) / d)

    def grav_out(cell, face):
        if grav is None:
            return 0.0
        n = mesh.outward_normal(cell, face)
        return float(mesh.face_measures[face] * (n @ perm[cell] @ grav))

    table = DarcyTable(scheme="tpfa", mesh=mesh, mu=float(mu), p_ref=float(p_ref),
                       unit_rows=[],
                       unit_parent=None, unit_minus=None, unit_center=None,
                       bud_cell=None, bud_unit=None, bud_sign=None,
                       groups=[], group_of_unit=None, interface_units=[],
                       recon={})
    unit_parent = []
    unit_minus = []
    unit_center = []
    buds = []
    unit_group = []

    # coupled sub-faces from the interaction-region geometry
    coupled_by_parent = {}
    for (ri, sj), cond in interface.items():
        sf = regions[ri].subfaces[sj]
        coupled_by_parent.setdefault(sf.parent, []).append((regions[ri], sf, cond))

    for f in range(mesh.n_faces):
        k_minus, k_plus = (int(c) for c in mesh.face_cells[f])
        tag = mesh.face_tags[f]
        if f in coupled_by_parent:
            for region, sf, cond in coupled_by_parent[f]:
                u = len(table.unit_rows)
                table.unit_rows.append(_make_row(
                    [], [], [cond.column], [cond.coeff], [], [], 0.0))
                unit_parent.append(f)
                unit_minus.append(k_minus)
                unit_center.append(0.5 * (np.asarray(region.point)
                                          + mesh.face_centers[f]))
                unit_group.append(-1)
                chi = int(round(-cond.coeff / (mu * sf.measure)))
                table.interface_units.append(InterfaceUnit(
                    unit=u, ff_face=cond.column, chi=chi,
                    pm_cell=k_minus, measure=sf.measure))
                # one-sided reconstruction of the sub-face pressure
                t_j = trans(k_minus, f) * (sf.measure / mesh.face_measures[f])
                if grav is not None:
                    g_j = grav_out(k_minus, f) * (sf.measure / mesh.face_measures[f])
                    table.recon[cond.column] = _make_row(
                        [k_minus], [1.0], [cond.column], [-cond.coeff / t_j],
                        [k_minus], [g_j / t_j], 0.0)
                else:
                    table.recon[cond.column] = _make_row(
                        [k_minus], [1.0], [cond.column], [-cond.coeff / t_j],
                        [], [], 0.0)
            continue

        if tag == INTERIOR:
            t_k = trans(k_minus, f)
            t_l = trans(k_plus, f)
            t = t_k * t_l / (t_k + t_l)
            u = len(table.unit_rows)
            if grav is not None:
                g_k = grav_out(k_minus, f)
                g_l = grav_out(k_plus, f)
                gc = np.array([t_l * g_k, -t_k * g_l]) / (t_k + t_l)
                row = _make_row([k_minus, k_plus], [t, -t], [], [],
                                [k_minus, k_plus], gc, 0.0)
            else:
                row = _make_row([k_minus, k_plus], [t, -t], [], [], [], [], 0.0)
            table.unit_rows.append(row)
            unit_parent.append(f)
            unit_minus.append(k_minus)
            unit_center.append(mesh.face_centers[f])
            buds.append((k_minus, u, 1))
            buds.append((k_plus, u, -1))
            gi = len(table.groups)
            table.groups.append(UpwindGroup(GROUP_INTERIOR, [u], k_minus, k_plus,
                                            parent=f))
            unit_group.append(gi)
            continue

        if tag not in bcs:
            raise DarcyAssemblyError(f"no boundary condition for tag {tag!r} (face {f})")
        kind, value = bcs[tag]
        u = len(table.unit_rows)
        if kind == "pressure":
            p_b = _bc_value(value, mesh.face_centers[f])
            t_k = trans(k_minus, f)
            if grav is not None:
                row = _make_row([k_minus], [t_k], [], [], [k_minus],
                                [grav_out(k_minus, f)], -t_k * (p_b - p_ref))
            else:
                row = _make_row([k_minus], [t_k], [], [], [], [],
                                -t_k * (p_b - p_ref))
            grp = UpwindGroup(GROUP_DIRICHLET, [u], k_minus, p_bc=p_b, parent=f)
        elif kind == "velocity":
            v_out = _neumann_outward(value, mesh.face_centers[f],
                                     mesh.outward_normal(k_minus, f))
            row = _make_row([], [], [], [], [], [],
                            mu * float(mesh.face_measures[f]) * v_out)
            grp = UpwindGroup(GROUP_NEUMANN, [u], k_minus, parent=f)
        else:
            raise DarcyAssemblyError(
                f"boundary kind must be 'pressure' or 'velocity', got {kind!r}")
        table.unit_rows.append(row)
        unit_parent.append(f)
        unit_minus.append(k_minus)
        unit_center.append(mesh.face_centers[f])
        buds.append((k_minus, u, 1))
        gi = len(table.groups)
        table.groups.append(grp)
        unit_group.append(gi)

    table.unit_parent = np.asarray(unit_parent, dtype=int)
    table.unit_minus = np.asarray(unit_minus, dtype=int)
    table.unit_center = np.asarray(unit_center, dtype=float)
    table.group_of_unit = np.asarray(unit_group, dtype=int)
    table.bud_cell = np.array([b[0] for b in buds], dtype=int)
    table.bud_unit = np.array([b[1] for b in buds], dtype=int)
    table.bud_sign = np.array([b[2] for b in buds], dtype=float)
    return table.finalize()


def build_darcy_table(mesh, regions, perm, bcs, mu, scheme="mpfa",
                      interface=None, gravity=None, p_ref=0.0):
    if scheme == "mpfa":
        return build_mpfa_table(mesh, regions, perm, bcs, mu, interface, gravity, p_ref)
    if scheme == "tpfa":
        return build_tpfa_table(mesh, regions, perm, bcs, mu, interface, gravity, p_ref)
    raise ValueError(f"unknown scheme {scheme!r} (expected 'mpfa' or 'tpfa')")


# ---------------------------------------------------------------------------
# evaluation


def group_mobilities(table, fluid, p, fluxes):
    """Upwind mobility rho/mu per group, decided by the total parent flux.

    Ties take the mean of both candidates. Inflow across a pressure boundary
    carries the boundary state; forced-velocity boundaries always carry the
    cell state.
    """
    rho = np.asarray(fluid.density(p + table.p_ref))
    mu = np.asarray(fluid.viscosity(p + table.p_ref))
    lam = rho / mu
    out = np.empty(len(table.groups))
    for gi, grp in enumerate(table.groups):
        tot = float(sum(fluxes[u] for u in grp.units))
        if grp.kind == GROUP_INTERIOR:
            if tot > 0.0:
                out[gi] = lam[grp.cell_minus]
            elif tot < 0.0:
                out[gi] = lam[grp.cell_plus]
            else:
                out[gi] = 0.5 * (lam[grp.cell_minus] + lam[grp.cell_plus])
        elif grp.kind == GROUP_DIRICHLET:
            lam_b = float(fluid.density(grp.p_bc) / fluid.viscosity(grp.p_bc))
            if tot > 0.0:
                out[gi] = lam[grp.cell_minus]
            elif tot < 0.0:
                out[gi] = lam_b
            else:
                out[gi] = 0.5 * (lam[grp.cell_minus] + lam_b)
        else:
            out[gi] = lam[grp.cell_minus]
    return out


def mass_flux_divergence(table, fluid, p, v=None, rho=None):
    """Per-cell sum of outgoing upwinded mass fluxes, interface units excluded."""
    fluxes = table.unit_fluxes(p, v, rho)
    lam_g = group_mobilities(table, fluid, p, fluxes)
    out = np.zeros(table.mesh.n_cells)
    bu = table.bud_unit
    np.add.at(out, table.bud_cell,
              table.bud_sign * lam_g[table.group_of_unit[bu]] * fluxes[bu])
    return out, fluxes


def cell_mass_residual(table, fluid, p, rho_old, dt_inv, cell, source=0.0,
                       v=None, rho_g=None, interface_flux=None):
    """Reference evaluation of one cell's mass balance, unit by unit.

    `interface_flux` maps a free-flow face id to the mass flux entering the
    porous medium through the corresponding sub-face.
    """
    fluxes = table.unit_fluxes(p, v, rho_g)
    lam_g = group_mobilities(table, fluid, p, fluxes)
    acc = float(table.mesh.cell_volumes[cell]) * dt_inv * (
        float(fluid.density(p[cell] + table.p_ref)) - float(rho_old[cell]))
    total = acc - float(table.mesh.cell_volumes[cell]) * source
    for u, s in table.cell_units[cell]:
        total += s * lam_g[table.group_of_unit[u]] * fluxes[u]
    if interface_flux:
        for iu in table.interface_units:
            if iu.pm_cell == cell and iu.ff_face in interface_flux:
                total -= interface_flux[iu.ff_face]
    return total


def interface_subface_fluxes(table, p, v, rho=None):
    """Mu-scaled fluxes out of the porous medium at the coupled sub-faces."""
    out = {}
    for iu in table.interface_units:
        out[iu.ff_face] = table.unit_rows[iu.unit].evaluate(p, v, rho)
    return out


def parent_flux_stencils(table):
    """Combine sub-face units into whole-face stencils, keyed by parent face."""
    out = {}
    n_cells = table.mesh.n_cells
    for u, row in enumerate(table.unit_rows):
        parent = int(table.unit_parent[u])
        if parent not in out:
            out[parent] = (np.zeros(n_cells), [0.0])
        dense, const = out[parent]
        np.add.at(dense, row.cells, row.ccoef)
        const[0] += row.const
    return {f: (dense, c[0]) for f, (dense, c) in out.items()}


def steady_volumetric_solve(table, q_vol=None):
    """Solve the linear steady problem sum_out F / mu = |K| q_vol per cell.

    Valid for constant-mobility states; Dirichlet data and forced boundary
    fluxes are already folded into the unit constants. Tables with coupled
    interface columns are rejected.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.linalg import spsolve

    if table.interface_units:
        raise ValueError("steady stand-alone solve does not support coupled tables")
    if not any(grp.kind == GROUP_DIRICHLET for grp in table.groups):
        raise DarcyAssemblyError(
            "steady solve needs a pressure boundary somewhere; the all-velocity "
            "problem only determines pressure up to a constant")
    mesh = table.mesh
    n = mesh.n_cells
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    if q_vol is not None:
        b += table.mu * mesh.cell_volumes * np.asarray(q_vol, dtype=float)
    for c, u, s in zip(table.bud_cell, table.bud_unit, table.bud_sign):
        row = table.unit_rows[u]
        for cc, w in zip(row.cells, row.ccoef):
            rows.append(c)
            cols.append(cc)
            vals.append(s * w)
        b[c] -= s * row.const
    a = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    p = spsolve(a, b)
    if not np.all(np.isfinite(p)):
        raise DarcyAssemblyError("steady solve produced non-finite pressures "
                                 "(no pressure boundary anywhere?)")
    return p + table.p_ref


def cell_velocities(table, p, v=None, rho=None):
    """Darcy velocity per cell from the divergence-consistent flux moments."""
    mesh = table.mesh
    fluxes = table.unit_fluxes(p, v, rho) / table.mu
    out = np.zeros((mesh.n_cells, 2))
    for c, u, s in zip(table.bud_cell, table.bud_unit, table.bud_sign):
        x = table.unit_center[u] - mesh.cell_centers[c]
        out[c] += s * fluxes[u] * x
    for iu in table.interface_units:
        c = iu.pm_cell
        x = table.unit_center[iu.unit] - mesh.cell_centers[c]
        out[c] += (fluxes[iu.unit]) * x
    out /= mesh.cell_volumes[:, None]
    return out
