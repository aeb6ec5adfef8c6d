"""Grids for both subdomains and the topological glue between them.

Three mesh-level objects drive the discretizations:

* ``Mesh``: a generic cell-centered polygonal mesh (triangles and convex
  quadrilaterals) used for the porous medium. Cell centers are barycenters,
  face normals are stored once per face oriented from the first adjacent
  cell to the second (outward on the boundary).
* ``CartesianFFMesh``: the uniform square lattice of the free-flow channel,
  optionally with a rectangular block of cells removed where the porous
  medium sits. Faces between an active cell and the removed block are
  tagged ``interface``.
* ``StaggeredTopology``: one secondary control volume per free-flow face,
  holding the dual faces over which the momentum balance is integrated.
  Every dual-face quadrature point coincides with a primary cell center (P)
  or a primary vertex (V); boundary and interface faces get a half-width
  control volume closed by a face on the boundary line itself (B).

MPFA interaction regions (one per porous-medium vertex) and the 2:1
interface mapping between porous-medium sub-faces and free-flow faces are
built here as well; the flux algebra that consumes them lives in
``darcy``/``coupling``.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# face tags
INTERIOR = "interior"
LEFT = "left"
RIGHT = "right"
BOTTOM = "bottom"
TOP = "top"
INTERFACE = "interface"

GEOM_RTOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh input or construction failure."""


def _polygon_area_centroid(pts):
    """Signed shoelace area and area centroid of a simple polygon."""
    x = pts[:, 0]
    y = pts[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def box_boundary_tagger(box, atol):
    """Tag rule assigning left/right/bottom/top by position on a bounding box."""
    x0, y0, x1, y1 = box

    def tag(center):
        if abs(center[0] - x0) <= atol:
            return LEFT
        if abs(center[0] - x1) <= atol:
            return RIGHT
        if abs(center[1] - y0) <= atol:
            return BOTTOM
        if abs(center[1] - y1) <= atol:
            return TOP
        raise MeshError(f"boundary face at {center} matches no side of box {box}")

    return tag


class Mesh:
    """Cell-centered polygonal mesh with full adjacency.

    ``cells`` is a sequence of node-index tuples (3 or 4 nodes each); node
    order is normalized to counter-clockwise. Face normals are unit vectors
    stored once per face, pointing from ``face_cells[f, 0]`` to
    ``face_cells[f, 1]`` (outward for boundary faces, which have
    ``face_cells[f, 1] == -1``). `boundary_tag` maps a boundary face center
    to its tag string.
    """

    def __init__(self, nodes, cells, boundary_tag=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (n, 2) array")
        self.nodes = nodes
        self.n_nodes = len(nodes)

        cell_list = []
        for c in cells:
            c = tuple(int(i) for i in c)
            if len(c) not in (3, 4):
                raise MeshError(f"cells must have 3 or 4 nodes, got {len(c)}")
            if any(i < 0 or i >= self.n_nodes for i in c):
                raise MeshError(f"cell {c} references a missing node")
            area, _ = _polygon_area_centroid(nodes[list(c)])
            if area < 0.0:
                c = c[::-1]
                area = -area
            if area < 1e-14:
                raise MeshError(f"degenerate cell {c} (area {area:g})")
            cell_list.append(c)
        self.cells = cell_list
        self.n_cells = len(cell_list)

        self.cell_volumes = np.empty(self.n_cells)
        self.cell_centers = np.empty((self.n_cells, 2))
        for k, c in enumerate(cell_list):
            area, centroid = _polygon_area_centroid(nodes[list(c)])
            self.cell_volumes[k] = area
            self.cell_centers[k] = centroid

        # unique faces from ccw-ordered cell edges
        face_of = {}
        face_nodes = []
        face_cells = []
        cell_faces = [[] for _ in range(self.n_cells)]
        for k, c in enumerate(cell_list):
            m = len(c)
            for e in range(m):
                a, b = c[e], c[(e + 1) % m]
                key = (a, b) if a < b else (b, a)
                f = face_of.get(key)
                if f is None:
                    f = len(face_nodes)
                    face_of[key] = f
                    face_nodes.append((a, b))
                    face_cells.append([k, -1])
                else:
                    if face_cells[f][1] != -1:
                        raise MeshError(f"face {key} shared by more than two cells")
                    face_cells[f][1] = k
                cell_faces[k].append(f)
        self.face_nodes = np.array(face_nodes, dtype=int)
        self.face_cells = np.array(face_cells, dtype=int)
        self.cell_faces = cell_faces
        self.n_faces = len(face_nodes)

        a = nodes[self.face_nodes[:, 0]]
        b = nodes[self.face_nodes[:, 1]]
        self.face_centers = 0.5 * (a + b)
        tvec = b - a
        self.face_measures = np.hypot(tvec[:, 0], tvec[:, 1])
        if np.any(self.face_measures < 1e-14):
            raise MeshError("zero-length face")
        # edge direction follows the first cell's ccw traversal, so rotating
        # it by -90 degrees points out of that cell
        normal = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / self.face_measures[:, None]
        toward = self.face_centers - self.cell_centers[self.face_cells[:, 0]]
        if np.any((normal * toward).sum(axis=1) <= 0.0):
            raise MeshError("face normal does not point away from its first cell")
        self.face_normals = normal

        vf = [[] for _ in range(self.n_nodes)]
        for f, (na, nb) in enumerate(self.face_nodes):
            vf[na].append(f)
            vf[nb].append(f)
        self.vertex_faces = [sorted(v) for v in vf]
        vc = [set() for _ in range(self.n_nodes)]
        for k, c in enumerate(cell_list):
            for n in c:
                vc[n].add(k)
        self.vertex_cells = [sorted(v) for v in vc]

        self.face_tags = [INTERIOR] * self.n_faces
        for f in range(self.n_faces):
            if self.face_cells[f, 1] == -1:
                if boundary_tag is None:
                    self.face_tags[f] = "boundary"
                else:
                    self.face_tags[f] = boundary_tag(self.face_centers[f])

    def outward_normal(self, cell, face):
        """Unit normal of `face` pointing out of `cell`."""
        if self.face_cells[face, 0] == cell:
            return self.face_normals[face]
        if self.face_cells[face, 1] == cell:
            return -self.face_normals[face]
        raise MeshError(f"cell {cell} not adjacent to face {face}")

    def normal_distance(self, cell, face):
        """Distance from the cell center to the face along the outward normal."""
        d = (self.face_centers[face] - self.cell_centers[cell]) @ self.outward_normal(cell, face)
        if d <= 0.0:
            raise MeshError(f"cell {cell} center is not behind face {face}")
        return d

    def other_cell(self, cell, face):
        k, l = self.face_cells[face]
        return l if k == cell else k

    @property
    def total_volume(self):
        return float(self.cell_volumes.sum())

    def boundary_faces(self, tag=None):
        out = []
        for f in range(self.n_faces):
            if self.face_cells[f, 1] != -1:
                continue
            if tag is None or self.face_tags[f] == tag:
                out.append(f)
        return out


def build_cartesian_mesh(origin, extent, nx, ny, boundary_tag=None):
    """Structured quadrilateral mesh of `nx` by `ny` rectangular cells."""
    nx = int(nx)
    ny = int(ny)
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    ex, ey = float(extent[0]), float(extent[1])
    if ex <= 0.0 or ey <= 0.0:
        raise MeshError(f"extent must be positive, got {extent}")
    x0, y0 = float(origin[0]), float(origin[1])
    xs = x0 + ex * np.arange(nx + 1) / nx
    ys = y0 + ey * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            cells.append((nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)))
    if boundary_tag is None:
        atol = GEOM_RTOL * max(ex, ey) + 1e-300
        boundary_tag = box_boundary_tagger((x0, y0, x0 + ex, y0 + ey), atol)
    return Mesh(nodes, cells, boundary_tag)


def import_triangle_mesh(nodes, elements, boundary_tag=None):
    """Read a triangle mesh from the plain-text NODES/ELEMENTS format.

    `nodes` and `elements` may be file paths or open text streams. The node
    file starts with a header line ``NODES <count>`` followed by
    ``<id> <x> <y>`` lines; the element file starts with
    ``ELEMENTS <count>`` followed by ``<id> <n1> <n2> <n3>``. Ids are
    0-based; `#` starts a comment. Nodes referenced by no element are pruned
    with a warning; degenerate triangles raise.
    """

    def _lines(src):
        if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
            with open(src, "r", encoding="utf-8") as fh:
                return fh.read().splitlines()
        if isinstance(src, io.TextIOBase) or hasattr(src, "read"):
            return src.read().splitlines()
        raise MeshError(f"cannot read mesh data from {type(src).__name__}")

    def _records(lines, header, width, what):
        rows = [ln.split("#", 1)[0].strip() for ln in lines]
        rows = [r for r in rows if r]
        if not rows:
            raise MeshError(f"empty {what} data")
        head = rows[0].split()
        if len(head) != 2 or head[0] != header:
            raise MeshError(f"expected '{header} <count>' header, got {rows[0]!r}")
        try:
            count = int(head[1])
        except ValueError:
            raise MeshError(f"bad {what} count {head[1]!r}") from None
        body = rows[1:]
        if len(body) != count:
            raise MeshError(f"{what} header promises {count} records, found {len(body)}")
        out = {}
        for r in body:
            parts = r.split()
            if len(parts) != width:
                raise MeshError(f"bad {what} record {r!r} (need {width} fields)")
            try:
                idx = int(parts[0])
            except ValueError:
                raise MeshError(f"bad {what} id {parts[0]!r}") from None
            if idx in out:
                raise MeshError(f"duplicate {what} id {idx}")
            out[idx] = parts[1:]
        if sorted(out) != list(range(count)):
            raise MeshError(f"{what} ids must be 0..{count - 1}")
        return [out[i] for i in range(count)]

    node_rows = _records(_lines(nodes), "NODES", 3, "node")
    elem_rows = _records(_lines(elements), "ELEMENTS", 4, "element")
    try:
        pts = np.array([[float(x), float(y)] for x, y in node_rows])
    except ValueError as exc:
        raise MeshError(f"bad node coordinate: {exc}") from None
    tris = [tuple(int(n) for n in row) for row in elem_rows]

    seen = set()
    for t in tris:
        key = tuple(sorted(t))
        if len(set(key)) != 3:
            raise MeshError(f"triangle {t} repeats a node")
        if key in seen:
            raise MeshError(f"duplicate triangle {t}")
        seen.add(key)
        if any(n < 0 or n >= len(pts) for n in t):
            raise MeshError(f"triangle {t} references a missing node")

    used = sorted({n for t in tris for n in t})
    if len(used) != len(pts):
        dangling = len(pts) - len(used)
        logger.warning("pruning %d dangling node(s) from triangle mesh", dangling)
        remap = {old: new for new, old in enumerate(used)}
        pts = pts[used]
        tris = [tuple(remap[n] for n in t) for t in tris]

    if boundary_tag is None:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        atol = GEOM_RTOL * max(hi[0] - lo[0], hi[1] - lo[1]) + 1e-300
        boundary_tag = box_boundary_tagger((lo[0], lo[1], hi[0], hi[1]), atol)
    return Mesh(pts, tris, boundary_tag)


def write_triangle_mesh(nodes_path, elements_path, nodes, elements):
    """Write NODES/ELEMENTS files consumable by import_triangle_mesh."""
    nodes = np.asarray(nodes, dtype=float)
    with open(nodes_path, "w", encoding="utf-8") as fh:
        fh.write(f"NODES {len(nodes)}\n")
        for i, (x, y) in enumerate(nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
    with open(elements_path, "w", encoding="utf-8") as fh:
        fh.write(f"ELEMENTS {len(elements)}\n")
        for i, t in enumerate(elements):
            fh.write(f"{i} {int(t[0])} {int(t[1])} {int(t[2])}\n")


def diagonal_triangulation(box, nx, ny):
    """Split each quad of a structured grid into two triangles (same diagonal).

    All diagonals share one orientation, which makes the grid maximally
    unfriendly to two-point fluxes under full permeability tensors.
    """
    x0, y0, x1, y1 = box
    xs = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    ys = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return nodes, np.array(tris, dtype=int)


def crisscross_triangulation(box, nx, ny):
    """Four triangles per quad around cell-center nodes.

    The pattern is mirror-symmetric about both midlines of the box, so it
    does not prefer either diagonal direction.
    """
    x0, y0, x1, y1 = box
    xs = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    ys = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    centers = [[x0 + (i + 0.5) * hx, y0 + (j + 0.5) * hy]
               for i in range(nx) for j in range(ny)]
    nodes = np.vstack([grid, np.array(centers)])

    def nid(i, j):
        return i * (ny + 1) + j

    n0 = len(grid)
    tris = []
    for i in range(nx):
        for j in range(ny):
            m = n0 + i * ny + j
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.extend([(a, b, m), (b, c, m), (c, d, m), (d, a, m)])
    return nodes, np.array(tris, dtype=int)


# ---------------------------------------------------------------------------
# free-flow lattice


class CartesianFFMesh:
    """Uniform square staggered lattice, optionally with a masked-out block.

    Cells are indexed by lattice coordinates (i, j); only active cells (those
    outside `pm_box`) get cell ids. A face exists when at least one adjacent
    lattice cell is active. `xface_id[i, j]` is the face between cells
    (i-1, j) and (i, j) with normal +e_x; `yface_id[i, j]` sits between
    (i, j-1) and (i, j) with normal +e_y; missing entries are -1. X-faces
    are enumerated before y-faces, each block row-major in (i, j).
    """

    def __init__(self, box, nx, ny, pm_box=None):
        nx = int(nx)
        ny = int(ny)
        if nx < 1 or ny < 1:
            raise MeshError(f"cell counts must be positive, got nx={nx}, ny={ny}")
        x0, y0, x1, y1 = (float(v) for v in box)
        if x1 <= x0 or y1 <= y0:
            raise MeshError(f"box {box} has non-positive extent")
        hx = (x1 - x0) / nx
        hy = (y1 - y0) / ny
        if abs(hx - hy) > GEOM_RTOL * max(hx, hy):
            raise MeshError(f"staggered grid needs square cells, got hx={hx!r}, hy={hy!r}")
        self.box = (x0, y0, x1, y1)
        self.nx = nx
        self.ny = ny
        self.h = hx

        active = np.ones((nx, ny), dtype=bool)
        self.pm_box = None
        self.pm_range = None
        if pm_box is not None:
            px0, py0, px1, py1 = (float(v) for v in pm_box)
            if not (x0 <= px0 < px1 <= x1 and y0 <= py0 < py1 <= y1):
                raise MeshError(f"pm box {pm_box} not contained in domain box {box}")
            idx = []
            for v, o, hh in ((px0, x0, hx), (px1, x0, hx), (py0, y0, hy), (py1, y0, hy)):
                r = (v - o) / hh
                if abs(r - round(r)) > GEOM_RTOL * max(abs(r), 1.0):
                    raise MeshError(f"pm box edge {v} not aligned with grid spacing {hh}")
                idx.append(round(r))
            i0, i1, j0, j1 = idx
            if i1 - i0 < 1 or j1 - j0 < 1:
                raise MeshError("pm box covers no whole grid cell")
            active[i0:i1, j0:j1] = False
            self.pm_box = (px0, py0, px1, py1)
            self.pm_range = (i0, i1, j0, j1)
        self.active = active

        self.cell_id = -np.ones((nx, ny), dtype=int)
        ii, jj = np.nonzero(active)
        self.cell_id[ii, jj] = np.arange(len(ii))
        self.cell_ij = np.column_stack([ii, jj])
        self.n_cells = len(ii)
        self.cell_centers = np.column_stack([x0 + (ii + 0.5) * hx, y0 + (jj + 0.5) * hy])
        self.cell_volumes = np.full(self.n_cells, hx * hy)

        def cell_at(i, j):
            if 0 <= i < nx and 0 <= j < ny:
                return int(self.cell_id[i, j])
            return -1

        def in_pm(i, j):
            return 0 <= i < nx and 0 <= j < ny and not active[i, j]

        faces_axis = []
        faces_ij = []
        faces_center = []
        faces_cells = []
        faces_tag = []
        self.xface_id = -np.ones((nx + 1, ny), dtype=int)
        self.yface_id = -np.ones((nx, ny + 1), dtype=int)

        def classify(cm, cp, minus_ij, plus_ij, axis):
            if cm >= 0 and cp >= 0:
                return INTERIOR
            i, j = minus_ij if cm < 0 else plus_ij
            if in_pm(i, j):
                return INTERFACE
            if axis == 0:
                return LEFT if cm < 0 else RIGHT
            return BOTTOM if cm < 0 else TOP

        for i in range(nx + 1):
            for j in range(ny):
                cm = cell_at(i - 1, j)
                cp = cell_at(i, j)
                if cm < 0 and cp < 0:
                    continue
                self.xface_id[i, j] = len(faces_axis)
                faces_axis.append(0)
                faces_ij.append((i, j))
                faces_center.append((x0 + i * hx, y0 + (j + 0.5) * hy))
                faces_cells.append((cm, cp))
                faces_tag.append(classify(cm, cp, (i - 1, j), (i, j), 0))
        for i in range(nx):
            for j in range(ny + 1):
                cm = cell_at(i, j - 1)
                cp = cell_at(i, j)
                if cm < 0 and cp < 0:
                    continue
                self.yface_id[i, j] = len(faces_axis)
                faces_axis.append(1)
                faces_ij.append((i, j))
                faces_center.append((x0 + (i + 0.5) * hx, y0 + j * hy))
                faces_cells.append((cm, cp))
                faces_tag.append(classify(cm, cp, (i, j - 1), (i, j), 1))

        self.n_faces = len(faces_axis)
        self.face_axis = np.array(faces_axis, dtype=int)
        self.face_ij = np.array(faces_ij, dtype=int)
        self.face_centers = np.array(faces_center, dtype=float)
        self.face_cells = np.array(faces_cells, dtype=int)
        self.face_tags = faces_tag
        self.face_measures = np.full(self.n_faces, self.h)

        # +1 when the porous block sits on the plus side of the face normal
        chi = np.zeros(self.n_faces, dtype=int)
        for f in range(self.n_faces):
            if faces_tag[f] == INTERFACE:
                chi[f] = 1 if self.face_cells[f, 1] < 0 else -1
        self.interface_chi = chi

    def in_pm_block(self, i, j):
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            return False
        return not self.active[i, j]

    @property
    def total_volume(self):
        return self.n_cells * self.h * self.h

    def interface_faces(self):
        return [f for f in range(self.n_faces) if self.face_tags[f] == INTERFACE]

    def faces_with_tag(self, tag):
        return [f for f in range(self.n_faces) if self.face_tags[f] == tag]


def build_ff_mesh(box, nx, ny, pm_box=None):
    return CartesianFFMesh(box, nx, ny, pm_box)


# ---------------------------------------------------------------------------
# staggered dual topology

P_POINT = "P"
V_POINT = "V"
B_POINT = "B"

SLOT_DOF = "dof"
SLOT_GHOST = "ghost"   # substituted per boundary-condition rules at assembly


@dataclass(frozen=True)
class Slot:
    """One velocity sample needed by the operators at a dual-face point.

    `idx` is a face-dof id when `kind == "dof"`. Ghost slots carry the
    geometric `side` that swallowed the sample (left/right/bottom/top or
    interface); `partner` is the existing dof paired with the slot across
    the dual-face point and `partner2` the next dof beyond the partner in
    the same direction (quadratic wall extrapolation), -1 when absent.
    `axis` is the velocity component the slot samples.
    """

    idx: int
    kind: str = SLOT_DOF
    axis: int = 0
    side: str = ""
    partner: int = -1
    partner2: int = -1


@dataclass(frozen=True)
class DualFace:
    """One face of a secondary control volume.

    The outward normal is sign * e_axis for P faces of a CV with momentum
    component `axis`, and sign * e_(1-axis) for V faces. `slots` holds the
    four velocity samples around the quadrature point as ordered pairs
    (vx_minus, vx_plus, vy_minus, vy_plus), minus/plus along the respective
    lattice direction. B faces lie on the boundary line itself.
    """

    kind: str
    center: tuple
    measure: float
    sign: int
    slots: tuple
    cell: int = -1        # P faces: the cell whose center is the point
    boundary_tag: str = ""


@dataclass
class SecondaryCV:
    face: int
    axis: int
    volume: float
    cells: tuple          # adjacent primary cells (1 or 2)
    dual_faces: list = field(default_factory=list)
    half: bool = False
    boundary_tag: str = ""


class StaggeredTopology:
    """Secondary control volumes and dual faces for every free-flow face."""

    def __init__(self, mesh: CartesianFFMesh):
        self.mesh = mesh
        self.h = mesh.h
        self.cvs = [self._build_cv(f) for f in range(mesh.n_faces)]

    # -- slot helpers ------------------------------------------------------

    def _x_slot(self, i, j):
        m = self.mesh
        if 0 <= i <= m.nx and 0 <= j < m.ny:
            f = int(m.xface_id[i, j])
            if f >= 0:
                return Slot(f, SLOT_DOF, 0)
        return self._ghost_slot(0, i, j)

    def _y_slot(self, i, j):
        m = self.mesh
        if 0 <= i < m.nx and 0 <= j <= m.ny:
            f = int(m.yface_id[i, j])
            if f >= 0:
                return Slot(f, SLOT_DOF, 1)
        return self._ghost_slot(1, i, j)

    def _ghost_slot(self, axis, i, j):
        """Classify a missing velocity sample by what swallowed it.

        Porous block first: a sample whose both would-be cells lie in the
        block sits behind the interface. A sample with one would-be cell in
        the block and the other outside the domain sits on the wall line
        closing the block rim. Everything else fell off a domain side.
        """
        m = self.mesh
        adj = ((i - 1, j), (i, j)) if axis == 0 else ((i, j - 1), (i, j))
        pm_adj = [m.in_pm_block(a, b) for a, b in adj]
        if all(pm_adj):
            return Slot(-1, SLOT_GHOST, axis, side=INTERFACE)
        if any(pm_adj):
            if axis == 0:
                side = LEFT if i <= 0 else RIGHT
            else:
                side = BOTTOM if j <= 0 else TOP
            return Slot(-1, SLOT_GHOST, axis, side=side)
        if axis == 0:
            if i < 0:
                side = LEFT
            elif i > m.nx:
                side = RIGHT
            else:
                side = BOTTOM if j < 0 else TOP
        else:
            if j < 0:
                side = BOTTOM
            elif j > m.ny:
                side = TOP
            else:
                side = LEFT if i < 0 else RIGHT
        return Slot(-1, SLOT_GHOST, axis, side=side)

    # -- CV construction ---------------------------------------------------

    def _build_cv(self, f):
        m = self.mesh
        h = m.h
        axis = int(m.face_axis[f])
        i, j = (int(v) for v in m.face_ij[f])
        cm, cp = (int(v) for v in m.face_cells[f])
        tag = m.face_tags[f]
        cx, cy = m.face_centers[f]
        half = tag != INTERIOR
        cv = SecondaryCV(face=f, axis=axis,
                         volume=h * h if not half else 0.5 * h * h,
                         cells=tuple(c for c in (cm, cp) if c >= 0),
                         half=half,
                         boundary_tag="" if tag == INTERIOR else tag)
        self_slot = Slot(f, SLOT_DOF, axis)
        v_measure = h if not half else 0.5 * h

        if axis == 0:
            if cm >= 0:
                cv.dual_faces.append(self._p_face(
                    axis, cm, (cx - 0.5 * h, cy), -1,
                    self._x_slot(i - 1, j), self_slot, i - 1, j))
            if cp >= 0:
                cv.dual_faces.append(self._p_face(
                    axis, cp, (cx + 0.5 * h, cy), +1,
                    self_slot, self._x_slot(i + 1, j), i, j))
            for sgn, jv in ((-1, j), (+1, j + 1)):
                slots = (self._x_slot(i, jv - 1), self._x_slot(i, jv),
                         self._y_slot(i - 1, jv), self._y_slot(i, jv))
                cv.dual_faces.append(DualFace(V_POINT, (cx, cy + sgn * 0.5 * h),
                                              v_measure, sgn, slots))
        else:
            if cm >= 0:
                cv.dual_faces.append(self._p_face(
                    axis, cm, (cx, cy - 0.5 * h), -1,
                    self._y_slot(i, j - 1), self_slot, i, j - 1))
            if cp >= 0:
                cv.dual_faces.append(self._p_face(
                    axis, cp, (cx, cy + 0.5 * h), +1,
                    self_slot, self._y_slot(i, j + 1), i, j))
            for sgn, iv in ((-1, i), (+1, i + 1)):
                slots = (self._x_slot(iv, j - 1), self._x_slot(iv, j),
                         self._y_slot(iv - 1, j), self._y_slot(iv, j))
                cv.dual_faces.append(DualFace(V_POINT, (cx + sgn * 0.5 * h, cy),
                                              v_measure, sgn, slots))
        if half:
            sign = +1 if cp < 0 else -1
            pad = Slot(-1, SLOT_GHOST, 1 - axis, side=tag)
            if axis == 0:
                slots = (self_slot, self_slot, pad, pad)
            else:
                slots = (pad, pad, self_slot, self_slot)
            cv.dual_faces.append(DualFace(B_POINT, (cx, cy), h, sign, slots,
                                          boundary_tag=tag))

        self._resolve_partners(cv)
        return cv

    def _p_face(self, axis, cell, center, sign, slot_lo, slot_hi, ci, cj):
        if axis == 0:
            slots = (slot_lo, slot_hi, self._y_slot(ci, cj), self._y_slot(ci, cj + 1))
        else:
            slots = (self._x_slot(ci, cj), self._x_slot(ci + 1, cj), slot_lo, slot_hi)
        return DualFace(P_POINT, center, self.h, sign, slots, cell=cell)

    def _resolve_partners(self, cv):
        """Fill partner dofs for ghost slots.

        The partner is the other slot of the pair, across the dual-face
        point. Slots of the CV's own component additionally get the next
        dof beyond the partner in the same direction, for the quadratic
        wall extrapolation.
        """
        m = self.mesh
        resolved = []
        for df in cv.dual_faces:
            slots = list(df.slots)
            for s in range(4):
                slot = slots[s]
                if slot.kind == SLOT_DOF or df.kind == B_POINT:
                    continue
                lo, hi = (0, 1) if s in (0, 1) else (2, 3)
                partner = slots[hi if s == lo else lo]
                p_idx = partner.idx if partner.kind == SLOT_DOF else -1
                p2_idx = -1
                if slot.axis == cv.axis and p_idx >= 0:
                    step = 1 if s == lo else -1
                    ii, jj = (int(v) for v in m.face_ij[p_idx])
                    if cv.axis == 0:
                        p2_idx = int(m.xface_id[ii, jj + step]) if 0 <= jj + step < m.ny else -1
                    else:
                        p2_idx = int(m.yface_id[ii + step, jj]) if 0 <= ii + step < m.nx else -1
                slots[s] = Slot(-1, SLOT_GHOST, slot.axis, slot.side, p_idx, p2_idx)
            resolved.append(DualFace(df.kind, df.center, df.measure, df.sign,
                                     tuple(slots), df.cell, df.boundary_tag))
        cv.dual_faces = resolved


def build_staggered_topology(mesh: CartesianFFMesh) -> StaggeredTopology:
    """One secondary control volume per face of the uniform staggered grid."""
    if not isinstance(mesh, CartesianFFMesh):
        raise MeshError("staggered topology requires the uniform Cartesian free-flow mesh")
    return StaggeredTopology(mesh)


# ---------------------------------------------------------------------------
# MPFA interaction regions


@dataclass(frozen=True)
class SubFace:
    """Half of a primary face, owned by one interaction region."""

    parent: int           # parent face id
    measure: float        # half the parent face measure
    normal: tuple         # unit normal, minus -> plus orientation of the parent
    cont_point: tuple     # pressure continuity point at the region's xi
    cells: tuple          # (minus cell, plus cell or -1)
    tag: str


@dataclass
class InteractionRegion:
    vertex: int
    point: tuple
    xi: float
    cells: list           # incident cell ids
    subfaces: list        # SubFace records
    cell_subfaces: list   # per cell: (local j1, local j2)


def build_interaction_regions(mesh: Mesh, xi: float):
    """One interaction region per mesh vertex.

    Pressure continuity points sit at (1 - xi) * face_center + xi * vertex;
    xi = 0 degenerates them to the parent face centers.
    """
    if not (0.0 <= xi < 1.0):
        raise MeshError(f"xi must lie in [0, 1), got {xi}")
    regions = []
    for v in range(mesh.n_nodes):
        vcells = mesh.vertex_cells[v]
        if not vcells:
            continue
        point = mesh.nodes[v]
        subfaces = []
        local_of_face = {}
        for f in mesh.vertex_faces[v]:
            cont = (1.0 - xi) * mesh.face_centers[f] + xi * point
            local_of_face[f] = len(subfaces)
            subfaces.append(SubFace(parent=f,
                                    measure=0.5 * float(mesh.face_measures[f]),
                                    normal=tuple(mesh.face_normals[f]),
                                    cont_point=tuple(cont),
                                    cells=tuple(int(c) for c in mesh.face_cells[f]),
                                    tag=mesh.face_tags[f]))
        cell_subfaces = []
        for k in vcells:
            mine = [local_of_face[f] for f in mesh.cell_faces[k] if f in local_of_face]
            if len(mine) != 2:
                raise MeshError(
                    f"cell {k} meets vertex {v} with {len(mine)} sub-faces (need 2)")
            cell_subfaces.append(tuple(mine))
        regions.append(InteractionRegion(vertex=v, point=tuple(point), xi=xi,
                                         cells=list(vcells), subfaces=subfaces,
                                         cell_subfaces=cell_subfaces))
    return regions


# ---------------------------------------------------------------------------
# 2:1 interface mapping


@dataclass(frozen=True)
class InterfaceEntry:
    region: int           # index into the regions list
    subface: int          # local sub-face index within the region
    pm_face: int          # parent porous-medium face
    pm_cell: int          # porous-medium cell behind the sub-face
    ff_face: int          # coinciding free-flow face
    chi: int              # +1 when +e_axis points into the porous medium


@dataclass
class InterfaceMapping:
    entries: list
    ff_faces: list        # all mapped ff face ids, sorted


def build_interface_mapping(ff_mesh: CartesianFFMesh, pm_mesh: Mesh, regions):
    """Match porous-medium interface sub-faces to coinciding free-flow faces.

    Requires xi = 0.5 so the continuity points land on the free-flow face
    centers, and a 2:1 width ratio so each porous-medium interface face
    covers exactly two free-flow faces.
    """
    if not regions:
        raise MeshError("no interaction regions given")
    xi = regions[0].xi
    if abs(xi - 0.5) > 1e-14:
        raise MeshError(f"interface mapping requires xi = 0.5, got xi = {xi}")

    h = ff_mesh.h
    tol = 1e-12 * h

    ff_lookup = {}
    for f in ff_mesh.interface_faces():
        cx, cy = ff_mesh.face_centers[f]
        ff_lookup[(round(cx / tol), round(cy / tol))] = f

    def find_ff(point):
        key = (round(point[0] / tol), round(point[1] / tol))
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                f = ff_lookup.get((key[0] + di, key[1] + dj))
                if f is None:
                    continue
                c = ff_mesh.face_centers[f]
                if abs(c[0] - point[0]) <= tol and abs(c[1] - point[1]) <= tol:
                    return f
        return None

    entries = []
    mismatches = []
    for r, region in enumerate(regions):
        for s, sf in enumerate(region.subfaces):
            if sf.tag != INTERFACE:
                continue
            if abs(sf.measure - h) > tol:
                raise MeshError(
                    f"sub-face of porous-medium face {sf.parent} has width "
                    f"{sf.measure!r}, expected the free-flow width {h!r} (2:1 ratio)")
            f = find_ff(sf.cont_point)
            if f is None:
                mismatches.append((sf.parent, sf.cont_point))
                continue
            entries.append(InterfaceEntry(region=r, subface=s, pm_face=sf.parent,
                                          pm_cell=sf.cells[0], ff_face=f,
                                          chi=int(ff_mesh.interface_chi[f])))
    if mismatches:
        listing = ", ".join(f"pm face {p} at {c}" for p, c in mismatches[:8])
        raise MeshError(f"interface grids do not line up: {listing}")

    mapped = sorted(e.ff_face for e in entries)
    expected = sorted(ff_mesh.interface_faces())
    if mapped != expected:
        missing = sorted(set(expected) - set(mapped))
        dup = sorted({g for g in mapped if mapped.count(g) > 1})
        raise MeshError(
            f"interface mapping is not a bijection (missing ff faces {missing[:8]}, "
            f"duplicated {dup[:8]})")

    by_pm_face = {}
    for e in entries:
        by_pm_face.setdefault(e.pm_face, []).append(e)
    for pf, group in sorted(by_pm_face.items()):
        if len(group) != 2:
            raise MeshError(
                f"porous-medium face {pf} maps to {len(group)} free-flow faces, expected 2")
        ffcells = set()
        for e in group:
            ca, cb = ff_mesh.face_cells[e.ff_face]
            ffcells.add(int(ca) if ca >= 0 else int(cb))
        if len(ffcells) != 2:
            raise MeshError(
                f"porous-medium face {pf} abuts {len(ffcells)} free-flow cells, expected 2")

    return InterfaceMapping(entries=entries, ff_faces=expected)
