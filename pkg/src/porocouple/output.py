"""Field and time-series writers: VTK legacy ASCII and flat CSV.

All floats go out as full-precision scientific notation so a rerun of the
same configuration reproduces every output file byte for byte.
"""

import os

import numpy as np

from .darcy import cell_velocities

VTK_HEADER = "# vtk DataFile Version 2.0"
VTK_TRIANGLE = 5
VTK_QUAD = 9


def _fmt(x):
    return f"{float(x):.17e}"


def write_vtk_unstructured(path, title, points, cells, cell_types,
                           scalars=(), vectors=()):
    """Write one unstructured grid with cell data to a legacy ASCII file.

    `scalars` and `vectors` are (name, values) pairs; vector z components
    are padded with zero for the 2D fields.
    """
    lines = [VTK_HEADER, title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(points)} double")
    for x, y in points:
        lines.append(f"{_fmt(x)} {_fmt(y)} {_fmt(0.0)}")
    total = sum(len(c) + 1 for c in cells)
    lines.append(f"CELLS {len(cells)} {total}")
    for c in cells:
        lines.append(" ".join(str(i) for i in (len(c), *c)))
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend(str(int(t)) for t in cell_types)
    lines.append(f"CELL_DATA {len(cells)}")
    for name, values in scalars:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    for name, values in vectors:
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{_fmt(vx)} {_fmt(vy)} {_fmt(0.0)}" for vx, vy in values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def polygonal_geometry(mesh):
    """Points, connectivity, and VTK types of a cell-centered polygonal mesh."""
    cells = [list(c) for c in mesh.cells]
    types = [VTK_TRIANGLE if len(c) == 3 else VTK_QUAD for c in cells]
    return mesh.nodes, cells, types


def lattice_geometry(mesh):
    """Corner points and quad connectivity of the active staggered cells."""
    x0, y0 = mesh.box[0], mesh.box[1]
    h = mesh.h
    index = {}
    points = []
    quads = []
    for i, j in mesh.cell_ij:
        corners = []
        for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
            key = (int(i) + di, int(j) + dj)
            at = index.get(key)
            if at is None:
                at = index[key] = len(points)
                points.append((x0 + key[0] * h, y0 + key[1] * h))
            corners.append(at)
        quads.append(corners)
    return points, quads, [VTK_QUAD] * len(quads)


def staggered_cell_velocities(mesh, v):
    """Cell-center velocity as the mean of the two opposing face dofs."""
    out = np.zeros((mesh.n_cells, 2))
    for c, (i, j) in enumerate(mesh.cell_ij):
        i, j = int(i), int(j)
        out[c, 0] = 0.5 * (v[mesh.xface_id[i, j]] + v[mesh.xface_id[i + 1, j]])
        out[c, 1] = 0.5 * (v[mesh.yface_id[i, j]] + v[mesh.yface_id[i, j + 1]])
    return out


class FieldWriter:
    """Writes paired channel/porous VTK files for states of one scenario."""

    def __init__(self, scenario, out_dir, p_offset=0.0):
        self.scenario = scenario
        self.out_dir = out_dir
        self.p_offset = float(p_offset)
        self.ff_geom = lattice_geometry(scenario.ff_mesh)
        self.pm_geom = polygonal_geometry(scenario.pm_mesh)
        self.written = []

    def write(self, tag, u, time=None):
        sc = self.scenario
        title = f"{sc.cfg.kind} t = {time!r} s" if time is not None else sc.cfg.kind
        p_dev, v, q_dev = sc.system.split(u)
        # offset applied to the stored deviation so tiny pressure signals
        # survive the subtraction of a large reference
        shift = sc.system.p_ref - self.p_offset
        pts, cells, types = self.ff_geom
        ff_path = os.path.join(self.out_dir, f"{tag}_ff.vtk")
        write_vtk_unstructured(
            ff_path, title, pts, cells, types,
            scalars=[("pressure", p_dev + shift)],
            vectors=[("velocity", staggered_cell_velocities(sc.ff_mesh, v))])

        pm_v = cell_velocities(sc.problem.table, q_dev, v=v)
        pts, cells, types = self.pm_geom
        pm_path = os.path.join(self.out_dir, f"{tag}_pm.vtk")
        write_vtk_unstructured(
            pm_path, title, pts, cells, types,
            scalars=[("pressure", q_dev + shift)],
            vectors=[("velocity", pm_v)])
        self.written.extend([ff_path, pm_path])


FLUX_COLUMNS = ("time", "gamma_in", "gamma_out", "gamma_top", "constriction")


def flux_csv_header():
    return ",".join(FLUX_COLUMNS) + "\n"


def flux_csv_row(time, fluxes):
    return ",".join(_fmt(v) for v in (time, *fluxes)) + "\n"


def write_summary(path, entries):
    """Write `key = value` lines readable both by eye and by the config parser."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in entries:
            fh.write(f"{key} = {_fmt(value) if isinstance(value, float) else value}\n")
