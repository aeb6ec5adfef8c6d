"""Stitching of the channel and porous assemblies along the shared rim."""

import numpy as np
import pytest

from porocouple.coupling import (CouplingError, bjs_factor, build_coupled_problem,
                                 pm_boundary_tagger)
from porocouple.darcy import interface_subface_fluxes
from porocouple.fluid import make_fluid
from porocouple.mesh import INTERFACE, MeshError, build_cartesian_mesh, build_ff_mesh

DOMAIN = (0.0, 0.0, 1.0, 0.5)
PM_BOX = (0.375, 0.0, 0.625, 0.25)
WALL = ("velocity", (0.0, 0.0))

AIR = make_fluid("ideal_gas_air")
BRINE = make_fluid("constant", density=0.9, viscosity=1.8e-5)


def mini_problem(scheme="mpfa", alpha_bf=1.0, pm_shift=0.0, pm_n=1,
                 ff_fluid=AIR, pm_fluid=BRINE, perm=None, **kw):
    ff_mesh = build_ff_mesh(DOMAIN, 8, 4, pm_box=PM_BOX)
    box = (PM_BOX[0] + pm_shift, PM_BOX[1], PM_BOX[2] + pm_shift, PM_BOX[3])
    pm_mesh = build_cartesian_mesh((box[0], box[1]), (0.25, 0.25), pm_n, pm_n,
                                   boundary_tag=pm_boundary_tagger(box, DOMAIN))
    ff_bcs = {"left": ("pressure", 1.0e5 + 2.0e-3), "right": ("pressure", 1.0e5),
              "top": WALL, "bottom": WALL}
    if perm is None:
        perm = 4.0e-4 * np.eye(2)
    return build_coupled_problem(ff_mesh, ff_bcs, ff_fluid, pm_mesh, perm,
                                 {"bottom": ("velocity", 0.0)}, pm_fluid,
                                 scheme=scheme, alpha_bf=alpha_bf, **kw)


def channel_problem(scheme="mpfa", perm=None):
    """40x10 channel with a 4x4 porous block, 24 rim faces."""
    domain = (0.0, 0.0, 1.0, 0.25)
    pm_box = (0.4, 0.0, 0.6, 0.2)
    ff_mesh = build_ff_mesh(domain, 40, 10, pm_box=pm_box)
    pm_mesh = build_cartesian_mesh((0.4, 0.0), (0.2, 0.2), 4, 4,
                                   boundary_tag=pm_boundary_tagger(pm_box, domain))
    ff_bcs = {"left": ("pressure", 1.0e5 + 1.0e-3), "right": ("pressure", 1.0e5),
              "top": WALL, "bottom": WALL}
    if perm is None:
        perm = np.diag([4.0e-4, 1.0e-4])
    return build_coupled_problem(ff_mesh, ff_bcs, AIR, pm_mesh, perm,
                                 {"bottom": ("velocity", 0.0)}, BRINE,
                                 scheme=scheme)


def test_bjs_factor_frozen_values():
    k = 4.0e-4 * np.eye(2)
    c = bjs_factor(k, 0, 0.2, 1.0)
    assert abs(c - 5.0) < 1e-12
    assert abs(1.0 / (1.0 + c) - 1.0 / 6.0) < 1e-13
    assert abs(bjs_factor(k, 1, 0.125, 1.0) - 3.125) < 1e-12
    aniso = np.diag([4.0e-4, 1.0e-4])
    assert abs(bjs_factor(aniso, 1, 0.2, 1.0) - 10.0) < 1e-12
    with pytest.raises(CouplingError, match="positive"):
        bjs_factor(np.diag([1.0e-4, 0.0]), 1, 0.1, 1.0)


def test_pm_boundary_tagger_rules():
    tag = pm_boundary_tagger((0.4, 0.0, 0.6, 0.2), (0.0, 0.0, 1.0, 0.25))
    assert tag((0.5, 0.0)) == "bottom"
    assert tag((0.4, 0.1)) == INTERFACE
    assert tag((0.6, 0.1)) == INTERFACE
    assert tag((0.5, 0.2)) == INTERFACE
    full = pm_boundary_tagger((0.0, 0.0, 1.0, 0.1), (0.0, 0.0, 1.0, 0.25))
    assert full((0.0, 0.05)) == "left"
    assert full((1.0, 0.05)) == "right"
    assert full((0.5, 0.1)) == INTERFACE


def test_mini_problem_bookkeeping():
    prob = mini_problem()
    ff = prob.ff_mesh
    iface = set(ff.interface_faces())
    assert len(iface) == 6
    assert set(prob.t_face.tolist()) == iface
    assert set(prob.data.behind) == iface
    assert set(prob.data.pressure) == iface
    assert np.all(prob.t_pmcell == 0)
    assert np.allclose(prob.t_meas, 0.125)
    assert sorted(prob.t_chi.tolist()) == [-1, -1, -1, -1, 1, 1]

    assert set(prob.data.vertex_cells) == {(3, 0), (3, 1), (3, 2),
                                           (5, 0), (5, 1), (5, 2), (4, 2)}
    assert all(v == (0,) for v in prob.data.vertex_cells.values())
    # block corners carry two tangents and are left out
    assert set(prob.data.slip) == {(3, 0), (3, 1), (5, 0), (5, 1), (4, 2)}
    for c in prob.data.slip.values():
        assert abs(c - 3.125) < 1e-12

    # every transfer face sits on the rim of the active channel cells
    for cell, pm_cell, face in prob.transfer_columns():
        assert pm_cell == 0
        assert face in iface
        assert cell >= 0


@pytest.mark.parametrize("scheme", ["mpfa", "tpfa"])
@pytest.mark.parametrize("make", [mini_problem, channel_problem])
def test_uniform_pressure_reconstructs_itself(scheme, make):
    prob = make(scheme=scheme)
    p0 = 7.3e4
    p_pm = np.full(prob.pm_mesh.n_cells, p0)
    v = np.zeros(prob.ff_mesh.n_faces)
    for f, row in prob.data.pressure.items():
        val = row.evaluate(p_pm, v=v)
        assert abs(val - p0) < 1e-12 * p0, f"face {f}: {val!r}"


def test_transfer_flux_hand_check():
    prob = mini_problem()
    ff = prob.ff_mesh
    rng = np.random.default_rng(3)
    p_ff = rng.uniform(9.0e4, 1.1e5, ff.n_cells)
    p_pm = np.array([9.5e4])
    v = np.zeros(ff.n_faces)
    iface = ff.interface_faces()
    v[iface] = [0.4, -0.3, 0.0, 0.25, -0.15, 0.6][:len(iface)]

    phi = prob.transfer_fluxes(p_ff, v, p_pm)
    rho_pm = float(BRINE.density(p_pm[0]))
    for i, f in enumerate(prob.t_face):
        chi = float(ff.interface_chi[f])
        q = chi * v[f]
        ca, cb = ff.face_cells[f]
        cell = ca if ca >= 0 else cb
        rho_ff = float(AIR.density(p_ff[cell]))
        if q > 0:
            rho = rho_ff
        elif q < 0:
            rho = rho_pm
        else:
            rho = 0.5 * (rho_ff + rho_pm)
        assert phi[i] == pytest.approx(rho * 0.125 * q, rel=1e-15, abs=1e-300)


@pytest.mark.parametrize("scheme", ["mpfa", "tpfa"])
def test_transfer_matches_flux_table_route(scheme):
    prob = channel_problem(scheme=scheme)
    ff = prob.ff_mesh
    rng = np.random.default_rng(7)
    p_ff = rng.uniform(9.0e4, 1.1e5, ff.n_cells)
    p_pm = rng.uniform(9.0e4, 1.1e5, prob.pm_mesh.n_cells)
    v = rng.uniform(-1.0, 1.0, ff.n_faces)

    phi = prob.transfer_fluxes(p_ff, v, p_pm)
    fluxes = interface_subface_fluxes(prob.table, p_pm, v)
    mu = prob.mu
    for i, f in enumerate(prob.t_face):
        q = prob.t_chi[i] * v[f]
        rho_ff = float(AIR.density(p_ff[prob.t_ffcell[i]]))
        rho_pm = float(BRINE.density(p_pm[prob.t_pmcell[i]]))
        rho = rho_ff if q > 0 else (rho_pm if q < 0 else 0.5 * (rho_ff + rho_pm))
        expected = -(rho / mu) * fluxes[int(f)]
        assert phi[i] == pytest.approx(expected, rel=1e-14)


def test_transfer_scatter_is_conservative():
    prob = channel_problem()
    rng = np.random.default_rng(11)
    phi = rng.uniform(-2.0, 2.0, len(prob.t_face))
    res_ff = np.zeros(prob.ff_mesh.n_cells)
    res_pm = np.zeros(prob.pm_mesh.n_cells)
    prob.add_transfer(phi, res_ff, res_pm)
    assert abs(res_ff.sum() + res_pm.sum()) <= 1e-15 * np.abs(phi).sum()
    assert res_ff.sum() == pytest.approx(phi.sum(), rel=1e-14)


def test_channel_problem_bookkeeping():
    prob = channel_problem()
    ff = prob.ff_mesh
    assert len(prob.mapping.entries) == 24
    assert set(prob.t_face.tolist()) == set(ff.interface_faces())
    assert len(prob.data.vertex_cells) == 25
    assert len(prob.data.slip) == 23
    assert (16, 8) not in prob.data.slip and (24, 8) not in prob.data.slip

    # anisotropic tangents: flanks run along y, the roof along x
    for (i, j), c in prob.data.slip.items():
        if j == 8:
            assert abs(c - 0.625) < 1e-12, (i, j)
        else:
            assert abs(c - 1.25) < 1e-12, (i, j)

    # porous neighbours recorded at a flank vertex, identified geometrically
    centers = prob.pm_mesh.cell_centers[list(prob.data.vertex_cells[(16, 4)])]
    assert np.allclose(centers[:, 0], 0.425)
    assert np.allclose(sorted(centers[:, 1]), [0.075, 0.125])
    # between two channel faces backed by the same porous cell
    assert prob.data.vertex_cells[(16, 3)] == (1,)


def test_coupled_momentum_rows_evaluate():
    prob = channel_problem()
    ff = prob.ff_mesh
    rng = np.random.default_rng(19)
    p = np.full(ff.n_cells, 1.0e5) + rng.uniform(-1.0, 1.0, ff.n_cells)
    v = rng.uniform(-0.5, 0.5, ff.n_faces)
    p_pm = np.full(prob.pm_mesh.n_cells, 1.0e5)
    rho_pm = BRINE.density(p_pm)
    res = prob.ff.momentum_residuals(p, v, p_pm=p_pm, rho_pm=rho_pm)
    assert np.all(np.isfinite(res))
    assert res.shape == (ff.n_faces,)


def test_mismatched_grids_refuse_to_pair():
    with pytest.raises(MeshError, match="line up"):
        mini_problem(pm_shift=0.03125)
    with pytest.raises(MeshError, match="2:1"):
        mini_problem(pm_n=2)


def test_fluid_and_parameter_guards():
    thick = make_fluid("constant", density=0.9, viscosity=2.0e-5)
    with pytest.raises(CouplingError, match="viscosity on both sides"):
        mini_problem(pm_fluid=thick)
    with pytest.raises(CouplingError, match="alpha_bf"):
        mini_problem(alpha_bf=0.0)

    class PressureThinning:
        def density(self, p):
            return np.full_like(np.asarray(p, dtype=float), 1.0)

        def viscosity(self, p):
            return 1.0e-10 * np.asarray(p, dtype=float)

    with pytest.raises(CouplingError, match="pressure-dependent"):
        mini_problem(pm_fluid=PressureThinning())
