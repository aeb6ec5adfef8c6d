"""Colored FD Jacobian, damped Newton, and the implicit Euler march."""

import numpy as np
import pytest
from scipy.sparse import csc_matrix

from porocouple.coupling import build_coupled_problem, pm_boundary_tagger
from porocouple.darcy import build_darcy_table
from porocouple.fluid import FluidEvaluationError, make_fluid
from porocouple.mesh import build_cartesian_mesh, build_ff_mesh, build_interaction_regions
from porocouple.solver import (FD_EPS, CoupledSystem, JacobianPattern, PorousSystem,
                               SolverError, advance, linear_solve, newton_solve,
                               steady_solve)

DOMAIN = (0.0, 0.0, 1.0, 0.5)
BOX = (0.375, 0.0, 0.625, 0.25)
WALL = ("velocity", (0.0, 0.0))
AIR = make_fluid("ideal_gas_air")


def coupled_mini(scheme="mpfa", dp=1.0e-6, fluid=AIR, p_ref=1.0e5):
    ff = build_ff_mesh(DOMAIN, 16, 8, pm_box=BOX)
    pm = build_cartesian_mesh((BOX[0], BOX[1]), (0.25, 0.25), 2, 2,
                              boundary_tag=pm_boundary_tagger(BOX, DOMAIN))
    ff_bcs = {"left": ("pressure", 1.0e5 + dp), "right": ("pressure", 1.0e5),
              "top": WALL, "bottom": WALL}
    prob = build_coupled_problem(ff, ff_bcs, fluid, pm, 4.0e-4 * np.eye(2),
                                 {"bottom": ("velocity", 0.0)}, fluid,
                                 scheme=scheme, p_ref=p_ref)
    return CoupledSystem(prob)


def porous_slab(k=1.0e-12, fluid=AIR, p_in=2.0e5, scheme="mpfa"):
    """Sealed box fed from the left; k = 1e-12 makes the front take seconds."""
    mesh = build_cartesian_mesh((0.0, 0.0), (0.2, 0.2), 4, 4)
    regions = build_interaction_regions(mesh, 0.5)
    bcs = {"left": ("pressure", p_in), "right": ("velocity", 0.0),
           "top": ("velocity", 0.0), "bottom": ("velocity", 0.0)}
    table = build_darcy_table(mesh, regions, k * np.eye(2), bcs, 1.8e-5,
                              scheme=scheme, p_ref=1.0e5)
    return PorousSystem(table, fluid)


def generic_state(system, seed=3):
    """A smooth, decisively non-symmetric state away from upwind ties."""
    rng = np.random.default_rng(seed)
    p = 1.0e-3 * rng.standard_normal(system.n_ffc)
    v = 1.0e-4 * (rng.standard_normal(system.n_v)
                  + 0.5 * np.sign(rng.standard_normal(system.n_v)))
    q = 1.0e-3 * rng.standard_normal(system.n_pmc)
    return system.pack(p, v, q)


# ---------------------------------------------------------------------------
# Jacobian machinery


def test_coloring_is_a_partition_without_row_clashes():
    pat = coupled_mini().pattern
    seen = np.zeros(pat.n, dtype=bool)
    for cols, rows in zip(pat.color_cols, pat.color_rows):
        assert not seen[cols].any()
        seen[cols] = True
        assert len(np.unique(rows)) == len(rows)
    assert seen.all()
    assert 0 < pat.n_colors < 40


def test_colored_jacobian_matches_one_column_differences():
    """Color-grouped differences must equal single-column probes bitwise.

    Bitwise equality holds because columns sharing a color never share a
    residual row; any discrepancy means the declared sparsity lies. The
    same sweep asserts that undeclared rows never react to a column.
    """
    system = coupled_mini()
    u = generic_state(system)
    old = system.old_state(generic_state(system, seed=9))
    fun = lambda w: system.residual(w, dt_inv=0.7, old=old)
    r0 = fun(u)
    pat = system.pattern
    jac = pat.fd_matrix(fun, u, r0).toarray()

    declared = np.zeros((pat.n, pat.n), dtype=bool)
    for j in range(pat.n):
        declared[pat.indices[pat.indptr[j]:pat.indptr[j + 1]], j] = True

    for j in range(pat.n):
        eps = FD_EPS * max(abs(u[j]), 1.0)
        up = u.copy()
        up[j] += eps
        dr = fun(up) - r0
        assert np.all(dr[~declared[:, j]] == 0.0)
        assert np.array_equal(dr[declared[:, j]] / eps, jac[declared[:, j], j])


def test_fd_jacobian_matches_assembled_transmissibilities():
    """With a constant fluid the porous residual is affine, so the FD
    Jacobian must reproduce mobility times the assembled flux stencils.

    The probe state keeps residuals within a few orders of the difference
    increment; a huge residual would eat the difference in cancellation.
    """
    fluid = make_fluid("constant", density=1.2, viscosity=1.8e-5)
    system = porous_slab(k=4.0e-4, fluid=fluid, p_in=1.0e5 + 2.0)
    table = system.table
    lam = 1.2 / 1.8e-5

    a = np.zeros((system.n, system.n))
    for c, un, s in zip(table.bud_cell, table.bud_unit, table.bud_sign):
        row = table.unit_rows[un]
        np.add.at(a[c], row.cells, s * lam * row.ccoef)

    u = system.initial_state(1.0e5 + 3.0)
    jac = system.pattern.fd_matrix(lambda w: system.residual(w), u,
                                   system.residual(u)).toarray()
    scale = np.abs(a).max()
    assert np.allclose(jac, a, rtol=1.0e-6, atol=1.0e-6 * scale)


def test_directional_derivative_matches_jacobian():
    system = coupled_mini()
    res = steady_solve(system, system.initial_state(1.0e5))
    u = res.u
    fun = lambda w: system.residual(w)
    r0 = fun(u)
    jac = system.pattern.fd_matrix(fun, u, r0)

    rng = np.random.default_rng(11)
    w = rng.standard_normal(u.size)
    w /= np.max(np.abs(w))
    delta = 1.0e-7
    lhs = (fun(u + delta * w) - r0) / delta
    jw = jac @ w
    assert np.max(np.abs(lhs - jw)) <= 1.0e-5 * np.max(np.abs(jw))


def test_linear_solve_residual_bound():
    rng = np.random.default_rng(5)
    n = 40
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x = linear_solve(csc_matrix(a), b)
    bound = 1.0e-10 * (np.abs(a).sum(axis=1).max() * np.abs(x).max()
                       + np.abs(b).max())
    assert np.max(np.abs(a @ x - b)) <= bound

    singular = csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError, match="linear solve"):
        linear_solve(singular, np.ones(2))


# ---------------------------------------------------------------------------
# Newton


@pytest.mark.parametrize("scheme", ["mpfa", "tpfa"])
def test_rest_state_is_an_exact_zero(scheme):
    """Uniform pressure at the reference with sealed walls: every residual
    entry is exactly 0.0 and Newton accepts the state without iterating."""
    system = coupled_mini(scheme, dp=0.0)
    u0 = system.initial_state(1.0e5)
    assert np.all(u0 == 0.0)
    assert np.all(system.residual(u0) == 0.0)
    old = system.old_state(u0)
    assert np.all(system.residual(u0, dt_inv=2.0, old=old) == 0.0)

    res = newton_solve(lambda w: system.residual(w), u0, system.pattern)
    assert res.converged and res.iterations == 0


@pytest.mark.parametrize("scheme", ["mpfa", "tpfa"])
def test_gentle_channel_converges_in_a_few_iterations(scheme):
    system = coupled_mini(scheme)
    res = steady_solve(system, system.initial_state(1.0e5))
    assert res.converged
    assert res.iterations <= 5
    assert res.residual_norm <= 1.0e-11
    # the history must be strictly decreasing
    assert all(b < a for a, b in zip(res.norms, res.norms[1:]))


def test_affine_porous_problem_takes_one_newton_iteration():
    """One exact step solves a linear problem. The difference quotient is
    accurate to ~1e-9 relative only while deviations stay below one; larger
    states would leave a first-step residual above the relative tolerance."""
    fluid = make_fluid("constant", density=1.2, viscosity=1.8e-5)
    system = porous_slab(k=4.0e-4, fluid=fluid, p_in=1.0e5 + 0.02)
    res = steady_solve(system, system.initial_state(1.0e5 + 0.1))
    assert res.converged and res.iterations == 1


def test_harsh_cold_start_exhausts_the_damping():
    """A tenfold advective overshoot cannot be saved by four halvings; the
    steady driver must report the failure instead of returning the state."""
    system = coupled_mini(dp=2.0e-3)
    with pytest.raises(SolverError, match="did not converge"):
        steady_solve(system, system.initial_state(1.0e5))


def test_nan_residual_names_the_dof():
    def fun(u):
        r = u.copy()
        r[3] = np.nan
        return r

    pattern = JacobianPattern(5, [{j} for j in range(5)])
    with pytest.raises(SolverError, match="dof 3"):
        newton_solve(fun, np.ones(5), pattern)


def test_inadmissible_trial_states_are_damped_away():
    """Trial steps outside the fluid's domain are halved, not fatal."""
    hits = []

    def fun(u):
        if u[0] > 3.0:
            hits.append(float(u[0]))
            raise FluidEvaluationError("probe")
        return np.arctan(u - 2.0)

    pattern = JacobianPattern(1, [{0}])
    res = newton_solve(fun, np.zeros(1), pattern, abs_tol=1.0e-12)
    assert res.converged
    assert hits, "the guard was never exercised"
    assert abs(res.u[0] - 2.0) < 1.0e-9


def test_negative_initial_pressure_propagates_the_fluid_error():
    system = porous_slab()
    bad = system.initial_state(-5.0)
    with pytest.raises(FluidEvaluationError):
        newton_solve(lambda w: system.residual(w), bad, system.pattern)


# ---------------------------------------------------------------------------
# implicit Euler


def test_zero_horizon_returns_the_initial_state():
    system = porous_slab()
    u0 = system.initial_state(1.0e5)
    out = advance(system, u0, t_end=0.0, dt=1.0)
    assert np.array_equal(out.u, u0)
    assert out.t == 0.0 and out.steps == [] and out.snapshots == {}
    assert not out.stationary


def test_snapshot_times_outside_the_horizon_are_rejected():
    system = porous_slab()
    u0 = system.initial_state(1.0e5)
    with pytest.raises(SolverError, match="snapshot"):
        advance(system, u0, t_end=1.0, dt=0.1, snapshot_times=(2.0,))
    with pytest.raises(SolverError, match="snapshot"):
        advance(system, u0, t_end=1.0, dt=0.1, snapshot_times=(0.0,))


def test_march_lands_exactly_on_snapshots():
    system = porous_slab()
    u0 = system.initial_state(1.0e5)
    marks = (0.3, 0.7, 2.0)
    out = advance(system, u0, t_end=2.0, dt=0.4, snapshot_times=marks)
    assert set(out.snapshots) == set(marks)
    times = [s[0] for s in out.steps]
    for mark in marks:
        assert any(abs(t - mark) <= 1.0e-12 * 2.0 for t in times)
    assert all(b > a for a, b in zip(times, times[1:]))
    assert abs(out.t - 2.0) <= 1.0e-12 * 2.0
    # snapshots must be distinct copies, frozen at their time
    assert not np.array_equal(out.snapshots[0.3], out.snapshots[2.0])


def test_absurd_first_step_backs_off_then_recovers():
    system = coupled_mini(dp=2.0e-3)
    out = advance(system, system.initial_state(1.0e5), t_end=1000.0, dt=1.0e4)
    dts = [s[1] for s in out.steps]
    assert dts[0] < 1000.0, "the oversized first step was accepted"
    assert abs(out.t - 1000.0) <= 1.0e-9
    assert all(its <= 15 for _, _, its in out.steps)


def test_stationary_state_ends_the_march_early():
    # high permeability equilibrates almost instantly
    system = porous_slab(k=4.0e-4, p_in=1.0e5 + 5.0)
    u0 = system.initial_state(1.0e5)
    out = advance(system, u0, t_end=1.0e6, dt=1.0, snapshot_times=(1.0e6,))
    assert out.stationary
    assert out.t < 100.0
    assert np.array_equal(out.snapshots[1.0e6], out.u)
    # and the state is the steady solution
    assert np.max(np.abs(system.residual(out.u))) < 1.0e-10


def test_failure_without_adaptivity_raises():
    system = coupled_mini(dp=2.0e-3)
    with pytest.raises(SolverError, match="time step failed"):
        advance(system, system.initial_state(1.0e5), t_end=1000.0, dt=1000.0,
                adaptive=False)
