"""Monolithic implicit solver for the coupled (and stand-alone porous) systems.

One state vector [p_ff | v | p_pm] with residual blocks in the same order,
so every unknown owns a structurally sensible diagonal entry. The Jacobian
is assembled by colored forward differences on the declared sparsity
pattern: columns that never share a residual row are perturbed together,
so one residual evaluation serves a whole color. Newton damps by halving
the step until the residual norm drops; time stepping is implicit Euler
with halve-on-failure, grow-on-easy-step control that lands exactly on
requested snapshot times.
"""

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .darcy import mass_flux_divergence
from .fluid import FluidEvaluationError

FD_EPS = float(np.sqrt(np.finfo(float).eps))


class SolverError(RuntimeError):
    pass


def _require_finite(r, what="residual"):
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        head = ", ".join(str(int(i)) for i in bad[:8])
        more = f" and {bad.size - 8} more" if bad.size > 8 else ""
        raise SolverError(f"{what} is not finite at dof {head}{more}")


def linear_solve(a, b):
    """Direct sparse LU solve; raises SolverError when factorization fails."""
    try:
        x = splu(csc_matrix(a)).solve(b)
    except RuntimeError as exc:
        raise SolverError(f"linear solve failed: {exc}") from None
    _require_finite(x, "linear solve result")
    return x


# ---------------------------------------------------------------------------
# colored finite-difference Jacobian


class JacobianPattern:
    """Sparsity pattern plus a column coloring for grouped perturbations."""

    def __init__(self, n, columns_of_row):
        self.n = n
        rows_of_col = [[] for _ in range(n)]
        for i, cols in enumerate(columns_of_row):
            for j in cols:
                rows_of_col[int(j)].append(i)
        indptr = np.zeros(n + 1, dtype=int)
        for j in range(n):
            rows_of_col[j] = np.array(sorted(rows_of_col[j]), dtype=int)
            indptr[j + 1] = indptr[j] + len(rows_of_col[j])
        self.indptr = indptr
        self.indices = (np.concatenate(rows_of_col) if n else
                        np.zeros(0, dtype=int))
        self.nnz = int(indptr[-1])

        cols_of_row = [np.array(sorted(int(j) for j in cols), dtype=int)
                       for cols in columns_of_row]
        color = np.full(n, -1, dtype=int)
        mark = np.full(n + 1, -1, dtype=int)
        for j in range(n):
            for r in rows_of_col[j]:
                for k in cols_of_row[r]:
                    c = color[k]
                    if c >= 0:
                        mark[c] = j
            c = 0
            while mark[c] == j:
                c += 1
            color[j] = c
        self.n_colors = int(color.max()) + 1 if n else 0

        # per color: member columns, their pattern rows and data positions
        self.color_cols = []
        self.color_rows = []
        self.color_pos = []
        self.color_rep = []
        for c in range(self.n_colors):
            cols = np.where(color == c)[0]
            pos = np.concatenate([np.arange(indptr[j], indptr[j + 1])
                                  for j in cols]) if len(cols) else np.zeros(0, int)
            counts = indptr[cols + 1] - indptr[cols]
            self.color_cols.append(cols)
            self.color_pos.append(pos)
            self.color_rows.append(self.indices[pos])
            self.color_rep.append(np.repeat(np.arange(len(cols)), counts))

    def fd_matrix(self, fun, u, r0, fd_eps=FD_EPS):
        """Forward-difference Jacobian of `fun` at `u` on this pattern."""
        data = np.zeros(self.nnz)
        for cols, pos, rows, rep in zip(self.color_cols, self.color_pos,
                                        self.color_rows, self.color_rep):
            eps = fd_eps * np.maximum(np.abs(u[cols]), 1.0)
            up = u.copy()
            up[cols] += eps
            dr = fun(up) - r0
            data[pos] = dr[rows] / eps[rep]
        return csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


# ---------------------------------------------------------------------------
# damped Newton


class NewtonResult:
    def __init__(self, u, converged, iterations, residual_norm, norms):
        self.u = u
        self.converged = converged
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.norms = norms

    def __repr__(self):
        return (f"NewtonResult(converged={self.converged}, "
                f"iterations={self.iterations}, residual_norm={self.residual_norm:.3e})")


def newton_solve(fun, u0, pattern, abs_tol=1e-11, rel_tol=1e-8, max_iter=15,
                 fd_eps=FD_EPS, max_halvings=4):
    """Damped Newton iteration with a colored forward-difference Jacobian.

    Convergence means the max-norm of the residual falls below
    max(abs_tol, rel_tol * initial norm). A step that increases the norm,
    or lands outside the fluid's admissible range, is halved up to
    `max_halvings` times before the solve gives up.
    """
    u = np.array(u0, dtype=float)
    r = fun(u)
    _require_finite(r)
    norm0 = float(np.max(np.abs(r)))
    tol = max(abs_tol, rel_tol * norm0)
    norms = [norm0]
    norm = norm0
    for it in range(max_iter):
        if norm <= tol:
            return NewtonResult(u, True, it, norm, norms)
        jac = pattern.fd_matrix(fun, u, r, fd_eps)
        if not np.all(np.isfinite(jac.data)):
            raise SolverError("Jacobian has non-finite entries "
                              "(residual produced NaN under perturbation)")
        du = -linear_solve(jac, r)
        alpha = 1.0
        for _ in range(max_halvings + 1):
            try:
                u_try = u + alpha * du
                r_try = fun(u_try)
            except FluidEvaluationError:
                alpha *= 0.5
                continue
            norm_try = float(np.max(np.abs(r_try)))
            if norm_try < norm or norm_try <= tol:
                break
            alpha *= 0.5
        else:
            return NewtonResult(u, False, it + 1, norm, norms)
        u, r, norm = u_try, r_try, norm_try
        norms.append(norm)
    converged = norm <= tol
    return NewtonResult(u, converged, max_iter, norm, norms)


# ---------------------------------------------------------------------------
# systems


class CoupledSystem:
    """Residual and sparsity of one coupled channel/porous problem.

    The state vector is [p_ff | v | p_pm] with pressures stored as
    deviations from the problem's reference pressure. Absolute pressure
    near 1e5 Pa only resolves increments of about 1.5e-11, which would put
    a floor on the residual far above the solver tolerances; deviations
    keep full precision where the stencils need it. `absolute_state`
    restores physical pressures for output.
    """

    def __init__(self, problem):
        self.prob = problem
        self.p_ref = problem.p_ref
        ff = problem.ff
        self.n_ffc = problem.ff_mesh.n_cells
        self.n_v = problem.ff_mesh.n_faces
        self.n_pmc = problem.pm_mesh.n_cells
        self.off_v = self.n_ffc
        self.off_pm = self.n_ffc + self.n_v
        self.n = self.off_pm + self.n_pmc
        self.pm_vol = problem.pm_mesh.cell_volumes

        rows = []
        mass_p, mass_v = ff.mass_columns()
        for c in range(self.n_ffc):
            rows.append([*mass_p[c], *(self.off_v + j for j in mass_v[c])])
        mom_p, mom_v, mom_pm = ff.momentum_columns()
        for f in range(self.n_v):
            rows.append([*mom_p[f], *(self.off_v + j for j in mom_v[f]),
                         *(self.off_pm + k for k in mom_pm[f])])
        pm_p, pm_v = _darcy_columns(problem.table)
        for k in range(self.n_pmc):
            rows.append([*(self.off_pm + c for c in pm_p[k]),
                         *(self.off_v + j for j in pm_v[k])])
        for cf, ck, f in problem.transfer_columns():
            extra = (cf, self.off_v + f, self.off_pm + ck)
            rows[cf] = [*rows[cf], *extra]
            rows[self.off_pm + ck] = [*rows[self.off_pm + ck], *extra]
        self.pattern = JacobianPattern(self.n, [set(r) for r in rows])

    def split(self, u):
        return (u[:self.off_v], u[self.off_v:self.off_pm], u[self.off_pm:])

    def pack(self, p_ff, v, p_pm):
        return np.concatenate([np.asarray(p_ff, dtype=float),
                               np.asarray(v, dtype=float),
                               np.asarray(p_pm, dtype=float)])

    def initial_state(self, p0):
        dp = float(p0) - self.p_ref
        return self.pack(np.full(self.n_ffc, dp),
                         np.zeros(self.n_v), np.full(self.n_pmc, dp))

    def absolute_state(self, u):
        p, v, q = self.split(u)
        return p + self.p_ref, v.copy(), q + self.p_ref

    def old_state(self, u):
        p, v, q = self.split(u)
        return {"rho_ff": np.asarray(self.prob.ff_fluid.density(p + self.p_ref)),
                "mom": self.prob.ff.momentum(p, v),
                "rho_pm": np.asarray(self.prob.pm_fluid.density(q + self.p_ref))}

    def residual(self, u, dt_inv=0.0, old=None):
        prob = self.prob
        p, v, q = self.split(u)
        rho_pm = np.asarray(prob.pm_fluid.density(q + self.p_ref))
        r_mass = prob.ff.mass_residuals(
            p, v, dt_inv, rho_old=None if old is None else old["rho_ff"])
        r_mom = prob.ff.momentum_residuals(
            p, v, dt_inv, mom_old=None if old is None else old["mom"],
            p_pm=q, rho_pm=rho_pm)
        div, _ = mass_flux_divergence(prob.table, prob.pm_fluid, q, v=v, rho=rho_pm)
        r_pm = div
        if dt_inv:
            r_pm = r_pm + self.pm_vol * dt_inv * (rho_pm - old["rho_pm"])
        phi = prob.transfer_fluxes(p, v, q)
        prob.add_transfer(phi, r_mass, r_pm)
        return np.concatenate([r_mass, r_mom, r_pm])


class FreeFlowSystem:
    """Stand-alone channel problem: [p | v] with no porous block.

    Pressures are stored as deviations from the assembly's reference
    pressure, exactly like the coupled system.
    """

    def __init__(self, assembly):
        if assembly.interface is not None:
            raise SolverError("stand-alone channel system cannot carry interface rows")
        self.asm = assembly
        self.p_ref = assembly.p_ref
        self.n_p = assembly.mesh.n_cells
        self.n_v = assembly.mesh.n_faces
        self.off_v = self.n_p
        self.n = self.n_p + self.n_v
        rows = []
        mass_p, mass_v = assembly.mass_columns()
        for c in range(self.n_p):
            rows.append({*mass_p[c], *(self.off_v + j for j in mass_v[c])})
        mom_p, mom_v, _ = assembly.momentum_columns()
        for f in range(self.n_v):
            rows.append({*mom_p[f], *(self.off_v + j for j in mom_v[f])})
        self.pattern = JacobianPattern(self.n, rows)

    def split(self, u):
        return u[:self.off_v], u[self.off_v:]

    def initial_state(self, p0):
        return np.concatenate([np.full(self.n_p, float(p0) - self.p_ref),
                               np.zeros(self.n_v)])

    def absolute_state(self, u):
        p, v = self.split(u)
        return p + self.p_ref, v.copy()

    def old_state(self, u):
        p, v = self.split(u)
        return {"rho": np.asarray(self.asm.fluid.density(p + self.p_ref)),
                "mom": self.asm.momentum(p, v)}

    def residual(self, u, dt_inv=0.0, old=None):
        p, v = self.split(u)
        r_mass = self.asm.mass_residuals(
            p, v, dt_inv, rho_old=None if old is None else old["rho"])
        r_mom = self.asm.momentum_residuals(
            p, v, dt_inv, mom_old=None if old is None else old["mom"])
        return np.concatenate([r_mass, r_mom])


class PorousSystem:
    """Stand-alone porous problem: cell pressures only.

    Pressures are stored as deviations from the table's reference pressure,
    exactly like the coupled system.
    """

    def __init__(self, table, fluid, source=None):
        if table.interface_units:
            raise SolverError("stand-alone porous system cannot carry coupled faces")
        self.table = table
        self.p_ref = table.p_ref
        self.fluid = fluid
        self.vol = table.mesh.cell_volumes
        self.source = None if source is None else np.asarray(source, dtype=float)
        self.n = table.mesh.n_cells
        pm_p, pm_v = _darcy_columns(table)
        if any(len(s) for s in pm_v):
            raise SolverError("stand-alone porous system cannot carry coupled faces")
        self.pattern = JacobianPattern(self.n, pm_p)

    def initial_state(self, p0):
        return np.full(self.n, float(p0) - self.p_ref)

    def absolute_state(self, u):
        return u + self.p_ref

    def old_state(self, u):
        return {"rho": np.asarray(self.fluid.density(u + self.p_ref))}

    def residual(self, u, dt_inv=0.0, old=None):
        rho = np.asarray(self.fluid.density(u + self.p_ref))
        r, _ = mass_flux_divergence(self.table, self.fluid, u, rho=rho)
        if dt_inv:
            r = r + self.vol * dt_inv * (rho - old["rho"])
        if self.source is not None:
            r = r - self.vol * self.source
        return r


def _darcy_columns(table):
    """Per porous cell: the cell and velocity columns its balance touches.

    A whole upwind group is charged to every cell it feeds, because the
    mobility switch reads the total parent flux.
    """
    n = table.mesh.n_cells
    group_p, group_v = [], []
    for grp in table.groups:
        ps, vs = set(), set()
        for un in grp.units:
            row = table.unit_rows[un]
            ps.update(int(c) for c in row.cells)
            ps.update(int(c) for c in row.gcells)
            vs.update(int(j) for j in row.vcols)
        ps.add(int(grp.cell_minus))
        if grp.cell_plus >= 0:
            ps.add(int(grp.cell_plus))
        group_p.append(ps)
        group_v.append(vs)
    pcols = [{c} for c in range(n)]
    vcols = [set() for _ in range(n)]
    for c, un in zip(table.bud_cell, table.bud_unit):
        gi = int(table.group_of_unit[un])
        pcols[int(c)] |= group_p[gi]
        vcols[int(c)] |= group_v[gi]
    return pcols, vcols


# ---------------------------------------------------------------------------
# drivers


def steady_solve(system, u0, **newton_kw):
    res = newton_solve(lambda u: system.residual(u), u0, system.pattern, **newton_kw)
    if not res.converged:
        raise SolverError(
            f"steady Newton did not converge (residual {res.residual_norm:.3e} "
            f"after {res.iterations} iterations)")
    return res


class TransientResult:
    def __init__(self, u, t, snapshots, steps, stationary):
        self.u = u
        self.t = t
        self.snapshots = snapshots
        self.steps = steps          # (t_new, dt, newton iterations) per step
        self.stationary = stationary


def advance(system, u0, t_end, dt, snapshot_times=(), stationary_tol=1e-12,
            growth=1.5, backoff=0.5, dt_max=None, min_dt_factor=1e-6, easy_iters=4,
            max_steps=100000, adaptive=True, newton_kw=None, observer=None):
    """March implicit Euler to `t_end`, landing exactly on snapshot times.

    The step halves when Newton fails and grows by `growth` after steps
    that converge in at most `easy_iters` iterations. When the solution
    rate max |du| / max(|u|, 1) / dt falls below `stationary_tol`, the
    state is declared stationary and copied to all remaining snapshots.
    `observer(t, dt, u, iterations)` runs after every accepted step.
    """
    newton_kw = dict(newton_kw or {})
    u = np.array(u0, dtype=float)
    t = 0.0
    dt0 = float(dt)
    dt_min = dt0 * min_dt_factor
    pending = sorted(float(s) for s in snapshot_times)
    if any(s <= 0.0 or s > t_end * (1.0 + 1e-12) for s in pending):
        raise SolverError("snapshot times must lie in (0, t_end]")
    snapshots = {}
    steps = []
    stationary = False
    eps_t = 1e-12 * max(t_end, dt0)

    for _ in range(max_steps):
        if t >= t_end - eps_t:
            return TransientResult(u, t, snapshots, steps, stationary)
        target = pending[0] if pending else t_end
        dt_eff = min(dt, target - t)
        old = system.old_state(u)
        res = newton_solve(lambda w: system.residual(w, 1.0 / dt_eff, old),
                           u, system.pattern, **newton_kw)
        if not res.converged:
            if not adaptive or dt_eff <= dt_min:
                raise SolverError(
                    f"time step failed at t = {t:.6g} with dt = {dt_eff:.3e} "
                    f"(residual {res.residual_norm:.3e})")
            dt = max(dt_eff * backoff, dt_min)
            continue
        rate = float(np.max(np.abs(res.u - u) / np.maximum(np.abs(u), 1.0))) / dt_eff
        u = res.u
        t += dt_eff
        steps.append((t, dt_eff, res.iterations))
        if observer is not None:
            observer(t, dt_eff, u, res.iterations)
        if pending and t >= pending[0] - eps_t:
            snapshots[pending.pop(0)] = u.copy()
        if adaptive and res.iterations <= easy_iters:
            dt = max(dt, dt_eff) * growth
            if dt_max is not None:
                dt = min(dt, dt_max)
        if rate < stationary_tol:
            stationary = True
            for s in pending:
                snapshots[s] = u.copy()
            return TransientResult(u, t, snapshots, steps, stationary)
    raise SolverError(f"time loop exceeded {max_steps} steps at t = {t:.6g}")
