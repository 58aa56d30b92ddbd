"""Static condensation, global assembly over facet DOFs, and recovery.

Cell velocity/pressure blocks are eliminated cell-wise: each cell contributes
a Schur complement gg - gl ll^-1 lg over the facet DOFs on its boundary. The
condensed global system therefore has exactly as many unknowns as a continuous
method on the facet skeleton.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import CondensationError
from .forms import LocalSystem, LocalSystems, State
from .spaces import VEC


def condense_cell(local: LocalSystem):
    """Schur complement, reduced right-hand side, and recovery data of one
    cell's block system."""
    ll = np.atleast_2d(np.asarray(local.ll, dtype=float))
    lg = np.atleast_2d(np.asarray(local.lg, dtype=float))
    gl = np.atleast_2d(np.asarray(local.gl, dtype=float))
    gg = np.atleast_2d(np.asarray(local.gg, dtype=float))
    bl = np.asarray(local.bl, dtype=float)
    try:
        x = np.linalg.solve(ll, np.column_stack([lg, bl]))
    except np.linalg.LinAlgError as exc:
        raise CondensationError(f"singular local block: {exc}") from exc
    ll_inv_lg, ll_inv_bl = x[:, :-1], x[:, -1]
    schur = gg - gl @ ll_inv_lg
    rhs = np.asarray(local.bg, dtype=float) - gl @ ll_inv_bl
    return schur, rhs, (ll, lg, bl)


def condense_all(locals_: LocalSystems):
    """Batched Schur complements (C, ng, ng) and reduced RHS (C, ng)."""
    try:
        sol = np.linalg.solve(
            locals_.A_ll,
            np.concatenate([locals_.A_lg, locals_.b_l[:, :, None]], axis=2))
    except np.linalg.LinAlgError:
        # Identify the offending cell for the error message.
        for c in range(locals_.num_cells):
            try:
                np.linalg.solve(locals_.A_ll[c], locals_.b_l[c])
            except np.linalg.LinAlgError as exc:
                raise CondensationError(
                    f"singular local block in cell {c}: {exc}", cell=c) from exc
        raise
    ll_inv_lg = sol[:, :, :-1]
    ll_inv_bl = sol[:, :, -1]
    schur = locals_.A_gg - np.einsum("cij,cjk->cik", locals_.A_gl, ll_inv_lg)
    rhs = locals_.b_g - np.einsum("cij,cj->ci", locals_.A_gl, ll_inv_bl)
    return schur, rhs


def mean_pressure_constraint(locals_, disc, target):
    """Augment the per-cell systems with a global scalar multiplier enforcing
    int_Omega p dx = target. The multiplier is one extra global unknown every
    cell couples to, so condensation proceeds unchanged."""
    C, nl, ng = locals_.A_ll.shape[0], locals_.A_ll.shape[1], locals_.A_gg.shape[2]
    pu = VEC * disc.nk
    wv = disc.detj[:, None] * disc.qcell.weights[None, :]
    intp = np.einsum("cq,pq->cp", wv, disc.phi_p)  # int_K psi_p dx

    lg = np.zeros((C, nl, ng + 1))
    lg[:, :, :ng] = locals_.A_lg
    lg[:, pu:, ng] = intp
    gl = np.zeros((C, ng + 1, nl))
    gl[:, :ng, :] = locals_.A_gl
    gl[:, ng, pu:] = intp
    gg = np.zeros((C, ng + 1, ng + 1))
    gg[:, :ng, :ng] = locals_.A_gg
    bg = np.zeros((C, ng + 1))
    bg[:, :ng] = locals_.b_g
    return LocalSystems(locals_.A_ll, lg, gl, gg, locals_.b_l, bg,
                        aux=True, aux_rhs=float(target))


@dataclass
class CondensedSystem:
    """Reduced sparse facet system plus everything needed to recover cell
    unknowns: per-cell blocks, extended DOF map, constraint data."""

    A: linalg.SparseMatrix
    b: np.ndarray
    free: np.ndarray          # bool over the full facet system (+ multiplier)
    x_fixed: np.ndarray       # prescribed values on constrained DOFs
    gmap: np.ndarray          # (C, ng[+1]) global columns per cell
    locals_: LocalSystems
    n_glob: int


def _extended_gmap(dofmap, locals_):
    gmap = dofmap.cell_gmap
    if locals_.aux:
        aux_col = np.full((gmap.shape[0], 1), dofmap.n_facet_total, dtype=np.int64)
        gmap = np.concatenate([gmap, aux_col], axis=1)
    return gmap


def assemble(disc, locals_, pressure_pin=None, pin_value=0.0):
    """Scatter-add per-cell Schur complements into the global sparse facet
    system and eliminate constrained DOFs (Dirichlet rows/columns and an
    optional pinned facet-pressure DOF)."""
    dofmap = disc.dofmap
    schur, rhs = condense_all(locals_)
    gmap = _extended_gmap(dofmap, locals_)
    n_glob = dofmap.n_facet_total + (1 if locals_.aux else 0)

    ng = gmap.shape[1]
    rows = np.repeat(gmap, ng, axis=1).ravel()
    cols = np.tile(gmap, (1, ng)).ravel()
    A_full = linalg.SparseMatrix.from_coo(rows, cols, schur.ravel(),
                                          (n_glob, n_glob)).to_scipy()
    b_full = np.zeros(n_glob)
    np.add.at(b_full, gmap.ravel(), rhs.ravel())
    if locals_.aux:
        b_full[dofmap.n_facet_total] += locals_.aux_rhs

    free = np.ones(n_glob, dtype=bool)
    free[:dofmap.n_facet_total] = dofmap.free_mask(pressure_pin)
    x_fixed = np.zeros(n_glob)
    x_fixed[:dofmap.n_facet_total] = dofmap.fixed_values(pressure_pin, pin_value)

    A_red = A_full[free][:, free]
    fixed = ~free
    b_red = b_full[free]
    if np.any(fixed):
        b_red = b_red - A_full[free][:, fixed] @ x_fixed[fixed]
    return CondensedSystem(linalg.SparseMatrix.from_scipy(A_red), b_red,
                           free, x_fixed, gmap, locals_, n_glob)


def solve_condensed(csys):
    """Solve the reduced system; returns the full facet vector (+ multiplier)
    with prescribed values filled in.

    An identically zero right-hand side short-circuits to the zero solution;
    this keeps fully quiescent inviscid steps (where the facet velocity
    costs no energy and the matrix is singular) well defined.
    """
    x = csys.x_fixed.copy()
    if np.any(csys.b):
        x[csys.free] = linalg.sparse_lu_solve(csys.A, csys.b)
    else:
        x[csys.free] = 0.0
    return x


def recover(disc, locals_, x_facet, gmap=None):
    """Cell unknowns from the facet solution: per cell ll^-1 (bl - lg xg)."""
    if gmap is None:
        gmap = _extended_gmap(disc.dofmap, locals_)
    xg = x_facet[gmap]
    rhs = locals_.b_l - np.einsum("cij,cj->ci", locals_.A_lg, xg)
    try:
        xl = np.linalg.solve(locals_.A_ll, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise CondensationError(f"singular local block: {exc}") from exc
    nk = disc.nk
    u = xl[:, :VEC * nk].reshape(-1, nk, VEC)
    p = xl[:, VEC * nk:]
    return u, p


def solve_cycle(disc, locals_, pressure_pin=None, pin_value=0.0, t=0.0):
    """Condense, solve, recover; returns the State and the facet vector."""
    csys = assemble(disc, locals_, pressure_pin, pin_value)
    x = solve_condensed(csys)
    u, p = recover(disc, locals_, x, csys.gmap)
    dofmap = disc.dofmap
    state = State(u=u, p=p, ubar=x[:dofmap.n_ubar].copy(),
                  pbar=x[dofmap.n_ubar:dofmap.n_facet_total].copy(), t=t)
    return state, x


def assemble_monolithic(disc, locals_, pressure_pin=None, pin_value=0.0):
    """Oracle path: the same per-cell blocks assembled into one sparse system
    over all cell and facet DOFs, without elimination."""
    import scipy.sparse

    dofmap = disc.dofmap
    C, nl = locals_.A_ll.shape[0], locals_.A_ll.shape[1]
    gmap = _extended_gmap(dofmap, locals_)
    ng = gmap.shape[1]
    n_loc = C * nl
    n_glob = n_loc + dofmap.n_facet_total + (1 if locals_.aux else 0)

    lmap = (np.arange(C)[:, None] * nl + np.arange(nl)[None, :])
    gmap_shift = n_loc + gmap

    def coo(rows_map, cols_map, vals):
        r = np.repeat(rows_map, cols_map.shape[1], axis=1).ravel()
        c = np.tile(cols_map, (1, rows_map.shape[1])).ravel()
        return r, c, vals.ravel()

    parts = [coo(lmap, lmap, locals_.A_ll), coo(lmap, gmap_shift, locals_.A_lg),
             coo(gmap_shift, lmap, locals_.A_gl), coo(gmap_shift, gmap_shift, locals_.A_gg)]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    A_full = scipy.sparse.coo_matrix((vals, (rows, cols)),
                                     shape=(n_glob, n_glob)).tocsr()
    b_full = np.zeros(n_glob)
    b_full[:n_loc] = locals_.b_l.ravel()
    np.add.at(b_full, gmap_shift.ravel(), locals_.b_g.ravel())
    if locals_.aux:
        b_full[n_loc + dofmap.n_facet_total] += locals_.aux_rhs

    free = np.ones(n_glob, dtype=bool)
    free[n_loc:n_loc + dofmap.n_facet_total] = dofmap.free_mask(pressure_pin)
    x_fixed = np.zeros(n_glob)
    x_fixed[n_loc:n_loc + dofmap.n_facet_total] = dofmap.fixed_values(
        pressure_pin, pin_value)

    A_red = A_full[free][:, free]
    b_red = b_full[free]
    fixed = ~free
    if np.any(fixed):
        b_red = b_red - A_full[free][:, fixed] @ x_fixed[fixed]
    return A_red, b_red, free, x_fixed, n_loc


def solve_monolithic(disc, locals_, pressure_pin=None, pin_value=0.0, t=0.0):
    """Solve the uncondensed system directly; the reference for the
    condensation equivalence checks."""
    dofmap = disc.dofmap
    A_red, b_red, free, x_fixed, n_loc = assemble_monolithic(
        disc, locals_, pressure_pin, pin_value)
    x = x_fixed.copy()
    x[free] = linalg.sparse_lu_solve(linalg.SparseMatrix.from_scipy(A_red), b_red)
    C, nl, nk = locals_.A_ll.shape[0], locals_.A_ll.shape[1], disc.nk
    xl = x[:n_loc].reshape(C, nl)
    u = xl[:, :VEC * nk].reshape(C, nk, VEC)
    p = xl[:, VEC * nk:]
    xg = x[n_loc:]
    state = State(u=u, p=p, ubar=xg[:dofmap.n_ubar].copy(),
                  pbar=xg[dofmap.n_ubar:dofmap.n_facet_total].copy(), t=t)
    return state, xg
