"""Numerical fluxes and element-level tensors.

Every balance is posed cell-wise: a cell couples its own velocity/pressure
coefficients (local block) to the facet velocity/pressure DOFs on its
boundary (global block). The resulting per-cell block systems feed static
condensation.

Sign convention: the facet-velocity (momentum-flux continuity) rows are
negated relative to the defining functionals so that the assembled Stokes
matrix is symmetric. This is a pure row scaling and does not change the
solution.
"""

from dataclasses import dataclass

import numpy as np

from . import basis as basis_mod
from .errors import InvalidArgumentError
from .mesh import cell_sizes, facet_sizes, outward_normals
from .spaces import VEC

CHUNK = 4096


@dataclass(frozen=True)
class Params:
    """Scheme constants: viscosity nu, interior penalty alpha, pressure
    stabilization beta, conservative/advective weight chi, time-scheme theta,
    time step dt."""

    nu: float
    alpha: float
    beta: float
    chi: float = 0.5
    theta: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.nu < 0:
            raise InvalidArgumentError(f"nu={self.nu} must be >= 0")
        if self.alpha <= 0:
            raise InvalidArgumentError(f"alpha={self.alpha} must be > 0")
        if self.beta < 0:
            raise InvalidArgumentError(f"beta={self.beta} must be >= 0")
        if not 0.0 <= self.chi <= 1.0:
            raise InvalidArgumentError(f"chi={self.chi} must lie in [0, 1]")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgumentError(f"theta={self.theta} must lie in [0, 1]")
        if self.dt <= 0:
            raise InvalidArgumentError(f"dt={self.dt} must be > 0")


@dataclass
class State:
    """Discrete solution: cell velocity u (C, nk, 2), cell pressure p (C, nm),
    facet velocity ubar (n_ubar,), facet pressure pbar (n_pbar,), time t."""

    u: np.ndarray
    p: np.ndarray
    ubar: np.ndarray
    pbar: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, dofmap, t=0.0):
        return cls(
            u=np.zeros((dofmap.n_cells, dofmap.nk, VEC)),
            p=np.zeros((dofmap.n_cells, dofmap.nm)),
            ubar=np.zeros(dofmap.n_ubar),
            pbar=np.zeros(dofmap.n_pbar),
            t=t,
        )

    def facet_vector(self):
        return np.concatenate([self.ubar, self.pbar])

    def copy(self):
        return State(self.u.copy(), self.p.copy(), self.ubar.copy(),
                     self.pbar.copy(), self.t)


@dataclass
class CellVectorField:
    """Vector field given by per-cell Lagrange coefficients; used for forcing
    terms that are finite element fields rather than closed-form functions."""

    order: int
    coeffs: np.ndarray  # (C, n, 2)


# ---------------------------------------------------------------------------
# Pointwise numerical fluxes. These spell out the flux recipes once; the
# assembly kernels below implement the same expressions against basis pairs
# and the tests cross-check the two routes.

def mass_flux(u, p, pbar, n, h, params, nu=None):
    """Numerical mass flux u - (beta*h/(nu+1)) (pbar - p) n.

    The unit added to nu in the denominator is the nondimensional unit
    viscosity; it keeps the expression meaningful in the inviscid limit.
    """
    nu = params.nu if nu is None else nu
    u = np.asarray(u, dtype=float)
    coef = params.beta * np.asarray(h, dtype=float) / (nu + 1.0)
    jump = np.asarray(pbar, dtype=float) - np.asarray(p, dtype=float)
    return u - (coef * jump)[..., None] * np.asarray(n, dtype=float)


def upwind_switch(flux_normal):
    """1 on inflow (flux < 0), 0 on outflow (flux >= 0)."""
    return np.where(np.asarray(flux_normal) < 0.0, 1.0, 0.0)


def advective_flux(u, ubar, uhat, lam):
    """u (x) uhat + (ubar - u) (x) lam*uhat: the cell value is transported on
    outflow, the facet value on inflow."""
    u = np.asarray(u, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    uhat = np.asarray(uhat, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return (u[..., :, None] * uhat[..., None, :]
            + (ubar - u)[..., :, None] * (lam[..., None, None] * uhat[..., None, :]))


def diffusive_flux(grad_u, u, ubar, pbar, n, h, params):
    """pbar I - 2 nu sym(grad_u) - (alpha/h) 2 nu (ubar - u) (x) n."""
    grad_u = np.asarray(grad_u, dtype=float)
    sym = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    n = np.asarray(n, dtype=float)
    du = np.asarray(ubar, dtype=float) - np.asarray(u, dtype=float)
    pen = (params.alpha / np.asarray(h, dtype=float)) * 2.0 * params.nu
    eye = np.eye(VEC)
    return (np.asarray(pbar, dtype=float)[..., None, None] * eye
            - 2.0 * params.nu * sym
            - pen[..., None, None] * du[..., :, None] * n[..., None, :])


# ---------------------------------------------------------------------------


@dataclass
class LocalSystem:
    """One cell's block system: local rows/cols [u, p], global rows/cols the
    facet DOFs on the cell boundary [ubar, pbar] (plus the mean-pressure
    multiplier column when present)."""

    ll: np.ndarray
    lg: np.ndarray
    gl: np.ndarray
    gg: np.ndarray
    bl: np.ndarray
    bg: np.ndarray


@dataclass
class LocalSystems:
    """Stacked per-cell block systems for the whole mesh."""

    A_ll: np.ndarray  # (C, nl, nl)
    A_lg: np.ndarray  # (C, nl, ng)
    A_gl: np.ndarray  # (C, ng, nl)
    A_gg: np.ndarray  # (C, ng, ng)
    b_l: np.ndarray   # (C, nl)
    b_g: np.ndarray   # (C, ng)
    aux: bool = False
    aux_rhs: float = 0.0

    @property
    def num_cells(self):
        return self.A_ll.shape[0]

    def cell(self, c):
        return LocalSystem(self.A_ll[c], self.A_lg[c], self.A_gl[c],
                           self.A_gg[c], self.b_l[c], self.b_g[c])


class Discretization:
    """Reference tabulations, geometry, and DOF layout shared by all assembly
    and diagnostic passes over one (mesh, spaces) pair.

    The quadrature degree defaults to max(3K+1, K+6) with K the largest
    polynomial order in play: the trilinear advection terms need 3K+1 and
    polynomial manufactured loads are covered by K+6.
    """

    def __init__(self, dofmap, degree=None):
        self.dofmap = dofmap
        self.mesh = dofmap.mesh
        self.spec = dofmap.spec
        mesh, spec = self.mesh, self.spec
        K = max(spec.k, spec.kbar, spec.m, spec.mbar)
        self.degree = degree if degree is not None else max(3 * K + 1, K + 6)

        self.basis_u = dofmap.basis_u
        self.basis_p = dofmap.basis_p
        self.nk = dofmap.nk
        self.nm = dofmap.nm
        self.nl = dofmap.nl
        self.nsk = dofmap.nsk
        self.nsm = dofmap.nsm
        self.ng = dofmap.ng

        self.qcell = basis_mod.make_quadrature("triangle", self.degree)
        self.phi_u = basis_mod.eval_basis(self.basis_u, self.qcell.points)
        self.dphi_u = basis_mod.eval_grad(self.basis_u, self.qcell.points)
        self.phi_p = basis_mod.eval_basis(self.basis_p, self.qcell.points)
        self.dphi_p = basis_mod.eval_grad(self.basis_p, self.qcell.points)

        # Facet quadrature in the global facet parameter t and cell traces for
        # the 3 local facets x 2 orientations (index 1 = cell edge reversed
        # with respect to the global facet direction).
        self.qfacet = basis_mod.make_quadrature("interval", self.degree)
        t = self.qfacet.points[:, 0]
        self.nf = t.shape[0]
        self.phi_u_tr = np.empty((3, 2, self.nk, self.nf))
        self.dphi_u_tr = np.empty((3, 2, self.nk, self.nf, 2))
        self.phi_p_tr = np.empty((3, 2, self.nm, self.nf))
        for lf in range(3):
            for flip in range(2):
                pts = basis_mod.reference_trace_points(lf, t, flip=bool(flip))
                self.phi_u_tr[lf, flip] = basis_mod.eval_basis(self.basis_u, pts)
                self.dphi_u_tr[lf, flip] = basis_mod.eval_grad(self.basis_u, pts)
                self.phi_p_tr[lf, flip] = basis_mod.eval_basis(self.basis_p, pts)

        b_ubar = basis_mod.lagrange_basis("interval", spec.kbar)
        b_pbar = basis_mod.lagrange_basis("interval", spec.mbar)
        self.phi_ubar = basis_mod.eval_basis(b_ubar, t[:, None])
        self.phi_pbar = basis_mod.eval_basis(b_pbar, t[:, None])
        self.uslot = np.empty((3, 2, spec.kbar + 1), dtype=np.int64)
        self.pslot = np.empty((3, 2, spec.mbar + 1), dtype=np.int64)
        for lf in range(3):
            for flip in range(2):
                self.uslot[lf, flip] = dofmap.facet_slot_ids(lf, not flip, spec.kbar)
                self.pslot[lf, flip] = dofmap.facet_slot_ids(lf, not flip, spec.mbar)

        # Geometry: affine map x = p0 + J xi with J columns (v1-v0, v2-v0).
        v = mesh.vertices
        p0 = v[mesh.cells[:, 0]]
        e1 = v[mesh.cells[:, 1]] - p0
        e2 = v[mesh.cells[:, 2]] - p0
        self.jac = np.stack([e1, e2], axis=-1)
        self.detj = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.jinv = np.linalg.inv(self.jac)
        self.h_cell = cell_sizes(mesh)
        self.normals = outward_normals(mesh)
        self.h_facet = facet_sizes(mesh)[mesh.cell_facets]
        self.len_facet = mesh.facet_lengths()[mesh.cell_facets]
        self.flip = (~mesh.cell_orientation).astype(np.int64)
        self.is_boundary = mesh.facet_cells[mesh.cell_facets][:, :, 1] < 0

        q = self.qcell.points
        self.xq = (p0[:, None, :]
                   + q[None, :, 0, None] * e1[:, None, :]
                   + q[None, :, 1, None] * e2[:, None, :])
        fa = v[mesh.facets[mesh.cell_facets][:, :, 0]]
        fb = v[mesh.facets[mesh.cell_facets][:, :, 1]]
        self.xf = (fa[:, :, None, :]
                   + t[None, None, :, None] * (fb - fa)[:, :, None, :])

        # Pressure node ids (into pbar) and velocity DOF ids (into ubar) in
        # cell slot order; used to gather frozen facet fields.
        C = mesh.num_cells
        gmap = dofmap.cell_gmap
        self.pbar_nodes = gmap[:, VEC * self.nsk:] - dofmap.n_ubar
        self.ubar_dofs = gmap[:, :VEC * self.nsk].reshape(C, self.nsk, VEC)

    def facet_tag_mask(self, tags):
        """(C, 3) mask of local facets on boundary facets carrying one of the
        given tags."""
        mask = np.zeros((self.mesh.num_cells, 3), dtype=bool)
        tags = set(tags)
        if not tags:
            return mask
        for f, tag in self.mesh.boundary_tags.items():
            if tag in tags:
                c, lf = self.mesh.facet_cells[f, 0], self.mesh.facet_local[f, 0]
                mask[c, lf] = True
        return mask

    def grads_phys(self, cells, dphi):
        return np.einsum("nqe,ced->cnqd", dphi, self.jinv[cells])

    def slot_tables(self, cells, lf, kind):
        """Facet-space values expanded over all scalar cell slots (c, ns, nf);
        slots not on this facet stay zero."""
        flip = self.flip[cells, lf]
        if kind == "u":
            slots, table, ns = self.uslot, self.phi_ubar, self.nsk
        else:
            slots, table, ns = self.pslot, self.phi_pbar, self.nsm
        nc = cells.shape[0]
        out = np.zeros((nc, ns, self.nf))
        s = slots[lf][flip]
        out[np.arange(nc)[:, None, None], s[:, :, None],
            np.arange(self.nf)[None, None, :]] = table[None, :, :]
        return out

    def gather_traces(self, cells, lf):
        flip = self.flip[cells, lf]
        phi_u = self.phi_u_tr[lf][flip]
        grad_u = np.einsum("cnqe,ced->cnqd", self.dphi_u_tr[lf][flip],
                           self.jinv[cells])
        phi_p = self.phi_p_tr[lf][flip]
        return phi_u, grad_u, phi_p


class _Blocks:
    def __init__(self, nc, nl, ng):
        self.ll = np.zeros((nc, nl, nl))
        self.lg = np.zeros((nc, nl, ng))
        self.gl = np.zeros((nc, ng, nl))
        self.gg = np.zeros((nc, ng, ng))


def _add_diag(A, block, roff, coff, nrow, ncol):
    """Scatter a scalar coupling block (c, i, j) onto both vector components
    of interleaved DOFs."""
    for a in range(VEC):
        A[:, roff + a:roff + VEC * nrow:VEC,
          coff + a:coff + VEC * ncol:VEC] += block


def _volume_terms(disc, cells, params, K, Cn, frozen_u):
    """Cell integrals: viscous stress and pressure coupling into the momentum
    blocks K, velocity-divergence coupling into the continuity blocks Cn,
    advective terms into K when a frozen velocity is given."""
    nk = disc.nk
    pu = VEC * nk
    wv = disc.detj[cells][:, None] * disc.qcell.weights[None, :]
    G = disc.grads_phys(cells, disc.dphi_u)
    Gp = disc.grads_phys(cells, disc.dphi_p)
    nu, chi = params.nu, params.chi

    if nu != 0.0:
        # 2 nu sym(grad u) : sym(grad v) = nu [d_ab grad.grad + cross term]
        k1 = np.einsum("cq,ciqd,cjqd->cij", wv, G, G)
        _add_diag(K.ll, nu * k1, 0, 0, nk, nk)
        k2 = np.einsum("cq,cjqa,ciqb->cijab", wv, G, G)
        for a in range(VEC):
            for b in range(VEC):
                K.ll[:, a:pu:VEC, b:pu:VEC] += nu * k2[:, :, :, a, b]

    bup = np.einsum("cq,pq,ciqa->ciap", wv, disc.phi_p, G)
    for a in range(VEC):
        K.ll[:, a:pu:VEC, pu:] -= bup[:, :, a, :]
    dqu = np.einsum("cq,jq,cpqb->cpjb", wv, disc.phi_u, Gp)
    for b in range(VEC):
        Cn.ll[:, pu:, b:pu:VEC] += dqu[:, :, :, b]

    if frozen_u is not None:
        a_q = np.einsum("cjd,jq->cqd", frozen_u[cells], disc.phi_u)
        ag = np.einsum("cqd,ciqd->ciq", a_q, G)
        adv1 = np.einsum("cq,jq,ciq->cij", wv, disc.phi_u, ag)
        adv2 = np.einsum("cq,iq,cjq->cij", wv, disc.phi_u, ag)
        _add_diag(K.ll, -chi * adv1 + (1.0 - chi) * adv2, 0, 0, nk, nk)


def frozen_facet_flux(disc, cells, lf, frozen, params, nu_frozen):
    """Frozen normal mass flux uhat_n . n and the frozen facet velocity at the
    facet quadrature points of one local facet."""
    phi, _, psi = disc.gather_traces(cells, lf)
    ub = disc.slot_tables(cells, lf, "u")
    pb = disc.slot_tables(cells, lf, "p")
    nrm = disc.normals[cells, lf]
    h = disc.h_facet[cells, lf]
    u_n = np.einsum("cjd,cjq->cqd", frozen.u[cells], phi)
    p_n = np.einsum("cj,cjq->cq", frozen.p[cells], psi)
    pb_n = np.einsum("cr,crq->cq", frozen.pbar[disc.pbar_nodes[cells]], pb)
    an = (np.einsum("cqd,cd->cq", u_n, nrm)
          - (params.beta * h / (nu_frozen + 1.0))[:, None] * (pb_n - p_n))
    ub_n = np.einsum("csd,csq->cqd", frozen.ubar[disc.ubar_dofs[cells]], ub)
    return an, ub_n


def _facet_terms(disc, cells, lf, params, K, Cn, frozen, nu_frozen, neumann_mask):
    """Boundary integrals of one local facet for a chunk of cells."""
    nk, nsk = disc.nk, disc.nsk
    pu = VEC * nk
    pg = VEC * nsk
    nu, alpha, beta, chi = params.nu, params.alpha, params.beta, params.chi

    w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]
    nrm = disc.normals[cells, lf]
    h = disc.h_facet[cells, lf]
    phi, G, psi = disc.gather_traces(cells, lf)
    ub = disc.slot_tables(cells, lf, "u")
    pb = disc.slot_tables(cells, lf, "p")
    sgn = np.einsum("cjqd,cd->cjq", G, nrm)

    # --- diffusive numerical flux plus the adjoint-consistency term ---
    if nu != 0.0:
        p1 = np.einsum("cq,cjq,ciq->cij", w, sgn, phi)
        _add_diag(K.ll, -nu * p1, 0, 0, nk, nk)
        p2 = np.einsum("cq,cjqa,ciq->cija", w, G, phi)
        r1 = np.einsum("cq,cjq,csq->csj", w, sgn, ub)
        _add_diag(K.gl, -nu * r1, 0, 0, nsk, nk)
        r2 = np.einsum("cq,cjqa,csq->csja", w, G, ub)
        for a in range(VEC):
            for b in range(VEC):
                nb = nrm[:, b][:, None, None]
                K.ll[:, a:pu:VEC, b:pu:VEC] -= nu * p2[:, :, :, a] * nb
                K.gl[:, a:pg:VEC, b:pu:VEC] -= nu * r2[:, :, :, a] * nb

        pen = (alpha / h) * 2.0 * nu
        wp = w * pen[:, None]
        _add_diag(K.ll, np.einsum("cq,ciq,cjq->cij", wp, phi, phi), 0, 0, nk, nk)
        _add_diag(K.lg, -np.einsum("cq,ciq,clq->cil", wp, phi, ub), 0, 0, nk, nsk)
        _add_diag(K.gl, np.einsum("cq,csq,cjq->csj", wp, ub, phi), 0, 0, nsk, nk)
        _add_diag(K.gg, -np.einsum("cq,csq,ctq->cst", wp, ub, ub), 0, 0, nsk, nsk)

        t1 = np.einsum("cq,clq,ciq->cil", w, ub, sgn)
        _add_diag(K.lg, nu * t1, 0, 0, nk, nsk)
        t1u = np.einsum("cq,cjq,ciq->cij", w, phi, sgn)
        _add_diag(K.ll, -nu * t1u, 0, 0, nk, nk)
        t2 = np.einsum("cq,clq,ciqb->cilb", w, ub, G)
        t2u = np.einsum("cq,cjq,ciqb->cijb", w, phi, G)
        for a in range(VEC):
            na = nrm[:, a][:, None, None]
            for b in range(VEC):
                K.lg[:, a:pu:VEC, b:pg:VEC] += nu * t2[:, :, :, b] * na
                K.ll[:, a:pu:VEC, b:pu:VEC] -= nu * t2u[:, :, :, b] * na

    # pbar n . v (and . vbar); active also in the inviscid limit.
    q1 = np.einsum("cq,clq,ciq->cil", w, pb, phi)
    r5 = np.einsum("cq,crq,csq->csr", w, pb, ub)
    for a in range(VEC):
        na = nrm[:, a][:, None, None]
        K.lg[:, a:pu:VEC, pg:] += q1 * na
        K.gg[:, a:pg:VEC, pg:] += r5 * na

    # --- mass-flux continuity rows (q and qbar tests), current viscosity ---
    d1 = np.einsum("cq,cjq,cpq->cpj", w, phi, psi)
    e1 = np.einsum("cq,cjq,crq->crj", w, phi, pb)
    for b in range(VEC):
        nb = nrm[:, b][:, None, None]
        Cn.ll[:, pu:, b:pu:VEC] -= d1 * nb
        Cn.gl[:, pg:, b:pu:VEC] += e1 * nb
    if beta != 0.0:
        wb = w * (beta * h / (nu + 1.0))[:, None]
        Cn.ll[:, pu:, pu:] -= np.einsum("cq,ciq,cjq->cij", wb, psi, psi)
        Cn.lg[:, pu:, pg:] += np.einsum("cq,crq,cpq->cpr", wb, pb, psi)
        Cn.gl[:, pg:, pu:] += np.einsum("cq,cpq,crq->crp", wb, psi, pb)
        Cn.gg[:, pg:, pg:] -= np.einsum("cq,crq,csq->crs", wb, pb, pb)

    bnd = disc.is_boundary[cells, lf]
    if np.any(bnd):
        wbnd = w * bnd[:, None]
        e4 = np.einsum("cq,ctq,crq->crt", wbnd, ub, pb)
        for b in range(VEC):
            Cn.gg[:, pg:, b:pg:VEC] -= e4 * nrm[:, b][:, None, None]

    # --- advection: frozen mass flux, pointwise upwind switch ---
    if frozen is not None:
        an, ub_n = frozen_facet_flux(disc, cells, lf, frozen, params, nu_frozen)
        lam = (an < 0.0).astype(float)
        wan = w * an
        wlam = wan * lam

        f1 = np.einsum("cq,cjq,ciq->cij", wan, phi, phi)
        f2 = np.einsum("cq,cjq,ciq->cij", wlam, phi, phi)
        _add_diag(K.ll, chi * f1 - f2, 0, 0, nk, nk)
        _add_diag(K.lg, np.einsum("cq,clq,ciq->cil", wlam, ub, phi), 0, 0, nk, nsk)

        g1 = np.einsum("cq,cjq,csq->csj", wan, phi, ub)
        g2 = np.einsum("cq,cjq,csq->csj", wlam, phi, ub)
        _add_diag(K.gl, g1 - g2, 0, 0, nsk, nk)
        h1 = np.einsum("cq,clq,csq->csl", wan, ub, ub)
        h2 = np.einsum("cq,clq,csq->csl", wlam, ub, ub)
        _add_diag(K.gg, -(1.0 - chi) * h1 + h2, 0, 0, nsk, nsk)

        # Momentum-flux boundary: -(chi - lambda)(ubar_n . n) ubar . vbar with
        # the switch following the frozen facet velocity there.
        if neumann_mask is not None:
            nm = neumann_mask[cells, lf]
            if np.any(nm):
                anb = np.einsum("cqd,cd->cq", ub_n, nrm)
                lamb = (anb < 0.0).astype(float)
                wn = w * nm[:, None] * (chi - lamb) * anb
                _add_diag(K.gg, -np.einsum("cq,clq,csq->csl", wn, ub, ub),
                          0, 0, nsk, nsk)


def _mass_matrix(disc, cells):
    wv = disc.detj[cells][:, None] * disc.qcell.weights[None, :]
    return np.einsum("cq,iq,jq->cij", wv, disc.phi_u, disc.phi_u)


def _forcing_values(disc, cells, forcing):
    """Forcing at the cell quadrature points, (c, nq, 2)."""
    if isinstance(forcing, CellVectorField):
        b = basis_mod.lagrange_basis("triangle", forcing.order)
        tab = basis_mod.eval_basis(b, disc.qcell.points)
        return np.einsum("cjd,jq->cqd", forcing.coeffs[cells], tab)
    pts = disc.xq[cells]
    nq = pts.shape[1]
    vals = np.asarray(forcing(pts.reshape(-1, 2)), dtype=float)
    return vals.reshape(cells.shape[0], nq, VEC)


def _load_volume(disc, cells, forcing_list, b_l):
    wv = disc.detj[cells][:, None] * disc.qcell.weights[None, :]
    nk = disc.nk
    for weight, fn in forcing_list:
        if fn is None or weight == 0.0:
            continue
        fq = _forcing_values(disc, cells, fn)
        bl = weight * np.einsum("cq,iq,cqa->cia", wv, disc.phi_u, fq)
        for a in range(VEC):
            b_l[:, a:VEC * nk:VEC] += bl[:, :, a]


def _load_neumann(disc, cells, params, neumann_loads, b_g):
    """Traction loads int h . vbar on tagged boundary facets."""
    if not neumann_loads:
        return
    nsk = disc.nsk
    for tag, h_fn in neumann_loads.items():
        if h_fn is None:
            continue
        mask = disc.facet_tag_mask([tag])[cells]
        if not np.any(mask):
            continue
        for lf in range(3):
            rows = np.nonzero(mask[:, lf])[0]
            if rows.size == 0:
                continue
            sub = cells[rows]
            w = disc.len_facet[sub, lf][:, None] * disc.qfacet.weights[None, :]
            ub = disc.slot_tables(sub, lf, "u")
            pts = disc.xf[sub, lf]
            hv = np.asarray(h_fn(pts.reshape(-1, 2)), dtype=float)
            hv = hv.reshape(sub.shape[0], disc.nf, VEC)
            bg = np.einsum("cq,csq,cqa->csa", w, ub, hv)
            for a in range(VEC):
                b_g[rows, a:VEC * nsk:VEC] += bg[:, :, a]


def cell_tensors(disc, params, mode="stokes", frozen=None, nu_frozen=None,
                 old=None, forcing=None, neumann_loads=None, neumann_tags=()):
    """Build the per-cell block systems for one linear solve.

    mode:
      'stokes'            steady, advection off; 'frozen' ignored.
      'ns'                steady momentum balance linearized about the frozen
                          state.
      'transient'         one theta-scheme step from 'old'; advective
                          quantities and the upwind switch are frozen at
                          'old' (with nu_frozen, the viscosity in effect when
                          that state was produced).
      'transient-stokes'  theta-scheme step with advection off.

    forcing: None, a callable f(points)->(N,2), a CellVectorField, or a list
    of (weight, forcing) pairs (used for the theta-blended load).
    neumann_loads: {tag: h(points)->(N,2)} traction data on tagged facets.
    neumann_tags: tags forming the momentum-flux boundary for the advective
    boundary term (free-slip walls contribute nothing and may be omitted).
    """
    if mode not in ("stokes", "ns", "transient", "transient-stokes"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    advective = mode in ("ns", "transient")
    if advective and frozen is None:
        raise InvalidArgumentError(f"mode {mode!r} requires a frozen state")
    nu_frozen = params.nu if nu_frozen is None else nu_frozen
    if forcing is None or callable(forcing) or isinstance(forcing, CellVectorField):
        forcing_list = [(1.0, forcing)]
    else:
        forcing_list = list(forcing)

    mesh = disc.mesh
    C = mesh.num_cells
    nl, ng = disc.nl, disc.ng
    out = LocalSystems(
        A_ll=np.zeros((C, nl, nl)), A_lg=np.zeros((C, nl, ng)),
        A_gl=np.zeros((C, ng, nl)), A_gg=np.zeros((C, ng, ng)),
        b_l=np.zeros((C, nl)), b_g=np.zeros((C, ng)))

    frozen_u = frozen.u if (frozen is not None and advective) else None
    neumann_mask = disc.facet_tag_mask(neumann_tags) if neumann_tags else None
    theta = params.theta
    transient = mode.startswith("transient")
    if transient and old is None:
        raise InvalidArgumentError(f"mode {mode!r} requires the previous state")

    for start in range(0, C, CHUNK):
        cells = np.arange(start, min(start + CHUNK, C))
        nc = cells.shape[0]
        K = _Blocks(nc, nl, ng)   # momentum rows (theta-weighted in time)
        Cn = _Blocks(nc, nl, ng)  # continuity rows (always at the new time)

        _volume_terms(disc, cells, params, K, Cn, frozen_u)
        for lf in range(3):
            _facet_terms(disc, cells, lf, params, K, Cn,
                         frozen if advective else None,
                         nu_frozen, neumann_mask)

        b_l = np.zeros((nc, nl))
        b_g = np.zeros((nc, ng))
        _load_volume(disc, cells, forcing_list, b_l)
        _load_neumann(disc, cells, params, neumann_loads, b_g)

        if transient:
            ms = _mass_matrix(disc, cells)
            m_full = np.zeros((nc, nl, nl))
            _add_diag(m_full, ms, 0, 0, disc.nk, disc.nk)

            xl_old = np.empty((nc, nl))
            xl_old[:, :VEC * disc.nk] = old.u[cells].reshape(nc, -1)
            xl_old[:, VEC * disc.nk:] = old.p[cells]
            xg_old = old.facet_vector()[disc.dofmap.cell_gmap[cells]]

            out.A_ll[cells] = Cn.ll + theta * K.ll + m_full / params.dt
            out.A_lg[cells] = Cn.lg + theta * K.lg
            out.A_gl[cells] = Cn.gl + theta * K.gl
            out.A_gg[cells] = Cn.gg + theta * K.gg
            b_l += np.einsum("cij,cj->ci", m_full, xl_old) / params.dt
            if theta != 1.0:
                w = 1.0 - theta
                b_l -= w * (np.einsum("cij,cj->ci", K.ll, xl_old)
                            + np.einsum("cij,cj->ci", K.lg, xg_old))
                b_g -= w * (np.einsum("cij,cj->ci", K.gl, xl_old)
                            + np.einsum("cij,cj->ci", K.gg, xg_old))
        else:
            out.A_ll[cells] = Cn.ll + K.ll
            out.A_lg[cells] = Cn.lg + K.lg
            out.A_gl[cells] = Cn.gl + K.gl
            out.A_gg[cells] = Cn.gg + K.gg

        out.b_l[cells] = b_l
        out.b_g[cells] = b_g

    # Row sign flip on the facet-velocity equations (symmetry convention).
    pg = VEC * disc.nsk
    out.A_gl[:, :pg, :] *= -1.0
    out.A_gg[:, :pg, :] *= -1.0
    out.b_g[:, :pg] *= -1.0
    return out


def neumann_terms(disc, params, facet, frozen, h_fn=None, chi=None):
    """Momentum-flux boundary contributions of a single tagged facet: the
    (chi - lambda)(ubar_n . n) ubar . vbar matrix block (facet-velocity rows
    and columns of the owning cell, in cell slot order, sign convention
    included) and the traction load vector."""
    mesh = disc.mesh
    c, lf = mesh.facet_cells[facet, 0], mesh.facet_local[facet, 0]
    if mesh.facet_cells[facet, 1] >= 0:
        raise InvalidArgumentError(f"facet {facet} is not a boundary facet")
    chi = params.chi if chi is None else chi
    cells = np.array([c])
    w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]
    nrm = disc.normals[cells, lf]
    ub = disc.slot_tables(cells, lf, "u")
    nsk = disc.nsk

    A = np.zeros((VEC * nsk, VEC * nsk))
    bg = np.zeros(VEC * nsk)
    if frozen is not None:
        ub_n = np.einsum("csd,csq->cqd", frozen.ubar[disc.ubar_dofs[cells]], ub)
        anb = np.einsum("cqd,cd->cq", ub_n, nrm)
        lamb = (anb < 0.0).astype(float)
        wn = w * (chi - lamb) * anb
        blk = -np.einsum("cq,clq,csq->csl", wn, ub, ub)[0]
        for a in range(VEC):
            A[a::VEC, a::VEC] += blk
    if h_fn is not None:
        pts = disc.xf[cells, lf]
        hv = np.asarray(h_fn(pts.reshape(-1, 2)), dtype=float).reshape(1, disc.nf, VEC)
        load = np.einsum("cq,csq,cqa->csa", w, ub, hv)[0]
        for a in range(VEC):
            bg[a::VEC] += load[:, a]
    # Same facet-velocity row sign flip as the assembled system.
    return -A, -bg
