"""Error norms, conservation residuals, kinetic energy, wall diagnostics."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from .forms import diffusive_flux, mass_flux, upwind_switch
from .spaces import VEC

# Fixed, versioned column order of report.csv (missing entries left blank).
REPORT_COLUMNS = [
    "scenario", "run_id", "nx", "ny", "k", "kbar", "m", "mbar",
    "nu", "re", "alpha", "beta", "chi", "theta", "dt", "steps", "seed",
    "h_max", "dof_facet", "l2_u", "l2_p", "l2_p_meanfree", "e_div",
    "mass_residual_max", "momentum_residual_max", "kinetic_energy",
    "reattachment_x_over_s", "bubble_start_x_over_s", "bubble_end_x_over_s",
    "iterations", "converged", "pin_info",
]


def _error_quad(disc, degree=None):
    """Quadrature tables for error integration; defaults to 2k+6, accurate
    enough for the non-polynomial benchmark solutions."""
    if degree is None:
        degree = 2 * disc.spec.k + 6
    q = basis_mod.make_quadrature("triangle", degree)
    phi_u = basis_mod.eval_basis(disc.basis_u, q.points)
    phi_p = basis_mod.eval_basis(disc.basis_p, q.points)
    p0 = disc.mesh.vertices[disc.mesh.cells[:, 0]]
    e1 = disc.mesh.vertices[disc.mesh.cells[:, 1]] - p0
    e2 = disc.mesh.vertices[disc.mesh.cells[:, 2]] - p0
    xq = (p0[:, None, :] + q.points[None, :, 0, None] * e1[:, None, :]
          + q.points[None, :, 1, None] * e2[:, None, :])
    wv = disc.detj[:, None] * q.weights[None, :]
    return wv, xq, phi_u, phi_p


def l2_error_velocity(disc, u, exact, degree=None):
    """sqrt(sum_K int |u_h - exact|^2)."""
    wv, xq, phi_u, _ = _error_quad(disc, degree)
    uh = np.einsum("cjd,jq->cqd", u, phi_u)
    ue = np.asarray(exact(xq.reshape(-1, 2)), dtype=float).reshape(uh.shape)
    return float(np.sqrt(np.sum(wv * np.sum((uh - ue) ** 2, axis=2))))


def l2_error_pressure(disc, p, exact, degree=None, mean_match=False):
    """L2 pressure error; with mean_match the additive constant is fixed by
    matching means, for runs where only a point value of the pressure is
    pinned."""
    wv, xq, _, phi_p = _error_quad(disc, degree)
    ph = np.einsum("cj,jq->cq", p, phi_p)
    pe = np.asarray(exact(xq.reshape(-1, 2)), dtype=float).reshape(ph.shape)
    diff = ph - pe
    if mean_match:
        area = np.sum(wv)
        diff = diff - np.sum(wv * diff) / area
    return float(np.sqrt(np.sum(wv * diff**2)))


def l2_norm_velocity(disc, u):
    wv = disc.detj[:, None] * disc.qcell.weights[None, :]
    uh = np.einsum("cjd,jq->cqd", u, disc.phi_u)
    return float(np.sqrt(np.sum(wv * np.sum(uh**2, axis=2))))


def kinetic_energy(disc, u):
    """int |u|^2 dx, the monitored energy of the transient runs."""
    return l2_norm_velocity(disc, u) ** 2


def divergence_error(disc, u):
    """e_div = (sum_K int (div u)^2)^(1/2)."""
    wv = disc.detj[:, None] * disc.qcell.weights[None, :]
    cells = np.arange(disc.mesh.num_cells)
    G = disc.grads_phys(cells, disc.dphi_u)
    div = np.einsum("cnd,cnqd->cq", u, G)
    return float(np.sqrt(np.sum(wv * div**2)))


def local_mass_residual(disc, state, params, nu=None):
    """Per-cell boundary integral of the numerical mass flux, evaluated with
    the assembly facet quadrature. Zero (to solver precision) for any state
    solving the discrete equations."""
    nu = params.nu if nu is None else nu
    C = disc.mesh.num_cells
    cells = np.arange(C)
    total = np.zeros(C)
    for lf in range(3):
        phi, _, psi = disc.gather_traces(cells, lf)
        ub = disc.slot_tables(cells, lf, "u")
        pb = disc.slot_tables(cells, lf, "p")
        nrm = disc.normals[cells, lf]
        h = disc.h_facet[cells, lf]
        w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]
        u_v = np.einsum("cjd,cjq->cqd", state.u, phi)
        p_v = np.einsum("cj,cjq->cq", state.p, psi)
        pb_v = np.einsum("cr,crq->cq", state.pbar[disc.pbar_nodes], pb)
        uh = mass_flux(u_v, p_v, pb_v, nrm[:, None, :], h[:, None], params, nu=nu)
        total += np.sum(w * np.einsum("cqd,cd->cq", uh, nrm), axis=1)
    return total


def global_boundary_flux(disc, state):
    """int_dOmega ubar . n ds."""
    C = disc.mesh.num_cells
    cells = np.arange(C)
    total = 0.0
    for lf in range(3):
        bnd = disc.is_boundary[cells, lf]
        if not np.any(bnd):
            continue
        ub = disc.slot_tables(cells, lf, "u")
        nrm = disc.normals[cells, lf]
        w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]
        ub_v = np.einsum("csd,csq->cqd", state.ubar[disc.ubar_dofs], ub)
        total += np.sum(bnd[:, None] * w * np.einsum("cqd,cd->cq", ub_v, nrm))
    return float(total)


def _forcing_cell_integrals(disc, forcing_list):
    """int_K f dx per cell for a theta-blended forcing list, (C, 2)."""
    from .forms import _forcing_values

    C = disc.mesh.num_cells
    cells = np.arange(C)
    wv = disc.detj[:, None] * disc.qcell.weights[None, :]
    out = np.zeros((C, VEC))
    for weight, fn in forcing_list:
        if fn is None or weight == 0.0:
            continue
        fq = _forcing_values(disc, cells, fn)
        out += weight * np.einsum("cq,cqd->cd", wv, fq)
    return out


def local_momentum_residual(disc, state_n, state_np1, params, forcing=None,
                            nu_prev=None):
    """Per-cell residual of the discrete momentum balance over one step:

        int_K (u_{n+1} - u_n)/dt + oint_dK sigma_hat_{n+theta} n - int_K f_{n+theta}

    where the advective transport in sigma_hat uses the frozen mass flux and
    upwind switch of the previous state (with nu_prev, the viscosity of the
    step that produced it) and the transported/diffusive quantities are
    theta-blended. This vanishes when the velocity components lie in the
    pressure space (equal-order spaces).

    forcing: None, a single forcing, or a list of (weight, forcing) pairs
    matching the load used in the step.
    """
    theta, dt = params.theta, params.dt
    nu_prev = params.nu if nu_prev is None else nu_prev
    C = disc.mesh.num_cells
    cells = np.arange(C)
    wv = disc.detj[:, None] * disc.qcell.weights[None, :]

    du = np.einsum("cq,cnd,nq->cd", wv, state_np1.u - state_n.u, disc.phi_u) / dt
    res = du

    for lf in range(3):
        phi, G, psi = disc.gather_traces(cells, lf)
        ub = disc.slot_tables(cells, lf, "u")
        pb = disc.slot_tables(cells, lf, "p")
        nrm = disc.normals[cells, lf]
        h = disc.h_facet[cells, lf]
        w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]

        def facet_fields(st):
            u_v = np.einsum("cjd,cjq->cqd", st.u, phi)
            p_v = np.einsum("cj,cjq->cq", st.p, psi)
            pb_v = np.einsum("cr,crq->cq", st.pbar[disc.pbar_nodes], pb)
            ub_v = np.einsum("csd,csq->cqd", st.ubar[disc.ubar_dofs], ub)
            gu = np.einsum("cjd,cjqe->cqde", st.u, G)
            return u_v, p_v, pb_v, ub_v, gu

        u0, p0, pb0, ub0, _ = facet_fields(state_n)
        u1, p1, pb1, ub1, _ = facet_fields(state_np1)
        uh0 = mass_flux(u0, p0, pb0, nrm[:, None, :], h[:, None], params, nu=nu_prev)
        an0 = np.einsum("cqd,cd->cq", uh0, nrm)
        lam0 = upwind_switch(an0)

        ut = (1.0 - theta) * u0 + theta * u1
        ubt = (1.0 - theta) * ub0 + theta * ub1
        pbt = (1.0 - theta) * pb0 + theta * pb1
        gut = np.einsum("cjd,cjqe->cqde",
                        (1.0 - theta) * state_n.u + theta * state_np1.u, G)

        sig_d = diffusive_flux(gut, ut, ubt, pbt, nrm[:, None, :], h[:, None], params)
        sig_d_n = np.einsum("cqde,ce->cqd", sig_d, nrm)
        adv = an0[:, :, None] * ut + (lam0 * an0)[:, :, None] * (ubt - ut)
        res = res + np.einsum("cq,cqd->cd", w, adv + sig_d_n)

    if forcing is not None:
        forcing_list = forcing if isinstance(forcing, list) else [(1.0, forcing)]
        res = res - _forcing_cell_integrals(disc, forcing_list)
    return res


def steady_momentum_residual(disc, state, params, forcing=None, frozen=None,
                             nu_frozen=None):
    """Per-cell oint sigma_hat n - int f for a stationary state; frozen
    selects the advective linearization state (None for Stokes)."""
    C = disc.mesh.num_cells
    cells = np.arange(C)
    res = np.zeros((C, VEC))
    nu_frozen = params.nu if nu_frozen is None else nu_frozen
    for lf in range(3):
        phi, G, psi = disc.gather_traces(cells, lf)
        ub = disc.slot_tables(cells, lf, "u")
        pb = disc.slot_tables(cells, lf, "p")
        nrm = disc.normals[cells, lf]
        h = disc.h_facet[cells, lf]
        w = disc.len_facet[cells, lf][:, None] * disc.qfacet.weights[None, :]
        u_v = np.einsum("cjd,cjq->cqd", state.u, phi)
        pb_v = np.einsum("cr,crq->cq", state.pbar[disc.pbar_nodes], pb)
        ub_v = np.einsum("csd,csq->cqd", state.ubar[disc.ubar_dofs], ub)
        gu = np.einsum("cjd,cjqe->cqde", state.u, G)
        sig = np.einsum("cqde,ce->cqd",
                        diffusive_flux(gu, u_v, ub_v, pb_v, nrm[:, None, :],
                                       h[:, None], params), nrm)
        if frozen is not None:
            u_fz = np.einsum("cjd,cjq->cqd", frozen.u, phi)
            p_fz = np.einsum("cj,cjq->cq", frozen.p, psi)
            pb_fz = np.einsum("cr,crq->cq", frozen.pbar[disc.pbar_nodes], pb)
            uh = mass_flux(u_fz, p_fz, pb_fz, nrm[:, None, :], h[:, None],
                           params, nu=nu_frozen)
            an = np.einsum("cqd,cd->cq", uh, nrm)
            lam = upwind_switch(an)
            sig = sig + an[:, :, None] * u_v + (lam * an)[:, :, None] * (ub_v - u_v)
        res += np.einsum("cq,cqd->cd", w, sig)
    if forcing is not None:
        forcing_list = forcing if isinstance(forcing, list) else [(1.0, forcing)]
        res = res - _forcing_cell_integrals(disc, forcing_list)
    return res


# ---------------------------------------------------------------------------
# Wall shear diagnostics (backward-facing step).

def _wall_segments(disc, tag):
    """Sorted-by-x wall segments of one boundary tag: list of
    (x_lo, x_hi, cell, lf, t_of_xlo, t_of_xhi)."""
    mesh = disc.mesh
    segs = []
    for f, t in mesh.boundary_tags.items():
        if t != tag:
            continue
        c, lf = mesh.facet_cells[f, 0], mesh.facet_local[f, 0]
        pa = mesh.vertices[mesh.facets[f, 0]]
        pb = mesh.vertices[mesh.facets[f, 1]]
        if pa[0] <= pb[0]:
            segs.append((pa[0], pb[0], c, lf, 0.0, 1.0))
        else:
            segs.append((pb[0], pa[0], c, lf, 1.0, 0.0))
    segs.sort(key=lambda s: s[0])
    return segs


def _shear_at(disc, state, seg, ts):
    """du_x/dy at facet parameters ts (in [0,1] of x from x_lo to x_hi)."""
    x_lo, x_hi, c, lf, t0, t1 = seg
    t = t0 + np.asarray(ts, dtype=float) * (t1 - t0)
    pts = basis_mod.reference_trace_points(
        lf, t, flip=bool(disc.flip[c, lf]))
    grads = basis_mod.eval_grad(disc.basis_u, pts)        # (nk, nt, 2)
    gphys = np.einsum("nqe,ed->nqd", grads, disc.jinv[c])
    return np.einsum("n,nq->q", state.u[c, :, 0], gphys[:, :, 1])


def wall_shear_profile(disc, state, tag, samples_per_cell=20):
    """(x, shear) samples along a horizontal wall, ordered by x."""
    xs, sh = [], []
    for seg in _wall_segments(disc, tag):
        ts = np.linspace(0.0, 1.0, samples_per_cell)
        xs.append(seg[0] + ts * (seg[1] - seg[0]))
        sh.append(_shear_at(disc, state, seg, ts))
    if not xs:
        return np.array([]), np.array([])
    return np.concatenate(xs), np.concatenate(sh)


def _bisect_crossing(disc, state, seg, t_lo, t_hi, rising, iters=60):
    for _ in range(iters):
        t_mid = 0.5 * (t_lo + t_hi)
        v = float(_shear_at(disc, state, seg, [t_mid])[0])
        if (v < 0.0) == rising:
            t_lo = t_mid
        else:
            t_hi = t_mid
    t_mid = 0.5 * (t_lo + t_hi)
    return seg[0] + t_mid * (seg[1] - seg[0])


def shear_sign_changes(disc, state, tag, samples_per_cell=20, x_min=None):
    """All x where the wall shear du_x/dy changes sign, each labelled
    rising=True for a - to + crossing. The shear is discontinuous across
    cells, so crossings between the shared endpoint samples of adjacent
    segments are located at that cell interface."""
    samples = []
    for seg in _wall_segments(disc, tag):
        ts = np.linspace(0.0, 1.0, samples_per_cell)
        vals = _shear_at(disc, state, seg, ts)
        for t, v in zip(ts, vals):
            if v != 0.0:
                samples.append((seg[0] + t * (seg[1] - seg[0]), v, seg, t))
    samples.sort(key=lambda s: s[0])
    out = []
    for (x0, v0, s0, t0), (x1, v1, s1, t1) in zip(samples, samples[1:]):
        if v0 * v1 >= 0.0:
            continue
        rising = v0 < 0.0 < v1
        if s0 is s1:
            x = _bisect_crossing(disc, state, s0, t0, t1, rising)
        else:
            # Jump across a cell interface: the crossing is the interface.
            x = 0.5 * (x0 + x1)
        if x_min is None or x > x_min:
            out.append((x, rising))
    return out

def reattachment_length(disc, state, tag="bottom", samples_per_cell=20,
                        x_min=1e-9):
    """Smallest x > 0 where the bottom-wall shear goes from negative to
    positive; None when the flow never reattaches."""
    for x, rising in shear_sign_changes(disc, state, tag, samples_per_cell, x_min):
        if rising:
            return float(x)
    return None


def top_wall_bubble(disc, state, tag="top", samples_per_cell=20):
    """Longest interval of reversed flow (positive du_x/dy) on the top wall;
    None when there is no such interval."""
    changes = shear_sign_changes(disc, state, tag, samples_per_cell)
    intervals = []
    start = None
    for x, rising in changes:
        if rising:
            start = x
        elif start is not None:
            intervals.append((start, x))
            start = None
    if not intervals:
        return None
    return max(intervals, key=lambda ab: ab[1] - ab[0])


# ---------------------------------------------------------------------------


@dataclass
class Report:
    """Per-run records of a scenario sweep, serializable as CSV and JSON."""

    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def add_row(self, **kwargs):
        self.rows.append(dict(kwargs))
        return self.rows[-1]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: row.get(k, "") for k in REPORT_COLUMNS})

    def write_json(self, path):
        def default(o):
            if isinstance(o, np.ndarray):
                return o.tolist()
            if isinstance(o, (np.floating, np.integer)):
                return o.item()
            if isinstance(o, (np.bool_,)):
                return bool(o)
            raise TypeError(f"not JSON serializable: {type(o)}")

        with open(path, "w") as fh:
            json.dump({"meta": self.meta, "rows": self.rows}, fh, indent=1,
                      default=default)
