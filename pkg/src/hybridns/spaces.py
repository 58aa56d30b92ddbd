"""Function spaces and DOF maps.

Cell fields (velocity, pressure) live in broken spaces: every cell owns its
coefficients and nothing is shared. Facet fields live in continuous Lagrange
spaces on the skeleton: vertex nodes are unified across all incident facets,
interior facet nodes are ordered along the facet's global direction.
"""

from dataclasses import dataclass

import numpy as np

from . import basis as basis_mod
from .errors import InvalidArgumentError
from .mesh import outward_normals

VEC = 2  # spatial dimension / velocity components


@dataclass(frozen=True)
class SpaceSpec:
    """Polynomial orders: k (cell velocity), kbar (facet velocity),
    m (cell pressure), mbar (facet pressure)."""

    k: int
    kbar: int
    m: int
    mbar: int

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError(f"cell velocity order k={self.k} must be >= 1")
        if self.kbar < 1:
            raise InvalidArgumentError(
                f"facet velocity order kbar={self.kbar} must be >= 1 for a "
                "continuous facet space")
        if self.m < 0:
            raise InvalidArgumentError(f"cell pressure order m={self.m} must be >= 0")
        if self.mbar < 1:
            raise InvalidArgumentError(
                f"facet pressure order mbar={self.mbar} must be >= 1 for a "
                "continuous facet space")

    @classmethod
    def equal_order(cls, k):
        return cls(k, k, k, k)


def _skeleton_lattice(mesh, order):
    """Nodes of a continuous Lagrange space on the facet skeleton.

    Returns (coords, facet_nodes) where facet_nodes[f] lists the order+1 node
    ids along facet f from its lower to its higher vertex.
    """
    V = mesh.num_vertices
    E = mesh.num_facets
    n_interior = order - 1
    coords = np.empty((V + E * n_interior, 2))
    coords[:V] = mesh.vertices
    facet_nodes = np.empty((E, order + 1), dtype=np.int64)
    facet_nodes[:, 0] = mesh.facets[:, 0]
    facet_nodes[:, order] = mesh.facets[:, 1]
    if n_interior > 0:
        t = np.arange(1, order) / order
        a = mesh.vertices[mesh.facets[:, 0]]
        b = mesh.vertices[mesh.facets[:, 1]]
        for i, ti in enumerate(t):
            ids = V + np.arange(E) * n_interior + i
            coords[ids] = (1.0 - ti) * a + ti * b
            facet_nodes[:, 1 + i] = ids
    return coords, facet_nodes


class DofMap:
    """Global numbering for one (mesh, SpaceSpec) pair.

    Cell DOFs are per-cell blocks [u (node-interleaved x,y), p]; they are
    never shared. Facet DOFs are numbered [ubar | pbar]; a facet shared by two
    cells has identical global ids from both sides. The Dirichlet mask marks
    facet-velocity DOFs constrained on tagged boundary facets.
    """

    def __init__(self, mesh, spec, dirichlet=None, slip=None):
        self.mesh = mesh
        self.spec = spec

        self.basis_u = basis_mod.lagrange_basis("triangle", spec.k)
        self.basis_p = basis_mod.lagrange_basis("triangle", spec.m)
        self.nk = self.basis_u.num_basis
        self.nm = self.basis_p.num_basis
        self.nl = VEC * self.nk + self.nm

        C = mesh.num_cells
        self.n_cells = C
        self.n_u = VEC * self.nk * C
        self.n_p = self.nm * C

        # Facet-velocity scalar lattice (order kbar) and facet-pressure
        # lattice (order mbar).
        self.ubar_coords, self.ubar_facet_nodes = _skeleton_lattice(mesh, spec.kbar)
        self.pbar_coords, self.pbar_facet_nodes = _skeleton_lattice(mesh, spec.mbar)
        self.n_ubar_nodes = self.ubar_coords.shape[0]
        self.n_ubar = VEC * self.n_ubar_nodes
        self.n_pbar = self.pbar_coords.shape[0]
        self.n_facet_total = self.n_ubar + self.n_pbar

        # Per-cell facet slots: scalar slots 0..2 are the cell's vertices,
        # then kbar-1 interior slots per local facet in global facet order.
        self.nsk = 3 * spec.kbar
        self.nsm = 3 * spec.mbar
        self.ng = VEC * self.nsk + self.nsm
        self.cell_gmap = self._build_gmap()

        self.dirichlet_mask = np.zeros(self.n_ubar, dtype=bool)
        self.dirichlet_values = np.zeros(self.n_ubar)
        self._apply_bcs(dirichlet or {}, slip or ())

    def _scalar_cell_nodes(self, facet_nodes, order):
        """(C, 3*order) scalar node ids per cell in slot order."""
        mesh = self.mesh
        C = mesh.num_cells
        n_int = order - 1
        out = np.empty((C, 3 * order), dtype=np.int64)
        out[:, :3] = mesh.cells
        for lf in range(3):
            f = mesh.cell_facets[:, lf]
            if n_int > 0:
                out[:, 3 + lf * n_int: 3 + (lf + 1) * n_int] = facet_nodes[f, 1:order]
        return out

    def _build_gmap(self):
        spec = self.spec
        u_nodes = self._scalar_cell_nodes(self.ubar_facet_nodes, spec.kbar)
        p_nodes = self._scalar_cell_nodes(self.pbar_facet_nodes, spec.mbar)
        C = self.n_cells
        gmap = np.empty((C, self.ng), dtype=np.int64)
        for comp in range(VEC):
            gmap[:, comp:VEC * self.nsk:VEC] = VEC * u_nodes + comp
        gmap[:, VEC * self.nsk:] = self.n_ubar + p_nodes
        return gmap

    def facet_slot_ids(self, local_facet, oriented, order):
        """Scalar slot indices for the order+1 facet-lattice nodes of a local
        facet, listed in global facet order. oriented=True when the cell's
        local edge direction matches the global direction."""
        lf = local_facet
        a, b = lf, (lf + 1) % 3
        lo, hi = (a, b) if oriented else (b, a)
        n_int = order - 1
        interior = [3 + lf * n_int + i for i in range(n_int)]
        return np.array([lo, *interior, hi], dtype=np.int64)

    def _apply_bcs(self, dirichlet, slip):
        mesh = self.mesh
        normals = outward_normals(mesh)
        slip = set(slip)
        # Slip first: Dirichlet overrides both components at shared nodes.
        for f in mesh.boundary_facets():
            tag = mesh.boundary_tags.get(int(f))
            if tag not in slip:
                continue
            c, lf = mesh.facet_cells[f, 0], mesh.facet_local[f, 0]
            n = normals[c, lf]
            comp = int(np.argmax(np.abs(n)))
            if abs(n[1 - comp]) > 1e-9:
                raise InvalidArgumentError(
                    "slip boundary conditions require axis-aligned walls")
            nodes = self.ubar_facet_nodes[f]
            self.dirichlet_mask[VEC * nodes + comp] = True
            self.dirichlet_values[VEC * nodes + comp] = 0.0
        for f in mesh.boundary_facets():
            tag = mesh.boundary_tags.get(int(f))
            fn = dirichlet.get(tag)
            if fn is None:
                continue
            nodes = self.ubar_facet_nodes[f]
            vals = np.asarray(fn(self.ubar_coords[nodes]), dtype=float)
            for comp in range(VEC):
                self.dirichlet_mask[VEC * nodes + comp] = True
                self.dirichlet_values[VEC * nodes + comp] = vals[:, comp]

    def pbar_dof_near(self, point):
        """Global facet-system index of the pbar node nearest a point."""
        d = np.linalg.norm(self.pbar_coords - np.asarray(point, dtype=float), axis=1)
        return self.n_ubar + int(np.argmin(d))

    def free_mask(self, pressure_pin=None):
        """Boolean mask over the facet system [ubar | pbar] of unconstrained DOFs."""
        free = np.ones(self.n_facet_total, dtype=bool)
        free[:self.n_ubar] = ~self.dirichlet_mask
        if pressure_pin is not None:
            free[pressure_pin] = False
        return free

    def fixed_values(self, pressure_pin=None, pin_value=0.0):
        vals = np.zeros(self.n_facet_total)
        vals[:self.n_ubar] = self.dirichlet_values
        if pressure_pin is not None:
            vals[pressure_pin] = pin_value
        return vals


def build_dofmap(mesh, spec, dirichlet=None, slip=None):
    """Build the DofMap; dirichlet maps boundary tag -> velocity function,
    slip lists tags of impermeable axis-aligned walls (normal component
    constrained to zero)."""
    return DofMap(mesh, spec, dirichlet=dirichlet, slip=slip)


def cell_lattice_points(mesh, order):
    """Physical coordinates of every cell's Lagrange lattice, (C, n, 2)."""
    b = basis_mod.lagrange_basis("triangle", order)
    p0 = mesh.vertices[mesh.cells[:, 0]]
    e1 = mesh.vertices[mesh.cells[:, 1]] - p0
    e2 = mesh.vertices[mesh.cells[:, 2]] - p0
    ref = b.nodes  # (n, 2)
    return (p0[:, None, :]
            + ref[None, :, 0, None] * e1[:, None, :]
            + ref[None, :, 1, None] * e2[:, None, :])


def interpolate_cell_scalar(mesh, order, fn):
    """Nodal interpolant of fn(points)->(N,) into the broken scalar space, (C, n)."""
    pts = cell_lattice_points(mesh, order)
    C, n, _ = pts.shape
    return np.asarray(fn(pts.reshape(-1, 2)), dtype=float).reshape(C, n)

def interpolate_cell_vector(mesh, order, fn):
    """Nodal interpolant of fn(points)->(N,2) into the broken vector space, (C, n, 2)."""
    pts = cell_lattice_points(mesh, order)
    C, n, _ = pts.shape
    return np.asarray(fn(pts.reshape(-1, 2)), dtype=float).reshape(C, n, VEC)


def interpolate_facet_velocity(dofmap, fn):
    """Nodal interpolant of fn(points)->(N,2) into the facet velocity space, flat."""
    vals = np.asarray(fn(dofmap.ubar_coords), dtype=float)
    out = np.empty(dofmap.n_ubar)
    for comp in range(VEC):
        out[comp::VEC] = vals[:, comp]
    return out


def interpolate_facet_pressure(dofmap, fn):
    """Nodal interpolant of fn(points)->(N,) into the facet pressure space."""
    return np.asarray(fn(dofmap.pbar_coords), dtype=float)


def eval_cell_scalar(mesh, order, coeffs, cells, ref_points):
    """Evaluate a broken scalar field at reference points inside given cells."""
    b = basis_mod.lagrange_basis("triangle", order)
    tab = basis_mod.eval_basis(b, ref_points)  # (n, q)
    return np.einsum("cn,nq->cq", coeffs[cells], tab)


def cg_skeleton_dof_count(mesh, order):
    """Continuous-Galerkin skeleton DOF count on the mesh, computed by
    enumerating distinct lattice points shared between cells.

    This is the independent cross-check for the condensed system size: a
    continuous Lagrange space of the same order, with cell-interior nodes
    statically eliminated, has exactly this many scalar DOFs.
    """
    pts = cell_lattice_points(mesh, order)
    b = basis_mod.lagrange_basis("triangle", order)
    ref = b.nodes
    on_edge = ((np.abs(ref[:, 0]) < 1e-12)
               | (np.abs(ref[:, 1]) < 1e-12)
               | (np.abs(ref[:, 0] + ref[:, 1] - 1.0) < 1e-12))
    scale = np.max(np.abs(mesh.vertices)) + 1.0
    skel = pts[:, on_edge, :].reshape(-1, 2)
    keys = {(round(x / scale, 10), round(y / scale, 10)) for x, y in skel}
    return len(keys)
