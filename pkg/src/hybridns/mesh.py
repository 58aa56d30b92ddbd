"""Structured triangulations of axis-aligned rectangles with facet topology.

Cells are counterclockwise vertex triples. Facets are stored with ascending
vertex indices; that fixed orientation is shared by both adjacent cells so
facet-based degrees of freedom are unambiguous.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError

# Local facet lf of a cell connects local vertices lf and (lf+1) % 3.
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    vertices:         (V, 2) coordinates
    cells:            (C, 3) vertex indices, counterclockwise
    facets:           (E, 2) vertex pairs, ascending
    facet_cells:      (E, 2) adjacent cell ids, second entry -1 on the boundary
    facet_local:      (E, 2) local facet index within each adjacent cell
    cell_facets:      (C, 3) facet id of each local facet
    cell_orientation: (C, 3) True where the cell's local edge runs in the
                      global (ascending-vertex) facet direction
    boundary_tags:    facet id -> tag name, for boundary facets only
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_cells: np.ndarray
    facet_local: np.ndarray
    cell_facets: np.ndarray
    cell_orientation: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_facets(self):
        return self.facets.shape[0]

    def boundary_facets(self):
        """Ids of facets adjacent to exactly one cell."""
        return np.nonzero(self.facet_cells[:, 1] < 0)[0]

    def interior_facets(self):
        return np.nonzero(self.facet_cells[:, 1] >= 0)[0]

    def facet_midpoints(self):
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    def facet_lengths(self):
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def mesh_from_cells(vertices, cells, boundary_tags=None):
    """Build a Mesh (facet topology included) from vertices and CCW cells."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise InvalidArgumentError("vertices must be an (V, 2) array")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise InvalidArgumentError("cells must be an (C, 3) array")

    num_cells = cells.shape[0]
    facet_index = {}
    facets = []
    facet_cells = []
    facet_local = []
    cell_facets = np.empty((num_cells, 3), dtype=np.int64)
    cell_orientation = np.empty((num_cells, 3), dtype=bool)

    for c in range(num_cells):
        for lf, (a, b) in enumerate(LOCAL_EDGES):
            va, vb = int(cells[c, a]), int(cells[c, b])
            key = (va, vb) if va < vb else (vb, va)
            f = facet_index.get(key)
            if f is None:
                f = len(facets)
                facet_index[key] = f
                facets.append(key)
                facet_cells.append([c, -1])
                facet_local.append([lf, -1])
            else:
                if facet_cells[f][1] != -1:
                    raise InvalidArgumentError(
                        f"facet {key} adjacent to more than two cells")
                facet_cells[f][1] = c
                facet_local[f][1] = lf
            cell_facets[c, lf] = f
            cell_orientation[c, lf] = va < vb

    mesh = Mesh(
        vertices=_freeze(vertices),
        cells=_freeze(cells),
        facets=_freeze(np.array(facets, dtype=np.int64)),
        facet_cells=_freeze(np.array(facet_cells, dtype=np.int64)),
        facet_local=_freeze(np.array(facet_local, dtype=np.int64)),
        cell_facets=_freeze(cell_facets),
        cell_orientation=_freeze(cell_orientation),
        boundary_tags=dict(boundary_tags) if boundary_tags else {},
    )
    validate_mesh(mesh)
    return mesh


def validate_mesh(mesh):
    """Check the structural mesh invariants; raise InvalidArgumentError on failure."""
    areas = signed_cell_areas(mesh)
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise InvalidArgumentError(
            f"cell {bad} has non-positive signed area {areas[bad]:.3e}")

    n_adj = np.sum(mesh.facet_cells >= 0, axis=1)
    if not np.all((n_adj == 1) | (n_adj == 2)):
        raise InvalidArgumentError("facet with invalid cell adjacency count")

    euler = mesh.num_vertices - mesh.num_facets + mesh.num_cells
    if euler != 1:
        raise InvalidArgumentError(
            f"Euler relation V - E + C = {euler}, expected 1 for a simply "
            "connected triangulation")

    # Each cell's three facets appear exactly once in the adjacency records.
    for c in range(mesh.num_cells):
        for lf in range(3):
            f = mesh.cell_facets[c, lf]
            sides = [(mesh.facet_cells[f, s], mesh.facet_local[f, s]) for s in range(2)]
            if sides.count((c, lf)) != 1:
                raise InvalidArgumentError(
                    f"adjacency record mismatch for cell {c}, local facet {lf}")


def signed_cell_areas(mesh):
    p0 = mesh.vertices[mesh.cells[:, 0]]
    e1 = mesh.vertices[mesh.cells[:, 1]] - p0
    e2 = mesh.vertices[mesh.cells[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_rect_mesh(nx, ny, bbox=(0.0, 1.0, 0.0, 1.0)):
    """Uniform triangulation of a rectangle, each grid quad split along a
    fixed diagonal (lower-right to upper-left), so meshes are deterministic
    and regression tables reproducible.

    bbox is (xmin, xmax, ymin, ymax). Boundary facets are tagged
    left/right/bottom/top.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    xmin, xmax, ymin, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise InvalidArgumentError(f"degenerate bbox {bbox}")

    xs = np.linspace(xmin, xmax, nx + 1)
    ys = np.linspace(ymin, ymax, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for i in range(nx):
        for j in range(ny):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            cells[k] = (a, b, d)
            cells[k + 1] = (b, c, d)
            k += 2

    mesh = mesh_from_cells(vertices, cells)
    tol = 1e-12 * max(xmax - xmin, ymax - ymin)
    return tag_boundary(mesh, {
        "left": lambda p: abs(p[0] - xmin) < tol,
        "right": lambda p: abs(p[0] - xmax) < tol,
        "bottom": lambda p: abs(p[1] - ymin) < tol,
        "top": lambda p: abs(p[1] - ymax) < tol,
    })


def tag_boundary(mesh, predicates):
    """Assign one tag per boundary facet by testing facet midpoints.

    predicates maps tag name -> predicate(midpoint). The first matching entry
    wins; a boundary facet matching none is an error.
    """
    mids = mesh.facet_midpoints()
    tags = {}
    for f in mesh.boundary_facets():
        for name, pred in predicates.items():
            if pred(mids[f]):
                tags[int(f)] = name
                break
        else:
            raise InvalidArgumentError(
                f"boundary facet {f} at {mids[f]} matched no tag predicate")
    return replace(mesh, boundary_tags=tags)


def outward_normal(mesh, cell, local_facet):
    """Unit outward normal of a cell on one of its local facets."""
    a, b = LOCAL_EDGES[local_facet]
    pa = mesh.vertices[mesh.cells[cell, a]]
    pb = mesh.vertices[mesh.cells[cell, b]]
    t = pb - pa
    # CCW cells traverse their boundary counterclockwise, so the outward
    # normal is the tangent rotated clockwise.
    n = np.array([t[1], -t[0]])
    return n / np.hypot(n[0], n[1])


def outward_normals(mesh):
    """(C, 3, 2) outward unit normals for every cell and local facet."""
    p = mesh.vertices[mesh.cells]  # (C, 3, 2)
    normals = np.empty((mesh.num_cells, 3, 2))
    for lf, (a, b) in enumerate(LOCAL_EDGES):
        t = p[:, b, :] - p[:, a, :]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        normals[:, lf, :] = n / np.hypot(n[:, 0], n[:, 1])[:, None]
    return normals


def cell_sizes(mesh):
    """h_K per cell: the cell diameter (longest edge)."""
    p = mesh.vertices[mesh.cells]
    edges = [np.linalg.norm(p[:, b, :] - p[:, a, :], axis=1) for a, b in LOCAL_EDGES]
    return np.max(np.column_stack(edges), axis=1)


def cell_size(mesh, cell):
    return float(cell_sizes(mesh)[cell])


def facet_sizes(mesh):
    """Facet h: the adjacent cell's h_K on the boundary, the mean of the two
    adjacent cells' h_K on interior facets."""
    h = cell_sizes(mesh)
    c0 = mesh.facet_cells[:, 0]
    c1 = mesh.facet_cells[:, 1]
    out = h[c0].copy()
    interior = c1 >= 0
    out[interior] = 0.5 * (h[c0[interior]] + h[c1[interior]])
    return out


def facet_size(mesh, facet):
    return float(facet_sizes(mesh)[facet])


def dump_mesh(mesh, stream):
    """Plain-text debug dump: one 'v x y' line per vertex, 'c i j k' per cell."""
    for x, y in mesh.vertices:
        stream.write(f"v {x!r} {y!r}\n")
    for i, j, k in mesh.cells:
        stream.write(f"c {i} {j} {k}\n")
