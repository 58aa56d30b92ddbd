"""Lagrange bases and quadrature on the reference triangle and interval.

The reference triangle has vertices (0,0), (1,0), (0,1); the reference
interval is [0,1]. Nodes are equispaced lattices, which keeps interpolation
nodal and is well conditioned for the orders used here (<= 8).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InvalidArgumentError, UnsupportedOrderError
from .mesh import LOCAL_EDGES

MAX_ORDER = 8
MAX_QUAD_DEGREE = 50

REF_TRI_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class LagrangeBasis:
    """Nodal Lagrange basis on 'triangle' or 'interval'."""

    element: str
    order: int
    nodes: np.ndarray       # (n, dim)
    exponents: np.ndarray   # (n, dim) monomial exponents
    coeffs: np.ndarray      # (n_mono, n_basis), basis_m = sum_e coeffs[e, m] x^e

    @property
    def num_basis(self):
        return self.nodes.shape[0]

    @property
    def dim(self):
        return 2 if self.element == "triangle" else 1


def _triangle_lattice(order):
    if order == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([[0, 0]])
    nodes, expo = [], []
    for j in range(order + 1):
        for i in range(order + 1 - j):
            nodes.append((i / order, j / order))
            expo.append((i, j))
    return np.array(nodes, dtype=float), np.array(expo, dtype=np.int64)


def _interval_lattice(order):
    if order == 0:
        return np.array([[0.5]]), np.array([[0]])
    nodes = np.linspace(0.0, 1.0, order + 1)[:, None]
    expo = np.arange(order + 1, dtype=np.int64)[:, None]
    return nodes, expo


def _monomials(points, exponents):
    # (n_points, n_mono)
    out = np.ones((points.shape[0], exponents.shape[0]))
    for d in range(points.shape[1]):
        out *= points[:, d][:, None] ** exponents[:, d][None, :]
    return out


@lru_cache(maxsize=None)
def lagrange_basis(element, order):
    if element not in ("triangle", "interval"):
        raise InvalidArgumentError(f"unknown element {element!r}")
    if order < 0 or order > MAX_ORDER:
        raise UnsupportedOrderError(
            f"order {order} outside supported range 0..{MAX_ORDER}")
    if element == "triangle":
        nodes, expo = _triangle_lattice(order)
    else:
        nodes, expo = _interval_lattice(order)
    vandermonde = _monomials(nodes, expo)
    coeffs = np.linalg.inv(vandermonde)
    for a in (nodes, expo, coeffs):
        a.setflags(write=False)
    return LagrangeBasis(element, order, nodes, expo, coeffs)


def _check_inside(basis, points, tol=1e-12):
    if basis.element == "triangle":
        x, y = points[:, 0], points[:, 1]
        ok = (x >= -tol) & (y >= -tol) & (x + y <= 1 + tol)
    else:
        x = points[:, 0]
        ok = (x >= -tol) & (x <= 1 + tol)
    if not np.all(ok):
        bad = points[~ok][0]
        raise InvalidArgumentError(f"point {bad} outside reference element")


def eval_basis(basis, points):
    """Values table of shape (num_basis, num_points)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_inside(basis, points)
    return (_monomials(points, basis.exponents) @ basis.coeffs).T


def eval_grad(basis, points):
    """Gradient table of shape (num_basis, num_points, dim)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_inside(basis, points)
    n_pts = points.shape[0]
    dim = basis.dim
    out = np.empty((basis.num_basis, n_pts, dim))
    for d in range(dim):
        expo = basis.exponents.copy()
        fac = expo[:, d].astype(float)
        expo[:, d] = np.maximum(expo[:, d] - 1, 0)
        mono = _monomials(points, expo) * fac[None, :]
        out[:, :, d] = (mono @ basis.coeffs).T
    return out


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, dim)
    weights: np.ndarray  # (n,)
    degree: int


def _gauss_01(n):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def make_quadrature(element, degree):
    """Rule exact for polynomials up to the given total degree.

    Triangle rules are tensor Gauss rules under the Duffy map, which keeps
    all weights positive at any degree.
    """
    if degree < 0 or degree > MAX_QUAD_DEGREE:
        raise UnsupportedOrderError(
            f"quadrature degree {degree} outside supported range 0..{MAX_QUAD_DEGREE}")
    if element == "interval":
        n = (degree + 2) // 2
        x, w = _gauss_01(n)
        pts, wts = x[:, None], w
    elif element == "triangle":
        # x = a(1-b), y = b maps the unit square to the triangle with
        # Jacobian (1-b); x^p y^q picks up one extra degree in b.
        n = (degree + 3) // 2
        a, wa = _gauss_01(n)
        b, wb = _gauss_01(n)
        A, B = np.meshgrid(a, b, indexing="ij")
        WA, WB = np.meshgrid(wa, wb, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        wts = (WA * WB * (1.0 - B)).ravel()
    else:
        raise InvalidArgumentError(f"unknown element {element!r}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


def reference_trace_points(local_facet, t, flip=False):
    """Map facet parameters t in [0,1] onto an edge of the reference triangle.

    With flip=False the edge is traversed in the cell-local direction
    (local vertex lf -> lf+1); flip=True reverses it.
    """
    if local_facet not in (0, 1, 2):
        raise InvalidArgumentError(f"local facet {local_facet} not in 0..2")
    t = np.asarray(t, dtype=float).ravel()
    a, b = LOCAL_EDGES[local_facet]
    pa, pb = REF_TRI_VERTICES[a], REF_TRI_VERTICES[b]
    s = 1.0 - t if flip else t
    return (1.0 - s)[:, None] * pa[None, :] + s[:, None] * pb[None, :]


def trace_points(mesh, cell, local_facet, t):
    """Cell reference coordinates of facet quadrature parameters.

    t parameterizes the global facet from its lower-indexed vertex to its
    higher-indexed vertex, so both cells adjacent to a facet see the same
    physical points.
    """
    flip = not bool(mesh.cell_orientation[cell, local_facet])
    return reference_trace_points(local_facet, t, flip=flip)
