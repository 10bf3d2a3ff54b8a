"""Reference elements, nodal bases, quadrature rules, and refinement embeddings.

Conventions (frozen):
  * quadrilateral reference element: unit square [0,1]^2, corners ordered
    counterclockwise (0,0),(1,0),(1,1),(0,1); nodes in lexicographic tensor
    order (x fastest), 1D node set is Gauss-Lobatto for order >= 2;
  * triangle reference element: unit triangle (0,0),(1,0),(0,1); nodes
    equispaced, ordered vertices, then edge interiors, then cell interiors;
  * refinement ids: 1 = split in x-bar, 2 = split in y-bar, 3 = isotropic.
    Triangles support only the isotropic split (id 3, four children).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

QUAD = "quad"
TRI = "tri"

GAMMA_SPLIT_X = 1
GAMMA_SPLIT_Y = 2
GAMMA_ISO = 3

MAX_ORDER = 6
MAX_QUAD_DEGREE = 60

CORNERS = {
    QUAD: np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
    TRI: np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]),
}
# local edges as (corner, corner) pairs, counterclockwise
EDGES = {QUAD: ((0, 1), (1, 2), (2, 3), (3, 0)), TRI: ((0, 1), (1, 2), (2, 0))}
REFERENCE_MEASURE = {QUAD: 1.0, TRI: 0.5}


class UnsupportedDegreeError(ValueError):
    """Requested quadrature exactness exceeds what this build provides."""


def _lobatto_01(m: int) -> np.ndarray:
    """m Gauss-Lobatto points on [0,1] (endpoints included)."""
    if m < 2:
        raise ValueError("Lobatto rule needs at least 2 points")
    if m == 2:
        return np.array([0.0, 1.0])
    leg = np.zeros(m)
    leg[m - 1] = 1.0
    interior = np.polynomial.legendre.legroots(np.polynomial.legendre.legder(leg))
    return np.concatenate(([-1.0], np.sort(interior), [1.0])) * 0.5 + 0.5


def _lagrange_1d(t: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the 1D Lagrange basis on nodes t at points x."""
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    m = t.size
    vals = np.ones(x.shape + (m,))
    ders = np.zeros(x.shape + (m,))
    for j in range(m):
        v = np.ones_like(x)
        for i in range(m):
            if i != j:
                v = v * (x - t[i]) / (t[j] - t[i])
        vals[..., j] = v
        d = np.zeros_like(x)
        for i in range(m):
            if i == j:
                continue
            p = np.full_like(x, 1.0 / (t[j] - t[i]))
            for l in range(m):
                if l != j and l != i:
                    p = p * (x - t[l]) / (t[j] - t[l])
            d = d + p
        ders[..., j] = d
    return vals, ders


def _tri_monomials(k: int) -> list[tuple[int, int]]:
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


class ReferenceElement:
    """Nodal Lagrange element on the reference quadrilateral or triangle."""

    def __init__(self, kind: str, order: int):
        if kind not in (QUAD, TRI):
            raise ValueError(f"unknown element kind {kind!r}")
        if not 1 <= order <= MAX_ORDER:
            raise ValueError(f"order must be in [1, {MAX_ORDER}], got {order}")
        self.kind = kind
        self.order = order
        k = order
        if kind == QUAD:
            self._t1d = _lobatto_01(k + 1)
            xs, ys = np.meshgrid(self._t1d, self._t1d, indexing="xy")
            self.nodes = np.column_stack([xs.ravel(), ys.ravel()])
        else:
            self._t1d = np.linspace(0.0, 1.0, k + 1)
            nodes = [tuple(c) for c in CORNERS[TRI]]
            for a, b in EDGES[TRI]:
                va, vb = CORNERS[TRI][a], CORNERS[TRI][b]
                for i in range(1, k):
                    nodes.append(tuple(va + (i / k) * (vb - va)))
            for iy in range(1, k):
                for ix in range(1, k):
                    if ix + iy <= k - 1:
                        nodes.append((ix / k, iy / k))
            self.nodes = np.array(nodes)
            self._exps = _tri_monomials(k)
            vand = np.array(
                [[x**a * y**b for a, b in self._exps] for x, y in self.nodes]
            )
            self._coeff = np.linalg.inv(vand)
        self.n_nodes = len(self.nodes)
        self._node_class = self._classify_nodes()

    # -- basis evaluation -------------------------------------------------

    def eval(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (n_pts, n_nodes) and gradients (n_pts, n_nodes, 2)."""
        pts = np.atleast_2d(np.asarray(points, float))
        if self.kind == QUAD:
            vx, dx = _lagrange_1d(self._t1d, pts[:, 0])
            vy, dy = _lagrange_1d(self._t1d, pts[:, 1])
            vals = (vy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
            gx = (vy[:, :, None] * dx[:, None, :]).reshape(len(pts), -1)
            gy = (dy[:, :, None] * vx[:, None, :]).reshape(len(pts), -1)
            return vals, np.stack([gx, gy], axis=-1)
        x, y = pts[:, 0], pts[:, 1]
        mono = np.empty((len(pts), len(self._exps)))
        dmx = np.empty_like(mono)
        dmy = np.empty_like(mono)
        for j, (a, b) in enumerate(self._exps):
            mono[:, j] = x**a * y**b
            dmx[:, j] = a * x ** max(a - 1, 0) * y**b if a else 0.0
            dmy[:, j] = b * x**a * y ** max(b - 1, 0) if b else 0.0
        vals = mono @ self._coeff
        return vals, np.stack([dmx @ self._coeff, dmy @ self._coeff], axis=-1)

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        x, y = float(point[0]), float(point[1])
        if self.kind == QUAD:
            return -tol <= x <= 1 + tol and -tol <= y <= 1 + tol
        return x >= -tol and y >= -tol and x + y <= 1 + tol

    # -- node topology ----------------------------------------------------

    def _classify_nodes(self):
        k = self.order
        cls = []
        if self.kind == QUAD:
            corner_of = {(0, 0): 0, (k, 0): 1, (k, k): 2, (0, k): 3}
            n_int = 0
            for iy in range(k + 1):
                for ix in range(k + 1):
                    if (ix, iy) in corner_of:
                        cls.append(("v", corner_of[(ix, iy)]))
                    elif iy == 0:
                        cls.append(("e", 0, ix - 1))
                    elif ix == k:
                        cls.append(("e", 1, iy - 1))
                    elif iy == k:
                        cls.append(("e", 2, k - 1 - ix))
                    elif ix == 0:
                        cls.append(("e", 3, k - 1 - iy))
                    else:
                        cls.append(("i", n_int))
                        n_int += 1
        else:
            for c in range(3):
                cls.append(("v", c))
            for e in range(3):
                for j in range(k - 1):
                    cls.append(("e", e, j))
            for m in range(self.n_nodes - 3 - 3 * (k - 1)):
                cls.append(("i", m))
        return tuple(cls)

    @property
    def node_class(self):
        """Per local node: ('v', corner) | ('e', edge, pos) | ('i', serial).

        Edge positions run from the edge's first corner to its second.
        """
        return self._node_class

    def edge_param_nodes(self) -> np.ndarray:
        """1D node parameters along any edge, endpoint to endpoint."""
        return self._t1d


@lru_cache(maxsize=None)
def reference_element(kind: str, order: int) -> ReferenceElement:
    return ReferenceElement(kind, order)


# -- quadrature ------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_for(kind: str, degree: int) -> QuadratureRule:
    """Rule on the reference element, exact for polynomials up to `degree`."""
    if degree < 0:
        raise ValueError("exactness degree must be >= 0")
    if degree > MAX_QUAD_DEGREE:
        raise UnsupportedDegreeError(
            f"quadrature degree {degree} unsupported (max {MAX_QUAD_DEGREE})"
        )
    if kind == QUAD:
        n = degree // 2 + 1
        t, w = roots_legendre(n)
        t = 0.5 * (t + 1.0)
        w = 0.5 * w
        X, Y = np.meshgrid(t, t, indexing="xy")
        WX, WY = np.meshgrid(w, w, indexing="xy")
        return QuadratureRule(
            np.column_stack([X.ravel(), Y.ravel()]), (WX * WY).ravel(), degree
        )
    if kind == TRI:
        if degree <= 1:
            return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
        if degree == 2:
            pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            return QuadratureRule(pts, np.full(3, 1 / 6), 2)
        # conical product: Gauss-Jacobi(1,0) in x absorbs the (1-x) Jacobian
        n = degree // 2 + 1
        tj, wj = roots_jacobi(n, 1.0, 0.0)
        tl, wl = roots_legendre(n)
        xi = 0.5 * (tj + 1.0)
        eta = 0.5 * (tl + 1.0)
        pts = np.column_stack(
            [
                np.repeat(xi, n),
                (np.outer(1.0 - xi, eta)).ravel(),
            ]
        )
        wts = (np.outer(0.25 * wj, 0.5 * wl)).ravel()
        return QuadratureRule(pts, wts, degree)
    raise ValueError(f"unknown element kind {kind!r}")


def default_objective_degree(order: int) -> int:
    """Exactness used for mesh-quality integrals; the integrand is not
    polynomial, so this is a stability choice exposed as a config knob."""
    return 2 * order + 3


# -- refinement embeddings ---------------------------------------------------


@dataclass(frozen=True)
class ChildEmbedding:
    """Affine map from a child reference element into its parent's."""

    gamma: int
    child_index: int
    n_children: int
    linear: tuple  # row-major 2x2
    shift: tuple

    def map(self, points: np.ndarray) -> np.ndarray:
        B = np.asarray(self.linear, float).reshape(2, 2)
        return np.atleast_2d(np.asarray(points, float)) @ B.T + np.asarray(self.shift)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.linear, float).reshape(2, 2)


def _emb(gamma, idx, n, B, b):
    return ChildEmbedding(gamma, idx, n, tuple(np.ravel(B)), tuple(b))


_QUAD_EMBS = {
    GAMMA_SPLIT_X: (
        _emb(1, 0, 2, [[0.5, 0], [0, 1.0]], (0.0, 0.0)),
        _emb(1, 1, 2, [[0.5, 0], [0, 1.0]], (0.5, 0.0)),
    ),
    GAMMA_SPLIT_Y: (
        _emb(2, 0, 2, [[1.0, 0], [0, 0.5]], (0.0, 0.0)),
        _emb(2, 1, 2, [[1.0, 0], [0, 0.5]], (0.0, 0.5)),
    ),
    GAMMA_ISO: tuple(
        _emb(3, 2 * cy + cx, 4, [[0.5, 0], [0, 0.5]], (0.5 * cx, 0.5 * cy))
        for cy in (0, 1)
        for cx in (0, 1)
    ),
}
_TRI_EMBS = {
    GAMMA_ISO: (
        _emb(3, 0, 4, [[0.5, 0], [0, 0.5]], (0.0, 0.0)),
        _emb(3, 1, 4, [[0.5, 0], [0, 0.5]], (0.5, 0.0)),
        _emb(3, 2, 4, [[0.5, 0], [0, 0.5]], (0.0, 0.5)),
        _emb(3, 3, 4, [[-0.5, 0], [0, -0.5]], (0.5, 0.5)),
    ),
}

# child corner recipes: ('v', i) parent corner, ('m', i, j) edge midpoint,
# ('c',) cell center (quadrilateral isotropic split only)
_QUAD_RECIPES = {
    GAMMA_SPLIT_X: (
        (("v", 0), ("m", 0, 1), ("m", 2, 3), ("v", 3)),
        (("m", 0, 1), ("v", 1), ("v", 2), ("m", 2, 3)),
    ),
    GAMMA_SPLIT_Y: (
        (("v", 0), ("v", 1), ("m", 1, 2), ("m", 0, 3)),
        (("m", 0, 3), ("m", 1, 2), ("v", 2), ("v", 3)),
    ),
    GAMMA_ISO: (
        (("v", 0), ("m", 0, 1), ("c",), ("m", 0, 3)),
        (("m", 0, 1), ("v", 1), ("m", 1, 2), ("c",)),
        (("m", 0, 3), ("c",), ("m", 2, 3), ("v", 3)),
        (("c",), ("m", 1, 2), ("v", 2), ("m", 2, 3)),
    ),
}
_TRI_RECIPES = {
    GAMMA_ISO: (
        (("v", 0), ("m", 0, 1), ("m", 2, 0)),
        (("m", 0, 1), ("v", 1), ("m", 1, 2)),
        (("m", 2, 0), ("m", 1, 2), ("v", 2)),
        (("m", 1, 2), ("m", 2, 0), ("m", 0, 1)),
    ),
}

_SPLIT_EDGES = {
    (QUAD, GAMMA_SPLIT_X): (0, 2),
    (QUAD, GAMMA_SPLIT_Y): (1, 3),
    (QUAD, GAMMA_ISO): (0, 1, 2, 3),
    (TRI, GAMMA_ISO): (0, 1, 2),
}


def valid_gammas(kind: str) -> tuple[int, ...]:
    return (GAMMA_SPLIT_X, GAMMA_SPLIT_Y, GAMMA_ISO) if kind == QUAD else (GAMMA_ISO,)


def child_embeddings(kind: str, gamma: int) -> tuple[ChildEmbedding, ...]:
    table = _QUAD_EMBS if kind == QUAD else _TRI_EMBS
    if gamma not in table:
        raise ValueError(f"refinement type {gamma} invalid for kind {kind!r}")
    return table[gamma]


def child_corner_recipes(kind: str, gamma: int):
    table = _QUAD_RECIPES if kind == QUAD else _TRI_RECIPES
    if gamma not in table:
        raise ValueError(f"refinement type {gamma} invalid for kind {kind!r}")
    return table[gamma]


def split_local_edges(kind: str, gamma: int) -> tuple[int, ...]:
    return _SPLIT_EDGES[(kind, gamma)]


# -- public operations -------------------------------------------------------


def eval_basis(ref: ReferenceElement, point) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and gradients at one reference point (checked to lie
    inside the reference element)."""
    pt = np.asarray(point, float)
    if not ref.contains(pt):
        raise ValueError(f"point {pt.tolist()} outside {ref.kind} reference element")
    vals, grads = ref.eval(pt[None, :])
    return vals[0], grads[0]


@lru_cache(maxsize=None)
def _interp_cached(kind: str, order: int, gamma: int, child_index: int):
    ref = reference_element(kind, order)
    emb = child_embeddings(kind, gamma)[child_index]
    vals, _ = ref.eval(emb.map(ref.nodes))
    vals.setflags(write=False)
    return vals


def interpolation_matrix(ref: ReferenceElement, emb: ChildEmbedding) -> np.ndarray:
    """Row i = parent basis evaluated at the child's node i mapped into the
    parent; exact for any polynomial of degree <= order."""
    return _interp_cached(ref.kind, ref.order, emb.gamma, emb.child_index)
