"""Nonconforming high-order mesh: element forest, refinement mechanics,
hanging-node constraints, and geometry evaluation.

The mesh is a forest of elements over a shared vertex pool. Leaf (active)
elements tile the domain; refining deactivates an element and creates
children whose curved geometry is inherited exactly through nodal
interpolation. Edges are identified by sorted vertex-id pairs; a persistent
midpoint table ensures that two elements splitting the same edge share the
midpoint vertex. Hanging degrees of freedom on refined interfaces are
expressed through master-edge trace interpolation, with at most one hanging
level per edge (closure refinements restore this when violated).
"""
from __future__ import annotations

import copy

import numpy as np
import scipy.sparse as sp

from .errors import InvalidMeshError, MeshTopologyError, UsageError
from .refelem import (
    EDGES,
    GAMMA_ISO,
    GAMMA_SPLIT_X,
    GAMMA_SPLIT_Y,
    QUAD,
    TRI,
    _lagrange_1d,
    child_corner_recipes,
    child_embeddings,
    interpolation_matrix,
    quadrature_for,
    reference_element,
    valid_gammas,
)


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


class _Element:
    __slots__ = (
        "verts",
        "parent",
        "gamma",
        "child_slot",
        "children",
        "active",
        "removed",
        "level",
        "snapshot",
    )

    def __init__(self, verts, parent=-1, gamma=0, child_slot=0, level=0):
        self.verts = tuple(verts)
        self.parent = parent
        self.gamma = gamma
        self.child_slot = child_slot
        self.children = None
        self.active = True
        self.removed = False
        self.level = level
        self.snapshot = None


class ConstraintMap:
    """Linear map from true (unconstrained) DOFs to the full DOF set."""

    def __init__(self, prolongation: sp.csr_matrix, true_gids: np.ndarray):
        self.P = prolongation
        self.true_gids = true_gids
        self.n_full, self.n_true = prolongation.shape

    @property
    def is_identity(self) -> bool:
        return self.n_full == self.n_true

    def prolong(self, true_vec: np.ndarray) -> np.ndarray:
        true_vec = np.asarray(true_vec)
        if true_vec.shape[0] != self.n_true:
            raise UsageError(
                f"expected leading dimension {self.n_true}, got {true_vec.shape[0]}"
            )
        return self.P @ true_vec

    def restrict_transpose(self, full_vec: np.ndarray) -> np.ndarray:
        full_vec = np.asarray(full_vec)
        if full_vec.shape[0] != self.n_full:
            raise UsageError(
                f"expected leading dimension {self.n_full}, got {full_vec.shape[0]}"
            )
        return self.P.T @ full_vec

    def restrict(self, full_vec: np.ndarray) -> np.ndarray:
        """Pick the true-DOF rows out of a full vector."""
        return np.asarray(full_vec)[self.true_gids]


def _corner_local_nodes(kind: str, k: int):
    if kind == QUAD:
        return (0, k, (k + 1) ** 2 - 1, k * (k + 1))
    return (0, 1, 2)


class Mesh:
    """Single-kind 2D nonconforming mesh of order >= 1 elements."""

    def __init__(self, kind, order, vertices, elements, boundary=None):
        self.kind = kind
        self.order = order
        self.ref = reference_element(kind, order)
        self.vert_coords = [np.asarray(v, float) for v in vertices]
        self.elems: list[_Element] = [_Element(e) for e in elements]
        self.midpoint: dict[tuple, int] = {}
        self.boundary: dict[tuple, int] = {}
        self.generation = 0
        self._in_batch = False
        self._closures: list[tuple[int, int]] = []
        self._refine_log: list[tuple[int, int]] = []
        self._edge_users: dict[tuple, set] = {}
        for eid, el in enumerate(self.elems):
            for a, b in EDGES[kind]:
                self._edge_users.setdefault(_pair(el.verts[a], el.verts[b]), set()).add(eid)
        if boundary is None:
            boundary = [(p, 1) for p, users in self._edge_users.items() if len(users) == 1]
        for item in boundary:
            (a, b), attr = (item[:2], item[2]) if len(item) == 3 else (item[0], item[1])
            self.boundary[_pair(a, b)] = attr
        self._pos: dict = {}
        for eid in range(len(self.elems)):
            X = self._initial_element_nodes(eid)
            for key, row in zip(self._elem_keys(eid), X):
                self._pos[key] = np.array(row)
        self._constraints_cache = None
        self._rebuild()

    # -- constructors -------------------------------------------------------

    @classmethod
    def uniform_quad(cls, nx, ny, order, lo=(0.0, 0.0), hi=(1.0, 1.0)):
        xs = np.linspace(lo[0], hi[0], nx + 1)
        ys = np.linspace(lo[1], hi[1], ny + 1)
        vid = lambda i, j: j * (nx + 1) + i
        verts = [(x, y) for y in ys for x in xs]
        elems = [
            (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            for j in range(ny)
            for i in range(nx)
        ]
        bdry = []
        for i in range(nx):
            bdry.append(((vid(i, 0), vid(i + 1, 0)), 1))
            bdry.append(((vid(i, ny), vid(i + 1, ny)), 3))
        for j in range(ny):
            bdry.append(((vid(nx, j), vid(nx, j + 1)), 2))
            bdry.append(((vid(0, j), vid(0, j + 1)), 4))
        return cls(QUAD, order, verts, elems, bdry)

    @classmethod
    def uniform_tri(cls, nx, ny, order, lo=(0.0, 0.0), hi=(1.0, 1.0)):
        xs = np.linspace(lo[0], hi[0], nx + 1)
        ys = np.linspace(lo[1], hi[1], ny + 1)
        vid = lambda i, j: j * (nx + 1) + i
        verts = [(x, y) for y in ys for x in xs]
        elems = []
        for j in range(ny):
            for i in range(nx):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
                elems.append((v00, v10, v11))
                elems.append((v00, v11, v01))
        bdry = []
        for i in range(nx):
            bdry.append(((vid(i, 0), vid(i + 1, 0)), 1))
            bdry.append(((vid(i, ny), vid(i + 1, ny)), 3))
        for j in range(ny):
            bdry.append(((vid(nx, j), vid(nx, j + 1)), 2))
            bdry.append(((vid(0, j), vid(0, j + 1)), 4))
        return cls(TRI, order, verts, elems, bdry)

    def copy(self) -> "Mesh":
        return copy.deepcopy(self)

    # -- bookkeeping ----------------------------------------------------------

    def _initial_element_nodes(self, eid):
        """Straight-sided node placement from the corner vertices."""
        el = self.elems[eid]
        corners = np.array([self.vert_coords[v] for v in el.verts])
        r = self.ref.nodes
        if self.kind == QUAD:
            x, y = r[:, 0], r[:, 1]
            w = np.column_stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])
            return w @ corners
        return corners[0] + np.outer(r[:, 0], corners[1] - corners[0]) + np.outer(
            r[:, 1], corners[2] - corners[0]
        )

    def _elem_keys(self, eid):
        el = self.elems[eid]
        k = self.order
        keys = []
        for cls in self.ref.node_class:
            if cls[0] == "v":
                keys.append(("v", el.verts[cls[1]]))
            elif cls[0] == "e":
                a, b = EDGES[self.kind][cls[1]]
                va, vb = el.verts[a], el.verts[b]
                if va <= vb:
                    keys.append(("e", (va, vb), cls[2]))
                else:
                    keys.append(("e", (vb, va), k - 2 - cls[2]))
            else:
                keys.append(("i", eid, cls[1]))
        return keys

    def _rebuild(self):
        key_to_gid = {}
        keys = []
        elem_dofs = {}
        for eid, el in enumerate(self.elems):
            if el is None or not el.active:
                continue
            dofs = np.empty(self.ref.n_nodes, dtype=np.int64)
            for local, key in enumerate(self._elem_keys(eid)):
                gid = key_to_gid.get(key)
                if gid is None:
                    gid = len(keys)
                    key_to_gid[key] = gid
                    keys.append(key)
                dofs[local] = gid
            elem_dofs[eid] = dofs
        self._key_to_gid = key_to_gid
        self._keys = keys
        self._elem_dofs = elem_dofs
        self.node_positions = np.array([self._pos[key] for key in keys]) if keys else np.zeros((0, 2))
        # prune stale staged positions
        self._pos = {key: self.node_positions[i].copy() for i, key in enumerate(keys)}
        self._constraints_cache = None

    def _sync_pos(self):
        for i, key in enumerate(self._keys):
            self._pos[key] = self.node_positions[i].copy()

    # -- queries ---------------------------------------------------------------

    @property
    def n_active(self) -> int:
        return len(self._elem_dofs)

    @property
    def active_ids(self) -> list:
        return sorted(self._elem_dofs.keys())

    @property
    def n_dofs(self) -> int:
        return len(self._keys)

    def is_active(self, eid) -> bool:
        el = self.elems[eid]
        return el is not None and not el.removed and el.active

    def element_dofs(self, eid) -> np.ndarray:
        if eid not in self._elem_dofs:
            raise UsageError(f"element {eid} is not active")
        return self._elem_dofs[eid]

    def element_nodes(self, eid) -> np.ndarray:
        """Node-coordinate matrix of an active element, shape (n_nodes, 2)."""
        return self.node_positions[self.element_dofs(eid)]

    def dof_matrix(self, ids=None) -> np.ndarray:
        ids = self.active_ids if ids is None else ids
        return np.array([self.element_dofs(e) for e in ids], dtype=np.int64)

    def element_position(self, eid, points) -> np.ndarray:
        vals, _ = self.ref.eval(points)
        return vals @ self.element_nodes(eid)

    def jacobian(self, eid, points) -> np.ndarray:
        """Jacobians of the reference-to-physical map, shape (n_pts, 2, 2)."""
        _, grads = self.ref.eval(points)
        return np.einsum("nr,qns->qrs", self.element_nodes(eid), grads)

    def total_area(self) -> float:
        rule = quadrature_for(self.kind, 2 * self.order + 1)
        X = self.node_positions[self.dof_matrix()]
        _, grads = self.ref.eval(rule.points)
        A = np.einsum("enr,qns->eqrs", X, grads)
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        return float((det @ rule.weights).sum())

    def min_jacobian_det(self, degree=None) -> float:
        rule = quadrature_for(self.kind, degree if degree is not None else 2 * self.order + 1)
        X = self.node_positions[self.dof_matrix()]
        _, grads = self.ref.eval(rule.points)
        A = np.einsum("enr,qns->eqrs", X, grads)
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        return float(det.min())

    def levels(self) -> dict:
        return {eid: self.elems[eid].level for eid in self.active_ids}

    # -- topology mutation -------------------------------------------------------

    def _new_vertex(self, coords) -> int:
        self.vert_coords.append(np.asarray(coords, float))
        return len(self.vert_coords) - 1

    def _resolve_child_verts(self, eid, gamma, child_nodes_fn):
        el = self.elems[eid]
        recipes = child_corner_recipes(self.kind, gamma)
        corner_nodes = _corner_local_nodes(self.kind, self.order)
        resolved = []
        for ci, recipe in enumerate(recipes):
            Xc = child_nodes_fn(ci)
            verts = []
            for corner_idx, step in enumerate(recipe):
                if step[0] == "v":
                    verts.append(el.verts[step[1]])
                elif step[0] == "m":
                    pair = _pair(el.verts[step[1]], el.verts[step[2]])
                    vid = self.midpoint.get(pair)
                    if vid is None:
                        vid = self._new_vertex(Xc[corner_nodes[corner_idx]])
                        self.midpoint[pair] = vid
                        if pair in self.boundary:
                            attr = self.boundary[pair]
                            self.boundary[_pair(pair[0], vid)] = attr
                            self.boundary[_pair(vid, pair[1])] = attr
                    verts.append(vid)
                else:
                    key = ("cc", el.verts[0], el.verts[2])
                    vid = self.midpoint.get(key)
                    if vid is None:
                        vid = self._new_vertex(Xc[corner_nodes[corner_idx]])
                        self.midpoint[key] = vid
                    verts.append(vid)
            resolved.append(tuple(verts))
        return resolved

    def _refine_topology(self, eid, gamma):
        el = self.elems[eid]
        if el is None or el.removed or not el.active:
            raise UsageError(f"element {eid} is not active")
        if gamma not in valid_gammas(self.kind):
            raise UsageError(f"refinement type {gamma} invalid for {self.kind} elements")
        keys = self._elem_keys(eid)
        Xp = np.array([self._pos[key] for key in keys])
        el.snapshot = Xp.copy()
        embs = child_embeddings(self.kind, gamma)
        child_X = [interpolation_matrix(self.ref, emb) @ Xp for emb in embs]
        child_verts = self._resolve_child_verts(eid, gamma, lambda ci: child_X[ci])
        for a, b in EDGES[self.kind]:
            self._edge_users[_pair(el.verts[a], el.verts[b])].discard(eid)
        cids = []
        for ci, verts in enumerate(child_verts):
            cid = len(self.elems)
            child = _Element(verts, parent=eid, gamma=gamma, child_slot=ci, level=el.level + 1)
            self.elems.append(child)
            cids.append(cid)
            for key, row in zip(self._elem_keys(cid), child_X[ci]):
                if key not in self._pos:
                    self._pos[key] = np.array(row)
            for a, b in EDGES[self.kind]:
                self._edge_users.setdefault(_pair(verts[a], verts[b]), set()).add(cid)
        el.active = False
        el.children = tuple(cids)
        self._refine_log.append((eid, gamma))
        self.generation += 1

    def _edge_hanging_depth(self, pair, exclude=frozenset()):
        m = self.midpoint.get(pair)
        if m is None:
            return 0
        depth = 0
        for sub in (_pair(pair[0], m), _pair(m, pair[1])):
            users = self._edge_users.get(sub)
            has_users = bool(users) and not users.issubset(exclude)
            du = self._edge_hanging_depth(sub, exclude)
            if du > 0:
                depth = max(depth, 1 + du)
            elif has_users:
                depth = max(depth, 1)
        return depth

    def _closure_gamma(self, local_edges):
        if self.kind == TRI:
            return GAMMA_ISO
        horiz = any(e in (0, 2) for e in local_edges)
        vert = any(e in (1, 3) for e in local_edges)
        if horiz and vert:
            return GAMMA_ISO
        return GAMMA_SPLIT_X if horiz else GAMMA_SPLIT_Y

    def _enforce_closure(self):
        performed = []
        changed = True
        while changed:
            changed = False
            for eid in range(len(self.elems)):
                el = self.elems[eid]
                if el is None or el.removed or not el.active:
                    continue
                offending = [
                    le
                    for le, (a, b) in enumerate(EDGES[self.kind])
                    if self._edge_hanging_depth(_pair(el.verts[a], el.verts[b])) >= 2
                ]
                if offending:
                    self._refine_topology(eid, self._closure_gamma(offending))
                    performed.append((eid, self._closure_gamma(offending)))
                    changed = True
        return performed

    def refine(self, eid, gamma):
        """Refine an active element; returns the (element, type) closure
        refinements that were forced to keep one hanging level per edge."""
        if self._in_batch:
            self._refine_topology(eid, gamma)
            return []
        self._sync_pos()
        self._refine_topology(eid, gamma)
        closures = self._enforce_closure()
        self._rebuild()
        return closures

    def _deref_check(self, pid):
        el = self.elems[pid]
        if el is None or el.removed or el.active or el.children is None:
            raise MeshTopologyError(f"element {pid} has no children to remove")
        for cid in el.children:
            if self.elems[cid].children is not None:
                raise MeshTopologyError(
                    f"child {cid} of element {pid} is itself refined"
                )
        exclude = frozenset(el.children)
        for a, b in EDGES[self.kind]:
            if self._edge_hanging_depth(_pair(el.verts[a], el.verts[b]), exclude) >= 2:
                raise MeshTopologyError(
                    f"removing children of {pid} would leave two hanging levels"
                )

    def can_derefine(self, pid) -> bool:
        try:
            self._deref_check(pid)
            return True
        except MeshTopologyError:
            return False

    def _deref_topology(self, pid):
        self._deref_check(pid)
        el = self.elems[pid]
        for cid in el.children:
            child = self.elems[cid]
            for a, b in EDGES[self.kind]:
                self._edge_users[_pair(child.verts[a], child.verts[b])].discard(cid)
            child.active = False
            child.removed = True
        el.children = None
        el.active = True
        for a, b in EDGES[self.kind]:
            self._edge_users.setdefault(_pair(el.verts[a], el.verts[b]), set()).add(pid)
        for key, row in zip(self._elem_keys(pid), el.snapshot):
            self._pos[key] = np.array(row)
        self._refine_log.append((pid, -1))
        self.generation += 1

    def derefine(self, pid):
        """Remove all children of a refined element and restore its stored
        node positions."""
        if self._in_batch:
            self._deref_topology(pid)
            return
        self._sync_pos()
        self._deref_topology(pid)
        self._rebuild()

    class _Batch:
        def __init__(self, mesh):
            self.mesh = mesh

        def __enter__(self):
            self.mesh._sync_pos()
            self.mesh._in_batch = True
            return self.mesh

        def __exit__(self, exc_type, exc, tb):
            self.mesh._in_batch = False
            if exc_type is None:
                self.mesh._closures = self.mesh._enforce_closure()
                self.mesh._rebuild()
            return False

    def topology_batch(self):
        """Context manager grouping many refinements/derefinements into one
        closure pass and DOF rebuild."""
        return Mesh._Batch(self)

    # -- constraints --------------------------------------------------------------

    def build_constraints(self) -> ConstraintMap:
        if self._constraints_cache is not None:
            return self._constraints_cache
        k = self.order
        t1d = self.ref.edge_param_nodes()
        raw_rows: dict[int, list] = {}
        seen = set()
        for eid in self.active_ids:
            el = self.elems[eid]
            for a, b in EDGES[self.kind]:
                pair = _pair(el.verts[a], el.verts[b])
                if pair in seen:
                    continue
                seen.add(pair)
                m = self.midpoint.get(pair)
                if m is None:
                    continue
                subs = (_pair(pair[0], m), _pair(m, pair[1]))
                if not any(self._edge_users.get(s) for s in subs):
                    continue
                # pair is a master edge: constrain every DOF on its refined side
                p, q = pair
                master_keys = (
                    [("v", p)]
                    + [("e", pair, j) for j in range(k - 1)]
                    + [("v", q)]
                )
                master_gids = [self._key_to_gid[key] for key in master_keys]

                def add_slave(key, t_master):
                    gid = self._key_to_gid.get(key)
                    if gid is None:
                        return
                    w = _lagrange_1d(t1d, np.array([t_master]))[0][0]
                    raw_rows[gid] = list(zip(master_gids, w))

                add_slave(("v", m), 0.5)
                for sub, first_half in ((subs[0], True), (subs[1], False)):
                    if not self._edge_users.get(sub):
                        continue
                    for j in range(k - 1):
                        s = t1d[j + 1]
                        if first_half:
                            tm = 0.5 * s if sub[0] == p else 0.5 * (1.0 - s)
                        else:
                            tm = 0.5 + 0.5 * s if sub[0] == m else 1.0 - 0.5 * s
                        add_slave(("e", sub, j), tm)

        resolved: dict[int, dict] = {}

        def resolve(gid, depth=0):
            if depth > 64:
                raise MeshTopologyError("constraint dependency chain too deep")
            if gid not in raw_rows:
                return {gid: 1.0}
            if gid in resolved:
                return resolved[gid]
            out: dict[int, float] = {}
            for mg, w in raw_rows[gid]:
                for g, wr in resolve(mg, depth + 1).items():
                    out[g] = out.get(g, 0.0) + w * wr
            resolved[gid] = out
            return out

        n_full = self.n_dofs
        true_gids = np.array([g for g in range(n_full) if g not in raw_rows], dtype=np.int64)
        col = {g: i for i, g in enumerate(true_gids)}
        rows, cols, vals = [], [], []
        for g in range(n_full):
            if g in raw_rows:
                for mg, w in sorted(resolve(g).items()):
                    rows.append(g)
                    cols.append(col[mg])
                    vals.append(w)
            else:
                rows.append(g)
                cols.append(col[g])
                vals.append(1.0)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(n_full, len(true_gids)))
        cm = ConstraintMap(P, true_gids)
        self._constraints_cache = cm
        return cm

    def set_true_positions(self, cm: ConstraintMap, x_true: np.ndarray):
        """Update all node positions from true-DOF positions (prolongation
        keeps hanging nodes conforming)."""
        self.node_positions[:] = cm.prolong(x_true)

    def assert_valid(self):
        if self.min_jacobian_det() <= 0.0:
            raise InvalidMeshError("mesh has a non-positive Jacobian determinant")

    # -- boundary ------------------------------------------------------------------

    def boundary_profile(self):
        """Classify boundary DOFs: returns dict gid -> unit tangent (2,) for
        nodes free to slide along a straight boundary segment, or None for
        nodes pinned at boundary corners."""
        tangents: dict[int, list] = {}
        for eid in self.active_ids:
            el = self.elems[eid]
            for le, (a, b) in enumerate(EDGES[self.kind]):
                pair = _pair(el.verts[a], el.verts[b])
                if pair not in self.boundary:
                    continue
                ga = self._key_to_gid[("v", el.verts[a])]
                gb = self._key_to_gid[("v", el.verts[b])]
                t = self.node_positions[gb] - self.node_positions[ga]
                norm = np.linalg.norm(t)
                if norm == 0:
                    continue
                t = t / norm
                interior = [
                    self._key_to_gid[key]
                    for key in self._elem_keys(eid)
                    if key[0] == "e" and key[1] == pair
                ]
                for gid in (ga, gb, *interior):
                    tangents.setdefault(gid, []).append(t)
        profile = {}
        for gid, ts in tangents.items():
            ref = ts[0]
            corner = any(abs(ref[0] * t[1] - ref[1] * t[0]) > 1e-8 for t in ts[1:])
            profile[gid] = None if corner else ref
        return profile
