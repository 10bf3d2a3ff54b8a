"""Quality-driven refinement/derefinement estimator.

Refinement gains compare an element's raw energy against the mean energy of
virtually constructed children (geometry through nodal interpolation, targets
re-evaluated at the children's physical quadrature images); derefinement
gains mirror them using the parent's stored geometry. Both are pure: the
mesh is never mutated during gain evaluation. The scaled-component variant
estimates a refinement's effect by rescaling the Jacobian's size/aspect
components in place of building children.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import SHAPE, SHAPE_SIZE, SIZE, classification
from .objective import raw_element_energy
from .refelem import (
    GAMMA_ISO,
    GAMMA_SPLIT_X,
    GAMMA_SPLIT_Y,
    QUAD,
    child_embeddings,
    default_objective_degree,
    interpolation_matrix,
    quadrature_for,
)

REFINE = "refine"
DEREFINE = "derefine"
NONE = "none"


@dataclass
class RefinementDecision:
    element: int
    action: str
    gamma: int | None = None
    delta_f: float = 0.0


def gamma_set(kind: str, metric_id: int) -> tuple[int, ...]:
    """Legal refinement types: size metrics refine isotropically, shape
    metrics anisotropically, shape+size metrics may use all; triangles are
    always isotropic."""
    if kind != QUAD:
        return (GAMMA_ISO,)
    cls = classification(metric_id)
    if cls == SIZE:
        return (GAMMA_ISO,)
    if cls == SHAPE:
        return (GAMMA_SPLIT_X, GAMMA_SPLIT_Y)
    assert cls == SHAPE_SIZE
    return (GAMMA_SPLIT_X, GAMMA_SPLIT_Y, GAMMA_ISO)


def _parent_energies(mesh, ids, spec, metric_id, degree):
    X = mesh.node_positions[mesh.dof_matrix(ids)]
    F, _ = raw_element_energy(mesh, spec, metric_id, X, ids, degree=degree)
    return F


def _child_mean_energies(mesh, ids, gamma, spec, metric_id, degree):
    rule = quadrature_for(mesh.kind, degree)
    X = mesh.node_positions[mesh.dof_matrix(ids)]
    total = np.zeros(len(ids))
    embs = child_embeddings(mesh.kind, gamma)
    for emb in embs:
        M = interpolation_matrix(mesh.ref, emb)
        Xc = np.einsum("nm,emr->enr", M, X)
        F_c, _ = raw_element_energy(
            mesh, spec, metric_id, Xc, ids, spec_ref_pts=emb.map(rule.points), degree=degree
        )
        total = total + F_c
    return total / len(embs)


def refinement_gain(mesh, eid, gamma, spec, metric_id, degree=None) -> float:
    """Predicted raw-energy drop from refining one element; -inf when a
    virtual child would be inverted."""
    degree = degree or default_objective_degree(mesh.order)
    Fp = _parent_energies(mesh, [eid], spec, metric_id, degree)[0]
    Fc = _child_mean_energies(mesh, [eid], gamma, spec, metric_id, degree)[0]
    if not np.isfinite(Fc):
        return -np.inf
    return float(Fp - Fc)


def scaled_gain(mesh, eid, gamma, spec, metric_id, degree=None) -> float:
    """Fast gain estimate: rescale the Jacobian's size/aspect components per
    refinement type (skew impact ignored), no child construction."""
    degree = degree or default_objective_degree(mesh.order)
    X = mesh.node_positions[mesh.dof_matrix([eid])]
    Fp, _ = raw_element_energy(mesh, spec, metric_id, X, [eid], degree=degree)
    B = child_embeddings(mesh.kind, gamma)[0].matrix
    Fs, _ = raw_element_energy(mesh, spec, metric_id, X, [eid], degree=degree, jac_post=B)
    if not np.isfinite(Fs[0]):
        return -np.inf
    return float(Fp[0] - Fs[0])


def _decisions_batch(mesh, ids, spec, metric_id, theta, degree, use_scaled=False):
    gammas = gamma_set(mesh.kind, metric_id)
    Fp = _parent_energies(mesh, ids, spec, metric_id, degree)
    gains = {}
    for g in gammas:
        if use_scaled:
            gains[g] = np.array([scaled_gain(mesh, e, g, spec, metric_id, degree) for e in ids])
        else:
            Fc = _child_mean_energies(mesh, ids, g, spec, metric_id, degree)
            gains[g] = np.where(np.isfinite(Fc), Fp - Fc, -np.inf)
    decisions = {}
    for i, eid in enumerate(ids):
        best_g, best = None, -np.inf
        for g in gammas:  # ascending ids: ties keep the lowest
            if gains[g][i] > best:
                best_g, best = g, gains[g][i]
        threshold = theta * Fp[i] if np.isfinite(Fp[i]) else np.inf
        if best > threshold and best > 0.0:
            decisions[eid] = RefinementDecision(eid, REFINE, best_g, float(best))
        else:
            decisions[eid] = RefinementDecision(eid, NONE, None, float(best))
    return decisions


def best_refinement(mesh, eid, spec, metric_id, theta=0.0, degree=None) -> RefinementDecision:
    """Most beneficial legal refinement of an element, or a no-op when no
    refinement reduces its energy."""
    degree = degree or default_objective_degree(mesh.order)
    return _decisions_batch(mesh, [eid], spec, metric_id, theta, degree)[eid]


def _deref_candidates(mesh):
    out = []
    for pid, el in enumerate(mesh.elems):
        if el is None or el.removed or el.active or el.children is None:
            continue
        if all(mesh.elems[c].active for c in el.children):
            out.append(pid)
    return out


def derefinement_gain(mesh, pid, spec, metric_id, degree=None) -> float:
    """Energy drop from restoring a refined element; the virtual parent is
    evaluated on its stored geometry."""
    degree = degree or default_objective_degree(mesh.order)
    el = mesh.elems[pid]
    if el is None or el.removed or el.active or el.children is None:
        raise ValueError(f"element {pid} has no children")
    if not all(mesh.elems[c].active for c in el.children):
        raise ValueError(f"element {pid} has refined children")
    kids = list(el.children)
    Fc = _parent_energies(mesh, kids, spec, metric_id, degree)
    Fp, _ = raw_element_energy(
        mesh, spec, metric_id, el.snapshot[None, :, :], [pid], degree=degree
    )
    return float(Fc.mean() - Fp[0])


def apply_decisions(mesh, spec, metric_id, n_sweeps=1, theta=0.0, degree=None, use_scaled=False):
    """Run derefinement-then-refinement sweeps (gains frozen per phase).

    Returns (n_refined, n_derefined, n_closure); closure refinements keep
    one hanging level per edge and are not counted as estimator decisions.
    """
    degree = degree or default_objective_degree(mesh.order)
    n_r = n_d = n_c = 0
    for _ in range(n_sweeps):
        changed = False
        candidates = _deref_candidates(mesh)
        gains = [derefinement_gain(mesh, p, spec, metric_id, degree) for p in candidates]
        to_deref = [p for p, g in zip(candidates, gains) if g > 0.0]
        if to_deref:
            with mesh.topology_batch():
                for pid in to_deref:
                    if mesh.can_derefine(pid):
                        mesh.derefine(pid)
                        n_d += 1
                        changed = True
            n_c += sum(1 for _ in mesh._closures)

        ids = mesh.active_ids
        decisions = _decisions_batch(mesh, ids, spec, metric_id, theta, degree, use_scaled)
        to_refine = [d for d in decisions.values() if d.action == REFINE]
        if to_refine:
            with mesh.topology_batch():
                for dec in to_refine:
                    if mesh.is_active(dec.element):
                        mesh.refine(dec.element, dec.gamma)
                        n_r += 1
                        changed = True
            n_c += sum(1 for _ in mesh._closures)
        if not changed:
            break
    return n_r, n_d, n_c
