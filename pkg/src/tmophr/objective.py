"""Mesh-quality objective F, per-element energies, and the gradient with
respect to true node DOFs.

F = (1/N_E) sum_E sum_q w_q det(W) c(x_q) mu(T(x_q)),  T = A W^{-1},

with W evaluated at the physical image of each quadrature point on the
current mesh. Per-element energies F_E (used by the refinement estimator)
are the raw quadrature sums without the 1/N_E factor; the global report
applies 1/N_E once. A non-positive det(T) anywhere makes F = +inf (recorded
through min_tau) rather than raising, so line searches can reject the step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import metric_grads, metric_values
from .refelem import default_objective_degree, quadrature_for, reference_element
from .targets import TargetSpec, assemble_W, assemble_W_partials


@dataclass
class ObjectiveReport:
    f_total: float
    f_per_element: dict
    grad_true: np.ndarray | None
    min_tau: float
    n_elements: int = 0
    extras: dict = field(default_factory=dict)


def _basis_tables(kind, order, degree):
    ref = reference_element(kind, order)
    rule = quadrature_for(kind, degree)
    vals, grads = ref.eval(rule.points)
    return rule, vals, grads


def raw_element_energy(
    mesh,
    spec: TargetSpec,
    metric_id: int,
    X: np.ndarray,
    spec_elem_ids,
    spec_ref_pts=None,
    degree: int | None = None,
    jac_post=None,
):
    """Raw energies F_E and min det(T) for a batch of (possibly virtual)
    elements with node matrices X (NE, n_nodes, 2).

    spec_elem_ids/spec_ref_pts say where target components are sampled: for
    committed elements these are the elements themselves at the rule points;
    for virtual children they are the parent ids with the child rule points
    mapped into the parent. jac_post right-multiplies A (used by the
    scaled-component estimator).
    """
    degree = degree or default_objective_degree(mesh.order)
    rule, vals, grads = _basis_tables(mesh.kind, mesh.order, degree)
    A = np.einsum("enr,qns->eqrs", X, grads)
    if jac_post is not None:
        A = A @ jac_post
    phys = np.einsum("enr,qn->eqr", X, vals)
    if spec_ref_pts is None:
        spec_ref_pts = rule.points
    zeta, rho, phi, c = spec.components(mesh, spec_elem_ids, spec_ref_pts, phys)
    _, detW, Winv = assemble_W(zeta, rho, phi)
    T = A @ Winv
    tau = T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]
    mu = metric_values(metric_id, T)
    F_E = (rule.weights * detW * c * mu).sum(axis=1)
    return F_E, float(tau.min())


def objective(
    mesh,
    spec: TargetSpec,
    metric_id: int,
    degree: int | None = None,
    want_grad: bool = True,
) -> ObjectiveReport:
    """Global objective report on the current mesh."""
    degree = degree or default_objective_degree(mesh.order)
    rule, vals, grads = _basis_tables(mesh.kind, mesh.order, degree)
    ids = mesh.active_ids
    dofs = mesh.dof_matrix(ids)
    X = mesh.node_positions[dofs]
    n_e = len(ids)

    A = np.einsum("enr,qns->eqrs", X, grads)
    phys = np.einsum("enr,qn->eqr", X, vals)
    zeta, rho, phi, c = spec.components(mesh, ids, rule.points, phys)
    W, detW, Winv = assemble_W(zeta, rho, phi)
    T = A @ Winv
    tau = T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]
    min_tau = float(tau.min())
    mu = metric_values(metric_id, T)
    F_E = (rule.weights * detW * c * mu).sum(axis=1)
    f_total = float(F_E.sum() / n_e)
    report = ObjectiveReport(
        f_total=f_total,
        f_per_element={eid: float(F_E[i]) for i, eid in enumerate(ids)},
        grad_true=None,
        min_tau=min_tau,
        n_elements=n_e,
    )
    if not want_grad or min_tau <= 0.0:
        return report

    dmu = metric_grads(metric_id, T)
    scale = rule.weights * detW * c  # (NE, Nq)
    M = np.einsum("eqij,eqkj->eqik", dmu, Winv)
    contrib = np.einsum("eq,eqab,qnb->ena", scale, M, grads)

    comp_grads = spec.component_gradients(mesh, ids, rule.points, phys)
    if comp_grads is not None:
        dzeta, drho, dphi, dc = comp_grads
        Wz, Wr, Wp, ddz, ddp = assemble_W_partials(W, zeta, rho, phi)
        # contract the dW/dx chain per spatial direction to avoid a rank-5
        # intermediate
        t_extra = np.empty(zeta.shape + (2,))
        for a in range(2):
            dW = (
                Wz * dzeta[..., a, None, None]
                + Wr * drho[..., a, None, None]
                + Wp * dphi[..., a, None, None]
            )
            ddet = ddz * dzeta[..., a] + ddp * dphi[..., a]
            # mu-part: -tr(dmu^T T dW Winv)
            TXW = np.einsum("eqij,eqjk,eqkl->eqil", T, dW, Winv)
            mu_part = -(dmu * TXW).sum(axis=(-2, -1))
            t_extra[..., a] = rule.weights * (
                ddet * c * mu + detW * dc[..., a] * mu + detW * c * mu_part
            )
        contrib = contrib + np.einsum("eqa,qn->ena", t_extra, vals)

    grad_full = np.zeros_like(mesh.node_positions)
    np.add.at(grad_full, dofs.ravel(), contrib.reshape(-1, 2) / n_e)
    cm = mesh.build_constraints()
    report.grad_true = cm.restrict_transpose(grad_full)
    return report
