"""Continuous-Galerkin Poisson solver on nonconforming meshes and the
accuracy-vs-DOF benchmark with a sharp circular wave front.

The benchmark solves  lap(u) = f  on the unit square with Dirichlet data and
forcing manufactured from

    u = arctan(alpha * (dist(x, center) - radius)),

measures the energy-norm error (integral of |grad(u - u_h)|^2)^(1/2), and
compares uniform meshes against meshes adapted by node movement, refinement,
or both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .refelem import quadrature_for, reference_element


@dataclass
class ExactSolutionSpec:
    alpha: float = 200.0
    radius: float = 0.7
    center: tuple = (0.0, 0.0)

    def _dist(self, x, y):
        return np.hypot(np.asarray(x, float) - self.center[0], np.asarray(y, float) - self.center[1])

    def u(self, x, y):
        return np.arctan(self.alpha * (self._dist(x, y) - self.radius))

    def grad(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        s = self._dist(x, y)
        gp = self.alpha / (1.0 + self.alpha**2 * (s - self.radius) ** 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(s > 0, gp * (x - self.center[0]) / s, 0.0)
            uy = np.where(s > 0, gp * (y - self.center[1]) / s, 0.0)
        return ux, uy

    def laplacian(self, x, y):
        s = self._dist(x, y)
        d = s - self.radius
        denom = 1.0 + self.alpha**2 * d**2
        gp = self.alpha / denom
        gpp = -2.0 * self.alpha**3 * d / denom**2
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(s > 0, gp / s, 0.0)
        return gpp + radial


def exact_u(spec: ExactSolutionSpec, x) -> float:
    x = np.asarray(x, float)
    return float(spec.u(x[0], x[1]))


def exact_grad_u(spec: ExactSolutionSpec, x) -> np.ndarray:
    x = np.asarray(x, float)
    gx, gy = spec.grad(x[0], x[1])
    return np.array([float(gx), float(gy)])


def forcing_f(spec: ExactSolutionSpec, x) -> float:
    x = np.asarray(x, float)
    return float(spec.laplacian(x[0], x[1]))


# -- assembly -----------------------------------------------------------------


def _element_tables(mesh, degree):
    rule = quadrature_for(mesh.kind, degree)
    vals, grads = mesh.ref.eval(rule.points)
    ids = mesh.active_ids
    dofs = mesh.dof_matrix(ids)
    X = mesh.node_positions[dofs]
    A = np.einsum("enr,qns->eqrs", X, grads)
    detA = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    Ainv = np.empty_like(A)
    Ainv[..., 0, 0] = A[..., 1, 1]
    Ainv[..., 0, 1] = -A[..., 0, 1]
    Ainv[..., 1, 0] = -A[..., 1, 0]
    Ainv[..., 1, 1] = A[..., 0, 0]
    Ainv = Ainv / detA[..., None, None]
    # physical basis gradients: grad w = A^{-T} gradbar w
    Gp = np.einsum("eqba,qnb->eqna", Ainv, grads)
    phys = np.einsum("enr,qn->eqr", X, vals)
    return rule, vals, ids, dofs, detA, Gp, phys


def assemble(mesh, spec: ExactSolutionSpec, degree=None):
    """Full-DOF stiffness matrix and load vector (forcing sign folded in)."""
    degree = degree or 2 * mesh.order + 2
    rule, vals, ids, dofs, detA, Gp, phys = _element_tables(mesh, degree)
    wdet = rule.weights * detA
    Ke = np.einsum("eq,eqna,eqma->enm", wdet, Gp, Gp)
    f = spec.laplacian(phys[..., 0], phys[..., 1])
    be = np.einsum("eq,qn->en", -wdet * f, vals)
    n = mesh.n_dofs
    n_loc = dofs.shape[1]
    rows = np.repeat(dofs, n_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, n_loc)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    b = np.zeros(n)
    np.add.at(b, dofs.ravel(), be.ravel())
    return K, b


def solve(mesh, spec: ExactSolutionSpec, degree=None, rtol=1e-12):
    """Solve with essential boundary data from the exact solution; returns
    the solution on true DOFs."""
    K, b = assemble(mesh, spec, degree)
    cm = mesh.build_constraints()
    Kt = (cm.P.T @ K @ cm.P).tocsr()
    bt = cm.P.T @ b
    true_pos = {int(g): i for i, g in enumerate(cm.true_gids)}
    bdry_t = sorted({true_pos[g] for g in mesh.boundary_profile() if g in true_pos})
    bdry_t = np.array(bdry_t, dtype=np.int64)
    mask = np.ones(cm.n_true, dtype=bool)
    mask[bdry_t] = False
    interior = np.where(mask)[0]
    xy = mesh.node_positions[cm.true_gids[bdry_t]]
    u_bc = spec.u(xy[:, 0], xy[:, 1])
    rhs = bt[interior] - Kt[interior][:, bdry_t] @ u_bc
    A_II = Kt[interior][:, interior]
    dinv = 1.0 / A_II.diagonal()
    M = spla.LinearOperator(A_II.shape, matvec=lambda v: dinv * v)
    u_int, info = spla.cg(A_II, rhs, rtol=rtol, atol=0.0, maxiter=10 * len(interior), M=M)
    if info != 0:
        raise NumericalError(f"conjugate gradients did not converge (info={info})")
    u = np.empty(cm.n_true)
    u[interior] = u_int
    u[bdry_t] = u_bc
    return u


def energy_error(mesh, u_true, spec: ExactSolutionSpec, degree=None) -> float:
    """Energy-norm error (integral of |grad u - grad u_h|^2)^(1/2)."""
    degree = degree or 2 * mesh.order + 4
    cm = mesh.build_constraints()
    u_full = cm.prolong(np.asarray(u_true, float))
    rule, vals, ids, dofs, detA, Gp, phys = _element_tables(mesh, degree)
    grad_h = np.einsum("eqna,en->eqa", Gp, u_full[dofs])
    gx, gy = spec.grad(phys[..., 0], phys[..., 1])
    diff2 = (grad_h[..., 0] - gx) ** 2 + (grad_h[..., 1] - gy) ** 2
    return float(np.sqrt((rule.weights * detA * diff2).sum()))


def interpolation_energy_error(mesh, spec: ExactSolutionSpec, degree=None) -> float:
    """Energy error of the conforming nodal interpolant of the exact
    solution (an upper-bound proxy for the Galerkin solution's error)."""
    cm = mesh.build_constraints()
    xy = mesh.node_positions[cm.true_gids]
    return energy_error(mesh, spec.u(xy[:, 0], xy[:, 1]), spec, degree)


def n_scalar_dofs(mesh) -> int:
    return mesh.build_constraints().n_true


# -- benchmark ----------------------------------------------------------------


def benchmark(
    order=2,
    levels=(4, 8, 16, 32),
    alpha=200.0,
    radius=0.7,
    center=(0.0, 0.0),
    modes=("uniform", "h", "r", "hr"),
    metric_r=9,
    metric_h=9,
    eps=1e-6,
    max_iters=100,
):
    """Error-vs-DOF study: rows of (mode, n, n_dof, energy_error)."""
    from .driver import HrConfig, run_hr
    from .solver import SolverConfig
    from .targets import poisson_gradient

    spec = ExactSolutionSpec(alpha=alpha, radius=radius, center=center)
    rows = []
    for n in levels:
        for mode in modes:
            from .ncmesh import Mesh

            mesh = Mesh.uniform_quad(n, n, order)
            if mode != "uniform":
                target = poisson_gradient(spec, mesh)
                cfg = HrConfig(
                    metric_r=metric_r,
                    metric_h=metric_h,
                    target=target,
                    mode={"h": "h", "r": "r", "hr": "hr"}[mode],
                    n_h=1,
                    max_outer=1,
                    solver=SolverConfig(eps=eps, max_iters=max_iters),
                )
                run_hr(mesh, cfg)
            u = solve(mesh, spec)
            rows.append((mode, n, n_scalar_dofs(mesh), energy_error(mesh, u, spec)))
    return rows
