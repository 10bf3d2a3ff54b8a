import numpy as np
import pytest

from tmophr.ncmesh import Mesh
from tmophr.objective import objective, raw_element_energy
from tmophr.refelem import GAMMA_ISO
from tmophr.targets import AnalyticTarget, analytic_size, ideal_uniform

from .test_ncmesh import perturb_interior


def fd_gradient(mesh, spec, metric_id, h=1e-7):
    """Central finite differences of F with respect to true DOFs."""
    cm = mesh.build_constraints()
    x0 = mesh.node_positions[cm.true_gids].copy()
    grad = np.zeros_like(x0)
    for i in range(x0.shape[0]):
        for d in range(2):
            for sign in (+1, -1):
                x = x0.copy()
                x[i, d] += sign * h
                mesh.set_true_positions(cm, x)
                f = objective(mesh, spec, metric_id, want_grad=False).f_total
                grad[i, d] += sign * f / (2 * h)
    mesh.set_true_positions(cm, x0)
    return grad


def test_objective_zero_on_matching_mesh():
    mesh = Mesh.uniform_quad(4, 4, 1)
    spec = ideal_uniform(mesh)
    rep = objective(mesh, spec, 2)
    assert rep.f_total == pytest.approx(0.0, abs=1e-26)
    assert np.allclose(rep.grad_true, 0.0, atol=1e-14)
    assert rep.min_tau == pytest.approx(1.0)


def test_objective_zero_size_metric_single_element():
    mesh = Mesh.uniform_quad(1, 1, 1)
    spec = AnalyticTarget("test", lambda x, y: np.ones_like(x), constant=True)
    rep = objective(mesh, spec, 55)
    assert rep.f_total == pytest.approx(0.0, abs=1e-28)


def test_objective_reports_infinite_on_inverted():
    mesh = Mesh.uniform_quad(2, 2, 1)
    spec = ideal_uniform(mesh)
    cm = mesh.build_constraints()
    x = mesh.node_positions[cm.true_gids].copy()
    center = np.argmin(np.linalg.norm(x - [0.5, 0.5], axis=1))
    x[center] = [1.2, 1.2]  # fold the mesh
    mesh.set_true_positions(cm, x)
    rep = objective(mesh, spec, 2, want_grad=True)
    assert np.isinf(rep.f_total)
    assert rep.min_tau <= 0.0
    assert rep.grad_true is None


def test_per_element_sums_match_total():
    mesh = perturb_interior(Mesh.uniform_quad(3, 3, 2), 0.04, seed=1)
    spec = ideal_uniform(mesh)
    rep = objective(mesh, spec, 7)
    total = sum(rep.f_per_element.values()) / rep.n_elements
    assert rep.f_total == pytest.approx(total, rel=1e-13)


@pytest.mark.parametrize("mid", [2, 55, 7, 9])
def test_gradient_fd_uniform_target_conforming(mid):
    mesh = perturb_interior(Mesh.uniform_quad(4, 4, 2), 0.05, seed=42)
    spec = ideal_uniform(mesh)
    rep = objective(mesh, spec, mid)
    fd = fd_gradient(mesh, spec, mid)
    scale = max(np.abs(fd).max(), 1e-30)
    assert np.abs(rep.grad_true - fd).max() / scale < 1e-6


def test_gradient_fd_with_hanging_nodes():
    mesh = Mesh.uniform_quad(4, 4, 2)
    mesh.refine(5, GAMMA_ISO)
    mesh = perturb_interior(mesh, 0.02, seed=7)
    spec = ideal_uniform(mesh)
    rep = objective(mesh, spec, 9)
    assert rep.min_tau > 0
    fd = fd_gradient(mesh, spec, 9)
    scale = np.abs(fd).max()
    assert np.abs(rep.grad_true - fd).max() / scale < 1e-6


def test_gradient_fd_spatially_varying_target():
    # exercises the target-derivative terms of the gradient
    mesh = perturb_interior(Mesh.uniform_quad(4, 4, 1), 0.05, seed=3)
    spec = analytic_size(beta=10.0, delta=0.01, psi=4.0)
    rep = objective(mesh, spec, 9)
    fd = fd_gradient(mesh, spec, 9, h=1e-6)
    scale = np.abs(fd).max()
    assert np.abs(rep.grad_true - fd).max() / scale < 1e-5


def test_gradient_projection_keeps_interfaces_glued():
    mesh = Mesh.uniform_quad(2, 1, 2)
    mesh.refine(0, GAMMA_ISO)
    spec = ideal_uniform(mesh)
    rep = objective(mesh, spec, 7)
    cm = mesh.build_constraints()
    assert rep.grad_true.shape == (cm.n_true, 2)


def test_raw_energy_matches_objective_per_element():
    mesh = perturb_interior(Mesh.uniform_quad(2, 2, 2), 0.05, seed=9)
    spec = analytic_size(beta=5.0, delta=0.05, psi=3.0)
    rep = objective(mesh, spec, 7)
    ids = mesh.active_ids
    X = mesh.node_positions[mesh.dof_matrix(ids)]
    F, min_tau = raw_element_energy(mesh, spec, 7, X, ids)
    assert np.allclose(F, [rep.f_per_element[e] for e in ids], rtol=1e-13)
    assert min_tau == pytest.approx(rep.min_tau)
