import numpy as np
import pytest

from tmophr.errors import InvalidMeshError
from tmophr.ncmesh import Mesh
from tmophr.objective import objective
from tmophr.refelem import GAMMA_ISO
from tmophr.solver import SolverConfig, minimize
from tmophr.targets import analytic_size, ideal_uniform

from .test_ncmesh import perturb_interior


def test_already_optimal_mesh_zero_iterations():
    mesh = Mesh.uniform_quad(4, 4, 1)
    spec = ideal_uniform(mesh)
    res = minimize(mesh, spec, 2)
    assert res.converged
    assert res.iterations == 0
    assert res.f_after == res.f_before


def test_perturbed_uniform_recovery():
    mesh = Mesh.uniform_quad(8, 8, 1)
    uniform = mesh.node_positions.copy()
    h = 1.0 / 8.0
    mesh = perturb_interior(mesh, 0.3 * h * 0.5, seed=12)
    spec = ideal_uniform(mesh)
    f0 = objective(mesh, spec, 2, want_grad=False).f_total
    res = minimize(mesh, spec, 2, SolverConfig(eps=1e-10, max_iters=400))
    assert res.f_after <= 0.1 * f0
    assert np.abs(mesh.node_positions - uniform).max() < 1e-3 * h
    # strict descent and validity along the trace
    assert all(b > a for a, b in zip(res.f_trace[1:], res.f_trace[:-1]))
    assert min(res.min_tau_trace) > 0.0


def test_invalid_initial_mesh_raises():
    mesh = Mesh.uniform_quad(2, 2, 1)
    cm = mesh.build_constraints()
    x = mesh.node_positions[cm.true_gids].copy()
    center = np.argmin(np.linalg.norm(x - [0.5, 0.5], axis=1))
    x[center] = [1.4, 1.4]
    mesh.set_true_positions(cm, x)
    with pytest.raises(InvalidMeshError):
        minimize(mesh, ideal_uniform(mesh), 2)


def test_solve_preserves_interface_continuity():
    mesh = Mesh.uniform_quad(2, 1, 2)
    mesh.refine(0, GAMMA_ISO)
    mesh = perturb_interior(mesh, 0.02, seed=5)
    spec = analytic_size(beta=5.0, delta=0.2, psi=3.0)
    minimize(mesh, spec, 9, SolverConfig(max_iters=30))
    kids = mesh.elems[0].children
    for t in np.linspace(0, 1, 21):
        master = mesh.element_position(1, [(0.0, t)])[0]
        if t <= 0.5:
            slave = mesh.element_position(kids[1], [(1.0, 2 * t)])[0]
        else:
            slave = mesh.element_position(kids[3], [(1.0, 2 * t - 1)])[0]
        assert np.allclose(master, slave, atol=1e-12)


def test_iterates_stay_in_prolongation_range():
    mesh = Mesh.uniform_quad(2, 2, 2)
    mesh.refine(0, GAMMA_ISO)
    mesh = perturb_interior(mesh, 0.02, seed=8)
    spec = ideal_uniform(mesh)
    minimize(mesh, spec, 7, SolverConfig(max_iters=25))
    cm = mesh.build_constraints()
    roundtrip = cm.prolong(mesh.node_positions[cm.true_gids])
    assert np.abs(roundtrip - mesh.node_positions).max() < 1e-13


def test_boundary_nodes_stay_on_boundary():
    mesh = Mesh.uniform_quad(4, 4, 2)
    mesh = perturb_interior(mesh, 0.03, seed=3)
    corners_before = {
        v: mesh.node_positions[mesh._key_to_gid[("v", v)]].copy() for v in (0, 4, 20, 24)
    }
    spec = analytic_size(beta=8.0, delta=0.02, psi=3.0)
    minimize(mesh, spec, 9, SolverConfig(max_iters=60))
    prof = mesh.boundary_profile()
    for gid, t in prof.items():
        p = mesh.node_positions[gid]
        on_edge = (
            min(abs(p[0]), abs(p[0] - 1), abs(p[1]), abs(p[1] - 1)) < 1e-12
        )
        assert on_edge
    for v, before in corners_before.items():
        after = mesh.node_positions[mesh._key_to_gid[("v", v)]]
        assert np.allclose(after, before, atol=1e-14)


def test_gradient_descent_fallback_mode():
    mesh = perturb_interior(Mesh.uniform_quad(4, 4, 1), 0.02, seed=2)
    spec = ideal_uniform(mesh)
    res = minimize(mesh, spec, 2, SolverConfig(method="gd", max_iters=50))
    assert res.f_after < res.f_before
