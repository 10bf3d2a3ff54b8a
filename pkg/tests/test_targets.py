import numpy as np
import pytest

from tmophr.errors import TargetError
from tmophr.ncmesh import Mesh
from tmophr.refelem import GAMMA_ISO
from tmophr.targets import (
    AnalyticTarget,
    DiscreteField,
    DiscreteFieldTarget,
    analytic_size,
    analytic_shape_size,
    build_W,
    ideal_uniform,
    poisson_gradient,
    size_band_eta,
)


def test_build_W_ideal():
    spec = AnalyticTarget("test", lambda x, y: np.ones_like(x), constant=True)
    tm = build_W(spec, (0.3, 0.4))
    assert np.allclose(tm.W, np.eye(2))
    assert tm.detW == pytest.approx(1.0)


def test_build_W_pure_size():
    spec = AnalyticTarget("test", lambda x, y: 4.0 * np.ones_like(x))
    tm = build_W(spec, (0.0, 0.0))
    assert np.allclose(tm.W, 2.0 * np.eye(2))
    assert tm.detW == pytest.approx(4.0)


def test_build_W_aspect_ratio():
    # direct evaluation of W = diag(sqrt(zeta/rho), sqrt(zeta*rho))
    spec = AnalyticTarget(
        "test", lambda x, y: np.ones_like(x), rho_fn=lambda x, y: 4.0 * np.ones_like(x)
    )
    tm = build_W(spec, (0.0, 0.0))
    assert np.allclose(tm.W, np.diag([0.5, 2.0]))
    assert tm.detW == pytest.approx(1.0)


def test_build_W_general_skew_det():
    phi = np.pi / 3
    spec = AnalyticTarget(
        "test",
        lambda x, y: 2.0 * np.ones_like(x),
        phi_fn=lambda x, y: phi * np.ones_like(x),
    )
    tm = build_W(spec, (0.0, 0.0))
    assert tm.detW == pytest.approx(2.0 * np.sin(phi))
    assert np.linalg.det(tm.W) == pytest.approx(tm.detW)


def test_build_W_rejects_nonpositive_zeta():
    spec = AnalyticTarget("test", lambda x, y: -np.ones_like(x))
    with pytest.raises(TargetError):
        build_W(spec, (0.0, 0.0))


def test_ideal_uniform_matches_mesh():
    mesh = Mesh.uniform_quad(4, 4, 1)
    spec = ideal_uniform(mesh)
    tm = build_W(spec, (0.1, 0.1))
    assert tm.detW == pytest.approx(1.0 / 16.0)


# -- analytic size band ---------------------------------------------------------


def test_eta_clamped_in_unit_interval():
    # at r = 0.25 the raw value 2*tanh(1.5) ~ 1.81 exceeds 1 and must clamp
    eta = size_band_eta(0.5 + 0.25, 0.5, (0.5, 0.5), 30.0)
    assert eta == pytest.approx(1.0)


def test_size_target_in_band_and_far_field():
    spec = analytic_size(center=(0.5, 0.5), beta=30.0, delta=0.001, psi=10.0)
    # inside the band (after clamping eta -> 1): zeta = delta
    zin = spec.zeta_fn(np.array(0.75), np.array(0.5))
    assert zin == pytest.approx(0.001, rel=1e-6)
    # far field: eta -> 0, zeta = psi*delta
    zfar = spec.zeta_fn(np.array(0.5 + 3.0), np.array(0.5))
    assert zfar == pytest.approx(0.01, rel=1e-9)
    # zeta stays within [delta, psi*delta] on a sweep through the fronts
    xs = np.linspace(0.5, 1.5, 2001)
    z = spec.zeta_fn(xs, np.full_like(xs, 0.5))
    assert z.min() >= 0.001 - 1e-12 and z.max() <= 0.01 + 1e-12


def test_shape_size_target_rho_band():
    spec = analytic_shape_size(rho_band=3.0)
    pts = np.array([[0.75, 0.5], [0.5, 0.75], [0.676, 0.676]])
    zeta, rho, phi, c = spec.components(None, None, None, pts)
    assert np.all((rho >= 1 / 3 - 1e-12) & (rho <= 3 + 1e-12))
    assert np.allclose(phi, np.pi / 2)
    assert np.allclose(c, 1.0)


# -- poisson-gradient targets ------------------------------------------------


class _LinearSolution:
    def grad(self, x, y):
        x = np.asarray(x, float)
        return np.ones_like(x), np.zeros_like(x)


class _FlatSolution:
    def grad(self, x, y):
        x = np.asarray(x, float)
        return np.zeros_like(x), np.zeros_like(x)


def test_poisson_target_constant_solution():
    mesh = Mesh.uniform_quad(4, 4, 1)
    spec = poisson_gradient(_FlatSolution(), mesh)
    pts = np.array([[0.3, 0.3], [0.8, 0.1]])
    zeta, rho, _, _ = spec.components(None, None, None, pts)
    # flat gradient: uniform zeta normalized to the element scale, rho = 1
    assert np.allclose(zeta, 1.0 / 16.0)
    assert np.allclose(rho, 1.0)


def test_poisson_target_degenerate_direction_clamps():
    mesh = Mesh.uniform_quad(4, 4, 1)
    spec = poisson_gradient(_LinearSolution(), mesh, rho_max=8.0)
    _, rho, _, _ = spec.components(None, None, None, np.array([[0.5, 0.5]]))
    assert rho[0] == pytest.approx(8.0)


def test_poisson_target_front_smaller_than_far_field():
    from tmophr.poisson import ExactSolutionSpec

    mesh = Mesh.uniform_quad(8, 8, 2)
    exact = ExactSolutionSpec(alpha=200.0, radius=0.7, center=(0.0, 0.0))
    spec = poisson_gradient(exact, mesh)
    on_front = spec.components(None, None, None, np.array([[0.7, 0.0]]))[0][0]
    far = spec.components(None, None, None, np.array([[0.05, 0.05]]))[0][0]
    gx, gy = exact.grad(0.7, 0.0)
    expected_ratio = (1.0 + np.hypot(gx, gy)) / (1.0 + np.hypot(*exact.grad(0.05, 0.05)))
    assert far / on_front == pytest.approx(expected_ratio, rel=1e-9)
    assert on_front < far


def test_poisson_target_volume_consistency():
    from tmophr.poisson import ExactSolutionSpec

    mesh = Mesh.uniform_quad(8, 8, 2)
    exact = ExactSolutionSpec(alpha=200.0, radius=0.7, center=(0.0, 0.0))
    spec = poisson_gradient(exact, mesh)
    from tmophr.refelem import default_objective_degree, quadrature_for

    rule = quadrature_for(mesh.kind, default_objective_degree(mesh.order))
    X = mesh.node_positions[mesh.dof_matrix()]
    vals, _ = mesh.ref.eval(rule.points)
    phys = np.einsum("enr,qn->eqr", X, vals)
    zeta = spec.components(None, None, None, phys)[0]
    assert float((zeta @ rule.weights).sum()) == pytest.approx(mesh.total_area(), rel=1e-12)


# -- discrete fields -----------------------------------------------------------


def test_discrete_field_child_inheritance_exact():
    mesh = Mesh.uniform_quad(2, 2, 2)
    f = lambda x, y: 1.0 + x**2 - 0.5 * x * y
    field = DiscreteField.from_function(mesh, f)
    mesh.refine(0, GAMMA_ISO)
    for cid in mesh.elems[0].children:
        X = mesh.element_nodes(cid)
        assert np.allclose(field.get(cid), f(X[:, 0], X[:, 1]), atol=1e-13)


def test_discrete_field_target_components():
    mesh = Mesh.uniform_quad(2, 2, 1)
    field = DiscreteField.from_function(mesh, lambda x, y: np.full_like(x, 0.25))
    spec = DiscreteFieldTarget(field)
    zeta, rho, phi, c = spec.components(
        mesh, mesh.active_ids, np.array([[0.5, 0.5]]), np.zeros((4, 1, 2))
    )
    assert np.allclose(zeta, 0.25)
    assert np.allclose(rho, 1.0)
    assert spec.component_gradients(mesh, mesh.active_ids, None, None) is None
