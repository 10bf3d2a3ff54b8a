"""Target transformation construction.

A target spec supplies, at every evaluation point, the four geometric
components of the 2D target Jacobian

    W = sqrt(zeta) * Q(phi) * D(rho),
    Q = [[1, cos phi], [0, sin phi]],  D = diag(1/sqrt(rho), sqrt(rho)),

so det W = zeta * sin(phi) (= zeta for the right-angle skew phi = pi/2 used
by every shipped target). zeta is the target Jacobian determinant: for
quadrilaterals it equals the target element area; for triangles the target
area is zeta times the reference measure 1/2.
"""
from __future__ import annotations

import numpy as np

from .errors import TargetError
from .refelem import REFERENCE_MEASURE, interpolation_matrix, quadrature_for

FD_STEP = 1e-6

IDEAL_UNIFORM = "ideal-uniform"
ANALYTIC_SIZE = "analytic-size"
ANALYTIC_SHAPE_SIZE = "analytic-shape-size"
POISSON_GRADIENT = "poisson-gradient"
DISCRETE_FIELD = "discrete-field"


class TargetSpec:
    """Base: maps evaluation points to (zeta, rho, phi, c_mb) components."""

    kind = "abstract"
    rho_max = 8.0

    def components(self, mesh, elem_ids, ref_pts, phys):
        """Component arrays broadcast to phys.shape[:-1]."""
        raise NotImplementedError

    def component_gradients(self, mesh, elem_ids, ref_pts, phys):
        """Spatial gradients (each shaped phys.shape) of the components, or
        None when the components do not move with the mesh (constant fields
        and element-attached discrete fields)."""
        return None

    def _clamp_rho(self, rho):
        return np.clip(rho, 1.0 / self.rho_max, self.rho_max)


class AnalyticTarget(TargetSpec):
    """Components given as functions of the physical point."""

    def __init__(self, kind, zeta_fn, rho_fn=None, phi_fn=None, weight_fn=None,
                 constant=False, rho_max=8.0, params=None):
        self.kind = kind
        self.zeta_fn = zeta_fn
        self.rho_fn = rho_fn
        self.phi_fn = phi_fn
        self.weight_fn = weight_fn
        self.constant = constant
        self.rho_max = rho_max
        self.params = dict(params or {})

    def _eval(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        zeta = np.broadcast_to(np.asarray(self.zeta_fn(x, y), float), x.shape)
        rho = (
            np.broadcast_to(np.asarray(self.rho_fn(x, y), float), x.shape)
            if self.rho_fn
            else np.ones_like(x)
        )
        phi = (
            np.broadcast_to(np.asarray(self.phi_fn(x, y), float), x.shape)
            if self.phi_fn
            else np.full_like(x, 0.5 * np.pi)
        )
        c = (
            np.broadcast_to(np.asarray(self.weight_fn(x, y), float), x.shape)
            if self.weight_fn
            else np.ones_like(x)
        )
        return zeta, self._clamp_rho(rho), phi, c

    def components(self, mesh, elem_ids, ref_pts, phys):
        zeta, rho, phi, c = self._eval(np.asarray(phys, float))
        if np.any(zeta <= 0.0):
            raise TargetError("size target zeta must be positive everywhere")
        return zeta, rho, phi, c

    def component_gradients(self, mesh, elem_ids, ref_pts, phys):
        if self.constant:
            return None
        phys = np.asarray(phys, float)
        grads = []
        for d in range(2):
            shift = np.zeros(2)
            shift[d] = FD_STEP
            up = self._eval(phys + shift)
            dn = self._eval(phys - shift)
            grads.append([(u - v) / (2 * FD_STEP) for u, v in zip(up, dn)])
        # per-component (..., 2) spatial gradients: zeta, rho, phi, c
        return [np.stack([grads[0][i], grads[1][i]], axis=-1) for i in range(4)]


class DiscreteField:
    """Per-element nodal values of a scalar field, inherited through
    refinement by nodal interpolation (children sample the parent's
    polynomial exactly)."""

    def __init__(self, mesh, values_by_elem):
        self.mesh = mesh
        self.values = {eid: np.asarray(v, float) for eid, v in values_by_elem.items()}

    @classmethod
    def from_function(cls, mesh, fn):
        vals = {}
        for eid in mesh.active_ids:
            X = mesh.element_nodes(eid)
            vals[eid] = np.asarray(fn(X[:, 0], X[:, 1]), float)
        return cls(mesh, vals)

    def get(self, eid):
        if eid in self.values:
            return self.values[eid]
        el = self.mesh.elems[eid]
        if el.parent < 0:
            raise KeyError(f"no field data for root element {eid}")
        from .refelem import child_embeddings

        parent_vals = self.get(el.parent)
        emb = child_embeddings(self.mesh.kind, el.gamma)[el.child_slot]
        vals = interpolation_matrix(self.mesh.ref, emb) @ parent_vals
        self.values[eid] = vals
        return vals

    def at(self, elem_ids, ref_pts):
        """Field values at reference points of the given elements.

        ref_pts is (Nq, 2) shared across elements or (NE, Nq, 2).
        """
        ref = self.mesh.ref
        if np.ndim(ref_pts) == 2:
            vals, _ = ref.eval(ref_pts)
            data = np.array([self.get(e) for e in elem_ids])
            return data @ vals.T
        out = np.empty(np.shape(ref_pts)[:-1])
        for i, eid in enumerate(elem_ids):
            vals, _ = ref.eval(ref_pts[i])
            out[i] = vals @ self.get(eid)
        return out


class DiscreteFieldTarget(TargetSpec):
    """Targets driven by a discrete field attached to the mesh elements;
    the field rides with the mesh, so components have no spatial gradient
    under node movement, and children inherit values by interpolation."""

    kind = DISCRETE_FIELD

    def __init__(self, field: DiscreteField, zeta_of=None, rho_of=None, rho_max=8.0):
        self.field = field
        self.zeta_of = zeta_of or (lambda v: v)
        self.rho_of = rho_of
        self.rho_max = rho_max

    def components(self, mesh, elem_ids, ref_pts, phys):
        v = self.field.at(elem_ids, ref_pts)
        zeta = np.asarray(self.zeta_of(v), float)
        if np.any(zeta <= 0.0):
            raise TargetError("size target zeta must be positive everywhere")
        rho = self._clamp_rho(np.asarray(self.rho_of(v), float)) if self.rho_of else np.ones_like(zeta)
        phi = np.full_like(zeta, 0.5 * np.pi)
        return zeta, rho, phi, np.ones_like(zeta)


# -- shipped target constructors ---------------------------------------------


def ideal_uniform(mesh) -> AnalyticTarget:
    """Uniform ideal target: right-angle, unit aspect, size = |domain| divided
    over the current element count (scaled so det T = 1 on the matching
    uniform mesh for either element kind)."""
    zeta = mesh.total_area() / (mesh.n_active * REFERENCE_MEASURE[mesh.kind])
    return AnalyticTarget(
        IDEAL_UNIFORM,
        lambda x, y: np.full_like(np.asarray(x, float), zeta),
        constant=True,
        params={"zeta": zeta},
    )


def size_band_eta(x, y, center, beta):
    r = np.hypot(np.asarray(x, float) - center[0], np.asarray(y, float) - center[1])
    eta = np.tanh(beta * (r - 0.2)) - np.tanh(beta * (r - 0.3))
    # the raw expression exceeds [0, 1] between the fronts for large beta
    return np.clip(eta, 0.0, 1.0)


def analytic_size(center=(0.5, 0.5), beta=30.0, delta=0.001, psi=10.0) -> AnalyticTarget:
    """Annulus size target: small elements (delta) inside the band, psi-times
    larger outside, with tanh fronts of sharpness beta."""

    def zeta(x, y):
        eta = size_band_eta(x, y, center, beta)
        return eta * delta + (1.0 - eta) * psi * delta

    return AnalyticTarget(
        ANALYTIC_SIZE, zeta, params={"beta": beta, "delta": delta, "psi": psi, "center": center}
    )


def analytic_shape_size(
    center=(0.5, 0.5), beta=30.0, delta=0.001, psi=10.0, rho_band=3.0
) -> AnalyticTarget:
    """Same size band, plus an angle-dependent aspect-ratio target inside it."""
    base = analytic_size(center, beta, delta, psi)

    def rho(x, y):
        eta = size_band_eta(x, y, center, beta)
        theta = np.arctan2(np.asarray(y, float) - center[1], np.asarray(x, float) - center[0])
        return rho_band ** (eta * np.sin(2.0 * theta))

    return AnalyticTarget(
        ANALYTIC_SHAPE_SIZE,
        base.zeta_fn,
        rho_fn=rho,
        params={**base.params, "rho_band": rho_band},
    )


def poisson_gradient(exact, mesh, rho_max=8.0, eps_rho=1e-8, degree=None) -> AnalyticTarget:
    """Size/aspect targets from the gradient of a known solution.

    Raw size s(x) = 1/(1 + |grad u|) is normalized so that its integral in
    reference measure over the sampling mesh equals the domain area (a mesh
    matching the target pointwise then has det A = zeta everywhere); the
    aspect target is the symmetric-clamped ratio of gradient components.
    """
    from .refelem import default_objective_degree

    rule = quadrature_for(mesh.kind, degree or default_objective_degree(mesh.order))
    ids = mesh.active_ids
    X = mesh.node_positions[mesh.dof_matrix(ids)]
    vals, _ = mesh.ref.eval(rule.points)
    phys = np.einsum("enr,qn->eqr", X, vals)

    def raw_size(x, y):
        gx, gy = exact.grad(x, y)
        return 1.0 / (1.0 + np.hypot(gx, gy))

    sampled = raw_size(phys[..., 0], phys[..., 1])
    norm = mesh.total_area() / float((sampled @ rule.weights).sum())

    def zeta(x, y):
        return norm * raw_size(x, y)

    def rho(x, y):
        gx, gy = exact.grad(x, y)
        return np.maximum(np.abs(gx), eps_rho) / np.maximum(np.abs(gy), eps_rho)

    return AnalyticTarget(
        POISSON_GRADIENT,
        zeta,
        rho_fn=rho,
        rho_max=rho_max,
        params={"normalization": norm, "eps_rho": eps_rho, "rho_max": rho_max},
    )


# -- W assembly (vectorized + scalar API) --------------------------------------


def assemble_W(zeta, rho, phi):
    """Stacked W, det W, and W^{-1} from component arrays."""
    zeta = np.asarray(zeta, float)
    if np.any(zeta <= 0.0):
        raise TargetError("size target zeta must be positive everywhere")
    sr = np.sqrt(np.asarray(rho, float))
    sz = np.sqrt(zeta)
    W = np.zeros(zeta.shape + (2, 2))
    W[..., 0, 0] = sz / sr
    W[..., 0, 1] = sz * sr * np.cos(phi)
    W[..., 1, 1] = sz * sr * np.sin(phi)
    detW = W[..., 0, 0] * W[..., 1, 1]
    Winv = np.zeros_like(W)
    Winv[..., 0, 0] = W[..., 1, 1] / detW
    Winv[..., 0, 1] = -W[..., 0, 1] / detW
    Winv[..., 1, 1] = W[..., 0, 0] / detW
    return W, detW, Winv


def assemble_W_partials(W, zeta, rho, phi):
    """dW/dzeta, dW/drho, dW/dphi and d(detW)/d(zeta,phi) for the chain rule."""
    Wz = W / (2.0 * zeta[..., None, None])
    Wr = np.zeros_like(W)
    Wr[..., 0, 0] = -W[..., 0, 0] / (2.0 * rho)
    Wr[..., 0, 1] = W[..., 0, 1] / (2.0 * rho)
    Wr[..., 1, 1] = W[..., 1, 1] / (2.0 * rho)
    Wp = np.zeros_like(W)
    Wp[..., 0, 1] = -W[..., 1, 1]
    Wp[..., 1, 1] = W[..., 0, 1]
    ddet_dzeta = np.sin(phi)
    ddet_dphi = zeta * np.cos(phi)
    return Wz, Wr, Wp, ddet_dzeta, ddet_dphi


class TargetMatrix:
    """Target Jacobian at one evaluation point."""

    def __init__(self, W, detW):
        self.W = W
        self.detW = detW


def build_W(spec: TargetSpec, x) -> TargetMatrix:
    """Evaluate the target Jacobian of an analytic spec at one physical point."""
    pt = np.asarray(x, float).reshape(1, 2)
    zeta, rho, phi, _ = spec.components(None, None, None, pt)
    W, detW, _ = assemble_W(zeta, rho, phi)
    return TargetMatrix(W[0], float(detW[0]))
