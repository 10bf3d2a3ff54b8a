"""Node-movement optimization: limited-memory quasi-Newton descent on the
true DOFs with a validity-guarded backtracking line search.

Boundary handling: corner nodes are pinned, nodes on straight boundary
segments move only tangentially (their normal gradient component is zeroed).
Hanging DOFs are updated by prolongation after every accepted step, so
nonconforming interfaces stay glued throughout the solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMeshError, UsageError
from .objective import objective


@dataclass
class SolverConfig:
    eps: float = 1e-8  # stop when |grad| <= eps * |grad_0|
    max_iters: int = 200
    lbfgs_memory: int = 10
    ls_shrink: float = 0.5
    ls_max: int = 30
    method: str = "lbfgs"  # "lbfgs" | "gd"
    quad_degree: int | None = None

    def __post_init__(self):
        if self.eps <= 0 or self.max_iters < 1 or not 0 < self.ls_shrink < 1:
            raise UsageError("invalid solver configuration")


@dataclass
class SolveResult:
    iterations: int
    f_before: float
    f_after: float
    grad_norm: float
    converged: bool
    stop_reason: str
    min_tau_trace: list = field(default_factory=list)
    f_trace: list = field(default_factory=list)


class _BoundaryProjector:
    def __init__(self, mesh, cm):
        profile = mesh.boundary_profile()
        true_pos = {int(g): i for i, g in enumerate(cm.true_gids)}
        self.fixed = []
        tang_idx, tang_vec = [], []
        for gid, t in profile.items():
            i = true_pos.get(gid)
            if i is None:
                continue  # hanging DOFs never lie on the boundary
            if t is None:
                self.fixed.append(i)
            else:
                tang_idx.append(i)
                tang_vec.append(t)
        self.fixed = np.array(self.fixed, dtype=np.int64)
        self.tang_idx = np.array(tang_idx, dtype=np.int64)
        self.tang_vec = np.array(tang_vec) if tang_vec else np.zeros((0, 2))

    def __call__(self, g):
        g = g.copy()
        if len(self.fixed):
            g[self.fixed] = 0.0
        if len(self.tang_idx):
            t = self.tang_vec
            comp = (g[self.tang_idx] * t).sum(axis=1)
            g[self.tang_idx] = comp[:, None] * t
        return g


def _two_loop(g, memory):
    q = g.ravel().copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = memory[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q.reshape(g.shape)


def minimize(mesh, spec, metric_id, config: SolverConfig | None = None) -> SolveResult:
    """Minimize the quality objective over true node positions (in place)."""
    cfg = config or SolverConfig()
    cm = mesh.build_constraints()
    project = _BoundaryProjector(mesh, cm)

    def evaluate(x_true, want_grad):
        mesh.set_true_positions(cm, x_true)
        return objective(mesh, spec, metric_id, degree=cfg.quad_degree, want_grad=want_grad)

    x = mesh.node_positions[cm.true_gids].copy()
    rep = evaluate(x, want_grad=True)
    if rep.min_tau <= 0.0:
        raise InvalidMeshError(
            f"initial mesh is invalid (min det T = {rep.min_tau:.3e}); untangling is unsupported"
        )
    f = rep.f_total
    g = project(rep.grad_true)
    gnorm0 = float(np.linalg.norm(g))
    at_optimum = gnorm0 <= 1e-14 * max(1.0, abs(f))
    result = SolveResult(
        iterations=0,
        f_before=f,
        f_after=f,
        grad_norm=gnorm0,
        converged=at_optimum,
        stop_reason="already optimal" if at_optimum else "max iterations",
        min_tau_trace=[rep.min_tau],
        f_trace=[f],
    )
    if at_optimum:
        return result

    memory: list = []
    for it in range(1, cfg.max_iters + 1):
        if cfg.method == "lbfgs" and memory:
            d = _two_loop(g, memory)
        else:
            d = -g
        slope = float(np.dot(d.ravel(), g.ravel()))
        if slope >= 0.0:
            d = -g
            slope = -float(np.dot(g.ravel(), g.ravel()))
            memory.clear()

        step = 1.0
        accepted = None
        for _ in range(cfg.ls_max):
            x_new = x + step * d
            trial = evaluate(x_new, want_grad=False)
            if trial.min_tau > 0.0 and trial.f_total < f + 1e-4 * step * slope:
                accepted = (x_new, trial)
                break
            step *= cfg.ls_shrink
        if accepted is None:
            if memory:
                memory.clear()
                mesh.set_true_positions(cm, x)
                continue
            mesh.set_true_positions(cm, x)
            result.stop_reason = "line search failed"
            break

        x_new, trial = accepted
        rep_new = objective(mesh, spec, metric_id, degree=cfg.quad_degree, want_grad=True)
        g_new = project(rep_new.grad_true)
        s = (x_new - x).ravel()
        yv = (g_new - g).ravel()
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            memory.append((s, yv, 1.0 / sy))
            if len(memory) > cfg.lbfgs_memory:
                memory.pop(0)
        x, f, g = x_new, trial.f_total, g_new
        result.iterations = it
        result.min_tau_trace.append(trial.min_tau)
        result.f_trace.append(f)
        gnorm = float(np.linalg.norm(g))
        result.grad_norm = gnorm
        if gnorm <= cfg.eps * gnorm0:
            result.converged = True
            result.stop_reason = "gradient tolerance"
            break

    mesh.set_true_positions(cm, x)
    result.f_after = f
    return result
