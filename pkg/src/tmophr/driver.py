"""Outer hr loop: alternate node movement and refinement sweeps until a
sweep changes nothing, with per-iteration reporting and CSV serialization.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UsageError
from .estimator import apply_decisions
from .objective import objective
from .solver import SolverConfig, SolveResult, minimize
from .targets import TargetSpec

CSV_HEADER = ("iter", "phase", "F", "N_E", "N_dof", "N_R", "N_D", "min_tau")

MODES = ("hr", "h", "r")


@dataclass
class HrConfig:
    target: TargetSpec
    metric_r: int = 7
    metric_h: int = 55
    n_h: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_outer: int = 10
    theta: float = 0.0
    mode: str = "hr"
    quad_degree: int | None = None
    use_scaled: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        if self.n_h < 1 or self.max_outer < 1:
            raise UsageError("n_h and max_outer must be >= 1")


@dataclass
class IterationRecord:
    index: int
    f_before: float
    f_after_r: float
    f_after_h: float
    n_elements_r: int
    n_dofs_r: int
    n_elements: int
    n_dofs: int
    n_refined: int
    n_derefined: int
    n_closure: int
    min_tau_r: float
    min_tau_h: float
    solve: SolveResult | None


@dataclass
class RunReport:
    records: list
    terminated_by: str
    f_initial: float
    n_elements_initial: int
    n_dofs_initial: int
    min_tau_initial: float

    @property
    def f_final(self) -> float:
        return self.records[-1].f_after_h if self.records else self.f_initial

    def reduction(self) -> float:
        """Fractional drop of F from the initial mesh to the final one."""
        if self.f_initial == 0.0:
            return 0.0
        return 1.0 - self.f_final / self.f_initial

    def csv_rows(self):
        yield CSV_HEADER
        yield (0, "init", repr(self.f_initial), self.n_elements_initial,
               self.n_dofs_initial, 0, 0, repr(self.min_tau_initial))
        for r in self.records:
            yield (r.index, "r", repr(r.f_after_r), r.n_elements_r, r.n_dofs_r,
                   0, 0, repr(r.min_tau_r))
            yield (r.index, "h", repr(r.f_after_h), r.n_elements, r.n_dofs,
                   r.n_refined, r.n_derefined, repr(r.min_tau_h))

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())


def run_hr(mesh, config: HrConfig) -> RunReport:
    """Alternate r- and h-phases until no element is refined or derefined
    (or the outer cap is hit); the mesh is optimized in place."""
    spec = config.target
    rep0 = objective(mesh, spec, config.metric_r, degree=config.quad_degree, want_grad=False)
    report = RunReport(
        records=[],
        terminated_by="max-outer",
        f_initial=rep0.f_total,
        n_elements_initial=mesh.n_active,
        n_dofs_initial=mesh.build_constraints().n_true,
        min_tau_initial=rep0.min_tau,
    )
    for outer in range(1, config.max_outer + 1):
        rep_before = objective(mesh, spec, config.metric_r, degree=config.quad_degree, want_grad=False)
        solve = None
        if config.mode in ("r", "hr"):
            solve = minimize(mesh, spec, config.metric_r, config.solver)
            rep_r = objective(mesh, spec, config.metric_r, degree=config.quad_degree, want_grad=False)
        else:
            rep_r = rep_before
        n_e_r = mesh.n_active
        n_dof_r = mesh.build_constraints().n_true
        if config.mode in ("h", "hr"):
            n_r, n_d, n_c = apply_decisions(
                mesh,
                spec,
                config.metric_h,
                n_sweeps=config.n_h,
                theta=config.theta,
                degree=config.quad_degree,
                use_scaled=config.use_scaled,
            )
        else:
            n_r = n_d = n_c = 0
        rep_h = objective(mesh, spec, config.metric_r, degree=config.quad_degree, want_grad=False)
        report.records.append(
            IterationRecord(
                index=outer,
                f_before=rep_before.f_total,
                f_after_r=rep_r.f_total,
                f_after_h=rep_h.f_total,
                n_elements_r=n_e_r,
                n_dofs_r=n_dof_r,
                n_elements=mesh.n_active,
                n_dofs=mesh.build_constraints().n_true,
                n_refined=n_r,
                n_derefined=n_d,
                n_closure=n_c,
                min_tau_r=rep_r.min_tau,
                min_tau_h=rep_h.min_tau,
                solve=solve,
            )
        )
        if n_r == 0 and n_d == 0:
            report.terminated_by = "fixed-point"
            break
    return report
