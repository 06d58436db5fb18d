"""Cutting-plane solution of (robust) chance-constrained OPF models.

The loop: solve the master relaxation, check every chance constraint at
the master point (under the nominal distribution, or its worst case over
the parameter sets), add one linearization per violated constraint, and
repeat until nothing is violated.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from ..formulations import DispatchSolution, OpfModel
from ..gauss import FEAS_TOL, AffineGaussianConstraint, SocCut, reformulate, soc_cut
from ..uncertainty import check_robust_feasibility
from .master import BACKENDS, MasterSolver, QPData, make_master

logger = logging.getLogger(__name__)

TERMINATION_REASONS = ("converged", "iteration-limit", "master-infeasible", "master-error")


@dataclass
class CuttingPlaneConfig:
    tol: float = FEAS_TOL
    max_iter: int = 200
    max_cuts_per_round: int | None = None  # None: one per violated constraint
    stall_tol: float | None = None
    stall_rounds: int = 5
    use_special_structure: bool = True
    backend: str = "clarabel"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.max_cuts_per_round is not None and self.max_cuts_per_round < 1:
            raise ValueError("max_cuts_per_round must be >= 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {sorted(BACKENDS)}")


@dataclass
class SolveDiagnostics:
    iterations: int = 0
    cuts_by_family: dict = field(default_factory=dict)
    wall_time: float = 0.0
    termination: str = "master-error"
    objective_history: list = field(default_factory=list)
    max_violation: float = float("nan")
    message: str = ""
    config: dict = field(default_factory=dict)
    cuts: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def total_cuts(self) -> int:
        return sum(self.cuts_by_family.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("cuts")
        d["total_cuts"] = self.total_cuts
        return d


class MasterInfeasibleError(RuntimeError):
    """The master relaxation has no feasible point; the model is infeasible."""

    def __init__(self, diagnostics: SolveDiagnostics, cuts: list[SocCut]):
        self.diagnostics = diagnostics
        self.cuts = cuts
        super().__init__(f"master problem infeasible after {len(cuts)} cuts "
                         f"({diagnostics.iterations} iterations)")


class MasterError(RuntimeError):
    def __init__(self, diagnostics: SolveDiagnostics):
        self.diagnostics = diagnostics
        super().__init__(f"master solver failed: {diagnostics.message}")


def base_qp(model: OpfModel) -> QPData:
    return QPData(model.quad, model.lin, model.const, model.A_eq, model.b_eq,
                  model.lb, model.ub)


def cuts_to_rows(cuts: list[SocCut], n: int) -> tuple[sp.csr_matrix, np.ndarray]:
    rows, cols, vals = [], [], []
    for r, c in enumerate(cuts):
        rows += [r] * c.var_idx.size
        cols += c.var_idx.tolist()
        vals += c.coef.tolist()
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(cuts), n))
    return A, np.array([c.rhs for c in cuts], dtype=float)


def constraint_violation(model: OpfModel, c: AffineGaussianConstraint, z: np.ndarray,
                         tol: float = FEAS_TOL):
    """(violation, spec used for the cut) under the model's robustness mode."""
    if model.robust:
        chk = check_robust_feasibility(c, model.uncertainty, z, tol)
        return chk.violation, chk.spec()
    value, _ = reformulate(c, model.spec, z)
    return value, model.spec


def separation_round(
    model: OpfModel,
    z: np.ndarray,
    constraints: list[int] | None = None,
    tol: float = FEAS_TOL,
    max_cuts: int | None = None,
) -> list[SocCut]:
    """One linearization per violated chance constraint at master point ``z``.

    Constraints that hold at ``z`` produce nothing. With ``max_cuts`` only the
    most violated constraints are cut.
    """
    if constraints is None:
        constraints = range(len(model.chance))
    found = []
    for k in constraints:
        c = model.chance[k]
        violation, spec = constraint_violation(model, c, z, tol)
        if violation > tol:
            found.append((violation, soc_cut(c, spec, z, tol)))
    if max_cuts is not None and len(found) > max_cuts:
        found.sort(key=lambda t: -t[0])
        found = found[:max_cuts]
    return [cut for _, cut in found]


def _max_violation(model: OpfModel, z: np.ndarray, constraints) -> float:
    worst = -np.inf
    for k in constraints:
        v, _ = constraint_violation(model, model.chance[k], z)
        worst = max(worst, v)
    return float(worst) if constraints else 0.0


def solve_cutting_plane(
    model: OpfModel,
    config: CuttingPlaneConfig | None = None,
    master: MasterSolver | None = None,
    initial_cuts: list[SocCut] | None = None,
) -> tuple[DispatchSolution, SolveDiagnostics]:
    """Solve ``model`` by outer approximation of its chance constraints.

    Returns the last master point; ``diagnostics.termination`` says whether
    it converged. Raises :class:`MasterInfeasibleError` if the relaxation is
    infeasible (so is the model, since every cut is valid).
    """
    config = config or CuttingPlaneConfig()
    master = master or make_master(config.backend)
    t0 = time.perf_counter()
    diag = SolveDiagnostics(config=asdict(config))

    master.load(base_qp(model))
    separate = list(range(len(model.chance)))
    if config.use_special_structure:
        which, A, b = model.scalar_rows()
        if which:
            master.add_linear(A, b)
        pre = set(which)
        separate = [k for k in separate if k not in pre]
    cuts: list[SocCut] = list(initial_cuts or [])
    if cuts:
        master.add_linear(*cuts_to_rows(cuts, model.n))

    z = None
    stall = 0
    while True:
        res = master.solve()
        diag.iterations += 1
        if res.status != "optimal":
            diag.wall_time = time.perf_counter() - t0
            diag.message = res.message
            if res.status == "infeasible":
                diag.termination = "master-infeasible"
                diag.cuts = cuts
                raise MasterInfeasibleError(diag, cuts)
            diag.termination = "master-error"
            raise MasterError(diag)
        z = res.x
        if diag.objective_history:
            change = res.objective - diag.objective_history[-1]
            if config.stall_tol is not None and abs(change) <= config.stall_tol:
                stall += 1
            else:
                stall = 0
        diag.objective_history.append(res.objective)

        new = separation_round(model, z, separate, config.tol, config.max_cuts_per_round)
        logger.debug("iteration %d: objective %.8g, %d cuts", diag.iterations, res.objective, len(new))
        if not new:
            diag.termination = "converged"
            break
        if diag.iterations >= config.max_iter or (config.stall_tol is not None
                                                  and stall >= config.stall_rounds):
            diag.termination = "iteration-limit"
            diag.message = "stalled" if diag.iterations < config.max_iter else ""
            break
        for c in new:
            diag.cuts_by_family[c.family] = diag.cuts_by_family.get(c.family, 0) + 1
        cuts.extend(new)
        master.add_linear(*cuts_to_rows(new, model.n))

    diag.cuts = cuts
    diag.max_violation = _max_violation(model, z, list(range(len(model.chance))))
    diag.wall_time = time.perf_counter() - t0
    if not diag.converged:
        logger.warning("cutting plane stopped without convergence after %d iterations "
                       "(max violation %.3g)", diag.iterations, diag.max_violation)
    return model.solution(z, diag.to_dict()), diag


def socp_data(model: OpfModel) -> QPData:
    """Conic reformulation: every chance constraint becomes one SOC block."""
    if model.robust:
        raise ValueError(
            "robust chance constraints have no compact conic reformulation; "
            "use solve_cutting_plane"
        )
    qp = base_qp(model)
    spec = model.spec
    sd = np.sqrt(spec.var) if spec is not None else None
    for c in model.chance:
        q = c.quantile
        k = c.var_idx.size
        # (b - det z - mu.xi(z), q sigma * xi(z)) in SOC
        head = c.det_coef + c.omega_coef.T @ spec.mean
        tail = -q * sd[:, None] * c.omega_coef
        local = np.vstack([head[None, :], tail]) if k else np.zeros((1 + sd.size, 0))
        rhs = np.concatenate([[c.bound - float(spec.mean @ c.omega_const)],
                              q * sd * c.omega_const])
        r, j = np.nonzero(local)
        A = sp.csr_matrix((local[r, j], (r, c.var_idx[j])), shape=(local.shape[0], model.n))
        qp.soc.append((A, rhs))
    return qp


def solve_socp_direct(model: OpfModel, master: MasterSolver | None = None) -> DispatchSolution:
    """Solve the nominal chance-constrained model as one second-order cone program."""
    qp = socp_data(model)
    master = master or make_master("clarabel")
    if not master.supports_soc:
        raise ValueError("direct SOCP solve needs a conic-capable backend")
    t0 = time.perf_counter()
    master.load(qp)
    res = master.solve()
    diag = {"iterations": 1, "wall_time": time.perf_counter() - t0, "message": res.message,
            "termination": {"optimal": "converged", "infeasible": "master-infeasible"}.get(
                res.status, "master-error")}
    if res.status == "infeasible":
        d = SolveDiagnostics(iterations=1, termination="master-infeasible", message=res.message)
        raise MasterInfeasibleError(d, [])
    if res.status != "optimal":
        raise MasterError(SolveDiagnostics(iterations=1, message=res.message))
    return model.solution(res.x, diag)
