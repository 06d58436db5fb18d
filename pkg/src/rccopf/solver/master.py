"""Master problem backends for the cutting-plane loop.

A backend loads a convex QP with a diagonal objective, accepts linear rows
incrementally, and re-solves. Backends advertise what they can do through
capability flags; the cutting-plane engine only needs ``add_linear`` and
``solve``.
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


@dataclass
class QPData:
    """``min sum(quad z^2) + lin z + const`` s.t. equalities, ``A_ub z <= b_ub``, bounds.

    ``soc`` holds conic blocks ``(A, b)`` meaning ``b - A z`` lies in a
    second-order cone (first entry is the norm bound).
    """

    quad: np.ndarray
    lin: np.ndarray
    const: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    soc: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.quad.size


@dataclass
class MasterResult:
    status: str  # optimal | infeasible | error
    x: np.ndarray | None
    objective: float
    message: str = ""


class MasterSolver(abc.ABC):
    supports_quadratic = True
    supports_soc = False
    supports_warm_start = False

    @abc.abstractmethod
    def load(self, qp: QPData) -> None: ...

    @abc.abstractmethod
    def add_linear(self, A: sp.spmatrix, b: np.ndarray) -> None: ...

    @abc.abstractmethod
    def solve(self) -> MasterResult: ...


class ClarabelMaster(MasterSolver):
    """Interior-point QP/SOCP backend. No warm start: every solve is cold."""

    supports_soc = True

    def __init__(self, **settings):
        import clarabel

        self._clarabel = clarabel
        self.settings = {"verbose": False, "tol_gap_abs": 1e-9, "tol_gap_rel": 1e-9,
                         "tol_feas": 1e-9, "max_iter": 500}
        self.settings.update(settings)
        self.qp: QPData | None = None
        self._cut_A: list[sp.csr_matrix] = []
        self._cut_b: list[np.ndarray] = []

    def load(self, qp: QPData) -> None:
        self.qp = qp
        self._cut_A, self._cut_b = [], []

    def add_linear(self, A, b) -> None:
        self._cut_A.append(sp.csr_matrix(A))
        self._cut_b.append(np.asarray(b, dtype=float))

    def _assemble(self):
        qp = self.qp
        n = qp.n
        cl = self._clarabel
        fixed = np.isfinite(qp.lb) & np.isfinite(qp.ub) & (qp.lb == qp.ub)
        eye = sp.identity(n, format="csr")
        zero_A = [qp.A_eq, eye[np.flatnonzero(fixed)]]
        zero_b = [qp.b_eq, qp.ub[fixed]]
        hi = np.isfinite(qp.ub) & ~fixed
        lo = np.isfinite(qp.lb) & ~fixed
        nn_A = [eye[np.flatnonzero(hi)], -eye[np.flatnonzero(lo)]]
        nn_b = [qp.ub[hi], -qp.lb[lo]]
        if qp.A_ub is not None and qp.A_ub.shape[0]:
            nn_A.append(qp.A_ub)
            nn_b.append(qp.b_ub)
        nn_A += self._cut_A
        nn_b += self._cut_b
        blocks_A = zero_A + nn_A
        blocks_b = zero_b + nn_b
        n_zero = sum(a.shape[0] for a in zero_A)
        n_nn = sum(a.shape[0] for a in nn_A)
        cones = [cl.ZeroConeT(n_zero), cl.NonnegativeConeT(n_nn)]
        for A, b in qp.soc:
            blocks_A.append(sp.csr_matrix(A))
            blocks_b.append(np.asarray(b, dtype=float))
            cones.append(cl.SecondOrderConeT(A.shape[0]))
        A = sp.vstack(blocks_A, format="csc")
        b = np.concatenate(blocks_b)
        P = sp.diags(2.0 * qp.quad, format="csc")
        return P, qp.lin.astype(float), A, b, cones

    def solve(self) -> MasterResult:
        cl = self._clarabel
        P, q, A, b, cones = self._assemble()
        settings = cl.DefaultSettings()
        for key, val in self.settings.items():
            setattr(settings, key, val)
        solver = cl.DefaultSolver(P, q, A, b, cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        if status in ("Solved", "AlmostSolved"):
            x = np.array(sol.x)
            obj = float(self.qp.quad @ (x * x) + self.qp.lin @ x + self.qp.const)
            return MasterResult("optimal", x, obj, status)
        if "Infeasible" in status and "Dual" not in status:
            return MasterResult("infeasible", None, np.nan, status)
        return MasterResult("error", None, np.nan, status)


class LinprogMaster(MasterSolver):
    """LP-only backend (HiGHS via scipy) with a piecewise-linear objective.

    Each quadratic term ``w z^2`` is replaced by an epigraph variable bounded
    below by tangents at ``segments + 1`` evenly spaced points across the
    variable's bounds, so the objective is underestimated by at most
    ``w (ub - lb)^2 / (4 segments^2)`` per term.
    """

    supports_quadratic = False

    def __init__(self, segments: int = 20):
        if segments < 1:
            raise ValueError("segments must be >= 1")
        self.segments = segments
        self.qp: QPData | None = None
        self._cut_A: list[sp.csr_matrix] = []
        self._cut_b: list[np.ndarray] = []

    def load(self, qp: QPData) -> None:
        if qp.soc:
            raise ValueError("LP backend cannot handle conic blocks")
        quad_j = np.flatnonzero(qp.quad > 0)
        if not np.all(np.isfinite(qp.lb[quad_j]) & np.isfinite(qp.ub[quad_j])):
            raise ValueError("piecewise-linear objective needs finite bounds on quadratic terms")
        self.qp = qp
        self._quad_j = quad_j
        self._cut_A, self._cut_b = [], []

    def add_linear(self, A, b) -> None:
        self._cut_A.append(sp.csr_matrix(A))
        self._cut_b.append(np.asarray(b, dtype=float))

    def solve(self) -> MasterResult:
        from scipy.optimize import linprog

        qp = self.qp
        n, nt = qp.n, self._quad_j.size
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for t, j in enumerate(self._quad_j):
            w = qp.quad[j]
            for a in np.linspace(qp.lb[j], qp.ub[j], self.segments + 1):
                # w (2 a z - a^2) <= t
                rows += [r, r]
                cols += [j, n + t]
                vals += [2 * w * a, -1.0]
                rhs.append(w * a * a)
                r += 1
        tangent = sp.csr_matrix((vals, (rows, cols)), shape=(r, n + nt))
        ub_blocks = [tangent]
        ub_rhs = [np.array(rhs)]
        extra = [qp.A_ub] if qp.A_ub is not None and qp.A_ub.shape[0] else []
        for A in extra + self._cut_A:
            ub_blocks.append(sp.hstack([A, sp.csr_matrix((A.shape[0], nt))]))
        ub_rhs += ([qp.b_ub] if extra else []) + self._cut_b
        A_ub = sp.vstack(ub_blocks, format="csr")
        A_eq = sp.hstack([qp.A_eq, sp.csr_matrix((qp.A_eq.shape[0], nt))], format="csr")
        c = np.concatenate([qp.lin, np.ones(nt)])
        bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
                  for lo, hi in zip(qp.lb, qp.ub)] + [(None, None)] * nt
        res = linprog(c, A_ub=A_ub, b_ub=np.concatenate(ub_rhs), A_eq=A_eq, b_eq=qp.b_eq,
                      bounds=bounds, method="highs")
        if res.status == 0:
            x = res.x[:n]
            obj = float(qp.quad @ (x * x) + qp.lin @ x + qp.const)
            return MasterResult("optimal", x, obj, res.message)
        if res.status == 2:
            return MasterResult("infeasible", None, np.nan, res.message)
        return MasterResult("error", None, np.nan, res.message)


BACKENDS = {"clarabel": ClarabelMaster, "linprog": LinprogMaster}


def make_master(name: str = "clarabel", **options) -> MasterSolver:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown master backend {name!r}; choose from {sorted(BACKENDS)}") from None
    return cls(**options)
