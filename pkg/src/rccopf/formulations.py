"""Deterministic, chance-constrained and robust chance-constrained DC OPF models.

Builders return an :class:`OpfModel`: a convex QP skeleton (diagonal
quadratic objective, linear equalities, bounds) plus the list of Gaussian
chance constraints that the solvers enforce either by cutting planes or by
a direct second-order cone reformulation. Everything inside the model is in
per-unit; :meth:`OpfModel.solution` converts back to MW.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .gauss import AffineGaussianConstraint, GaussianSpec, inv_norm_cdf
from .grid import (
    CaseError,
    GridCase,
    NetworkSensitivities,
    build_admittance,
    reduce_and_factor,
)
from .uncertainty import WindUncertainty, worst_case_scalar_omega

logger = logging.getLogger(__name__)

Mode = Literal["deterministic", "cc", "rcc"]

DEFAULT_EPS_GEN = 1 / 6
DEFAULT_EPS_LINE = 0.0025
DEFAULT_GAMMA = 0.6
DETERMINISTIC_ALPHA = 0.05


@dataclass(frozen=True)
class DecisionLayout:
    """Position of every decision variable in the flat vector ``z``.

    ``p_idx``/``alpha_idx`` hold -1 where the generator's value is fixed
    (non-dispatchable output, pinned or absent participation).
    """

    n: int
    p_idx: np.ndarray
    alpha_idx: np.ndarray
    theta: slice
    delta: slice | None
    flow: slice
    reference: int
    names: tuple[str, ...] = ()


@dataclass(frozen=True)
class DispatchSolution:
    p: np.ndarray  # MW, per generator
    alpha: np.ndarray  # per generator
    theta: np.ndarray  # rad, per bus
    delta: np.ndarray  # per bus
    flows: np.ndarray  # MW, per line
    objective: float  # $ (expected hourly cost)
    z: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, case: GridCase) -> dict:
        return {
            "objective": self.objective,
            "generators": [
                {"id": g.id, "p": float(p), "alpha": float(a)}
                for g, p, a in zip(case.generators, self.p, self.alpha)
            ],
            "buses": [
                {"id": b.id, "theta": float(t), "delta": float(d)}
                for b, t, d in zip(case.buses, self.theta, self.delta)
            ],
            "lines": [{"id": ln.id, "flow": float(f)} for ln, f in zip(case.lines, self.flows)],
            "diagnostics": self.diagnostics,
        }


@dataclass(eq=False)
class OpfModel:
    """Convex QP skeleton plus Gaussian chance constraints.

    Objective: ``sum(quad * z**2) + lin @ z + const``.
    """

    case: GridCase
    mode: Mode
    layout: DecisionLayout
    quad: np.ndarray
    lin: np.ndarray
    const: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    chance: list[AffineGaussianConstraint]
    spec: GaussianSpec | None = None
    uncertainty: WindUncertainty | None = None  # per-unit
    kappas: np.ndarray | None = None  # M + q sqrt(V) per scalar-omega constraint
    sens: NetworkSensitivities | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def robust(self) -> bool:
        return self.mode == "rcc"

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.quad @ (z * z) + self.lin @ z + self.const)

    def scalar_rows(self) -> tuple[list[int], sp.csr_matrix, np.ndarray]:
        """Pre-resolved linear rows for every scalar-omega chance constraint."""
        which, rows, cols, vals, rhs = [], [], [], [], []
        for k, c in enumerate(self.chance):
            if not c.scalar_omega:
                continue
            coef, b = c.scalar_linear_form(self.kappas[k])
            r = len(which)
            which.append(k)
            rows += [r] * len(coef)
            cols += c.var_idx.tolist()
            vals += coef.tolist()
            rhs.append(b)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(which), self.n))
        return which, A, np.array(rhs)

    def solution(self, z: np.ndarray, diagnostics: dict | None = None) -> DispatchSolution:
        case, lay = self.case, self.layout
        base = case.base_mva
        z = np.asarray(z, dtype=float)
        p = np.zeros(len(case.generators))
        alpha = np.zeros(len(case.generators))
        for k, g in enumerate(case.generators):
            if not g.committed:
                continue
            p[k] = z[lay.p_idx[k]] * base if lay.p_idx[k] >= 0 else _fixed_p(g)
            if lay.alpha_idx[k] >= 0:
                alpha[k] = z[lay.alpha_idx[k]]
            elif self.mode != "deterministic" and g.alpha_fixed is not None:
                alpha[k] = g.alpha_fixed
        theta = z[lay.theta].copy()
        delta = z[lay.delta].copy() if lay.delta is not None else np.zeros(case.n_buses)
        flows = z[lay.flow] * base
        return DispatchSolution(p, alpha, theta, delta, flows, self.objective(z), z.copy(),
                                dict(diagnostics or {}))


def _fixed_p(g) -> float:
    return float(g.p_fixed if not g.dispatchable else 0.0)


def with_eps(case: GridCase, eps_gen: float | None = None, eps_line: float | None = None) -> GridCase:
    """Override every generator and/or line risk level."""
    gens = case.generators
    lines = case.lines
    if eps_gen is not None:
        gens = tuple(replace(g, eps=float(eps_gen)) for g in gens)
    if eps_line is not None:
        lines = tuple(replace(ln, eps=float(eps_line)) for ln in lines)
    return replace(case, generators=gens, lines=lines)


class _Builder:
    def __init__(self, case: GridCase, mode: Mode, fix_reference_alpha: bool,
                 sens: NetworkSensitivities | None):
        case.validate()
        self.case = case
        self.mode = mode
        self.base = case.base_mva
        self.bidx = case.bus_index
        self.ref = self.bidx[case.reference_bus]
        self.fix_reference_alpha = fix_reference_alpha
        self.B = build_admittance(case)
        self.sens = sens
        self._layout()

    def _layout(self):
        case, mode = self.case, self.mode
        names: list[str] = []
        ng = len(case.generators)
        p_idx = np.full(ng, -1, dtype=np.int64)
        alpha_idx = np.full(ng, -1, dtype=np.int64)
        for k, g in enumerate(case.generators):
            if g.committed and g.dispatchable:
                p_idx[k] = len(names)
                names.append(f"p[{g.id}]")
        if mode != "deterministic":
            groups: dict[str, int] = {}
            for k, g in enumerate(case.generators):
                if not g.committed or g.alpha_fixed is not None:
                    continue
                if g.alpha_group is not None:
                    if g.alpha_group not in groups:
                        groups[g.alpha_group] = len(names)
                        names.append(f"alpha[{g.alpha_group}]")
                    alpha_idx[k] = groups[g.alpha_group]
                else:
                    alpha_idx[k] = len(names)
                    names.append(f"alpha[{g.id}]")
        nb, nl = case.n_buses, len(case.lines)
        theta = slice(len(names), len(names) + nb)
        names += [f"theta[{b.id}]" for b in case.buses]
        delta = None
        if mode != "deterministic":
            delta = slice(len(names), len(names) + nb)
            names += [f"delta[{b.id}]" for b in case.buses]
        flow = slice(len(names), len(names) + nl)
        names += [f"f[{ln.id}]" for ln in case.lines]
        self.layout = DecisionLayout(len(names), p_idx, alpha_idx, theta, delta, flow,
                                     self.ref, tuple(names))

    def build(self, spec: GaussianSpec | None, u: WindUncertainty | None) -> OpfModel:
        case, lay, base = self.case, self.layout, self.base
        n = lay.n
        quad = np.zeros(n)
        lin = np.zeros(n)
        const = 0.0
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        var_omega = float(spec.var.sum()) if spec is not None else 0.0

        fixed_inj = np.zeros(case.n_buses)  # p.u.
        fixed_alpha = np.zeros(case.n_buses)
        alpha_sum_const = 0.0
        for k, g in enumerate(case.generators):
            if not g.committed:
                continue
            j = lay.p_idx[k]
            if j >= 0:
                quad[j] += g.c2 * base**2
                lin[j] += g.c1 * base
                lb[j] = g.pmin / base
                ub[j] = g.pmax / base
            else:
                pf = _fixed_p(g)
                const += g.c2 * pf**2 + g.c1 * pf
                fixed_inj[self.bidx[g.bus]] += pf / base
            if self.mode == "deterministic":
                continue
            a = lay.alpha_idx[k]
            if a >= 0:
                quad[a] += g.c2 * var_omega * base**2
                lb[a] = 0.0
                ub[a] = 1.0
            elif g.alpha_fixed is not None:
                const += g.c2 * var_omega * base**2 * g.alpha_fixed**2
                fixed_alpha[self.bidx[g.bus]] += g.alpha_fixed
                alpha_sum_const += g.alpha_fixed

        wind = np.zeros(case.n_buses)
        for w in case.wind_farms:
            wind[self.bidx[w.bus]] += w.forecast / base
        demand = case.demand / base

        eq_rows: list[sp.spmatrix] = []
        eq_rhs: list[np.ndarray] = []
        nb = case.n_buses
        # nodal balance: B theta - p = fixed + wind - demand
        gen_rows = [self.bidx[g.bus] for k, g in enumerate(case.generators)
                    if g.committed and lay.p_idx[k] >= 0]
        gen_cols = [lay.p_idx[k] for k, g in enumerate(case.generators)
                    if g.committed and lay.p_idx[k] >= 0]
        G = _place(self.B, n, lay.theta.start) - sp.csr_matrix(
            (np.ones(len(gen_rows)), (gen_rows, gen_cols)), shape=(nb, n))
        eq_rows.append(G.tocsr())
        eq_rhs.append(fixed_inj + wind - demand)
        eq_rows.append(_unit_row(n, lay.theta.start + self.ref))
        eq_rhs.append(np.zeros(1))
        # flow definition: f - beta (theta_m - theta_n) = 0
        nl = len(case.lines)
        r_ = np.arange(nl)
        beta = np.array([ln.susceptance for ln in case.lines])
        fr = np.array([self.bidx[ln.from_bus] for ln in case.lines], dtype=np.int64)
        to = np.array([self.bidx[ln.to_bus] for ln in case.lines], dtype=np.int64)
        K = sp.csr_matrix(
            (np.concatenate([np.ones(nl), -beta, beta]),
             (np.concatenate([r_, r_, r_]),
              np.concatenate([lay.flow.start + r_, lay.theta.start + fr, lay.theta.start + to]))),
            shape=(nl, n))
        eq_rows.append(K)
        eq_rhs.append(np.zeros(nl))
        for r, ln in enumerate(case.lines):
            cap = ln.capacity / base
            lb[lay.flow.start + r] = -cap
            ub[lay.flow.start + r] = cap

        chance: list[AffineGaussianConstraint] = []
        kappas: list[float] = []
        if self.mode != "deterministic":
            self._response_equalities(eq_rows, eq_rhs, fixed_alpha, alpha_sum_const)
            if spec.mean.size != len(case.wind_farms):
                raise CaseError("Gaussian spec must have one entry per wind farm")
            if u is not None:
                min_mean, max_var = worst_case_scalar_omega(u)
                total_mean = -min_mean
            else:
                total_mean, max_var = 0.0, var_omega
            chance, kappas = self._chance_constraints(total_mean, max_var)

        A_eq = sp.vstack(eq_rows).tocsr()
        b_eq = np.concatenate(eq_rhs)
        return OpfModel(
            case=case, mode=self.mode, layout=lay, quad=quad, lin=lin, const=const,
            A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub, chance=chance, spec=spec,
            uncertainty=u, kappas=np.array(kappas), sens=self.sens,
        )

    def _response_equalities(self, eq_rows, eq_rhs, fixed_alpha, alpha_sum_const):
        case, lay, n = self.case, self.layout, self.layout.n
        nb = case.n_buses
        keep = [b for b in range(nb) if b != self.ref]
        # B_hat delta - alpha_b = fixed alpha at b (non-reference buses)
        rows = [self.bidx[g.bus] for k, g in enumerate(case.generators)
                if g.committed and lay.alpha_idx[k] >= 0]
        cols = [lay.alpha_idx[k] for k, g in enumerate(case.generators)
                if g.committed and lay.alpha_idx[k] >= 0]
        D = _place(self.B, n, lay.delta.start) - sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(nb, n))
        D = D.tocsr()[keep]
        # the reference column is pinned to zero below, so the coupling vanishes
        eq_rows.append(D)
        eq_rhs.append(fixed_alpha[keep])
        eq_rows.append(_unit_row(n, lay.delta.start + self.ref))
        eq_rhs.append(np.zeros(1))
        S = sp.lil_matrix((1, n))
        R = sp.lil_matrix((1, n))
        at_ref = False
        ref_const = 0.0
        for k, g in enumerate(case.generators):
            if not g.committed:
                continue
            a = lay.alpha_idx[k]
            on_ref = self.bidx[g.bus] == self.ref
            if a >= 0:
                S[0, a] += 1.0
                if on_ref:
                    R[0, a] += 1.0
                    at_ref = True
            elif on_ref and g.alpha_fixed:
                ref_const += g.alpha_fixed
        if S.nnz == 0 and abs(alpha_sum_const - 1.0) > 1e-12:
            raise CaseError("no participation variables and fixed factors do not sum to one")
        eq_rows.append(S.tocsr())
        eq_rhs.append(np.array([1.0 - alpha_sum_const]))
        if self.fix_reference_alpha:
            if ref_const > 0:
                raise CaseError("a reference-bus generator has a fixed nonzero participation factor")
            if at_ref:
                eq_rows.append(R.tocsr())
                eq_rhs.append(np.zeros(1))

    def _chance_constraints(self, total_mean: float, max_var: float):
        case, lay, base = self.case, self.layout, self.base
        nw = len(case.wind_farms)
        ones = np.ones((nw, 1))
        out: list[AffineGaussianConstraint] = []
        kappas: list[float] = []
        sd = math.sqrt(max(max_var, 0.0))

        def add(c: AffineGaussianConstraint):
            out.append(c)
            kappas.append(total_mean + inv_norm_cdf(1.0 - c.eps) * sd if c.scalar_omega else 0.0)

        for k, g in enumerate(case.generators):
            if not g.committed:
                continue
            j, a = lay.p_idx[k], lay.alpha_idx[k]
            if a < 0 and j < 0:
                self._check_constant_generator(g)
                continue
            # output limits: p - Omega alpha <= pmax and -p + Omega alpha <= -pmin
            pconst = 0.0 if j >= 0 else _fixed_p(g) / base
            afix = 0.0 if a >= 0 else float(g.alpha_fixed or 0.0)
            idx, det = [], []
            if j >= 0:
                idx.append(j)
                det.append(1.0)
            aidx = [a] if a >= 0 else []
            for sign, bound, tag in (
                (1.0, g.pmax / base - pconst, "pmax"),
                (-1.0, -g.pmin / base + pconst, "pmin"),
            ):
                var_idx = idx + aidx
                dcoef = [sign * d for d in det] + [0.0] * len(aidx)
                ocoef = np.zeros((nw, len(var_idx)))
                if aidx:
                    ocoef[:, -1] = -sign
                add(AffineGaussianConstraint(
                    var_idx, dcoef, ocoef, (-sign * afix) * np.ones(nw), bound, g.eps,
                    name=f"gen{g.id}:{tag}", family="gen", scalar_omega=True,
                ))
            # ramp limits on the response: -Omega alpha <= RU, Omega alpha <= RD
            for sign, bound, tag in ((-1.0, g.ramp_up / base, "ramp_up"),
                                     (1.0, g.ramp_down / base, "ramp_down")):
                if not aidx:
                    if afix == 0.0:
                        continue
                    ocoef = np.zeros((nw, 0))
                else:
                    ocoef = sign * ones
                add(AffineGaussianConstraint(
                    aidx, np.zeros(len(aidx)), ocoef, sign * afix * np.ones(nw), bound, g.eps,
                    name=f"gen{g.id}:{tag}", family="gen", scalar_omega=True,
                ))

        monitored = set(case.line_ids_monitored())
        lines = [(r, ln) for r, ln in enumerate(case.lines) if ln.id in monitored]
        if lines and nw:
            if self.sens is None:
                self.sens = reduce_and_factor(self.B, self.ref)
            wpos = [self.bidx[w.bus] for w in case.wind_farms]
            X = self.sens.pi_columns(wpos)  # X[m, b] = pi_m at wind bus b
        for r, ln in lines:
            m, k = self.bidx[ln.from_bus], self.bidx[ln.to_bus]
            beta = ln.susceptance
            fj = lay.flow.start + r
            dm, dn = lay.delta.start + m, lay.delta.start + k
            if nw:
                # xi_b = beta (delta_n - delta_m) + beta (pi_m - pi_n)_b
                base_coef = np.tile([0.0, beta, -beta], (nw, 1))
                const = beta * (X[m] - X[k])
            else:
                base_coef = np.zeros((0, 3))
                const = np.zeros(0)
            cap = ln.capacity / base
            for sign, tag in ((1.0, "upper"), (-1.0, "lower")):
                add(AffineGaussianConstraint(
                    [fj, dn, dm], [sign, 0.0, 0.0], sign * base_coef, sign * const, cap, ln.eps,
                    name=f"line{ln.id}:{tag}", family="line",
                ))
        return out, kappas

    def _check_constant_generator(self, g):
        pf = _fixed_p(g)
        if not g.pmin - 1e-9 <= pf <= g.pmax + 1e-9:
            logger.warning("generator %s: fixed output %.3f outside [%.3f, %.3f]",
                           g.id, pf, g.pmin, g.pmax)


def _place(block: sp.spmatrix, n: int, col_start: int) -> sp.csr_matrix:
    """Embed ``block`` into an ``n``-column matrix starting at ``col_start``."""
    block = sp.coo_matrix(block)
    return sp.csr_matrix((block.data, (block.row, block.col + col_start)),
                         shape=(block.shape[0], n))


def _unit_row(n: int, j: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0], ([0], [j])), shape=(1, n))


def build_deterministic(case: GridCase) -> OpfModel:
    """Single-period DC OPF on the central wind forecast (no participation factors)."""
    return _Builder(case, "deterministic", True, None).build(None, None)


def build_cc(
    case: GridCase,
    spec: GaussianSpec,
    fix_reference_alpha: bool = True,
    sens: NetworkSensitivities | None = None,
) -> OpfModel:
    """Chance-constrained OPF with the expected-cost objective.

    Generator output and ramp constraints carry the scalar-omega structure
    (one participation factor times the total deviation); line constraints
    carry a per-wind-bus coefficient vector.
    """
    if spec is None:
        raise CaseError("chance-constrained model needs a Gaussian spec in per-unit")
    return _Builder(case, "cc", fix_reference_alpha, sens).build(spec, None)


def build_rcc(
    case: GridCase,
    u: WindUncertainty,
    fix_reference_alpha: bool = True,
    sens: NetworkSensitivities | None = None,
) -> OpfModel:
    """Robust chance-constrained OPF over the budgeted parameter sets.

    ``u`` is in MW units. The objective keeps the nominal variance of the
    total deviation.
    """
    u_pu = u.scaled(case.base_mva)
    return _Builder(case, "rcc", fix_reference_alpha, sens).build(u_pu.nominal(), u_pu)


def build_model(
    case: GridCase,
    method: str,
    u: WindUncertainty | None = None,
    fix_reference_alpha: bool = True,
    sens: NetworkSensitivities | None = None,
) -> OpfModel:
    if method in ("det", "deterministic"):
        return build_deterministic(case)
    if u is None:
        raise CaseError(f"method {method!r} needs wind uncertainty data")
    if method == "cc":
        return build_cc(case, u.scaled(case.base_mva).nominal(), fix_reference_alpha, sens)
    if method == "rcc":
        return build_rcc(case, u, fix_reference_alpha, sens)
    raise ValueError(f"unknown method {method!r}")
