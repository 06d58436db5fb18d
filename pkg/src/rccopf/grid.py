"""Static network model, admittance matrix and DC sensitivities.

All network math runs in per-unit on the case base MVA. Powers cross the
module boundary in MW.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)


class CaseError(ValueError):
    """Raised when a grid case violates a structural invariant."""


class DanglingReferenceError(CaseError):
    """An element refers to a bus id that is not in the case."""

    def __init__(self, element: str, bus: int):
        self.element = element
        self.bus = bus
        super().__init__(f"{element} references missing bus {bus}")


class DisconnectedNetworkError(CaseError):
    """Raised when the network graph has more than one island."""

    def __init__(self, isolated: list[int]):
        self.isolated = isolated
        shown = ", ".join(str(b) for b in isolated[:20])
        more = "" if len(isolated) <= 20 else f" (+{len(isolated) - 20} more)"
        super().__init__(
            f"network is disconnected; buses not reachable from the reference bus: {shown}{more}"
        )


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float = 0.0  # MW
    is_reference: bool = False


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float  # per-unit
    capacity: float  # MW
    eps: float = 0.0025


@dataclass(frozen=True)
class Generator:
    """Controllable generator.

    ``dispatchable=False`` units run at ``p_fixed`` (hydro/nuclear policy);
    ``alpha_fixed`` pins the participation factor, and generators sharing an
    ``alpha_group`` label share a single participation variable.
    """

    id: int
    bus: int
    pmin: float
    pmax: float
    ramp_up: float
    ramp_down: float
    c1: float = 0.0  # $/MWh
    c2: float = 0.0  # $/MW^2h
    eps: float = 1 / 6
    dispatchable: bool = True
    p_fixed: float | None = None
    alpha_fixed: float | None = None
    alpha_group: str | None = None
    committed: bool = True


@dataclass(frozen=True)
class WindFarm:
    bus: int
    forecast: float  # MW


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    wind_farms: tuple[WindFarm, ...] = ()
    base_mva: float = 100.0
    monitored_lines: tuple[int, ...] | None = None
    name: str = "case"

    def __post_init__(self):
        for attr in ("buses", "lines", "generators", "wind_farms"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if self.monitored_lines is not None:
            object.__setattr__(self, "monitored_lines", tuple(self.monitored_lines))

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def reference_bus(self) -> int:
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise CaseError(f"expected exactly one reference bus, found {len(refs)}: {refs}")
        return refs[0]

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def demand(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=float)

    @property
    def wind_buses(self) -> list[int]:
        return [w.bus for w in self.wind_farms]

    @property
    def wind_forecast(self) -> np.ndarray:
        return np.array([w.forecast for w in self.wind_farms], dtype=float)

    def line_ids_monitored(self) -> list[int]:
        if self.monitored_lines is None:
            return [ln.id for ln in self.lines]
        return list(self.monitored_lines)

    def validate(self) -> None:
        """Check every structural invariant, raising :class:`CaseError`."""
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseError(f"duplicate bus ids: {dup}")
        _ = self.reference_bus
        known = self.bus_index
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise CaseError("duplicate line ids")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise DanglingReferenceError(f"line {ln.id}", end)
            if ln.from_bus == ln.to_bus:
                raise CaseError(f"line {ln.id} is a self-loop at bus {ln.from_bus}")
            if not ln.susceptance > 0:
                raise CaseError(f"line {ln.id}: susceptance must be positive")
            if not ln.capacity > 0:
                raise CaseError(f"line {ln.id}: capacity must be positive")
            if not 0 < ln.eps < 0.5:
                raise CaseError(f"line {ln.id}: eps must lie in (0, 0.5), got {ln.eps}")
        gen_ids = [g.id for g in self.generators]
        if len(set(gen_ids)) != len(gen_ids):
            raise CaseError("duplicate generator ids")
        for g in self.generators:
            if g.bus not in known:
                raise DanglingReferenceError(f"generator {g.id}", g.bus)
            if g.pmin > g.pmax:
                raise CaseError(f"generator {g.id}: pmin {g.pmin} > pmax {g.pmax}")
            if g.ramp_up < 0 or g.ramp_down < 0:
                raise CaseError(f"generator {g.id}: ramp limits must be nonnegative")
            if g.c2 < 0:
                raise CaseError(f"generator {g.id}: quadratic cost must be nonnegative (convexity)")
            if not 0 < g.eps < 0.5:
                raise CaseError(f"generator {g.id}: eps must lie in (0, 0.5), got {g.eps}")
            if not g.dispatchable and g.p_fixed is None:
                raise CaseError(f"generator {g.id}: non-dispatchable unit needs p_fixed")
            if g.alpha_fixed is not None and g.alpha_fixed < 0:
                raise CaseError(f"generator {g.id}: alpha_fixed must be nonnegative")
        seen = set()
        for w in self.wind_farms:
            if w.bus not in known:
                raise DanglingReferenceError("wind farm", w.bus)
            if w.bus in seen:
                raise CaseError(f"more than one wind farm record at bus {w.bus}")
            seen.add(w.bus)
        if self.monitored_lines is not None:
            missing = set(self.monitored_lines) - set(line_ids)
            if missing:
                raise CaseError(f"monitored lines not in case: {sorted(missing)}")
        check_connected(self)


def check_connected(case: GridCase) -> None:
    n = case.n_buses
    idx = case.bus_index
    rows = [idx[ln.from_bus] for ln in case.lines]
    cols = [idx[ln.to_bus] for ln in case.lines]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        ref_label = labels[idx[case.reference_bus]]
        isolated = [case.buses[k].id for k in range(n) if labels[k] != ref_label]
        raise DisconnectedNetworkError(isolated)


def build_admittance(case: GridCase) -> sp.csc_matrix:
    """Bus admittance (susceptance) matrix in per-unit.

    Off-diagonals are ``-beta`` and the diagonal holds the sum of incident
    susceptances, so every row sums to zero. Parallel circuits between the
    same pair of buses are summed.
    """
    n = case.n_buses
    idx = case.bus_index
    seen: dict[tuple[int, int], int] = {}
    rows, cols, vals = [], [], []
    for ln in case.lines:
        m, k = idx[ln.from_bus], idx[ln.to_bus]
        key = (min(m, k), max(m, k))
        if key in seen:
            warnings.warn(
                f"parallel lines {seen[key]} and {ln.id} between buses "
                f"{ln.from_bus}-{ln.to_bus}: susceptances summed",
                stacklevel=2,
            )
        else:
            seen[key] = ln.id
        b = ln.susceptance
        rows += [m, k, m, k]
        cols += [k, m, m, k]
        vals += [-b, -b, b, b]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


@dataclass(frozen=True, eq=False)
class NetworkSensitivities:
    """Factorized reduced admittance matrix and the rows of its inverse.

    ``pi_row(b)`` is the row of the inverse reduced matrix for bus ``b``,
    expanded to full bus length with a zero at the reference position; the
    reference row itself is all zeros. Rows are computed lazily and cached.
    """

    B: sp.csc_matrix
    ref: int  # position of the reference bus
    _lu: object = field(repr=False)
    _keep: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``B_hat x = rhs[non-ref]`` and return x on the full bus set (x_ref = 0)."""
        rhs = np.asarray(rhs, dtype=float)
        out = np.zeros(rhs.shape)
        if rhs.ndim == 1:
            out[self._keep] = self._lu.solve(rhs[self._keep])
        else:
            out[self._keep, :] = self._lu.solve(np.ascontiguousarray(rhs[self._keep, :]))
        return out

    def pi_row(self, b: int) -> np.ndarray:
        """Sensitivity row for bus position ``b`` (length n, zero at the reference)."""
        if b == self.ref:
            return np.zeros(self.n)
        row = self._cache.get(b)
        if row is None:
            e = np.zeros(self.n)
            e[b] = 1.0
            # B_hat is symmetric, so column b of its inverse equals row b
            row = self.solve_reduced(e)
            row.setflags(write=False)
            self._cache[b] = row
        return row

    def pi_columns(self, positions) -> np.ndarray:
        """Matrix X with ``X[m, k] = pi_m[positions[k]]`` for every bus m."""
        positions = list(positions)
        E = np.zeros((self.n, len(positions)))
        for k, b in enumerate(positions):
            if b != self.ref:
                E[b, k] = 1.0
        return self.solve_reduced(E)


def reduce_and_factor(B: sp.spmatrix, reference: int) -> NetworkSensitivities:
    """Remove the reference row/column and factorize the remainder once.

    ``reference`` is the bus *position* (0-based index into the bus list).
    """
    B = sp.csc_matrix(B)
    n = B.shape[0]
    keep = np.ones(n, dtype=bool)
    keep[reference] = False
    if n == 1:
        return NetworkSensitivities(B, reference, _EmptyLU(), keep)
    Bhat = B[keep][:, keep].tocsc()
    n_comp, labels = connected_components(abs(B), directed=False)
    if n_comp > 1:
        isolated = [k for k in range(n) if labels[k] != labels[reference]]
        raise DisconnectedNetworkError(isolated)
    try:
        lu = spla.splu(Bhat)
    except RuntimeError as exc:
        raise CaseError(f"reduced admittance matrix is singular: {exc}") from exc
    return NetworkSensitivities(B, reference, lu, keep)


class _EmptyLU:
    def solve(self, rhs):
        return np.zeros(np.shape(rhs))


def network_sensitivities(case: GridCase) -> NetworkSensitivities:
    return reduce_and_factor(build_admittance(case), case.bus_index[case.reference_bus])


def branch_matrix(case: GridCase) -> sp.csr_matrix:
    """Flow operator: ``f = K @ theta`` with ``f_mn = beta_mn (theta_m - theta_n)``."""
    idx = case.bus_index
    rows, cols, vals = [], [], []
    for k, ln in enumerate(case.lines):
        rows += [k, k]
        cols += [idx[ln.from_bus], idx[ln.to_bus]]
        vals += [ln.susceptance, -ln.susceptance]
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(case.lines), case.n_buses))


@dataclass
class PowerFlowResult:
    theta: np.ndarray  # rad
    flows: np.ndarray  # MW
    residual: float  # MW absorbed at the reference bus
    imbalanced: bool


def solve_dc_power_flow(
    case: GridCase,
    injections: np.ndarray,
    sens: NetworkSensitivities | None = None,
    balance_tol: float = 1e-6,
) -> PowerFlowResult:
    """DC power flow for net bus injections in MW (bus order of ``case.buses``).

    Any injection imbalance is absorbed by the reference bus and reported via
    ``residual`` / ``imbalanced`` rather than hidden.
    """
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (case.n_buses,):
        raise ValueError(f"expected {case.n_buses} injections, got {injections.shape}")
    if sens is None:
        sens = network_sensitivities(case)
    residual = float(injections.sum())
    scale = max(float(case.demand.sum()), 1.0)
    imbalanced = abs(residual) > balance_tol * scale
    if imbalanced:
        logger.debug("power-flow injections imbalanced by %.6g MW; absorbed at reference", residual)
    theta = sens.solve_reduced(injections / case.base_mva)
    flows = branch_matrix(case) @ theta * case.base_mva
    return PowerFlowResult(theta, flows, residual, imbalanced)


def participation_by_bus(case: GridCase, alpha: np.ndarray) -> np.ndarray:
    """Sum generator participation factors per bus position."""
    out = np.zeros(case.n_buses)
    idx = case.bus_index
    for g, a in zip(case.generators, alpha):
        out[idx[g.bus]] += a
    return out


def solve_delta(sens: NetworkSensitivities, alpha_by_bus: np.ndarray) -> np.ndarray:
    """Auxiliary angle-response vector: ``B_hat delta = alpha`` off the reference, delta_ref = 0."""
    return sens.solve_reduced(alpha_by_bus)


def affine_theta_response(
    sens: NetworkSensitivities,
    theta: np.ndarray,
    delta: np.ndarray,
    omega: np.ndarray,
) -> np.ndarray:
    """Phase angles after a wind deviation ``omega`` (per-unit, one entry per bus).

    Implements ``theta_b - Omega * delta_b + pi_b . omega``; all ``pi_b . omega``
    products are obtained with a single reduced solve.
    """
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if not (theta.shape == delta.shape == omega.shape == (sens.n,)):
        raise ValueError("theta, delta and omega must all have one entry per bus")
    total = omega.sum()
    return theta - total * delta + sens.solve_reduced(omega)
