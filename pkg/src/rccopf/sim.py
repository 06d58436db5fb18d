"""Two-step evaluation: hour-ahead dispatch, then quasi-static 5-minute replay.

Step 1 solves one OPF per hour on the forecasts. Step 2 applies the
proportional response to the realized wind deviation, clips generators to
their limits, runs a DC power flow and records area control error, ramp
and overload flags and the cost of delivered energy.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .formulations import DETERMINISTIC_ALPHA, build_model
from .grid import GridCase, NetworkSensitivities, network_sensitivities, solve_dc_power_flow
from .solver import CuttingPlaneConfig, MasterError, MasterInfeasibleError, solve_cutting_plane
from .uncertainty import WindUncertainty

logger = logging.getLogger(__name__)

INTERVALS_PER_HOUR = 12
INTERVAL_HOURS = 5.0 / 60.0


@dataclass
class HourScenario:
    """Hour-ahead inputs. ``None`` fields fall back to the case values.

    ``demand``/``wind`` map bus id to MW; when ``demand`` is given, buses
    not listed carry no load. ``commitment`` maps generator id to on/off
    and ``hydro_dispatch`` generator id to a fixed output in MW.
    """

    hour: int
    demand: dict | None = None
    wind: dict | None = None
    commitment: dict | None = None
    hydro_dispatch: dict | None = None
    timestamp: str | None = None


@dataclass
class IntervalRealization:
    tau: int  # 1..12
    wind: dict  # bus id -> MW
    demand: dict  # bus id -> MW
    timestamp: str | None = None


@dataclass
class IntervalRecord:
    hour: int
    tau: int
    omega_total: float
    ace: float
    cost: float
    imbalance: bool
    ramp_up: tuple = ()  # generator ids
    ramp_down: tuple = ()
    overloads: dict = field(default_factory=dict)  # line id -> MW above capacity
    clipped: tuple = ()  # generator ids at a limit after clipping
    p: np.ndarray | None = field(default=None, repr=False)
    flows: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Step1Result:
    hour: int
    feasible: bool
    p: np.ndarray | None = None
    alpha: np.ndarray | None = None
    objective: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    message: str = ""


def apply_scenario(case: GridCase, s: HourScenario) -> GridCase:
    """Case with the hour's forecasts, commitment and hydro schedule substituted."""
    buses = case.buses
    if s.demand is not None:
        unknown = set(s.demand) - set(case.bus_index)
        if unknown:
            raise ValueError(f"hour {s.hour}: demand for unknown buses {sorted(unknown)}")
        buses = tuple(replace(b, demand=float(s.demand.get(b.id, 0.0))) for b in case.buses)
    winds = case.wind_farms
    if s.wind is not None:
        known = {w.bus for w in case.wind_farms}
        unknown = set(s.wind) - known
        if unknown:
            raise ValueError(f"hour {s.hour}: wind forecast at buses without a farm {sorted(unknown)}")
        winds = tuple(replace(w, forecast=float(s.wind.get(w.bus, w.forecast))) for w in winds)
    gens = []
    for g in case.generators:
        if s.commitment is not None and g.id in s.commitment:
            g = replace(g, committed=bool(s.commitment[g.id]))
        if s.hydro_dispatch is not None and g.id in s.hydro_dispatch:
            g = replace(g, p_fixed=float(s.hydro_dispatch[g.id]))
        gens.append(g)
    return replace(case, buses=buses, wind_farms=winds, generators=tuple(gens))


def step1_dispatch(
    case: GridCase,
    scenario: HourScenario,
    method: str,
    u: WindUncertainty | None = None,
    config: CuttingPlaneConfig | None = None,
    sens: NetworkSensitivities | None = None,
    det_alpha: float = DETERMINISTIC_ALPHA,
) -> Step1Result:
    """Hour-ahead dispatch ``(p*, alpha*)`` with the chosen formulation.

    The deterministic method reports a fixed participation factor
    ``det_alpha`` for every committed unit without a pinned factor.
    """
    hcase = apply_scenario(case, scenario)
    try:
        model = build_model(hcase, method, u, sens=sens)
        sol, diag = solve_cutting_plane(model, config)
    except MasterInfeasibleError as exc:
        logger.warning("hour %d infeasible (%s)", scenario.hour, exc)
        return Step1Result(scenario.hour, False, diagnostics=exc.diagnostics.to_dict(),
                           message=str(exc))
    except MasterError as exc:
        return Step1Result(scenario.hour, False, diagnostics=exc.diagnostics.to_dict(),
                           message=str(exc))
    alpha = sol.alpha
    if method in ("det", "deterministic"):
        alpha = np.array([
            0.0 if not g.committed else (g.alpha_fixed if g.alpha_fixed is not None else det_alpha)
            for g in hcase.generators
        ])
    return Step1Result(scenario.hour, diag.converged, sol.p, alpha, sol.objective,
                       diag.to_dict(), "" if diag.converged else "cutting plane did not converge")


def step2_replay(
    case: GridCase,
    p_star: np.ndarray,
    alpha_star: np.ndarray,
    realizations: list[IntervalRealization],
    hour: int = 0,
    sens: NetworkSensitivities | None = None,
    keep_arrays: bool = False,
) -> list[IntervalRecord]:
    """Replay one hour's 5-minute realizations against a fixed dispatch policy.

    ``case`` must already carry the hour's forecasts (see
    :func:`apply_scenario`); the response is driven by the deviation of
    realized wind from those forecasts.
    """
    if len(realizations) != INTERVALS_PER_HOUR:
        raise ValueError(f"hour {hour}: expected {INTERVALS_PER_HOUR} intervals, "
                         f"got {len(realizations)}")
    sens = sens or network_sensitivities(case)
    bidx = case.bus_index
    gens = case.generators
    on = np.array([g.committed for g in gens], dtype=bool)
    pmin = np.array([g.pmin for g in gens])
    pmax = np.array([g.pmax for g in gens])
    ru = np.array([g.ramp_up for g in gens])
    rd = np.array([g.ramp_down for g in gens])
    c1 = np.array([g.c1 for g in gens])
    c2 = np.array([g.c2 for g in gens])
    gbus = np.array([bidx[g.bus] for g in gens], dtype=np.int64)
    cap = np.array([ln.capacity for ln in case.lines])
    line_ids = [ln.id for ln in case.lines]
    gen_ids = [g.id for g in gens]
    p_star = np.where(on, np.asarray(p_star, dtype=float), 0.0)
    alpha_star = np.where(on, np.asarray(alpha_star, dtype=float), 0.0)

    records = []
    for r in realizations:
        w_fc = case.wind_forecast
        w = np.array([r.wind.get(f.bus, f.forecast) for f in case.wind_farms], dtype=float)
        d = np.array([r.demand.get(b.id, b.demand) for b in case.buses], dtype=float)
        omega_total = float(np.sum(w - w_fc))
        p_hat = p_star - alpha_star * omega_total
        p = np.where(on, np.clip(p_hat, pmin, pmax), 0.0)
        clipped = tuple(gen_ids[k] for k in np.flatnonzero(on & (p != p_hat)))
        ace = float(d.sum() - w.sum() - p.sum())
        inj = -d
        np.add.at(inj, gbus, p)
        for f, wv in zip(case.wind_farms, w):
            inj[bidx[f.bus]] += wv
        pf = solve_dc_power_flow(case, inj, sens)
        excess = np.abs(pf.flows) - cap
        over = np.flatnonzero(excess > 0)
        response = alpha_star * omega_total  # output change is -response
        up = np.flatnonzero(on & (-response > ru))
        down = np.flatnonzero(on & (response > rd))
        cost = float(np.sum(c2 * p * p + c1 * p)) * INTERVAL_HOURS
        records.append(IntervalRecord(
            hour=hour, tau=r.tau, omega_total=omega_total, ace=ace, cost=cost,
            imbalance=pf.imbalanced,
            ramp_up=tuple(gen_ids[k] for k in up),
            ramp_down=tuple(gen_ids[k] for k in down),
            overloads={line_ids[k]: float(excess[k]) for k in over},
            clipped=clipped,
            p=p if keep_arrays else None,
            flows=pf.flows if keep_arrays else None,
        ))
    return records


@dataclass
class SimulationReport:
    n_intervals: int
    n_hours: int
    total_cost: float
    mean_ace: float
    ace_cdf: list  # [(value, cumulative fraction)]
    ramp_violations: dict  # generator id -> interval count
    overloads: dict  # line id -> interval count
    max_overload: dict  # line id -> MW
    infeasible_hours: list
    feasibility_rate: float
    hourly_cost: dict = field(default_factory=dict)
    baseline_cost: float | None = None
    delta_cost: float | None = None
    delta_cost_pct: float | None = None

    def violation_frequency(self, kind: str = "ramp") -> dict:
        counts = self.ramp_violations if kind == "ramp" else self.overloads
        return {k: v / self.n_intervals for k, v in counts.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ramp_violations", "overloads", "max_overload", "hourly_cost"):
            d[key] = {str(k): v for k, v in sorted(d[key].items())}
        d["ace_cdf"] = [[float(a), float(b)] for a, b in self.ace_cdf]
        return d


def aggregate(
    records: list[IntervalRecord],
    infeasible_hours=(),
    baseline_cost: float | None = None,
) -> SimulationReport:
    """Reduce per-interval records to study-level statistics."""
    if not records:
        raise ValueError("no interval records to aggregate")
    records = sorted(records, key=lambda r: (r.hour, r.tau))
    ace = np.array([r.ace for r in records])
    values, counts = np.unique(ace, return_counts=True)
    cdf = list(zip(values.tolist(), (np.cumsum(counts) / ace.size).tolist()))
    ramp: dict = {}
    over: dict = {}
    max_over: dict = {}
    hourly: dict = {}
    for r in records:
        for g in set(r.ramp_up) | set(r.ramp_down):
            ramp[g] = ramp.get(g, 0) + 1
        for ln, mw in r.overloads.items():
            over[ln] = over.get(ln, 0) + 1
            max_over[ln] = max(max_over.get(ln, 0.0), mw)
        hourly[r.hour] = hourly.get(r.hour, 0.0) + r.cost
    total = math.fsum(r.cost for r in records)
    hours = sorted(hourly)
    n_inf = len(set(infeasible_hours))
    rep = SimulationReport(
        n_intervals=len(records), n_hours=len(hours), total_cost=total,
        mean_ace=float(ace.mean()), ace_cdf=cdf, ramp_violations=ramp, overloads=over,
        max_overload=max_over, infeasible_hours=sorted(set(infeasible_hours)),
        feasibility_rate=len(hours) / (len(hours) + n_inf), hourly_cost=hourly,
    )
    if baseline_cost is not None:
        rep.baseline_cost = baseline_cost
        rep.delta_cost = total - baseline_cost
        rep.delta_cost_pct = 100.0 * rep.delta_cost / baseline_cost if baseline_cost else None
    return rep


def _run_hour(args):
    case, u, scenario, reals, method, config, det_alpha = args
    hcase = apply_scenario(case, scenario)
    sens = network_sensitivities(hcase)
    res = step1_dispatch(case, scenario, method, u, config, sens, det_alpha)
    if not res.feasible:
        return res, []
    return res, step2_replay(hcase, res.p, res.alpha, reals, scenario.hour, sens)


def iter_study(
    case: GridCase,
    scenarios: list[HourScenario],
    realizations: dict,
    method: str,
    u: WindUncertainty | None = None,
    config: CuttingPlaneConfig | None = None,
    workers: int = 1,
    det_alpha: float = DETERMINISTIC_ALPHA,
):
    """Yield ``(Step1Result, records)`` per hour, in scenario order.

    Hours run in parallel when ``workers > 1``; results are still yielded
    in order so a single consumer can write them sequentially.
    """
    jobs = ((case, u, s, realizations[s.hour], method, config, det_alpha) for s in scenarios)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_run_hour, jobs)
    else:
        for j in jobs:
            yield _run_hour(j)


def run_study(case, scenarios, realizations, method, u=None, config=None, workers=1,
              det_alpha=DETERMINISTIC_ALPHA, baseline_cost=None):
    """Steps 1 and 2 over every hour; returns (step-1 results, interval records, report).

    Hours whose dispatch is infeasible (or does not converge) are left out
    of the aggregates and listed in ``report.infeasible_hours``. The report
    is ``None`` when no hour is feasible.
    """
    step1, records = [], []
    for res, recs in iter_study(case, scenarios, realizations, method, u, config, workers,
                                det_alpha):
        step1.append(res)
        records += recs
    infeasible = [s.hour for s in step1 if not s.feasible]
    report = aggregate(records, infeasible, baseline_cost) if records else None
    return step1, records, report
