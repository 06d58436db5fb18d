"""Synthetic study fixtures: random connected grids and wind/load time series.

Generated cases are feasible by construction for every budget up to 1: a
reference dispatch with capacity-proportional participation satisfies
all generator and line chance constraints at the full-box worst case, with
margin for risk levels down to ``min_eps_gen`` / ``min_eps_line``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta

import numpy as np

from .gauss import inv_norm_cdf
from .grid import Bus, Generator, GridCase, Line, WindFarm, network_sensitivities, solve_delta
from .uncertainty import WindUncertainty

INTERVALS_PER_HOUR = 12


@dataclass
class SynthParams:
    n_buses: int = 30
    n_gens: int = 8
    n_wind: int = 4
    extra_line_frac: float = 0.35
    wind_share: float = 0.25
    sigma_frac: float = 0.15
    mu_bar_frac: float = 0.05
    sigma2_bar_frac: float = 0.3
    capacity_ratio: float = 2.0
    mixed_fleet: bool = False
    min_eps_gen: float = 1 / 48
    min_eps_line: float = 1e-4
    eps_gen: float = 1 / 6
    eps_line: float = 0.0025
    base_mva: float = 100.0
    seed: int = 0


def random_case(params: SynthParams | None = None, **overrides) -> tuple[GridCase, WindUncertainty]:
    """Random connected grid with generators, wind farms and an uncertainty block."""
    p = replace(params or SynthParams(), **overrides)
    if p.n_buses < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(p.seed)
    n = p.n_buses
    bus_ids = list(range(1, n + 1))

    edges: set[tuple[int, int]] = set()
    for k in range(1, n):
        j = int(rng.integers(0, k))
        edges.add((j, k))
    n_extra = int(p.extra_line_frac * n)
    tries = 0
    while n_extra > 0 and tries < 50 * n:
        tries += 1
        a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
        if (a, b) not in edges:
            edges.add((a, b))
            n_extra -= 1
    edges_l = sorted(edges)
    beta = rng.uniform(5.0, 30.0, size=len(edges_l))

    demand = np.where(rng.random(n) < 0.6, rng.uniform(10.0, 60.0, size=n), 0.0)
    demand[0] = 0.0
    if demand.sum() == 0:
        demand[1] = 50.0
    total_d = demand.sum()

    nw = min(p.n_wind, n)
    wind_pos = np.sort(rng.choice(np.arange(n), size=nw, replace=False))
    wind_fc = rng.uniform(0.5, 1.5, size=nw)
    wind_fc *= p.wind_share * total_d / max(wind_fc.sum(), 1e-12)
    sigma2 = (p.sigma_frac * wind_fc) ** 2
    mu_bar = p.mu_bar_frac * wind_fc
    sigma2_bar = p.sigma2_bar_frac * sigma2
    net = total_d - wind_fc.sum()

    gen_pos = rng.choice(np.arange(1, n), size=p.n_gens, replace=True)
    pmax = rng.uniform(0.5, 1.5, size=p.n_gens)
    pmax *= p.capacity_ratio * net / pmax.sum()
    c1 = rng.uniform(10.0, 40.0, size=p.n_gens)
    c2 = rng.uniform(0.005, 0.05, size=p.n_gens)
    kind = ["thermal"] * p.n_gens
    if p.mixed_fleet and p.n_gens >= 4:
        kind[0] = "nuclear"
        n_hydro = max(2, p.n_gens // 3)
        for k in range(1, 1 + n_hydro):
            kind[k] = "hydro"
            c1[k] = rng.uniform(1.0, 5.0)
            c2[k] = 0.0

    # reference dispatch: nuclear at 95 %, the rest capacity-proportional
    fixed_nuc = sum(0.95 * pmax[k] for k in range(p.n_gens) if kind[k] == "nuclear")
    flex = [k for k in range(p.n_gens) if kind[k] != "nuclear"]
    hydro = [k for k in flex if kind[k] == "hydro"]
    weight = np.zeros(p.n_gens)
    for k in flex:
        weight[k] = pmax[k]
    if hydro:
        weight[hydro] = np.mean(pmax[hydro])
    alpha0 = weight / weight.sum()
    p0 = np.zeros(p.n_gens)
    cap_flex = pmax[flex].sum()
    for k in range(p.n_gens):
        p0[k] = 0.95 * pmax[k] if kind[k] == "nuclear" else (net - fixed_nuc) * pmax[k] / cap_flex

    z_gen = inv_norm_cdf(1 - p.min_eps_gen)
    kappa = mu_bar.sum() + z_gen * math.sqrt((sigma2 + sigma2_bar).sum())
    need = 1.2 * alpha0 * kappa
    pmax = np.maximum(pmax, p0 + need)
    pmin = np.maximum(0.0, np.minimum(0.1 * pmax, p0 - need))
    ramp = np.maximum(pmax * rng.uniform(0.15, 0.4, size=p.n_gens), need)

    gens = []
    for k in range(p.n_gens):
        g = Generator(
            id=k + 1, bus=bus_ids[gen_pos[k]], pmin=float(pmin[k]), pmax=float(pmax[k]),
            ramp_up=float(ramp[k]), ramp_down=float(ramp[k]), c1=float(c1[k]), c2=float(c2[k]),
            eps=p.eps_gen,
        )
        if kind[k] == "nuclear":
            g = replace(g, dispatchable=False, p_fixed=float(p0[k]), alpha_fixed=0.0)
        elif kind[k] == "hydro":
            g = replace(g, dispatchable=False, p_fixed=float(p0[k]), alpha_group="hydro")
        gens.append(g)

    buses = tuple(Bus(bus_ids[k], float(demand[k]), k == 0) for k in range(n))
    lines = [Line(r + 1, bus_ids[a], bus_ids[b], float(beta[r]), 1.0, p.eps_line)
             for r, (a, b) in enumerate(edges_l)]
    winds = tuple(WindFarm(bus_ids[wind_pos[k]], float(wind_fc[k])) for k in range(nw))
    probe = GridCase(buses, tuple(lines), tuple(gens), winds, p.base_mva, name="probe")

    # size line capacities around the reference dispatch
    sens = network_sensitivities(probe)
    inj = -demand.copy()
    for k, g in enumerate(gens):
        inj[gen_pos[k]] += p0[k]
    inj[wind_pos] += wind_fc
    theta = sens.solve_reduced(inj / p.base_mva)
    a_bus = np.zeros(n)
    for k in range(p.n_gens):
        a_bus[gen_pos[k]] += alpha0[k]
    delta = solve_delta(sens, a_bus)
    X = sens.pi_columns(wind_pos.tolist())
    z_line = inv_norm_cdf(1 - p.min_eps_line)
    sized = []
    for r, (a, b) in enumerate(edges_l):
        f0 = beta[r] * (theta[a] - theta[b]) * p.base_mva
        xi = beta[r] * ((delta[b] - delta[a]) + (X[a] - X[b]))
        worst = np.abs(xi) @ mu_bar + z_line * math.sqrt(((sigma2 + sigma2_bar) * xi * xi).sum())
        cap = (abs(f0) + worst) * rng.uniform(1.05, 1.5) + 1.0
        sized.append(replace(lines[r], capacity=float(cap)))

    case = GridCase(buses, tuple(sized), tuple(gens), winds, p.base_mva,
                    name=f"synth{n}-s{p.seed}")
    u = WindUncertainty(sigma2, mu_bar, sigma2_bar, 0.6, 0.6)
    return case, u


def random_timeseries(
    case: GridCase,
    u: WindUncertainty,
    hours: int,
    seed: int = 0,
    demand_noise: float = 0.0,
    forecast_drift: float = 0.05,
    start: datetime = datetime(2013, 1, 1),
):
    """Hourly forecasts and 5-minute realizations as long-format rows.

    Rows are ``(timestamp, kind, bus, value)`` with kind ``load`` or ``wind``.
    Realized wind deviations are Gaussian with a per-hour mean drawn inside
    the mean interval, so the nominal zero-mean model is misspecified.
    """
    rng = np.random.default_rng(seed)
    fc_rows, real_rows = [], []
    base_fc = case.wind_forecast
    for t in range(hours):
        ts = start + timedelta(hours=t)
        scale = 1.0 + forecast_drift * rng.standard_normal()
        d_fc = {b.id: max(b.demand * scale, 0.0) for b in case.buses if b.demand > 0}
        w_fc = np.maximum(base_fc * (1 + forecast_drift * rng.standard_normal(base_fc.size)), 0.0)
        for bus, v in d_fc.items():
            fc_rows.append((ts, "load", bus, v))
        for w, v in zip(case.wind_farms, w_fc):
            fc_rows.append((ts, "wind", w.bus, float(v)))
        mu_t = rng.uniform(-1.0, 1.0, size=base_fc.size) * u.mu_bar
        for tau in range(INTERVALS_PER_HOUR):
            ts_i = ts + timedelta(minutes=5 * tau)
            omega = mu_t + np.sqrt(u.sigma2) * rng.standard_normal(base_fc.size)
            for bus, v in d_fc.items():
                dv = v * (1 + demand_noise * rng.standard_normal()) if demand_noise else v
                real_rows.append((ts_i, "load", bus, max(float(dv), 0.0)))
            for w, v, o in zip(case.wind_farms, w_fc, omega):
                real_rows.append((ts_i, "wind", w.bus, max(float(v + o), 0.0)))
    return fc_rows, real_rows
