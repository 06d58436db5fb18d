"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from oracles import binomial_bound, dense_flow_response, enum_worst_mean, enum_worst_variance, lp_worst

from rccopf.formulations import build_model
from rccopf.grid import (
    Bus,
    Generator,
    GridCase,
    Line,
    WindFarm,
    affine_theta_response,
    build_admittance,
    network_sensitivities,
    participation_by_bus,
    solve_delta,
)
from rccopf.sim import IntervalRealization, aggregate, step2_replay
from rccopf.solver import CuttingPlaneConfig, solve_cutting_plane, solve_socp_direct
from rccopf.synth import random_case
from rccopf.uncertainty import WindUncertainty, check_robust_feasibility, worst_case_mean, worst_case_variance

pytestmark = pytest.mark.acceptance

# cut tolerance for the two-path comparison; see test_dual_path_cc
DUAL_PATH_TOL = 1e-8


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def small_instances():
    """The 50 fixed CC instances of 5 to 15 buses."""
    rng = np.random.default_rng(2024)
    out = []
    for s in range(50):
        n = int(rng.integers(5, 16))
        out.append(random_case(n_buses=n, n_gens=int(rng.integers(2, 6)),
                               n_wind=int(rng.integers(1, 4)), seed=1000 + s))
    return out


@pytest.fixture(scope="module")
def instances():
    return small_instances()


def test_affine_response_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(10, 51))
        case, _ = random_case(n_buses=n, n_gens=max(2, n // 6), n_wind=max(1, n // 10), seed=200 + k)
        sens = network_sensitivities(case)
        alpha = rng.random(len(case.generators))
        alpha /= alpha.sum()
        a_bus = participation_by_bus(case, alpha)
        inj = rng.normal(size=n)
        inj -= inj.mean()
        theta = sens.solve_reduced(inj)
        delta = solve_delta(sens, a_bus)
        B = build_admittance(case).toarray()
        r = case.bus_index[case.reference_bus]
        keep = [j for j in range(n) if j != r]
        Bk = B[np.ix_(keep, keep)]
        wind_pos = [case.bus_index[b] for b in case.wind_buses]
        for _ in range(100):
            omega = np.zeros(n)
            omega[wind_pos] = rng.normal(scale=0.3, size=len(wind_pos))
            th = affine_theta_response(sens, theta, delta, omega)
            direct = np.zeros(n)
            direct[keep] = np.linalg.solve(Bk, (inj + omega - omega.sum() * a_bus)[keep])
            worst = max(worst, float(np.max(np.abs(th - direct))))
    dt = time.perf_counter() - t0
    record("affine response identity", worst <= 1e-8 and dt < 10,
           f"max |formula - direct| = {worst:.2e} p.u. (<= 1e-8) over 20 cases x 100 draws, {dt:.1f} s (< 10 s)")


def test_dual_path_cc(instances):
    t0 = time.perf_counter()
    cfg = CuttingPlaneConfig(tol=DUAL_PATH_TOL)
    gaps, gaps_default = [], []
    for case, u in instances:
        model = build_model(case, "cc", u)
        direct = solve_socp_direct(model).objective
        sol, diag = solve_cutting_plane(model, cfg)
        assert diag.converged
        gaps.append(abs(sol.objective - direct) / abs(direct))
        dflt, _ = solve_cutting_plane(model)
        gaps_default.append(abs(dflt.objective - direct) / abs(direct))
    dt = time.perf_counter() - t0
    worst = max(gaps)
    record("dual-path CC oracle", worst <= 1e-6 and dt < 120,
           f"max relative gap {worst:.2e} (<= 1e-6) at cut tol {DUAL_PATH_TOL:g}; "
           f"default tol 1e-6 gives {max(gaps_default):.2e}; 50 instances, {dt:.1f} s (< 120 s)")


def test_zero_budget_equivalence(instances):
    t0 = time.perf_counter()
    worst = worst_direct = 0.0
    for case, u in instances:
        cc, _ = solve_cutting_plane(build_model(case, "cc", u))
        rcc, diag = solve_cutting_plane(build_model(case, "rcc", u.with_gamma(0.0)))
        assert diag.converged
        worst = max(worst, abs(rcc.objective - cc.objective) / abs(cc.objective))
        tight, _ = solve_cutting_plane(build_model(case, "rcc", u.with_gamma(0.0)),
                                       CuttingPlaneConfig(tol=DUAL_PATH_TOL))
        direct = solve_socp_direct(build_model(case, "cc", u)).objective
        worst_direct = max(worst_direct, abs(tight.objective - direct) / abs(direct))
    dt = time.perf_counter() - t0
    record("gamma = 0 equivalence", worst <= 1e-6 and worst_direct <= 1e-6,
           f"max relative gap to CC {worst:.2e} (default config), to direct conic CC "
           f"{worst_direct:.2e} (tol {DUAL_PATH_TOL:g}), both <= 1e-6; {dt:.1f} s")


def random_tuple(rng, n):
    s2 = rng.uniform(0.1, 3.0, n)
    u = WindUncertainty(s2, rng.uniform(0, 2, n), s2 * rng.uniform(0, 1, n), rng.uniform(0, 1), rng.uniform(0, 1))
    return u, rng.normal(size=n), rng.uniform(0, 3, n)


def test_separation_oracle_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_small = 0.0
    for k in range(1000):
        u, x, q = random_tuple(rng, int(rng.integers(1, 7)))
        worst_small = max(
            worst_small,
            abs(worst_case_mean(u, x).value - enum_worst_mean(u.mu_bar, u.gamma_mu, x)),
            abs(worst_case_variance(u, q).value - enum_worst_variance(u.sigma2, u.sigma2_bar, u.gamma_sigma, q)),
        )
    worst_large = 0.0
    for k in range(100):
        u, x, q = random_tuple(rng, 50)
        lp_m = lp_worst(np.zeros(50), u.mu_bar, u.gamma_mu, x)
        lp_v = lp_worst(u.sigma2, u.sigma2_bar, u.gamma_sigma, q)
        worst_large = max(worst_large,
                          abs(worst_case_mean(u, x).value - lp_m) / max(1.0, abs(lp_m)),
                          abs(worst_case_variance(u, q).value - lp_v) / max(1.0, abs(lp_v)))
    dt = time.perf_counter() - t0
    record("separation oracle exactness",
           worst_small <= 1e-10 and worst_large <= 1e-10 and dt < 60,
           f"|W|<=6: max |oracle - enumeration| {worst_small:.1e} (<= 1e-10, 1000 tuples); "
           f"|W|=50: max relative gap to LP {worst_large:.1e} (<= 1e-10, 100 tuples); {dt:.1f} s (< 60 s)")


def violation_rates(case, p, alpha, mean_mw, sd_mw, Z, chunk=200_000):
    """Empirical violation frequency of every generator and line chance constraint."""
    f0, F = dense_flow_response(case, p, alpha)
    mon = set(case.line_ids_monitored())
    lines = [k for k, ln in enumerate(case.lines) if ln.id in mon]
    pmax = np.array([g.pmax for g in case.generators])
    pmin = np.array([g.pmin for g in case.generators])
    ru = np.array([g.ramp_up for g in case.generators])
    rd = np.array([g.ramp_down for g in case.generators])
    cap = np.array([case.lines[k].capacity for k in lines])
    Fm = F[lines]
    slack = 1e-6  # MW; absorbs solver round-off on constraints with no randomness
    counts = np.zeros(4 * len(p) + 2 * len(lines))
    for s in range(0, Z.shape[0], chunk):
        om = mean_mw + Z[s:s + chunk] * sd_mw
        Om = om.sum(axis=1)
        resp = Om[:, None] * alpha[None, :]
        pg = p[None, :] - resp
        f = f0[lines][None, :] + om @ Fm.T
        counts += np.concatenate([
            (pg > pmax + slack).sum(0), (pg < pmin - slack).sum(0),
            (-resp > ru + slack).sum(0), (resp > rd + slack).sum(0),
            (f > cap + slack).sum(0), (-f > cap + slack).sum(0),
        ])
    eps = np.concatenate([[g.eps for g in case.generators]] * 4 + [[case.lines[k].eps for k in lines]] * 2)
    return counts / Z.shape[0], eps


def test_monte_carlo_validity():
    t0 = time.perf_counter()
    n = 10**6
    rng = np.random.default_rng(99)

    case, u = random_case(n_buses=15, n_gens=5, n_wind=3, seed=31)
    sol, diag = solve_cutting_plane(build_model(case, "cc", u))
    assert diag.converged
    Z = rng.standard_normal((n, u.size))
    rate, eps = violation_rates(case, sol.p, sol.alpha, np.zeros(u.size), np.sqrt(u.sigma2), Z)
    bound = np.array([binomial_bound(e, n) for e in eps])
    cc_ok = bool(np.all(rate <= bound))
    cc_worst = float(np.max(rate - eps))
    cc_tight = float(np.max(rate / eps))

    case_r, u_r = random_case(n_buses=15, n_gens=5, n_wind=3, seed=32)
    model = build_model(case_r, "rcc", u_r)
    sol_r, diag_r = solve_cutting_plane(model)
    assert diag_r.converged
    base = case_r.base_mva
    dists = set()
    for c in model.chance:
        chk = check_robust_feasibility(c, model.uncertainty, sol_r.z)
        dists.add((tuple(np.round(chk.mean * base, 12)), tuple(np.round(chk.var * base**2, 12))))
    n_ext = len(dists)
    dists = [(np.array(m), np.array(v)) for m, v in sorted(dists)]
    k = u_r.size
    while len(dists) < 100:
        a = rng.uniform(-1, 1, k)
        a *= min(1.0, u_r.gamma_mu * k / np.abs(a).sum())
        b = rng.uniform(-1, 1, k)
        b *= min(1.0, u_r.gamma_sigma * k / np.abs(b).sum())
        dists.append((u_r.mu_bar * a, u_r.sigma2 + u_r.sigma2_bar * b))
    Z = rng.standard_normal((n, k))
    rcc_ok, rcc_worst, rcc_tight = True, -np.inf, 0.0
    for mu, var in dists:
        rate, eps = violation_rates(case_r, sol_r.p, sol_r.alpha, mu, np.sqrt(var), Z)
        bound = np.array([binomial_bound(e, n) for e in eps])
        rcc_ok &= bool(np.all(rate <= bound))
        rcc_worst = max(rcc_worst, float(np.max(rate - eps)))
        rcc_tight = max(rcc_tight, float(np.max(rate / eps)))
    dt = time.perf_counter() - t0
    record("Monte Carlo chance-constraint validity", cc_ok and rcc_ok and dt < 300,
           f"CC: max(rate - eps) {cc_worst:+.1e}, tightest rate/eps {cc_tight:.3f}; "
           f"RCC over {len(dists)} distributions ({n_ext} certified extremes): "
           f"max(rate - eps) {rcc_worst:+.1e}, tightest rate/eps {rcc_tight:.3f}; "
           f"all within eps + 3 binomial sd at 1e6 samples; {dt:.1f} s (< 300 s)")


def fixed_30_bus():
    return random_case(n_buses=30, n_gens=8, n_wind=4, mixed_fleet=True, seed=1)


def test_gamma_monotonicity():
    case, u = fixed_30_bus()
    gammas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    objs = []
    for g in gammas:
        sol, diag = solve_cutting_plane(build_model(case, "rcc", u.with_gamma(g)))
        assert diag.converged
        objs.append(sol.objective)
    objs = np.array(objs)
    drops = (objs[:-1] - objs[1:]) / np.abs(objs[1:])
    record("gamma monotonicity", bool(np.all(drops <= 1e-7)),
           f"objectives {', '.join(f'{o:.4f}' for o in objs)} $/h; max relative drop {drops.max():.1e} (<= 1e-7)")


def test_special_structure_equivalence():
    case, u = fixed_30_bus()
    worst = 0.0
    for g in (0.0, 0.6, 1.0):
        model = build_model(case, "rcc", u.with_gamma(g))
        on, _ = solve_cutting_plane(model)
        off, d = solve_cutting_plane(model, CuttingPlaneConfig(use_special_structure=False))
        assert d.converged
        worst = max(worst, abs(on.objective - off.objective) / abs(on.objective))
    record("special-structure equivalence", worst <= 1e-6,
           f"max relative gap {worst:.1e} (<= 1e-6) on the 30-bus case at gamma 0, 0.6, 1")


def bookkeeping_case():
    buses = (Bus(1, 0.0, True), Bus(2, 0.0), Bus(3, 150.0))
    lines = (Line(1, 1, 2, 1.0, 500.0), Line(2, 2, 3, 1.0, 500.0), Line(3, 1, 3, 1.0, 45.0))
    gens = (Generator(1, 1, 0.0, 90.0, 10.0, 10.0, c1=10.0, c2=0.1),
            Generator(2, 2, 0.0, 40.0, 5.0, 5.0, c1=20.0, c2=0.2))
    return GridCase(buses, lines, gens, (WindFarm(3, 80.0),))


# Equal-susceptance triangle with theta_1 = 0: injections (P1, P2, W - 150)
# give f13 = (2 (150 - W) - P2) / 3, which is (2 P1 + P2) / 3 when balanced.
# Dispatch (50, 20), response shares (3/4, 1/4), W = 80 + omega.
# hour: [(omega, P1, P2, ACE, ramp_up, ramp_down, overload on line 3 in MW)]
HAND = {
    0: [(0, 50, 20, 0, (), (), 0), (-24, 68, 26, 0, (1, 2), (), 9),
        (16, 38, 16, 0, (), (1,), 0), (8, 44, 18, 0, (), (), 0), (4, 47, 19, 0, (), (), 0),
        (-4, 53, 21, 0, (), (), 0), (0, 50, 20, 0, (), (), 0), (2, 48.5, 19.5, 0, (), (), 0),
        (-2, 51.5, 20.5, 0, (), (), 0), (1, 49.25, 19.75, 0, (), (), 0),
        (0, 50, 20, 0, (), (), 0), (0, 50, 20, 0, (), (), 0)],
    # interval 1 clips unit 1 from 95 to 90: ACE = 150 - 20 - 125 = 5, f13 = (260 - 35) / 3
    1: [(-60, 90, 35, 5, (1, 2), (), 30), (-28, 71, 27, 0, (1, 2), (), 169 / 3 - 45),
        (0, 50, 20, 0, (), (), 0), (12, 41, 17, 0, (), (), 0), (20, 35, 15, 0, (), (1,), 0),
        (-12, 59, 23, 0, (), (), 2)] + [(0, 50, 20, 0, (), (), 0)] * 6,
}


def test_simulation_bookkeeping():
    case = bookkeeping_case()
    p_star, alpha = np.array([50.0, 20.0]), np.array([0.75, 0.25])
    records = []
    for h, rows in HAND.items():
        reals = [IntervalRealization(t + 1, {3: 80.0 + row[0]}, {3: 150.0}) for t, row in enumerate(rows)]
        records += step2_replay(case, p_star, alpha, reals, hour=h, keep_arrays=True)
    ok, bad = True, []
    hand_costs = []
    for r, (om, p1, p2, ace, up, down, over) in zip(records, HAND[0] + HAND[1]):
        cost = (0.1 * p1 * p1 + 10 * p1 + 0.2 * p2 * p2 + 20 * p2) * 5 / 60
        hand_costs.append(cost)
        good = (r.omega_total == om and list(r.p) == [p1, p2] and r.ace == ace
                and r.ramp_up == up and r.ramp_down == down and r.cost == pytest.approx(cost, rel=1e-15)
                and set(r.overloads) == ({3} if over else set())
                and (not over or abs(r.overloads[3] - over) <= 1e-9))
        if not good:
            bad.append((r.hour, r.tau))
        ok &= good
    unclipped_zero = all(r.ace == 0.0 for r in records if not r.clipped)
    rep = aggregate(records)
    ok &= unclipped_zero and rep.total_cost == pytest.approx(sum(hand_costs), rel=1e-14)
    ok &= rep.ramp_violations == {1: 5, 2: 3} and rep.overloads == {3: 4}
    ok &= rep.max_overload[3] == pytest.approx(30.0, abs=1e-9) and rep.n_hours == 2
    record("simulation bookkeeping", bool(ok),
           f"2 hours x 12 intervals: ACE, ramp and overload flags, interval cost match the hand table "
           f"(mismatches: {bad or 'none'}); ACE = 0 exactly on every unclipped interval: {unclipped_zero}")


@pytest.mark.slow
def test_scale_check():
    case, u = random_case(n_buses=2000, n_gens=170, n_wind=24, seed=0)
    t0 = time.perf_counter()
    model = build_model(case, "rcc", u.with_gamma(1.0))
    sol, diag = solve_cutting_plane(model)
    dt = time.perf_counter() - t0
    record("scale check", diag.converged and dt <= 60 and diag.iterations <= 200,
           f"2000 buses, 170 generators, 24 wind farms, gamma 1: {diag.termination} in "
           f"{diag.iterations} iterations, {diag.total_cuts} cuts, {dt:.1f} s (<= 60 s, <= 200 iterations)")
