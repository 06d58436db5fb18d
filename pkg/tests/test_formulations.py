import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cvxpy_cc_opf

from rccopf.formulations import (
    DEFAULT_EPS_GEN,
    DEFAULT_EPS_LINE,
    DEFAULT_GAMMA,
    build_cc,
    build_deterministic,
    build_model,
    build_rcc,
    with_eps,
)
from rccopf.gauss import GaussianSpec, inv_norm_cdf
from rccopf.grid import Bus, CaseError, Generator, GridCase, Line, WindFarm
from rccopf.solver import CuttingPlaneConfig, solve_cutting_plane, solve_socp_direct
from rccopf.synth import random_case
from rccopf.uncertainty import WindUncertainty, worst_case_scalar_omega


def solve(model):
    sol, diag = solve_cutting_plane(model)
    assert diag.converged
    return sol


def test_defaults():
    assert DEFAULT_EPS_GEN == 1 / 6 and DEFAULT_EPS_LINE == 0.0025 and DEFAULT_GAMMA == 0.6
    assert Generator(1, 1, 0, 1, 1, 1).eps == 1 / 6 and Line(1, 1, 2, 1, 1).eps == 0.0025
    assert WindUncertainty(np.ones(1), np.ones(1), np.ones(1)).gamma_mu == 0.6


class TestDeterministic:
    def test_single_bus(self):
        case = GridCase((Bus(1, 50.0, True),), (), (Generator(1, 1, 0, 100, 10, 10, c1=20.0, c2=0.1),))
        sol = solve(build_deterministic(case))
        assert sol.p[0] == pytest.approx(50.0, abs=1e-6)
        assert sol.objective == pytest.approx(0.1 * 2500 + 20 * 50, rel=1e-8)

    def test_identical_generators_split_evenly(self, sym):
        case, _ = sym
        sol = solve(build_deterministic(case))
        assert sol.p[0] == pytest.approx(sol.p[1], abs=1e-6)
        assert sol.p.sum() == pytest.approx(100.0 - 20.0, abs=1e-6)

    def test_binding_line(self):
        # cheap unit at 1, expensive at 2, load at 3; f13 = (p1 + 100)/3 binds at 50 MW
        buses = (Bus(1, 0.0, True), Bus(2, 0.0), Bus(3, 100.0))
        lines = (Line(1, 1, 2, 1.0, 500.0), Line(2, 2, 3, 1.0, 500.0), Line(3, 1, 3, 1.0, 50.0))
        gens = (Generator(1, 1, 0, 200, 50, 50, c1=10.0), Generator(2, 2, 0, 200, 50, 50, c1=30.0))
        sol = solve(build_deterministic(GridCase(buses, lines, gens)))
        assert sol.flows[2] == pytest.approx(50.0, abs=1e-5)
        assert sol.p == pytest.approx([50.0, 50.0], abs=1e-5)
        assert sol.objective == pytest.approx(2000.0, rel=1e-7)

    def test_no_alpha_variables(self, sym):
        model = build_deterministic(sym[0])
        assert model.chance == [] and model.layout.delta is None
        assert np.all(model.layout.alpha_idx == -1)


class TestLayout:
    def test_fixings_present(self):
        case, u = random_case(n_buses=8, n_gens=3, n_wind=2, seed=5)
        # put one generator at the reference bus
        g0 = case.generators[0]
        case = replace(case, generators=(replace(g0, bus=case.reference_bus),) + case.generators[1:])
        model = build_model(case, "cc", u)
        sol = solve(model)
        lay = model.layout
        r = lay.reference
        assert sol.z[lay.theta][r] == pytest.approx(0.0, abs=1e-12)
        assert sol.z[lay.delta][r] == pytest.approx(0.0, abs=1e-12)
        assert sol.alpha[0] == pytest.approx(0.0, abs=1e-9)
        assert sol.alpha.sum() == pytest.approx(1.0, abs=1e-8)

    def test_constraint_counts(self):
        case, u = random_case(n_buses=12, n_gens=5, n_wind=3, seed=1)
        model = build_model(case, "cc", u)
        assert len(model.chance) == 4 * len(case.generators) + 2 * len(case.lines)
        fam = [c.family for c in model.chance]
        assert fam.count("gen") == 4 * len(case.generators)

    def test_monitored_subset(self):
        case, u = random_case(n_buses=12, n_gens=5, n_wind=3, seed=1)
        case = replace(case, monitored_lines=(1, 2))
        model = build_model(case, "rcc", u)
        assert sum(c.family == "line" for c in model.chance) == 4


class TestCC:
    def test_zero_variance_equals_deterministic(self):
        case, u = random_case(n_buses=10, n_gens=4, n_wind=2, seed=3)
        det = solve(build_deterministic(case))
        spec = GaussianSpec.zero_mean(np.zeros(len(case.wind_farms)))
        cc = solve(build_cc(case, spec))
        assert cc.objective == pytest.approx(det.objective, rel=1e-7)
        assert cc.alpha.sum() == pytest.approx(1.0, abs=1e-8)

    def test_symmetric_alpha(self, sym):
        case, u = sym
        sol = solve(build_model(case, "cc", u))
        assert sol.alpha == pytest.approx([0.5, 0.5], abs=1e-6)
        direct = solve_socp_direct(build_model(case, "cc", u))
        assert direct.alpha == pytest.approx([0.5, 0.5], abs=1e-6)

    def test_missing_uncertainty(self, sym):
        with pytest.raises(CaseError):
            build_model(sym[0], "cc", None)
        with pytest.raises(CaseError):
            build_cc(sym[0], GaussianSpec.zero_mean(np.ones(3)))
        with pytest.raises(ValueError):
            build_model(sym[0], "bogus", sym[1])

    @pytest.mark.parametrize("seed", range(4))
    def test_cc_cost_floor(self, seed):
        case, u = random_case(n_buses=12, n_gens=4, n_wind=2, seed=seed)
        det = solve(build_deterministic(case))
        cc = solve(build_model(case, "cc", u))
        var = u.sigma2.sum()
        floor = var / sum(1.0 / g.c2 for g in case.generators if g.c2 > 0)
        assert cc.objective >= det.objective + floor - 1e-6 * abs(cc.objective)

    @pytest.mark.parametrize("seed", range(3))
    def test_equalities_and_alpha(self, seed):
        case, u = random_case(n_buses=15, n_gens=5, n_wind=3, seed=seed, mixed_fleet=True)
        for method in ("cc", "rcc"):
            model = build_model(case, method, u)
            sol = solve(model)
            assert np.max(np.abs(model.A_eq @ sol.z - model.b_eq)) <= 1e-7
            assert sol.alpha.sum() == pytest.approx(1.0, abs=1e-8)
            assert np.all(sol.alpha >= -1e-9)

    def test_expected_cost_identity(self):
        case, u = random_case(n_buses=10, n_gens=4, n_wind=3, seed=11)
        sol = solve(build_model(case, "cc", u))
        rng = np.random.default_rng(0)
        omega = rng.standard_normal((10**5, u.size)) * np.sqrt(u.sigma2)
        Om = omega.sum(axis=1)
        c1 = np.array([g.c1 for g in case.generators])
        c2 = np.array([g.c2 for g in case.generators])
        P = sol.p[None, :] - Om[:, None] * sol.alpha[None, :]
        mc = np.mean((c2 * P * P + c1 * P).sum(axis=1))
        assert mc == pytest.approx(sol.objective, rel=5e-3)

    def test_hydro_share_one_alpha(self):
        case, u = random_case(n_buses=15, n_gens=7, n_wind=2, seed=2, mixed_fleet=True)
        sol = solve(build_model(case, "rcc", u))
        hydro = [k for k, g in enumerate(case.generators) if g.alpha_group == "hydro"]
        nuke = [k for k, g in enumerate(case.generators) if g.alpha_fixed == 0.0]
        assert len(hydro) >= 2 and nuke
        assert np.ptp(sol.alpha[hydro]) == 0.0
        assert np.all(sol.alpha[nuke] == 0.0)
        for k in hydro + nuke:
            assert sol.p[k] == case.generators[k].p_fixed

    def test_uncommitted_generator(self):
        case, u = random_case(n_buses=10, n_gens=4, n_wind=2, seed=3)
        extra = replace(case.generators[1], id=99, c1=0.0, committed=False)
        sol = solve(build_model(replace(case, generators=case.generators + (extra,)), "cc", u))
        base = solve(build_model(case, "cc", u))
        assert sol.p[-1] == 0.0 and sol.alpha[-1] == 0.0
        assert sol.objective == pytest.approx(base.objective, rel=1e-6)


class TestRCC:
    def test_zero_gamma_identical_to_cc(self):
        case, u = random_case(n_buses=12, n_gens=4, n_wind=3, seed=7)
        cc = build_model(case, "cc", u)
        rcc = build_model(case, "rcc", u.with_gamma(0.0))
        for attr in ("quad", "lin", "b_eq", "lb", "ub", "kappas"):
            assert np.array_equal(getattr(cc, attr), getattr(rcc, attr)), attr
        assert (cc.A_eq != rcc.A_eq).nnz == 0 and cc.const == rcc.const
        assert len(cc.chance) == len(rcc.chance)
        for a, b in zip(cc.chance, rcc.chance):
            for attr in ("var_idx", "det_coef", "omega_coef", "omega_const"):
                assert np.array_equal(getattr(a, attr), getattr(b, attr))
            assert (a.bound, a.eps, a.scalar_omega) == (b.bound, b.eps, b.scalar_omega)

    @given(st.floats(0, 1))
    @settings(max_examples=10)
    def test_degenerate_intervals_equal_cc(self, gamma):
        case, u = random_case(n_buses=8, n_gens=3, n_wind=2, seed=2)
        u0 = WindUncertainty(u.sigma2, np.zeros(2), np.zeros(2), gamma, gamma)
        cc = solve(build_model(case, "cc", u0))
        rcc = solve(build_model(case, "rcc", u0))
        assert rcc.objective == pytest.approx(cc.objective, rel=1e-9)

    def test_single_generator_full_budget_row(self):
        buses = (Bus(1, 50.0, True), Bus(2, 0.0))
        gens = (Generator(1, 2, 0, 200, 100, 100, c1=10.0, c2=0.01, eps=0.05),)
        case = GridCase(buses, (Line(1, 1, 2, 10.0, 500.0),), gens, (WindFarm(1, 10.0), WindFarm(2, 5.0)))
        u = WindUncertainty(np.array([16.0, 9.0]), np.array([2.0, 1.0]), np.array([4.0, 9.0]), 1.0, 1.0)
        model = build_rcc(case, u)
        which, A, b = model.scalar_rows()
        row = which.index(next(k for k, c in enumerate(model.chance) if c.name == "gen1:pmax"))
        min_mean, max_var = worst_case_scalar_omega(u.scaled(100.0))
        assert (min_mean, max_var) == (pytest.approx(-0.03), pytest.approx(38 / 1e4))
        # with alpha = 1: p <= pmax + min_mean - q sqrt(max_var)
        p_j = model.layout.p_idx[0]
        a_j = model.layout.alpha_idx[0]
        z = np.zeros(model.n)
        z[a_j] = 1.0
        limit = (b[row] - A[row] @ z) / A[row, p_j]
        expect = 2.0 + min_mean - inv_norm_cdf(0.95) * math.sqrt(max_var)
        assert limit == pytest.approx(expect, rel=1e-12)
        sol = solve(model)
        assert sol.p[0] <= 100 * expect + 1e-6

    def test_rcc_objective_above_cc(self):
        case, u = random_case(n_buses=12, n_gens=4, n_wind=3, seed=8)
        cc = solve(build_model(case, "cc", u))
        rcc = solve(build_model(case, "rcc", u.with_gamma(1.0)))
        assert rcc.objective >= cc.objective - 1e-9 * cc.objective


@pytest.mark.parametrize("seed", range(5))
def test_cc_matches_independent_model(seed):
    case, u = random_case(n_buses=8 + seed, n_gens=3, n_wind=2, seed=300 + seed)
    sol, _ = solve_cutting_plane(build_model(case, "cc", u), CuttingPlaneConfig(tol=1e-9))
    ref = cvxpy_cc_opf(case, u.sigma2)
    assert abs(sol.objective - ref) <= 1e-6 * abs(ref)


def test_with_eps():
    case, _ = random_case(n_buses=6, n_gens=2, n_wind=1, seed=0)
    c2 = with_eps(case, 0.1, 0.01)
    assert all(g.eps == 0.1 for g in c2.generators) and all(ln.eps == 0.01 for ln in c2.lines)
    assert with_eps(case) == case
