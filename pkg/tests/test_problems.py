"""Problem compilation, reports and conservation/refinement properties."""

import numpy as np
import pytest

from conftest import make_line_scenario
from energyshed.netmodel import baseline_ratio
from energyshed.problems import (
    BuildError,
    VariableLayout,
    build_p1,
    build_p3,
    evaluate_f_tau,
    extract_report,
    flow_law_residual,
    power_balance_residual,
)
from energyshed.qpcore import check_feasibility, solve_qp


def two_bus_scenario(**kw):
    gen = np.array([[0.5], [0.0]])
    load = np.array([[1.0], [1.0]])
    kw.setdefault("cap_plus", 1.0)
    kw.setdefault("cap_minus", 0.5)
    return make_line_scenario(gen, load, **kw)


def chain_scenario(tau_friendly=True, **kw):
    """3 buses, 2 steps; bus 3 carries most of the deficit."""
    gen = np.array([[0.3, 0.3], [0.0, 0.0], [0.0, 0.2]])
    load = np.array([[1.0, 0.8], [0.0, 0.0], [1.5, 1.0]])
    kw.setdefault("cap_plus", [[1.2, 1.2], [0.0, 0.0], [2.0, 2.0]])
    kw.setdefault("cap_minus", 0.4)
    return make_line_scenario(gen, load, **kw)


class TestLayout:
    def test_variable_count_two_bus_one_step(self):
        # 2 angles + 1 flow + 2 s_plus + 2 s_minus + 2 c_plus + 2 c_minus
        prog, lay = build_p1(two_bus_scenario(), 0.0)
        assert prog.n == 11
        assert lay.n_vars == 11

    def test_index_maps_are_bijective(self):
        _, lay = build_p1(chain_scenario(), 0.0)
        seen = set()
        for i in range(lay.n_bus):
            for t in range(lay.steps):
                seen.update({lay.theta(i, t), lay.sp(i, t), lay.sm(i, t)})
        for e in range(lay.n_branch):
            for t in range(lay.steps):
                seen.add(lay.flow(e, t))
        for i in range(lay.n_bus):
            seen.update({lay.cp(i), lay.cm(i)})
        assert seen == set(range(lay.n_vars))

    def test_negative_floor_rejected(self):
        with pytest.raises(BuildError, match="nonnegative"):
            build_p1(two_bus_scenario(), -0.1)

    def test_floor_length_mismatch(self):
        with pytest.raises(BuildError, match="shed count"):
            build_p1(two_bus_scenario(), [0.5, 0.5])


class TestSolutionPhysics:
    def solve(self, scenario, x_min):
        prog, lay = build_p1(scenario, x_min)
        sol = solve_qp(prog)
        assert sol.status == "optimal"
        return lay, sol

    def test_power_balance_and_flow_law(self):
        s = chain_scenario()
        lay, sol = self.solve(s, 1.0)
        assert power_balance_residual(s, lay, sol.x) <= 1e-6
        assert flow_law_residual(s, lay, sol.x) <= 1e-8

    def test_report_matches_objective(self):
        s = chain_scenario()
        lay, sol = self.solve(s, 0.7)
        rep = extract_report(s, lay, sol)
        assert rep.cost == pytest.approx(sol.objective, abs=1e-8)
        assert rep.min_ratio() >= 0.7 - 1e-6

    def test_zero_budget_report_reproduces_base_ratio(self):
        s = chain_scenario(cap_plus=0.0, cap_minus=0.0)
        # no flexibility and no base generation surplus: the only question
        # is whether the base case balances, which it cannot here
        prog, _ = build_p1(s, 0.0)
        assert solve_qp(prog).status == "infeasible"

    def test_self_sufficient_zero_budget_scenario(self):
        gen = np.array([[1.0, 0.8], [0.0, 0.0], [1.5, 1.0]])
        load = gen.copy()
        s = make_line_scenario(gen, load, cap_plus=0.0, cap_minus=0.0)
        lay, sol = self.solve(s, 0.0)
        assert sol.objective == pytest.approx(0.0, abs=1e-8)
        rep = extract_report(s, lay, sol)
        assert rep.min_ratio() == pytest.approx(baseline_ratio(s, 0))

    def test_flow_limit_binds(self):
        # bus 3's deficit must flow over the 2-3 line; cap it below need
        s = chain_scenario(flow_limit=0.4, cap_plus=[[4.0, 4.0],
                                                     [0.0, 0.0],
                                                     [2.0, 2.0]])
        lay, sol = self.solve(s, 0.0)
        rep = extract_report(s, lay, sol)
        peak = max(u for _, _, u in rep.branch_peak_util)
        assert peak <= 1.0 + 1e-6

    def test_report_requires_optimal(self):
        s = chain_scenario(cap_plus=0.0, cap_minus=0.0)
        prog, lay = build_p1(s, 0.0)
        sol = solve_qp(prog)
        with pytest.raises(BuildError, match="status"):
            extract_report(s, lay, sol)


class TestFeasibilityForm:
    def test_p3_has_zero_objective(self):
        prog = build_p3(chain_scenario(), 0.5)
        assert not prog.q_diag.any()

    def test_tau_zero_feasible(self):
        assert check_feasibility(build_p3(chain_scenario(), 0.0)) == "feasible"

    def test_zero_budget_frontier_is_base_ratio(self):
        # per-step totals balance exactly, so zero budgets stay feasible
        gen = np.array([[1.5, 1.4], [0.0, 0.0], [0.5, 0.6]])
        load = np.array([[1.0, 0.8], [0.0, 0.0], [1.0, 1.2]])
        s = make_line_scenario(gen, load, cap_plus=0.0, cap_minus=0.0,
                               partition=[(0, (3,)), (1, (1, 2))],
                               flex_everywhere=True)
        # shed 0 covers only bus 3: its ratio is fixed by the base profiles
        x0 = baseline_ratio(s, 0)
        assert check_feasibility(build_p3(s, x0 - 1e-9)) == "feasible"
        assert check_feasibility(build_p3(s, x0 + 1e-6)) == "infeasible"

    def test_above_closed_form_bound_infeasible(self):
        # single-bus shed with generous lines: the linear bound is exact
        gen = np.array([[2.0, 2.0], [0.0, 0.0], [0.2, 0.2]])
        load = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
        cap = np.array([[0.0, 0.0], [0.0, 0.0], [0.3, 0.3]])
        s = make_line_scenario(gen, load, cap_plus=cap, cap_minus=2.0,
                               partition=[(0, (3,)), (1, (1, 2))],
                               flex_everywhere=True)
        bound = baseline_ratio(s, 0) + cap[2].sum() / load[2].sum()
        assert check_feasibility(build_p3(s, bound - 1e-6)) == "feasible"
        assert check_feasibility(build_p3(s, bound + 1e-4)) == "infeasible"


class TestSweepObjective:
    def test_large_zeta_approaches_tau(self):
        s = chain_scenario()
        val, rep = evaluate_f_tau(s, 0.6, 1e12)
        assert rep is not None
        assert val == pytest.approx(0.6, abs=1e-9)

    def test_tau_zero_is_scaled_baseline_cost(self):
        s = chain_scenario()
        prog, _ = build_p1(s, 0.0)
        cost0 = solve_qp(prog).objective
        val, _ = evaluate_f_tau(s, 0.0, 2.0)
        assert val == pytest.approx(-cost0 / 2.0, rel=1e-7)

    def test_infeasible_tau_marked(self):
        s = chain_scenario(cap_plus=[[0.1, 0.1], [0.0, 0.0], [3.0, 3.0]],
                           cap_minus=0.0)
        val, rep = evaluate_f_tau(s, 50.0, 1.0)
        assert val == -np.inf and rep is None

    def test_zeta_must_be_positive(self):
        with pytest.raises(BuildError, match="zeta"):
            evaluate_f_tau(chain_scenario(), 0.5, 0.0)


class TestOrderingProperties:
    def test_cost_monotone_in_tau(self):
        s = chain_scenario()
        costs = []
        for tau in (0.0, 0.4, 0.8, 1.0):
            prog, _ = build_p1(s, tau)
            sol = solve_qp(prog)
            assert sol.status == "optimal"
            costs.append(sol.objective)
        assert all(a <= b + 1e-7 for a, b in zip(costs, costs[1:]))

    def test_partition_refinement_costs_more(self):
        gen = np.array([[0.3, 0.3], [0.0, 0.0], [0.1, 0.2]])
        load = np.array([[1.0, 0.8], [0.0, 0.0], [1.5, 1.0]])
        cap = [[1.6, 1.6], [0.0, 0.0], [2.6, 2.6]]
        coarse = make_line_scenario(gen, load, cap_plus=cap, cap_minus=0.4,
                                    alpha=[1.0, 1.0, 3.0])
        fine = make_line_scenario(gen, load, cap_plus=cap, cap_minus=0.4,
                                  alpha=[1.0, 1.0, 3.0],
                                  partition=[(0, (1, 2)), (1, (3,))])
        costs = {}
        for name, s in (("coarse", coarse), ("fine", fine)):
            prog, _ = build_p1(s, 1.0)
            sol = solve_qp(prog)
            assert sol.status == "optimal"
            costs[name] = sol.objective
        assert costs["fine"] >= costs["coarse"] - 1e-7


class TestExportLimits:
    def test_tight_export_cap_blocks_high_ratio(self):
        gen = np.array([[2.0, 2.0], [0.0, 0.0], [0.2, 0.2]])
        load = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
        cap = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 2.0]])
        kw = dict(cap_plus=cap, cap_minus=3.0,
                  partition=[(0, (3,)), (1, (1, 2))], flex_everywhere=True)
        free = make_line_scenario(gen, load, **kw)
        capped = make_line_scenario(
            gen, load,
            export_upper=np.full((3, 2), 0.05),
            export_lower=np.full((3, 2), -10.0), **kw)
        # shed 0 must export to hit ratio 2; shed 1 only absorbs
        floors = [2.0, 0.2]
        assert check_feasibility(build_p1(free, floors)[0]) == "feasible"
        assert check_feasibility(build_p1(capped, floors)[0]) == "infeasible"
