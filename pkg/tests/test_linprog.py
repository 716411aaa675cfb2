import dataclasses
import math

import numpy as np
import pytest
from scipy.optimize import linprog as highs

from helpers import vertex_enumeration
from socdispatch.linprog import (
    LpBuilder,
    LpProblem,
    LpValidationError,
    Tolerances,
    check_lp_optimality,
    solve_lp,
)


def box_problem():
    lp = LpBuilder()
    lp.add_var("x", 0.0, 1.0, cost=1.0)
    return lp.build()


def test_box_minimum_at_lower_bound_with_unit_bound_dual():
    p = box_problem()
    sol = solve_lp(p)
    assert sol.status == "optimal"
    assert sol.x[0] == 0.0 and sol.objective == 0.0
    assert sol.z_lower[0] == pytest.approx(1.0) and sol.z_upper[0] == 0.0
    rep = check_lp_optimality(p, sol)
    assert rep.primal == 0 and rep.dual == 0 and rep.complementarity == 0


def test_single_active_upper_limit_has_unit_multiplier():
    lp = LpBuilder()
    x = lp.add_var("x", cost=-1.0)
    lp.add_range("cap", {x: 1.0}, hi=5.0)
    sol = solve_lp(lp.build())
    assert sol.x[0] == pytest.approx(5.0)
    assert sol.row_multipliers("cap") == pytest.approx((0.0, 1.0))
    assert sol.dual("cap") == pytest.approx(-1.0)


def test_three_variable_equality_matches_vertex_enumeration():
    c = np.array([2.0, -1.0, 3.0])
    A = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 2.0]])
    b = np.array([4.0, 1.0])
    lb, ub = np.zeros(3), np.array([3.0, 3.0, 3.0])
    p = LpProblem(c, lb, ub, A, b, np.zeros((0, 3)), np.zeros(0), np.zeros(0))
    sol = solve_lp(p)
    assert sol.objective == pytest.approx(vertex_enumeration(c, A, b, lb, ub), abs=1e-10)


def test_perturbed_primal_shows_in_residual():
    lp = LpBuilder()
    x = lp.add_var("x", cost=1.0)
    y = lp.add_var("y", cost=2.0)
    lp.add_eq("sum", {x: 1.0, y: 1.0}, 3.0)
    p = lp.build()
    sol = solve_lp(p)
    bumped = dataclasses.replace(sol, x=sol.x + np.array([1e-3, 0.0]))
    assert check_lp_optimality(p, bumped).primal == pytest.approx(1e-3)


def test_infeasible_and_unbounded_are_statuses():
    lp = LpBuilder()
    x = lp.add_var("x", 0.0, 1.0)
    lp.add_eq("two", {x: 1.0}, 2.0)
    assert solve_lp(lp.build()).status == "infeasible"
    lp = LpBuilder()
    lp.add_var("x", cost=-1.0)
    assert solve_lp(lp.build()).status == "unbounded"


def test_validation_errors():
    lp = LpBuilder()
    lp.add_var("x", 2.0, 1.0)
    with pytest.raises(LpValidationError):
        lp.build()
    lp = LpBuilder()
    x = lp.add_var("x")
    lp.add_eq("r", {x: 1.0}, 1.0)
    with pytest.raises(LpValidationError):
        lp.add_eq("r", {x: 1.0}, 2.0)
        lp.build()
    with pytest.raises(LpValidationError):
        lp.add_eq("s", {7: 1.0}, 1.0)


def random_lp(rng, n=6, m_eq=2, m_in=3):
    c = rng.normal(size=n)
    x0 = rng.uniform(0, 2, n)
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    ax = A_in @ x0
    lo = np.where(rng.random(m_in) < 0.5, ax - rng.uniform(0, 1, m_in), -np.inf)
    hi = ax + rng.uniform(0, 1, m_in)
    lb = np.zeros(n)
    ub = np.where(rng.random(n) < 0.7, x0 + rng.uniform(0, 2, n), np.inf)
    return LpProblem(c, lb, ub, A_eq, A_eq @ x0, A_in, lo, hi)


def test_random_lps_agree_with_highs_and_satisfy_optimality():
    rng = np.random.default_rng(11)
    tol = Tolerances()
    checked = 0
    for _ in range(120):
        p = random_lp(rng)
        sol = solve_lp(p)
        fin_lo, fin_hi = np.isfinite(p.lo_in), np.isfinite(p.hi_in)
        ref = highs(p.c, A_ub=np.vstack([p.A_in[fin_hi], -p.A_in[fin_lo]]),
                    b_ub=np.concatenate([p.hi_in[fin_hi], -p.lo_in[fin_lo]]),
                    A_eq=p.A_eq, b_eq=p.b_eq, bounds=list(zip(p.lb, p.ub)), method="highs")
        if ref.status == 0:
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
            rep = check_lp_optimality(p, sol)
            assert rep.within(tol)
            assert rep.gap <= 1e-7 * (1 + abs(sol.objective))
            checked += 1
        elif ref.status == 3:
            assert sol.status == "unbounded"
    assert checked > 50


def test_equality_dual_matches_rhs_perturbation():
    rng = np.random.default_rng(3)
    done = 0
    while done < 10:
        p = random_lp(rng)
        sol = solve_lp(p)
        if not sol.optimal or sol.degenerate:
            continue
        eps = 1e-6
        for r in range(len(p.b_eq)):
            up = dataclasses.replace(p, b_eq=p.b_eq + eps * np.eye(len(p.b_eq))[r])
            down = dataclasses.replace(p, b_eq=p.b_eq - eps * np.eye(len(p.b_eq))[r])
            slope = (solve_lp(up).objective - solve_lp(down).objective) / (2 * eps)
            assert slope == pytest.approx(sol.y_eq[r], rel=1e-4, abs=1e-6)
        done += 1


def test_repeated_solves_are_bit_identical():
    p = random_lp(np.random.default_rng(5))
    a, b = solve_lp(p), solve_lp(p)
    assert a.status == b.status
    if a.optimal:
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y_eq, b.y_eq)
        assert np.array_equal(a.row_lower, b.row_lower) and np.array_equal(a.z_upper, b.z_upper)


def test_tolerance_environment_override(monkeypatch):
    monkeypatch.setenv("SOCDISPATCH_TOL", "1e-6")
    assert Tolerances.from_env().feas == 1e-6
    monkeypatch.setenv("SOCDISPATCH_TOL", "-1")
    with pytest.raises(ValueError):
        Tolerances.from_env()


def test_problem_without_rows():
    lp = LpBuilder()
    lp.add_var("x", -1.0, 2.0, cost=-3.0)
    sol = solve_lp(lp.build())
    assert sol.x[0] == 2.0 and sol.z_upper[0] == pytest.approx(3.0)
    assert math.isclose(sol.objective, -6.0)
