from __future__ import annotations

import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linprog

from stablefare.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lexicographic, solve_lp


def random_lp(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 6)
    rows = []
    for _ in range(rng.randint(1, 7)):
        coefs = {j: rng.randint(-4, 6) for j in range(n) if rng.random() < 0.7}
        rows.append((coefs, rng.choice(["<=", "<=", ">=", "="]), rng.randint(-3, 12)))
    for j in range(n):  # keep it bounded most of the time
        if rng.random() < 0.8:
            rows.append(({j: 1}, "<=", rng.randint(1, 9)))
    obj = {j: rng.randint(-5, 5) for j in range(n)}
    return n, obj, rows


def scipy_reference(n, obj, rows):
    c = -np.array([obj.get(j, 0) for j in range(n)], dtype=float)
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for coefs, sense, rhs in rows:
        row = np.zeros(n)
        for j, v in coefs.items():
            row[j] = v
        if sense == "<=":
            A_ub.append(row), b_ub.append(rhs)
        elif sense == ">=":
            A_ub.append(-row), b_ub.append(-rhs)
        else:
            A_eq.append(row), b_eq.append(rhs)
    res = linprog(c, A_ub=A_ub or None, b_ub=b_ub or None, A_eq=A_eq or None, b_eq=b_eq or None,
                  bounds=[(0, None)] * n, method="highs")
    return res


@pytest.mark.parametrize("exact", [True, False])
def test_matches_highs_on_random_lps(exact):
    for seed in range(150):
        n, obj, rows = random_lp(seed)
        ref = scipy_reference(n, obj, rows)
        got = solve_lp(n, obj, rows, exact=exact)
        if ref.status == 2:
            assert got.status == INFEASIBLE, seed
        elif ref.status == 3:
            assert got.status == UNBOUNDED, seed
        else:
            assert got.status == OPTIMAL, seed
            assert float(got.objective) == pytest.approx(-ref.fun, abs=1e-7), seed


def test_exact_mode_returns_fractions():
    res = solve_lp(2, {0: 1, 1: 1}, [({0: 3, 1: 1}, "<=", 1), ({0: 1, 1: 3}, "<=", 1)])
    assert res.objective == Fraction(1, 2)
    assert all(isinstance(v, Fraction) for v in res.x)


def test_empty_row_with_positive_rhs_is_infeasible():
    assert solve_lp(1, {0: 1}, [({}, ">=", 1)]).status == INFEASIBLE
    assert solve_lp(1, {0: 1}, [({}, "<=", 1), ({0: 1}, "<=", 2)]).status == OPTIMAL


def test_redundant_equalities_are_dropped():
    rows = [({0: 1, 1: 1}, "=", 2), ({0: 2, 1: 2}, "=", 4), ({0: 1}, "<=", 1)]
    res = solve_lp(2, {0: 1}, rows)
    assert res.status == OPTIMAL and res.objective == 1


@pytest.mark.parametrize("exact", [True, False])
def test_lexicographic_stays_on_optimal_face(exact):
    # max x0 + x1 on x0 + x1 <= 4, then max x1, then max x0
    rows = [({0: 1, 1: 1}, "<=", 4), ({0: 1}, "<=", 3)]
    res = solve_lexicographic(2, [({0: 1, 1: 1}, True), ({1: 1}, True), ({0: 1}, True)], rows, exact=exact)
    assert res.status == OPTIMAL
    assert [float(v) for v in res.objective] == [4, 4, 0]
    assert [float(v) for v in res.x] == [0, 4]


def test_lexicographic_minimize_stage():
    rows = [({0: 1, 1: 1}, "=", 4)]
    res = solve_lexicographic(2, [({0: 1}, False)], rows)
    assert res.x == [0, 4]
