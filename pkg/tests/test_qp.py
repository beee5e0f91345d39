import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfnav.qp import (ConstraintRow, QpProblem, QpStatus, find_feasible_point, kkt_residual,
                       solve_qp)
from cbfnav.types import ConfigError
from oracles import enumerate_qp, enumerate_qp_batched, grid_qp

LO = np.array([-0.5, -0.5, -np.inf])
HI = np.array([0.5, 0.5, np.inf])
WIDE_LO = np.array([-10.0, -10.0, -np.inf])
WIDE_HI = np.array([10.0, 10.0, np.inf])


def problem(A, b, q=(1.0, 1.0, 1.0), lo=LO, hi=HI):
    rows = [ConstraintRow(a, r) for a, r in zip(np.asarray(A, float).reshape(-1, len(q)), b)]
    return QpProblem(np.asarray(q, float), rows, lo, hi)


def random_instance(rng):
    """Coefficients in [-5, 5], up to 14 rows; half the rhs drawn around a feasible anchor."""
    m = int(rng.integers(0, 15))
    A = rng.uniform(-5, 5, (m, 3))
    if rng.random() < 0.5:
        x0 = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-2, 2)])
        b = A @ x0 - rng.uniform(0, 2, m)
    else:
        b = rng.uniform(-5, 5, m)
    q = np.array([1.0, 1.0, float(rng.choice([1.0, 10.0, 1000.0]))])
    return q, A, b


# examples ---------------------------------------------------------------------

def test_no_rows_gives_origin():
    sol = solve_qp(problem(np.zeros((0, 3)), []))
    assert sol.status is QpStatus.FEASIBLE
    assert np.array_equal(sol.x, np.zeros(3))
    assert sol.kkt_residual == 0.0


def test_hand_kkt_example():
    sol = solve_qp(problem([[-2, 0, -1]], [1.0], lo=WIDE_LO, hi=WIDE_HI))
    assert sol.feasible
    assert np.allclose(sol.x, [-0.4, 0.0, -0.2], atol=1e-14)
    assert sol.active_set == (0,)
    assert kkt_residual(sol_problem := problem([[-2, 0, -1]], [1.0], lo=WIDE_LO, hi=WIDE_HI),
                        np.array([-0.4, 0.0, -0.2])) <= 1e-10
    # the grid oracle agrees with the hand derivation
    g = grid_qp(sol_problem.quad_diag, [[-2, 0, -1]], [1.0], [-1, -1, -np.inf], [1, 1, np.inf])
    assert np.allclose(g[0], [-0.4, 0.0, -0.2], atol=1e-8)


def test_contradictory_rows_are_infeasible():
    sol = solve_qp(problem([[1, 0, 0], [-1, 0, 0]], [1.0, 0.0], lo=WIDE_LO, hi=WIDE_HI))
    assert sol.status is QpStatus.INFEASIBLE
    assert sol.x is None


def test_kkt_residual_examples():
    p = problem([[-2, 0, -1]], [1.0], lo=WIDE_LO, hi=WIDE_HI)
    # candidate violating the row by 0.5
    assert kkt_residual(p, np.array([-0.15, 0.0, -0.2])) >= 0.5
    free = problem(np.zeros((0, 3)), [], lo=np.full(3, -np.inf), hi=np.full(3, np.inf))
    assert kkt_residual(free, np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        kkt_residual(free, np.zeros(2))


def test_find_feasible_point_examples():
    r = find_feasible_point([], LO, HI)
    assert r.feasible and np.array_equal(r.point, [0.0, 0.0, 0.0])
    r = find_feasible_point([ConstraintRow([1, 0, 0], 0.4)], LO, HI)
    assert r.feasible and 0.4 - 1e-12 <= r.point[0] <= 0.5
    r = find_feasible_point([ConstraintRow([1, 0, 0], 0.6)], LO, HI)
    assert not r.feasible and r.max_violation > 1e-9


def test_degenerate_rows():
    # zero row with rhs <= 0 is vacuous, with rhs > 0 it is unsatisfiable
    assert solve_qp(problem([[0, 0, 0]], [-1.0])).feasible
    assert solve_qp(problem([[0, 0, 0]], [0.0])).feasible
    assert not solve_qp(problem([[0, 0, 0]], [1e-3])).feasible


def test_nearly_antiparallel_rows_are_infeasible():
    # recorded from a generalization8 episode: rows 1 and 2 need u1 >= 0.0124 and
    # u1 <= -0.0321; their ~1e-10 u2 components must not be used to reconcile them
    A = [[1.3412607261125231, -12.50000000029844, -1.0], [1.1587392741319502, 6.560352261431035e-11, 0.0],
         [-0.6825214521144516, 1.22021504012082e-10, 0.0], [-1.8412607262638645, 1.9037216247852484e-11, 0.0],
         [1.0587392738874768, 2.9000000002984403, 0.0], [-1.9412607261125232, 2.30000000029844, 0.0]]
    b = [158.0489803428729, 0.014330531419065928, 0.02192449702641875, -0.8217582475745834,
         -4.508534089786573, -4.236883594668854]
    p = problem(A, b, (1.0, 1.0, 1000.0))
    assert enumerate_qp(p.quad_diag, np.array(A), np.array(b), LO, HI) is None
    assert not find_feasible_point(p.rows, LO, HI).feasible
    assert solve_qp(p).status is QpStatus.INFEASIBLE


def test_box_faces_in_active_set():
    # u1 >= 0.7 is clipped by the box at 0.5 -> infeasible; u1 >= 0.4 pushes against it
    sol = solve_qp(problem([[1, 0, 0]], [0.5]))
    assert sol.feasible and sol.x[0] == pytest.approx(0.5, abs=1e-15)
    assert 0 in sol.active_set


def test_malformed_problems():
    with pytest.raises(ConfigError):
        QpProblem(np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ConfigError):
        QpProblem(np.ones(3), (), np.array([1.0, 0, 0]), np.array([0.0, 0, 0]))
    with pytest.raises(ConfigError):
        QpProblem(np.ones(3), (ConstraintRow([1.0, 0.0], 0.0),))


def test_batched_enumeration_matches_plain_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(150):
        q, A, b = random_instance(rng)
        e1 = enumerate_qp(q, A, b, LO, HI)
        e2 = enumerate_qp_batched(q, A, b, LO, HI)
        assert (e1 is None) == (e2 is None)
        if e1 is not None:
            assert abs(e1[1] - e2[1]) <= 1e-8 * max(1.0, abs(e1[1]))


def test_grid_oracle_on_sample():
    rng = np.random.default_rng(5)
    for _ in range(8):
        q, A, b = random_instance(rng)
        sol = solve_qp(problem(A, b, q))
        g = grid_qp(q, A, b, LO, HI, res=2e-3)
        assert (g is not None) == sol.feasible
        if g is not None:
            assert problem(A, b, q).objective(sol.x) <= g[1] + 1e-6


# properties -------------------------------------------------------------------

coef = st.floats(-5, 5, allow_nan=False, width=64)
inst = st.tuples(
    st.lists(st.tuples(coef, coef, coef, coef), min_size=0, max_size=14),
    st.sampled_from([1.0, 10.0, 1000.0]),
)


def _from(data):
    rows, xi = data
    A = np.array([r[:3] for r in rows], float).reshape(-1, 3)
    b = np.array([r[3] for r in rows], float)
    return np.array([1.0, 1.0, xi]), A, b


@given(inst)
def test_matches_enumeration_oracle(data):
    q, A, b = _from(data)
    p = problem(A, b, q)
    sol = solve_qp(p)
    ref = enumerate_qp_batched(q, A, b, LO, HI)
    assert sol.feasible == (ref is not None)
    if sol.feasible:
        assert abs(p.objective(sol.x) - ref[1]) <= 1e-6
        assert sol.kkt_residual <= 1e-8


@given(inst)
def test_feasible_solution_satisfies_rows_and_box(data):
    q, A, b = _from(data)
    sol = solve_qp(problem(A, b, q))
    if sol.feasible:
        if len(b):
            assert np.all(A @ sol.x - b >= -1e-9 * (1 + np.abs(b)))
        assert np.all(sol.x[:2] >= -0.5 - 1e-12) and np.all(sol.x[:2] <= 0.5 + 1e-12)


@given(inst)
def test_infeasibility_soundness(data):
    q, A, b = _from(data)
    p = problem(A, b, q)
    assert solve_qp(p).feasible == find_feasible_point(p.rows, LO, HI).feasible


@given(inst)
def test_determinism(data):
    q, A, b = _from(data)
    s1 = solve_qp(problem(A, b, q))
    s2 = solve_qp(problem(A.copy(), b.copy(), q.copy()))
    assert s1.status == s2.status
    if s1.feasible:
        assert s1.x.tobytes() == s2.x.tobytes()
        assert s1.active_set == s2.active_set
