import numpy as np
import pytest
from conftest import linprog_oracle
from hypothesis import given, settings
from hypothesis import strategies as st

from srg.generators import generate, preset
from srg.milp import MilpInstance, to_canonical_min
from srg.simplex import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LpLimits, solve_lp


def lp(c, A, b, lo, hi):
    n = len(c)
    return MilpInstance(c=c, A=np.asarray(A, float).reshape(-1, n), b=b, lower=lo, upper=hi,
                        integrality=np.zeros(n, bool))


def test_textbook_lp():
    # min -x - y s.t. x + 2y <= 4, 3x + y <= 6 (as >= rows), x, y >= 0
    inst = lp([-1, -1], [[-1, -2], [-3, -1]], [-4, -6], [0, 0], [np.inf, np.inf])
    res = solve_lp(inst)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [1.6, 1.2], atol=1e-9)
    assert res.objective == pytest.approx(-2.8, abs=1e-12)
    # duals satisfy complementary slackness and strong duality
    np.testing.assert_allclose(res.duals, [0.4, 0.2], atol=1e-9)
    assert res.dual_objective == pytest.approx(res.objective, abs=1e-9)


def test_status_detection():
    assert solve_lp(lp([1], [[1], [-1]], [2, -1], [0], [10])).status == INFEASIBLE
    assert solve_lp(lp([-1], [[1]], [0], [0], [np.inf])).status == UNBOUNDED
    assert solve_lp(lp([1], np.zeros((0, 1)), [], [2], [5])).x[0] == 2


def test_bound_overrides_and_conflicting_bounds():
    inst = lp([1, 1], [[1, 1]], [1], [0, 0], [1, 1])
    res = solve_lp(inst, lower=[0.7, 0], upper=[1, 1])
    assert res.objective == pytest.approx(1.0)
    assert solve_lp(inst, lower=[1, 0], upper=[0, 1]).status == INFEASIBLE


def test_iteration_limit_reported():
    inst = to_canonical_min(generate(preset("set_cover", "tiny", seed=0)))
    assert solve_lp(inst, LpLimits(max_iterations=1)).status == ITERATION_LIMIT


def test_requires_canonical_form():
    inst = lp([1], [[1]], [0], [0], [1]).replace(sense="maximize")
    with pytest.raises(ValueError):
        solve_lp(inst)


@pytest.mark.parametrize("bench", ["set_cover", "mis", "ca", "cfl"])
def test_matches_highs_on_benchmark_relaxations(bench):
    for seed in range(5):
        inst = to_canonical_min(generate(preset(bench, "tiny", seed=seed)))
        res = solve_lp(inst)
        status, obj = linprog_oracle(inst)
        assert status == 0 and res.status == OPTIMAL
        assert res.objective == pytest.approx(obj, rel=1e-9, abs=1e-9)
        assert res.dual_objective == pytest.approx(obj, rel=1e-7, abs=1e-7)
        assert np.all(res.duals >= -1e-9)


def test_deterministic():
    inst = to_canonical_min(generate(preset("cfl", "tiny", seed=1)))
    a, b = solve_lp(inst), solve_lp(inst)
    assert np.array_equal(a.x, b.x) and a.basis == b.basis


@st.composite
def random_lp(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(0, 6))
    ints = st.integers(-5, 5)
    c = draw(st.lists(ints, min_size=n, max_size=n))
    A = draw(st.lists(st.lists(ints, min_size=n, max_size=n), min_size=m, max_size=m))
    b = draw(st.lists(ints, min_size=m, max_size=m))
    lo = draw(st.lists(st.sampled_from([-np.inf, -2, 0, 1]), min_size=n, max_size=n))
    width = draw(st.lists(st.sampled_from([0, 1, 3, np.inf]), min_size=n, max_size=n))
    hi = [l + w if np.isfinite(l) else (w if np.isfinite(w) else np.inf)
          for l, w in zip(lo, width)]
    return lp(c, np.array(A, float).reshape(m, n), b, lo, hi)


@given(random_lp())
@settings(max_examples=300, deadline=None)
def test_agrees_with_highs(inst):
    res = solve_lp(inst)
    status, obj = linprog_oracle(inst)
    if status == 0:
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(obj, rel=1e-7, abs=1e-7)
        assert np.all(inst.A @ res.x >= inst.b - 1e-7)
        assert np.all((res.x >= inst.lower - 1e-9) & (res.x <= inst.upper + 1e-9))
    elif status == 2:
        # HiGHS reports "infeasible or unbounded" ambiguously under status 2
        assert res.status in (INFEASIBLE, UNBOUNDED)
    elif status == 3:
        assert res.status == UNBOUNDED
