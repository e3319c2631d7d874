import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srg.generators import BENCHMARKS, fixed_toy_instance, generate, preset
from srg.io import InstanceFormatError, instance_to_dict, read_instance, write_instance, write_mps
from srg.milp import (
    GE, LE, MAXIMIZE, MilpInstance, display_objective, evaluate_objective, infeasible_solution,
    is_feasible, make_solution, snap_integers, to_canonical_min, violation_vector,
)


def small(sense="minimize", row_sense="GL"):
    return MilpInstance(c=[1.0, 2.0], A=[[1.0, 1.0], [1.0, -1.0]], b=[1.0, 0.5],
                        lower=[0, 0], upper=[1, 1], integrality=[True, False],
                        sense=sense, row_sense=row_sense, name="small")


def test_instance_is_immutable():
    inst = small()
    with pytest.raises(ValueError):
        inst.c[0] = 5.0


@pytest.mark.parametrize("kwargs, msg", [
    (dict(A=[[1.0], [2.0]]), "A has shape"),
    (dict(lower=[2, 0]), "lower bound exceeds"),
    (dict(row_sense="GX"), "row_sense"),
    (dict(sense="upward"), "unknown sense"),
    (dict(c=[np.nan, 1.0]), "NaN"),
])
def test_instance_validation(kwargs, msg):
    base = dict(c=[1.0, 2.0], A=[[1.0, 1.0], [1.0, -1.0]], b=[1.0, 0.5], lower=[0, 0],
                upper=[1, 1], integrality=[True, False])
    base.update(kwargs)
    with pytest.raises(ValueError, match=msg):
        MilpInstance(**base)


def test_violation_vector_handles_both_senses():
    inst = small()
    # row 0: x0 + x1 >= 1 violated by 1 at the origin; row 1: x0 - x1 <= 0.5 holds
    np.testing.assert_array_equal(violation_vector(inst, [0, 0]), [1.0, 0.0])
    np.testing.assert_array_equal(violation_vector(inst, [1, 0]), [0.0, 0.5])


def test_toy_violation_at_origin_matches_hand_sum():
    toy = fixed_toy_instance()
    # at the origin the violation of row i is max(b_i, 0)
    expected = np.maximum(toy.b, 0.0)
    np.testing.assert_array_equal(violation_vector(toy, [0.0, 0.0]), expected)
    assert np.flatnonzero(expected).tolist() == [5, 6, 7, 8, 9]


def test_feasibility_and_solution_report():
    inst = small()
    assert is_feasible(inst, [1, 0.6])
    assert not is_feasible(inst, [0.5, 0.5])  # fractional integer variable
    sol = make_solution(inst, [1, 0.6])
    assert sol.feasible and sol.objective == pytest.approx(2.2)
    bad = infeasible_solution(inst, "nothing")
    assert not bad.feasible and np.isnan(bad.objective)
    with pytest.raises(ValueError):
        is_feasible(inst, [1, 0], tol=-1)


def test_canonical_form_and_display_objective():
    inst = small(sense=MAXIMIZE)
    canon = to_canonical_min(inst)
    assert canon.is_canonical and canon.row_sense == GE * 2
    np.testing.assert_array_equal(canon.c, -inst.c)
    np.testing.assert_array_equal(canon.A[1], [-1.0, 1.0])
    assert canon.b[1] == -0.5
    assert to_canonical_min(canon) is canon
    x = np.array([1.0, 0.25])
    assert display_objective(inst, evaluate_objective(canon, x)) == evaluate_objective(inst, x)
    assert is_feasible(inst, x) == is_feasible(canon, x)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
@settings(max_examples=50, deadline=None)
def test_canonical_preserves_feasibility(vals):
    inst = small(sense=MAXIMIZE, row_sense="LG")
    x = np.array(vals[:2])
    assert is_feasible(inst, x, 1e-9) == is_feasible(to_canonical_min(inst), x, 1e-9)


def test_snap_integers_only_touches_close_integer_cells():
    inst = small()
    out = snap_integers(inst, [0.9999999999, 0.9999999999])
    assert out[0] == 1.0 and out[1] == 0.9999999999


@pytest.mark.parametrize("bench", [b for b in BENCHMARKS if b != "toy2d"])
def test_json_roundtrip_is_bit_identical(tmp_path, bench):
    inst = generate(preset(bench, "micro", seed=3))
    back = read_instance(write_instance(inst, tmp_path / "i.milp.json"))
    assert back.equals(inst)


def test_json_roundtrip_infinite_bounds(tmp_path):
    inst = MilpInstance(c=[1.0], A=[[1.0]], b=[0.1], lower=[-np.inf], upper=[np.inf],
                        integrality=[False], name="free")
    assert read_instance(write_instance(inst, tmp_path / "f.json")).equals(inst)


def test_json_rejects_bad_sentinel(tmp_path):
    d = instance_to_dict(small())
    d["upper"][0] = "huge"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(InstanceFormatError):
        read_instance(p)


def test_mps_layout(tmp_path):
    inst = small(sense=MAXIMIZE, row_sense=GE + LE)
    text = write_mps(inst, tmp_path / "s.mps").read_text().splitlines()
    assert text[0].startswith("NAME")
    assert "* original sense maximize; objective negated" in text
    assert text[-1] == "ENDATA"
    sections = [ln for ln in text if ln and not ln.startswith((" ", "*"))]
    assert sections[1:] == ["ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"]
    assert any("'INTORG'" in ln for ln in text) and any("'INTEND'" in ln for ln in text)
    # fixed columns: the row name of a COLUMNS entry starts at column 15
    col_line = next(ln for ln in text if ln.startswith("    C0000000"))
    assert col_line[14:22].strip() in ("OBJ", "R0000000")
