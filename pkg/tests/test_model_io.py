from __future__ import annotations

import math

import pytest

from tepcvsr.model import BINARY, MilpModel, ModelError, read_lp
from tepcvsr.solver_iface import SolveRequest, solve


def gnarly_model() -> MilpModel:
    m = MilpModel("gnarly")
    m.add_var("x_free")
    m.add_var("x_lo", lb=-2.5)
    m.add_var("x_hi", lb=-math.inf, ub=7.25e3)
    m.add_var("x_box", lb=-1.5, ub=1.5)
    m.add_var("x_fix", lb=0.125, ub=0.125)
    m.add_var("b_on", BINARY, lb=1.0)
    m.add_var("b_off", BINARY)
    m.add_row("r_le", {"x_free": 2.0, "b_on": -31.415926535897931}, "<=", 4.5)
    m.add_row("r_ge", {"x_lo": -0.3, "x_hi": 1e-6}, ">=", -2.0)
    m.add_row("r_eq", {"x_box": 1.0, "x_fix": -1.0, "b_off": 0.5}, "==", 0.0)
    m.add_objective({"x_free": 1.0, "x_lo": -2.0, "b_off": 100.0}, offset=-12.75)
    return m


def as_comparable(m: MilpModel):
    variables = {v.name: (v.kind, v.lb, v.ub) for v in m.variables}
    rows = {r.name: (sorted(r.coeffs.items()), r.sense, r.rhs) for r in m.rows}
    return variables, rows, sorted(m.objective.items()), m.objective_offset


def test_lp_roundtrip_preserves_structure():
    m = gnarly_model()
    again = read_lp(m.lp_string())
    assert as_comparable(again) == as_comparable(m)


def test_lp_roundtrip_twice_is_stable():
    m = gnarly_model()
    once = read_lp(m.lp_string())
    twice = read_lp(once.lp_string())
    assert as_comparable(once) == as_comparable(twice)


def test_reimported_lp_reproduces_objective():
    m = MilpModel("t")
    m.add_var("x", lb=0.0, ub=10.0)
    m.add_var("y", lb=0.0, ub=10.0)
    m.add_var("flag", BINARY)
    m.add_row("c1", {"x": 1.0, "y": 2.0}, ">=", 3.3)
    m.add_row("c2", {"x": 1.0, "flag": -5.0}, "<=", 0.0)
    m.add_objective({"x": 1.7, "y": 0.9, "flag": 0.25}, offset=1.0)
    direct = solve(SolveRequest(m, relative_gap=1e-9))
    again = solve(SolveRequest(read_lp(m.lp_string()), relative_gap=1e-9))
    assert direct.status == again.status == "optimal"
    assert again.objective == pytest.approx(direct.objective, rel=1e-9)


def test_lp_roundtrip_with_wrapped_rows():
    # rows wider than the wrap width continue on indented lines
    m = MilpModel("wide")
    coeffs = {}
    for i in range(40):
        name = m.add_var(f"very_long_variable_name_{i:03d}", lb=0.0, ub=5.0)
        coeffs[name] = 1.0 + i / 7.0
    m.add_row("wide_row", coeffs, "<=", 123.456)
    m.add_objective(coeffs)
    text = m.lp_string()
    assert any(line.startswith("   ") for line in text.splitlines())
    assert as_comparable(read_lp(text)) == as_comparable(m)


def test_duplicate_names_rejected():
    m = MilpModel("t")
    m.add_var("x")
    with pytest.raises(ModelError, match="duplicate"):
        m.add_var("x")
    m.add_row("c", {"x": 1.0}, "<=", 1.0)
    with pytest.raises(ModelError, match="duplicate"):
        m.add_row("c", {"x": 1.0}, "<=", 2.0)


def test_unknown_variable_rejected():
    m = MilpModel("t")
    with pytest.raises(ModelError, match="undeclared"):
        m.add_row("c", {"nope": 1.0}, "<=", 1.0)
    with pytest.raises(ModelError, match="undeclared"):
        m.add_objective({"nope": 1.0})


def test_invalid_names_rejected():
    m = MilpModel("t")
    with pytest.raises(ModelError):
        m.add_var("3bad")
    with pytest.raises(ModelError):
        m.add_var("has space")


def test_fixed_pins_bounds_without_touching_original():
    m = gnarly_model()
    pinned = m.fixed({"b_off": 1.0, "x_free": 2.0})
    assert pinned.var("b_off").lb == pinned.var("b_off").ub == 1.0
    assert m.var("b_off").lb == 0.0
    with pytest.raises(ModelError):
        m.fixed({"ghost": 1.0})


def test_relaxed_turns_binaries_continuous():
    m = gnarly_model()
    relaxed = m.relaxed()
    assert relaxed.var("b_on").kind == "continuous"
    assert relaxed.var("b_on").lb == 1.0  # bounds survive relaxation
    assert m.var("b_on").kind == BINARY


def test_mps_structure():
    m = gnarly_model()
    text = m.mps_string()
    assert text.startswith("NAME")
    assert text.rstrip().endswith("ENDATA")
    assert "'INTORG'" in text and "'INTEND'" in text
    for section in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
        assert f"\n{section}\n" in text
    for name in ("x_free", "b_on", "r_le", "r_eq"):
        assert name in text
    assert " FX BND  x_fix" in text
    assert " FR BND  x_free" in text
    # objective offset lands on the RHS of the objective row, negated
    assert "RHS  OBJ  12.75" in text


def test_objective_value_helper():
    m = gnarly_model()
    values = {v.name: 1.0 for v in m.variables}
    expected = 1.0 - 2.0 + 100.0 - 12.75
    assert m.objective_value(values) == pytest.approx(expected)
