from __future__ import annotations

import sys

import pytest

from tepcvsr.model import BINARY, MilpModel
from tepcvsr.solver_iface import (
    ENV_SOLVER,
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ScipyBackend,
    SolveRequest,
    SolverError,
    SubprocessBackend,
    get_backend,
    solve,
    solve_lp_relaxation,
)


def simple_lp() -> MilpModel:
    m = MilpModel("lp")
    m.add_var("x")
    m.add_row("c", {"x": 1.0}, ">=", 3.0)
    m.add_objective({"x": 1.0})
    return m


def knapsack() -> MilpModel:
    m = MilpModel("knap")
    values = {"a": 6.0, "b": 5.0, "c": 4.0}
    weights = {"a": 3.0, "b": 2.0, "c": 2.0}
    row = {}
    for name in values:
        m.add_var(name, BINARY)
        row[name] = weights[name]
        m.add_objective({name: -values[name]})  # maximize value
    m.add_row("cap", row, "<=", 4.0)
    return m


def test_min_x_geq_3():
    res = solve(SolveRequest(simple_lp()))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(3.0)
    assert res.bound == pytest.approx(3.0)


def test_infeasible():
    m = MilpModel("inf")
    m.add_var("x", lb=1.0)
    m.add_row("c", {"x": 1.0}, "<=", 0.0)
    res = solve(SolveRequest(m))
    assert res.status == INFEASIBLE
    assert res.objective is None


def test_unbounded():
    m = MilpModel("unb")
    m.add_var("x")
    m.add_objective({"x": 1.0})
    res = solve(SolveRequest(m))
    assert res.status == UNBOUNDED


def test_knapsack_solution():
    res = solve(SolveRequest(knapsack()))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-9.0)  # items b + c
    assert res.values["a"] == pytest.approx(0.0, abs=1e-6)


def test_optimal_respects_gap_contract():
    res = solve(SolveRequest(knapsack(), relative_gap=1e-8))
    assert abs(res.objective - res.bound) <= 1e-8 * max(1.0, abs(res.objective)) + 1e-9


def test_lp_relaxation_bounds_milp():
    req = SolveRequest(knapsack())
    milp_res = solve(req)
    relax_res = solve_lp_relaxation(req)
    assert relax_res.status == OPTIMAL
    assert relax_res.objective <= milp_res.objective + 1e-9


def test_relaxation_with_fixed_binaries_matches_restricted_lp():
    req = SolveRequest(knapsack(), fixed={"a": 0.0, "b": 1.0, "c": 1.0})
    fixed_milp = solve(req)
    fixed_relax = solve_lp_relaxation(req)
    assert fixed_relax.objective == pytest.approx(fixed_milp.objective, rel=1e-9)


def test_invalid_request_parameters():
    with pytest.raises(ValueError):
        SolveRequest(simple_lp(), time_limit=0.0)
    with pytest.raises(ValueError):
        SolveRequest(simple_lp(), relative_gap=-1.0)


def file_solver_backend() -> SubprocessBackend:
    return SubprocessBackend([sys.executable, "-m", "tepcvsr.solver_iface", "{lp}", "{sol}"])


def test_subprocess_roundtrip_matches_inprocess():
    req = SolveRequest(knapsack())
    direct = ScipyBackend().solve(req)
    via_files = file_solver_backend().solve(req)
    assert via_files.status == OPTIMAL
    assert via_files.objective == pytest.approx(direct.objective, rel=1e-9)
    assert via_files.values == pytest.approx(direct.values, abs=1e-7)


def test_subprocess_reports_infeasible():
    m = MilpModel("inf")
    m.add_var("x", lb=1.0)
    m.add_row("c", {"x": 1.0}, "<=", 0.0)
    res = file_solver_backend().solve(SolveRequest(m))
    assert res.status == INFEASIBLE


def test_subprocess_missing_executable_names_backend():
    backend = SubprocessBackend(["/nonexistent/solver-binary"])
    with pytest.raises(SolverError, match="solver-binary"):
        backend.solve(SolveRequest(simple_lp()))


def test_env_var_selects_backend(monkeypatch):
    monkeypatch.setenv(ENV_SOLVER, f"{sys.executable} -m tepcvsr.solver_iface {{lp}} {{sol}}")
    backend = get_backend()
    assert backend.name.startswith("subprocess:")
    res = backend.solve(SolveRequest(simple_lp()))
    assert res.objective == pytest.approx(3.0)
    monkeypatch.delenv(ENV_SOLVER)
    assert get_backend().name == "scipy"


def test_solution_file_parser_tolerates_comments(tmp_path):
    sol = tmp_path / "x.sol"
    sol.write_text("# objective 3.0\n// a comment\njunk line without value\nx 3.0\n")
    script = tmp_path / "fake_solver.py"
    script.write_text(
        "import shutil, sys\n"
        f"shutil.copy({str(sol)!r}, sys.argv[2])\n"
    )
    backend = SubprocessBackend([sys.executable, str(script), "{lp}", "{sol}"])
    res = backend.solve(SolveRequest(simple_lp()))
    assert res.status == OPTIMAL
    assert res.values["x"] == pytest.approx(3.0)
