"""Solver backends behind a small request/result contract.

Two modes are provided:

* ``scipy`` (default): in-process HiGHS via :func:`scipy.optimize.milp`.
* ``subprocess``: any external executable driven through an LP-file plus
  solution-file round trip. The solution file is plain ``name value`` lines;
  ``#``-prefixed lines are treated as comments (``# status ...`` and
  ``# objective ...`` are recognized when present).

This module is also runnable (``python -m tepcvsr.solver_iface in.lp out.sol``)
as a file-based LP/MILP solver, which doubles as the reference executable for
the subprocess mode.
"""
from __future__ import annotations

import os
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import BINARY, MilpModel, read_lp

OPTIMAL = "optimal"
GAP_REACHED = "gap_reached"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIME_LIMIT = "time_limit"
ERROR = "error"

ENV_SOLVER = "TEPCVSR_SOLVER"


class SolverError(Exception):
    """Backend unavailable, crashed, or produced an unusable solution."""


@dataclass
class SolveRequest:
    model: MilpModel
    time_limit: float = 300.0
    relative_gap: float = 1e-8
    integrality_tol: float = 1e-6
    threads: int = 1
    fixed: dict[str, float] | None = None
    relax_binaries: bool = False

    def __post_init__(self):
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.relative_gap < 0:
            raise ValueError("relative_gap must be nonnegative")


@dataclass
class SolveResult:
    status: str
    objective: float | None
    values: dict[str, float] = field(default_factory=dict)
    bound: float | None = None
    wall_time: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, GAP_REACHED)


def _effective_model(req: SolveRequest) -> MilpModel:
    m = req.model
    if req.fixed:
        m = m.fixed(req.fixed)
    if req.relax_binaries:
        m = m.relaxed()
    return m


class ScipyBackend:
    """In-process HiGHS through scipy.optimize.milp (single-threaded)."""

    name = "scipy"

    def solve(self, req: SolveRequest) -> SolveResult:
        m = _effective_model(req)
        names = m.var_names()
        idx = {n: i for i, n in enumerate(names)}
        n = len(names)
        c = np.zeros(n)
        for v, coef in m.objective.items():
            c[idx[v]] = coef
        integrality = np.array(
            [1 if v.kind == BINARY else 0 for v in m.variables], dtype=int
        )
        lb = np.array([v.lb for v in m.variables])
        ub = np.array([v.ub for v in m.variables])

        constraints = []
        if m.rows:
            data, ri, ci = [], [], []
            row_lb = np.empty(len(m.rows))
            row_ub = np.empty(len(m.rows))
            for i, row in enumerate(m.rows):
                for v, coef in row.coeffs.items():
                    data.append(coef)
                    ri.append(i)
                    ci.append(idx[v])
                if row.sense == "<=":
                    row_lb[i], row_ub[i] = -np.inf, row.rhs
                elif row.sense == ">=":
                    row_lb[i], row_ub[i] = row.rhs, np.inf
                else:
                    row_lb[i] = row_ub[i] = row.rhs
            a = sp.csr_matrix((data, (ri, ci)), shape=(len(m.rows), n))
            constraints = [LinearConstraint(a, row_lb, row_ub)]

        options = {
            "time_limit": float(req.time_limit),
            "mip_rel_gap": float(req.relative_gap),
            "presolve": True,
        }
        t0 = time.perf_counter()
        res = milp(
            c=c,
            constraints=constraints,
            integrality=integrality,
            bounds=Bounds(lb, ub),
            options=options,
        )
        wall = time.perf_counter() - t0

        if res.status == 2:
            return SolveResult(INFEASIBLE, None, {}, None, wall, res.message)
        if res.status == 3:
            return SolveResult(UNBOUNDED, None, {}, None, wall, res.message)
        if res.status == 1 or (res.status != 0 and res.x is None):
            status = TIME_LIMIT if res.status == 1 else ERROR
            values = dict(zip(names, res.x)) if res.x is not None else {}
            obj = m.objective_value(values) if values else None
            return SolveResult(status, obj, values, None, wall, res.message)
        if res.x is None:
            return SolveResult(ERROR, None, {}, None, wall, res.message)

        values = dict(zip(names, (float(x) for x in res.x)))
        objective = float(res.fun) + m.objective_offset
        bound = objective
        status = OPTIMAL
        if integrality.any():
            dual = getattr(res, "mip_dual_bound", None)
            if dual is not None:
                bound = float(dual) + m.objective_offset
            gap = abs(objective - bound)
            if gap > req.relative_gap * max(1.0, abs(objective)) + 1e-12:
                status = GAP_REACHED
        return SolveResult(status, objective, values, bound, wall, res.message)


class SubprocessBackend:
    """Drives an external solver executable via LP + solution files.

    The command is either a bare executable (invoked as ``exe in.lp out.sol``)
    or a template whose arguments may contain ``{lp}`` and ``{sol}``
    placeholders.
    """

    name = "subprocess"

    def __init__(self, command):
        if isinstance(command, str):
            command = shlex.split(command)
        if not command:
            raise SolverError("subprocess backend: empty solver command")
        self.command = list(command)
        self.name = f"subprocess:{os.path.basename(self.command[0])}"

    def _argv(self, lp_path: str, sol_path: str) -> list[str]:
        if any("{lp}" in a or "{sol}" in a for a in self.command):
            return [a.replace("{lp}", lp_path).replace("{sol}", sol_path) for a in self.command]
        return self.command + [lp_path, sol_path]

    def solve(self, req: SolveRequest) -> SolveResult:
        m = _effective_model(req)
        t0 = time.perf_counter()
        with tempfile.TemporaryDirectory(prefix="tepcvsr_") as tmp:
            lp_path = os.path.join(tmp, "model.lp")
            sol_path = os.path.join(tmp, "model.sol")
            m.write_lp(lp_path)
            argv = self._argv(lp_path, sol_path)
            try:
                proc = subprocess.run(
                    argv,
                    capture_output=True,
                    text=True,
                    timeout=req.time_limit + 30.0,
                )
            except FileNotFoundError as exc:
                raise SolverError(f"backend {self.name}: executable not found ({exc})") from exc
            except subprocess.TimeoutExpired:
                return SolveResult(
                    TIME_LIMIT, None, {}, None, time.perf_counter() - t0,
                    f"backend {self.name}: timed out",
                )
            if proc.returncode != 0:
                raise SolverError(
                    f"backend {self.name}: exit {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            if not os.path.exists(sol_path):
                raise SolverError(f"backend {self.name}: no solution file written")
            with open(sol_path, encoding="utf-8") as fh:
                sol_text = fh.read()
        wall = time.perf_counter() - t0

        status_note = None
        values: dict[str, float] = {}
        for line in sol_text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#") or line.startswith("//"):
                parts = line.lstrip("#/ ").split()
                if len(parts) >= 2 and parts[0].lower() == "status":
                    status_note = parts[1].lower()
                continue
            parts = line.split()
            if len(parts) != 2:
                continue
            name, raw = parts
            try:
                val = float(raw)
            except ValueError:
                continue
            if m.has_var(name):
                values[name] = val
        if status_note in (INFEASIBLE, "infeasible"):
            return SolveResult(INFEASIBLE, None, {}, None, wall)
        if status_note == "unbounded":
            return SolveResult(UNBOUNDED, None, {}, None, wall)
        if not values and m.n_vars:
            raise SolverError(f"backend {self.name}: solution file has no variable values")
        for v in m.variables:
            if v.name not in values:
                # absent names mean zero in common solver outputs
                values[v.name] = min(max(0.0, v.lb), v.ub)
        objective = m.objective_value(values)
        return SolveResult(OPTIMAL, objective, values, objective, wall)


def get_backend(spec: str | None = None):
    """Resolve a backend from an explicit spec or the environment.

    ``spec`` may be ``"scipy"``, ``"subprocess:<command>"``, or a bare command
    line for an external executable. When omitted, ``$TEPCVSR_SOLVER``
    (if set) selects the backend, else scipy is used.
    """
    if spec is None:
        spec = os.environ.get(ENV_SOLVER) or "scipy"
    if spec == "scipy":
        return ScipyBackend()
    if spec.startswith("subprocess:"):
        return SubprocessBackend(spec.split(":", 1)[1])
    return SubprocessBackend(spec)


def solve(req: SolveRequest, backend=None) -> SolveResult:
    """Solve a MILP/LP per the request contract."""
    if backend is None or isinstance(backend, str):
        backend = get_backend(backend)
    return backend.solve(req)


def solve_lp_relaxation(req: SolveRequest, backend=None) -> SolveResult:
    """Solve with binaries relaxed to [0, 1] (fixed ones stay fixed)."""
    return solve(replace(req, relax_binaries=True), backend)


def main(argv: list[str] | None = None) -> int:
    """File-based solve: ``python -m tepcvsr.solver_iface in.lp out.sol``."""
    import argparse

    parser = argparse.ArgumentParser(prog="tepcvsr-lpsolve", description=main.__doc__)
    parser.add_argument("lp_file")
    parser.add_argument("sol_file")
    parser.add_argument("--time-limit", type=float, default=300.0)
    parser.add_argument("--gap", type=float, default=1e-8)
    args = parser.parse_args(argv)

    with open(args.lp_file, encoding="utf-8") as fh:
        model = read_lp(fh.read())
    req = SolveRequest(model, time_limit=args.time_limit, relative_gap=args.gap)
    result = ScipyBackend().solve(req)
    with open(args.sol_file, "w", encoding="utf-8") as fh:
        fh.write(f"# status {result.status}\n")
        if result.objective is not None:
            fh.write(f"# objective {result.objective!r}\n")
        for name, val in result.values.items():
            fh.write(f"{name} {val!r}\n")
    return 0 if result.ok or result.status in (INFEASIBLE, UNBOUNDED) else 1


if __name__ == "__main__":
    sys.exit(main())
