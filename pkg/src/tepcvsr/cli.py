"""Command-line front end: screening, planning, verification, oracle checks.

Exit codes: 0 success, 2 input or validation problem, 3 solver/backend
problem, 4 time limit hit with a partial (non-optimal) result.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace

from . import __version__
from .decomp import (
    DecompositionError,
    OracleCapError,
    SecurityReport,
    enumerate_plans_oracle,
    iterative_plan,
    rank_contingencies,
    verify_plan,
)
from .formulation import (
    BigMViolationError,
    ExpansionPlan,
    FormulationError,
    IntegralityError,
    build_integrated_model,
    derive_candidate_lines,
    derive_cvsr_candidates,
    extract_plan,
)
from .netcase import CaseError, parse_matpower
from .problem import PlanningProblem, ProblemError, load_problem
from .solver_iface import TIME_LIMIT, SolveRequest, SolverError, solve

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_PARTIAL = 4


class CliInputError(Exception):
    pass


def _read_inputs(args) -> PlanningProblem:
    for path in (args.case, args.config):
        if not os.path.exists(path):
            raise CliInputError(f"input file not found: {path}")
    with open(args.case, encoding="utf-8") as fh:
        case = parse_matpower(fh.read())
    with open(args.config, encoding="utf-8") as fh:
        config = json.load(fh)
    problem = load_problem(case, config)
    if getattr(args, "no_cvsr", False):
        problem = problem.without_cvsr()
    if getattr(args, "cc", None) is not None:
        cc = replace(problem.cc, count=args.cc)
        if cc.branches is not None:
            cc = replace(cc, branches=cc.branches[: args.cc])
        problem = replace(problem, cc=cc)
    return problem


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- plan serialization ------------------------------------------------------


def plan_to_dict(plan: ExpansionPlan, problem: PlanningProblem, mode: str) -> dict:
    cands = {c.id: c for c in derive_candidate_lines(problem)}
    sites = {s.branch_id: s for s in derive_cvsr_candidates(problem)}
    stages = []
    for sp in plan.stages:
        stages.append(
            {
                "stage": sp.stage,
                "built_lines": [
                    {"id": k, "cost": cands[k].cost} for k in sp.built_lines
                ],
                "installed_cvsrs": [
                    {"branch": k, "cost": sites[k].cost} for k in sp.installed_cvsrs
                ],
            }
        )
    return {
        "mode": mode,
        "stages": stages,
        "alpha": {str(t): {str(k): v for k, v in sorted(d.items())} for t, d in plan.alpha.items()},
        "delta": {str(t): {str(k): v for k, v in sorted(d.items())} for t, d in plan.delta.items()},
        "costs": {
            "investment_lines": plan.costs.investment_lines,
            "investment_cvsr": plan.costs.investment_cvsr,
            "operating": plan.costs.operating,
            "total": plan.costs.total,
            "investment_lines_undiscounted": plan.costs.investment_lines_undiscounted,
            "investment_cvsr_undiscounted": plan.costs.investment_cvsr_undiscounted,
            "operating_undiscounted": plan.costs.operating_undiscounted,
        },
        "base_dispatch_mw": {
            f"b{b}_t{t}": {str(n): mw for n, mw in sorted(by_gen.items())}
            for (b, t), by_gen in sorted(plan.base_dispatch_mw.items())
        },
        "hourly_cost": {
            f"b{b}_t{t}": cost for (b, t), cost in sorted(plan.hourly_cost.items())
        },
        "audit": plan.audit,
        "objective": plan.costs.total,
    }


def plan_from_dict(data: dict) -> tuple[dict, dict, dict]:
    """Returns (alpha_by_stage, delta_by_stage, dispatch) from a plan document."""
    alpha = {int(t): {int(k): v for k, v in d.items()} for t, d in data["alpha"].items()}
    delta = {int(t): {int(k): v for k, v in d.items()} for t, d in data["delta"].items()}
    dispatch = {}
    for key, by_gen in data["base_dispatch_mw"].items():
        b, t = key[1:].split("_t")
        dispatch[(int(b), int(t))] = {int(n): mw for n, mw in by_gen.items()}
    return alpha, delta, dispatch


def _dump_plan(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_security_csv(path: str, report: SecurityReport) -> None:
    _write_csv(
        path,
        ["contingency", "block", "stage", "total_slack_MW", "worst_branch"],
        [
            [e.contingency, e.block, e.stage, f"{e.total_slack_mw:.6f}", e.worst_branch or ""]
            for e in report.entries
        ],
    )


def _write_costs_csv(path: str, plan: ExpansionPlan, problem: PlanningProblem) -> None:
    from .formulation import CostModel

    cm = CostModel.from_problem(problem)
    cands = {c.id: c for c in derive_candidate_lines(problem)}
    sites = {s.branch_id: s for s in derive_cvsr_candidates(problem)}
    rows = []
    for sp in plan.stages:
        disc = cm.investment_discount(sp.stage)
        for k in sp.built_lines:
            rows.append([f"line_{k}", "line", sp.stage, cands[k].cost, cands[k].cost * disc])
        for k in sp.installed_cvsrs:
            rows.append([f"cvsr_{k}", "cvsr", sp.stage, sites[k].cost, sites[k].cost * disc])
    for (b, t), cost in sorted(plan.hourly_cost.items()):
        undisc = cm.block_stage_hours(b, t) * cost
        disc = problem.blocks[b].hours_per_year * cm.operating_factor(t) * cost
        rows.append([f"operating_b{b}", "operating", t, undisc, disc])
    _write_csv(path, ["item", "type", "stage", "undiscounted", "discounted"], rows)


def _write_plots(args, plan: ExpansionPlan, problem: PlanningProblem, report: SecurityReport) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .formulation import CostModel

    cm = CostModel.from_problem(problem)
    stages = [sp.stage for sp in plan.stages]
    cands = {c.id: c for c in derive_candidate_lines(problem)}
    sites = {s.branch_id: s for s in derive_cvsr_candidates(problem)}
    line_inv = [
        sum(cands[k].cost * cm.investment_discount(sp.stage) for k in sp.built_lines) / 1e6
        for sp in plan.stages
    ]
    cvsr_inv = [
        sum(sites[k].cost * cm.investment_discount(sp.stage) for k in sp.installed_cvsrs) / 1e6
        for sp in plan.stages
    ]
    operating = [
        sum(
            problem.blocks[b].hours_per_year * cm.operating_factor(t) * cost
            for (b, t), cost in plan.hourly_cost.items()
            if t == sp.stage
        )
        / 1e6
        for sp in plan.stages
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(stages, line_inv, label="line investment")
    ax.bar(stages, cvsr_inv, bottom=line_inv, label="CVSR investment")
    bottom = [a + b for a, b in zip(line_inv, cvsr_inv)]
    ax.bar(stages, operating, bottom=bottom, label="operating")
    ax.set_xlabel("stage")
    ax.set_ylabel("discounted cost (M$)")
    ax.set_xticks(stages)
    ax.legend()
    fig.tight_layout()
    fig.savefig(_out_path(args, "costs_per_stage.svg"), metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    labels = [f"k{e.contingency}/b{e.block}/t{e.stage}" for e in report.entries]
    values = [e.total_slack_mw for e in report.entries]
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=5)
    ax.set_ylabel("total violation (MW)")
    fig.tight_layout()
    fig.savefig(_out_path(args, "slack_per_contingency.svg"), metadata={"Date": None})
    plt.close(fig)


def _summary_text(plan: ExpansionPlan, wall: float, mode: str, certified: bool) -> str:
    lines = [
        f"mode: {mode}",
        "built lines per stage: "
        + "; ".join(f"t{sp.stage}: {sp.built_lines or '-'}" for sp in plan.stages),
        "installed CVSRs per stage: "
        + "; ".join(f"t{sp.stage}: {sp.installed_cvsrs or '-'}" for sp in plan.stages),
        f"Investment cost (M$): {plan.costs.investment / 1e6:.2f}",
        f"Operating cost (M$): {plan.costs.operating / 1e6:.2f}",
        f"Total cost (M$): {plan.costs.total / 1e6:.2f}",
        f"N-1 verification: {'PASS' if certified else 'FAIL'}",
        f"wall time (s): {wall:.2f}",
    ]
    return "\n".join(lines)


# -- commands -----------------------------------------------------------------


def cmd_screen(args) -> int:
    problem = _read_inputs(args)
    case = problem.case
    ranking = rank_contingencies(problem, backend=args.backend)
    islanding_rows = []
    for k in sorted(ranking.islanding):
        branch = case.branch_by_id(k)
        islanding_rows.append([k, branch.from_bus, branch.to_bus])
    _write_csv(_out_path(args, "islanding.csv"), ["branch", "from_bus", "to_bus"], islanding_rows)
    rank_rows = []
    for pos, e in enumerate(ranking.entries, start=1):
        branch = case.branch_by_id(e.branch)
        cost = "inf" if math.isinf(e.cost_per_hour) else f"{e.cost_per_hour:.6f}"
        loading = "inf" if math.isinf(e.loading) else f"{e.loading:.6f}"
        rank_rows.append([pos, e.branch, branch.from_bus, branch.to_bus, cost, loading])
    _write_csv(
        _out_path(args, "ranking.csv"),
        ["rank", "branch", "from_bus", "to_bus", "cost_per_hour", "loading"],
        rank_rows,
    )
    print(f"islanding contingencies: {len(islanding_rows)}; ranked: {len(rank_rows)}")
    return EXIT_OK


def cmd_plan(args) -> int:
    problem = _read_inputs(args)
    t0 = time.perf_counter()
    partial = False
    if args.mode == "integrated":
        model = build_integrated_model(problem)
        res = solve(
            SolveRequest(model, time_limit=args.time_limit, relative_gap=args.gap),
            args.backend,
        )
        if res.status == TIME_LIMIT and res.values:
            partial = True
        elif not res.ok:
            raise SolverError(f"integrated solve ended with status {res.status}")
        plan = extract_plan(model, res.values, problem)
    else:
        plan, _history = iterative_plan(
            problem,
            backend=args.backend,
            relative_gap=args.gap,
            time_limit=args.time_limit,
            jobs=args.jobs,
        )
    wall = time.perf_counter() - t0

    report = verify_plan(problem, plan, backend=args.backend, jobs=args.jobs)
    doc = plan_to_dict(plan, problem, args.mode)
    doc["optimal"] = not partial
    _dump_plan(_out_path(args, "plan.json"), doc)
    _write_costs_csv(_out_path(args, "costs.csv"), plan, problem)
    _write_security_csv(_out_path(args, "security.csv"), report)
    summary = _summary_text(plan, wall, args.mode, report.certified_secure)
    with open(_out_path(args, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    if args.plots:
        _write_plots(args, plan, problem, report)
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_verify(args) -> int:
    problem = _read_inputs(args)
    if not os.path.exists(args.plan):
        raise CliInputError(f"input file not found: {args.plan}")
    with open(args.plan, encoding="utf-8") as fh:
        doc = json.load(fh)
    alpha, delta, dispatch = plan_from_dict(doc)
    from .decomp import assemble_plan

    plan = assemble_plan(problem, alpha, delta, dispatch)
    report = verify_plan(problem, plan, backend=args.backend, jobs=args.jobs)
    _write_security_csv(_out_path(args, "security.csv"), report)
    print(
        f"max total violation: {report.max_total_mw:.6f} MW "
        f"({'PASS' if report.certified_secure else 'FAIL'} at "
        f"{problem.slack_tolerance_mw} MW)"
    )
    return EXIT_OK if report.certified_secure else EXIT_SOLVER


def cmd_oracle(args) -> int:
    problem = _read_inputs(args)
    model = build_integrated_model(problem, override_bigm=args.override_bigm)
    res = solve(
        SolveRequest(model, time_limit=args.time_limit, relative_gap=min(args.gap, 1e-8)),
        args.backend,
    )
    if not res.ok:
        raise SolverError(f"integrated solve ended with status {res.status}")
    oracle = enumerate_plans_oracle(problem, backend=args.backend)
    rows = []
    for tr in oracle.trajectories:
        rows.append(
            [
                json.dumps(tr.build_stage_lines, sort_keys=True),
                json.dumps(tr.build_stage_cvsrs, sort_keys=True),
                tr.feasible,
                "" if tr.objective is None else f"{tr.objective:.6f}",
            ]
        )
    _write_csv(
        _out_path(args, "oracle.csv"),
        ["line_build_stages", "cvsr_build_stages", "feasible", "objective"],
        rows,
    )
    print(f"integrated MILP objective: {res.objective:.6f}")
    print(f"enumeration objective:     {oracle.best_objective:.6f}")
    denom = max(1.0, abs(oracle.best_objective))
    mismatch = abs(res.objective - oracle.best_objective) / denom
    print(f"relative difference:       {mismatch:.3e}")
    if mismatch > 1e-6:
        print("MISMATCH above 1e-6 relative tolerance", file=sys.stderr)
        return 1
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tepcvsr",
        description="Security-constrained transmission expansion planning "
        "with variable series reactors",
    )
    parser.add_argument("--version", action="version", version=f"tepcvsr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--case", required=True, help="MATPOWER case file")
        p.add_argument("--config", required=True, help="planning config (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--backend", default=None, help="solver backend spec")
        p.add_argument("--jobs", type=int, default=1, help="parallel security subproblems")
        p.add_argument("--gap", type=float, default=1e-8, help="relative MIP gap")
        p.add_argument("--time-limit", type=float, default=600.0)
        p.add_argument("--cc", type=int, default=None, help="critical contingency count")
        p.add_argument("--no-cvsr", action="store_true", help="drop all CVSR sites")

    p_screen = sub.add_parser("screen", help="islanding screening and contingency ranking")
    common(p_screen)
    p_screen.set_defaults(func=cmd_screen)

    p_plan = sub.add_parser("plan", help="solve the expansion planning problem")
    common(p_plan)
    p_plan.add_argument(
        "--mode", choices=("integrated", "decomposed"), default="integrated"
    )
    p_plan.add_argument("--plots", action="store_true", help="write SVG charts")
    p_plan.set_defaults(func=cmd_plan)

    p_verify = sub.add_parser("verify", help="full N-1 verification of a plan file")
    common(p_verify)
    p_verify.add_argument("--plan", required=True, help="plan.json to verify")
    p_verify.set_defaults(func=cmd_verify)

    p_oracle = sub.add_parser("oracle", help="integrated MILP vs enumeration oracle")
    common(p_oracle)
    p_oracle.add_argument(
        "--override-bigm",
        type=float,
        default=None,
        help="test hook: corrupt the device big-M constant",
    )
    p_oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliInputError, CaseError, ProblemError, FormulationError, OracleCapError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, DecompositionError, IntegralityError, BigMViolationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
