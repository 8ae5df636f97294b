"""Iterative master/security decomposition and the brute-force plan oracle."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .formulation import (
    CostBreakdown,
    CostModel,
    CvsrCandidate,
    ExpansionPlan,
    ModelAssembler,
    StagePlan,
    alpha_name,
    delta_name,
    derive_candidate_lines,
    derive_cvsr_candidates,
    linearization_audit,
    pc_name,
    pe_name,
    pg_name,
    theta_name,
)
from .model import MilpModel
from .problem import PlanningProblem
from .solver_iface import INFEASIBLE, SolveRequest, solve


class DecompositionError(Exception):
    """The iterative planning procedure cannot continue."""


class OracleCapError(Exception):
    """The enumeration oracle would exceed its practical size cap."""


# -- contingency ranking -------------------------------------------------------


@dataclass
class RankingEntry:
    branch: int
    cost_per_hour: float  # inf when the post-outage dispatch is infeasible
    loading: float


@dataclass
class ContingencyRanking:
    entries: list[RankingEntry]
    islanding: set[int]

    def top(self, n: int) -> list[int]:
        return [e.branch for e in self.entries[:n]]


def _peak_block(problem: PlanningProblem) -> int:
    return max(range(problem.n_blocks), key=lambda b: problem.blocks[b].scale)


def _ranking_opf(
    problem: PlanningProblem,
    branch_id: int,
    t: int,
    built: dict[int, int],
    backend=None,
) -> tuple[float, float]:
    """Post-outage DC dispatch cost ($/h) and peak loading at the peak block.

    Uses short-term ratings; installed devices are left idle (their corrective
    range is not credited during screening).
    """
    b = _peak_block(problem)
    c = problem.state_of_branch(branch_id)
    asm = ModelAssembler(problem, f"rank_k{branch_id}", include_cvsr=False)
    asm.set_build_constants(t, built, {})
    asm.add_state((c, b, t), thermal="hard")
    base = problem.case.base_mva
    for g in asm.gens:
        asm.model.add_objective({pg_name(g.id, c, b, t): g.cost_coeff * base})
    res = solve(SolveRequest(asm.model, relative_gap=1e-9), backend)
    if res.status == INFEASIBLE:
        return math.inf, math.inf
    if not res.ok:
        raise DecompositionError(
            f"screening dispatch for outage of branch {branch_id} failed: {res.status}"
        )
    loading = 0.0
    for k in asm.existing:
        n = problem.line_status(k.id, c)
        if not n:
            continue
        flow = abs(res.values[pe_name(k.id, c, b, t)]) * base
        loading = max(loading, flow / problem.branch_rating_mw(k, c))
    for cand in asm.cands:
        if built.get(cand.id):
            flow = abs(res.values[pc_name(cand.id, c, b, t)]) * base
            rating = (cand.rating if c == 0 else cand.rating_short) * problem.rating_multiplier
            loading = max(loading, flow / rating)
    return res.objective, loading


def rank_contingencies(
    problem: PlanningProblem,
    plan: ExpansionPlan | None = None,
    stage: int = 1,
    backend=None,
) -> ContingencyRanking:
    """Severity ranking of the configured contingency set.

    Descending by post-outage dispatch cost; costs tying within 1e-6 $/h fall
    back to peak circuit loading, then to the lower branch id.
    """
    from .netcase import islanding_contingencies

    islanding = islanding_contingencies(problem.case)
    built: dict[int, int] = {}
    if plan is not None:
        committed = [s for s in plan.alpha if s <= stage]
        if committed:
            built = dict(plan.alpha[max(committed)])
    entries = []
    for branch_id in problem.contingencies:
        cost, loading = _ranking_opf(problem, branch_id, stage, built, backend)
        entries.append(RankingEntry(branch_id, cost, loading))

    def severity(e: RankingEntry):
        if math.isinf(e.cost_per_hour):
            return (0, 0.0, -e.loading, e.branch)
        # costs tying within 1e-6 $/h fall through to the loading metric
        return (1, -round(e.cost_per_hour * 1e6), -e.loading, e.branch)

    entries.sort(key=severity)
    return ContingencyRanking(entries, islanding)


# -- security subproblems --------------------------------------------------------


@dataclass
class Violation:
    kind: str  # "existing" | "candidate"
    branch: int
    overload_mw: float


@dataclass
class SecurityEntry:
    contingency: int
    block: int
    stage: int
    total_slack_mw: float
    violations: list[Violation] = field(default_factory=list)

    @property
    def worst_branch(self) -> int | None:
        if not self.violations:
            return None
        return max(self.violations, key=lambda v: v.overload_mw).branch


@dataclass
class SecurityReport:
    entries: list[SecurityEntry]
    tolerance_mw: float

    @property
    def max_total_mw(self) -> float:
        return max((e.total_slack_mw for e in self.entries), default=0.0)

    @property
    def worst(self) -> SecurityEntry | None:
        if not self.entries:
            return None
        return min(
            self.entries,
            key=lambda e: (-e.total_slack_mw, e.contingency, e.block, e.stage),
        )

    @property
    def certified_secure(self) -> bool:
        return self.max_total_mw <= self.tolerance_mw


def build_master(
    problem: PlanningProblem,
    t: int,
    prior_alpha: dict[int, int],
    prior_delta: dict[int, int],
    cc_branches: list[int],
    cc_blocks: list[int] | None = None,
) -> MilpModel:
    """Stage-t planning MILP over the base case plus the critical contingencies.

    Decisions committed in earlier stages enter as fixed lower bounds and are
    not charged again; the objective covers this stage's incremental
    investment plus its discounted base-state generation cost.
    """
    if cc_blocks is None:
        cc_blocks = problem.cc_blocks_for_stage(t)
    asm = ModelAssembler(problem, f"master_t{t}")
    asm.add_build_vars(t, prior_alpha, prior_delta)
    for b in range(problem.n_blocks):
        asm.add_state((0, b, t))
    for branch_id in cc_branches:
        c = problem.state_of_branch(branch_id)
        for b in cc_blocks:
            asm.add_state((c, b, t))
    asm.add_gen_fix_rows()
    asm.add_investment_objective([t], prior_alpha, prior_delta)
    asm.add_operating_objective()
    return asm.model


def build_security_subproblem(
    problem: PlanningProblem,
    t: int,
    branch_id: int,
    alpha: dict[int, int],
    delta: dict[int, int],
    base_dispatch: dict[int, float],
    block: int,
) -> MilpModel:
    """Minimum-total-violation check for one contingency state.

    Builds and the non-redispatchable dispatch are inputs; redispatchable
    units move within their limits and installed devices may retune their
    deviation flow. The objective is the sum of the four violation slack
    families (per unit; multiply by the MVA base for MW).
    """
    c = problem.state_of_branch(branch_id)
    asm = ModelAssembler(problem, f"security_k{branch_id}_b{block}_t{t}")
    asm.set_build_constants(t, alpha, delta)
    asm.add_state((c, block, t), thermal="slack", fixed_dispatch=base_dispatch)
    asm.add_slack_objective()
    return asm.model


def build_repair_model(
    problem: PlanningProblem,
    t: int,
    branch_id: int,
    block: int,
    committed_alpha: dict[int, int],
    committed_delta: dict[int, int],
    dispatch: dict[int, float],
) -> MilpModel:
    """Minimum-investment additions that zero out one contingency's violations.

    The contingency line is temporarily removed (its status indicator is 0 in
    this model only), the generation dispatch is frozen, and thermal limits
    are hard; only new lines and devices (beyond the committed set) carry
    cost.
    """
    c = problem.state_of_branch(branch_id)
    asm = ModelAssembler(problem, f"repair_k{branch_id}_b{block}_t{t}")
    asm.add_build_vars(t, committed_alpha, committed_delta)
    asm.add_state((c, block, t), thermal="hard", fixed_dispatch=dispatch, fix_all_gens=True)
    asm.add_investment_objective([t], committed_alpha, committed_delta)
    return asm.model


def security_sweep(
    problem: PlanningProblem,
    t: int,
    alpha: dict[int, int],
    delta: dict[int, int],
    dispatch_by_block: dict[int, dict[int, float]],
    backend=None,
    jobs: int = 1,
    relative_gap: float = 1e-8,
) -> SecurityReport:
    """Solve every configured contingency subproblem for stage t."""
    base = problem.case.base_mva
    tasks = [
        (branch_id, b)
        for branch_id in problem.contingencies
        for b in range(problem.n_blocks)
    ]

    def run(task) -> SecurityEntry:
        branch_id, b = task
        model = build_security_subproblem(
            problem, t, branch_id, alpha, delta, dispatch_by_block[b], b
        )
        res = solve(SolveRequest(model, relative_gap=relative_gap), backend)
        if not res.ok:
            raise DecompositionError(
                f"security subproblem (branch {branch_id}, block {b}, stage {t}) "
                f"ended with status {res.status}; slack-relaxed checks must be "
                "feasible, so this indicates a modeling error"
            )
        violations = []
        for name, val in res.values.items():
            if not name.startswith("u") or val * base <= 1e-7:
                continue
            kind = "existing" if name[1] == "E" else "candidate"
            k = int(name.split("_k")[1].split("_")[0])
            violations.append(Violation(kind, k, val * base))
        return SecurityEntry(branch_id, b, t, res.objective * base, violations)

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(run, tasks))
    else:
        entries = [run(task) for task in tasks]
    return SecurityReport(entries, problem.slack_tolerance_mw)


# -- plan assembly ----------------------------------------------------------------


def _binary_from(values: dict[str, float], name: str) -> int:
    return 1 if values.get(name, 0.0) > 0.5 else 0


def assemble_plan(
    problem: PlanningProblem,
    alpha_by_stage: dict[int, dict[int, int]],
    delta_by_stage: dict[int, dict[int, int]],
    dispatch: dict[tuple[int, int], dict[int, float]],
    audit: dict | None = None,
) -> ExpansionPlan:
    """Cost out a build trajectory plus its base dispatch into a plan."""
    cm = CostModel.from_problem(problem)
    cands = {c.id: c for c in derive_candidate_lines(problem)}
    sites = {s.branch_id: s for s in derive_cvsr_candidates(problem)}
    gens = {g.id: g for g in problem.case.generators if g.in_service}
    costs = CostBreakdown()
    stages = []
    for t in range(1, problem.n_stages + 1):
        disc = cm.investment_discount(t)
        prev_a = alpha_by_stage.get(t - 1, {})
        prev_d = delta_by_stage.get(t - 1, {})
        built = [k for k, v in sorted(alpha_by_stage.get(t, {}).items()) if v and not prev_a.get(k)]
        installed = [k for k, v in sorted(delta_by_stage.get(t, {}).items()) if v and not prev_d.get(k)]
        stages.append(StagePlan(t, built, installed))
        for k in built:
            costs.investment_lines += cands[k].cost * disc
            costs.investment_lines_undiscounted += cands[k].cost
        for k in installed:
            costs.investment_cvsr += sites[k].cost * disc
            costs.investment_cvsr_undiscounted += sites[k].cost
    hourly = {}
    for (b, t), by_gen in dispatch.items():
        cost = sum(gens[n].cost_coeff * mw for n, mw in by_gen.items())
        hourly[(b, t)] = cost
        costs.operating += problem.blocks[b].hours_per_year * cm.operating_factor(t) * cost
        costs.operating_undiscounted += cm.block_stage_hours(b, t) * cost
    return ExpansionPlan(
        stages=stages,
        alpha=alpha_by_stage,
        delta=delta_by_stage,
        costs=costs,
        base_dispatch_mw=dispatch,
        hourly_cost=hourly,
        flows_mw={},
        audit=audit or {},
    )


# -- the iterative procedure -------------------------------------------------------


def iterative_plan(
    problem: PlanningProblem,
    backend=None,
    relative_gap: float = 1e-8,
    time_limit: float = 300.0,
    jobs: int = 1,
    cc_override: list[int] | None = None,
) -> tuple[ExpansionPlan, list[SecurityReport]]:
    """Forward per-stage planning with an N-1 repair loop.

    Per stage: solve the master over the base case plus critical
    contingencies, then sweep all configured contingencies; while the worst
    total violation exceeds tolerance, temporarily remove that line, buy the
    cheapest additions that clear the state with dispatch frozen, restore the
    line, and re-sweep. Builds carry forward into the next stage.
    """
    base = problem.case.base_mva
    gens = [g for g in problem.case.generators if g.in_service]
    prior_alpha: dict[int, int] = {}
    prior_delta: dict[int, int] = {}
    alpha_by_stage: dict[int, dict[int, int]] = {}
    delta_by_stage: dict[int, dict[int, int]] = {}
    dispatch: dict[tuple[int, int], dict[int, float]] = {}
    history: list[SecurityReport] = []
    audit_totals = {"device_tuples_checked": 0, "worst_bv_excess": 0.0}

    def merge_audit(values, delta_stage, tuples):
        sites = derive_cvsr_candidates(problem)
        info = linearization_audit(values, problem, sites, delta_stage, tuples)
        audit_totals["device_tuples_checked"] += info["device_tuples_checked"]
        audit_totals["worst_bv_excess"] = max(
            audit_totals["worst_bv_excess"], info["worst_bv_excess"]
        )

    for t in range(1, problem.n_stages + 1):
        if cc_override is not None:
            cc = list(cc_override)
        elif problem.cc.branches is not None:
            cc = list(problem.cc.branches)
        else:
            plan_so_far = assemble_plan(
                problem, {t - 1: dict(prior_alpha)}, {t - 1: dict(prior_delta)}, {}
            )
            ranking = rank_contingencies(problem, plan_so_far, stage=t, backend=backend)
            cc = ranking.top(problem.cc.count)
        cc = cc[: problem.cc.count]

        master = build_master(problem, t, prior_alpha, prior_delta, cc)
        res = solve(
            SolveRequest(master, time_limit=time_limit, relative_gap=relative_gap),
            backend,
        )
        if not res.ok:
            raise DecompositionError(f"stage {t} master ended with status {res.status}")
        alpha_t = {k.id: _binary_from(res.values, alpha_name(k.id, t)) for k in derive_candidate_lines(problem)}
        delta_t = {s.branch_id: _binary_from(res.values, delta_name(s.branch_id, t)) for s in derive_cvsr_candidates(problem)}
        for b in range(problem.n_blocks):
            dispatch[(b, t)] = {
                g.id: res.values[pg_name(g.id, 0, b, t)] * base for g in gens
            }
        master_tuples = {(0, b, t) for b in range(problem.n_blocks)}
        master_tuples |= {(problem.state_of_branch(k), b, t) for k in cc for b in problem.cc_blocks_for_stage(t)}
        merge_audit(res.values, {t: delta_t}, master_tuples)

        repairs = 0
        while True:
            report = security_sweep(
                problem, t, alpha_t, delta_t,
                {b: dispatch[(b, t)] for b in range(problem.n_blocks)},
                backend, jobs,
            )
            history.append(report)
            if report.max_total_mw <= problem.slack_tolerance_mw:
                break
            repairs += 1
            if repairs > problem.repair_iteration_cap:
                raise DecompositionError(
                    f"stage {t}: repair loop exceeded {problem.repair_iteration_cap} iterations"
                )
            worst = report.worst
            repair = build_repair_model(
                problem, t, worst.contingency, worst.block,
                alpha_t, delta_t, dispatch[(worst.block, t)],
            )
            rres = solve(
                SolveRequest(repair, time_limit=time_limit, relative_gap=relative_gap),
                backend,
            )
            if rres.status == INFEASIBLE:
                raise DecompositionError(
                    f"stage {t}: no candidate addition can clear the outage of "
                    f"branch {worst.contingency} (block {worst.block}, "
                    f"{worst.total_slack_mw:.3f} MW violation)"
                )
            if not rres.ok:
                raise DecompositionError(
                    f"stage {t} repair ended with status {rres.status}"
                )
            alpha_t = {k: _binary_from(rres.values, alpha_name(k, t)) for k in alpha_t}
            delta_t = {k: _binary_from(rres.values, delta_name(k, t)) for k in delta_t}
            merge_audit(
                rres.values, {t: delta_t},
                {(problem.state_of_branch(worst.contingency), worst.block, t)},
            )

        alpha_by_stage[t] = alpha_t
        delta_by_stage[t] = delta_t
        prior_alpha, prior_delta = alpha_t, delta_t

    plan = assemble_plan(
        problem, alpha_by_stage, delta_by_stage, dispatch, dict(audit_totals)
    )
    return plan, history


def verify_plan(
    problem: PlanningProblem,
    plan: ExpansionPlan,
    backend=None,
    jobs: int = 1,
) -> SecurityReport:
    """Independent full sweep of every configured contingency for a plan."""
    entries: list[SecurityEntry] = []
    for t in range(1, problem.n_stages + 1):
        alpha_t, delta_t = plan.builds_at(t)
        dispatch_by_block = {
            b: plan.base_dispatch_mw[(b, t)] for b in range(problem.n_blocks)
        }
        report = security_sweep(
            problem, t, alpha_t, delta_t, dispatch_by_block, backend, jobs
        )
        entries.extend(report.entries)
    return SecurityReport(entries, problem.slack_tolerance_mw)


# -- enumeration oracle --------------------------------------------------------------


@dataclass
class OracleTrajectory:
    build_stage_lines: dict[int, int]  # candidate id -> stage (0 = never)
    build_stage_cvsrs: dict[int, int]  # site branch id -> stage (0 = never)
    feasible: bool
    objective: float | None


@dataclass
class OracleResult:
    best_objective: float | None
    best: OracleTrajectory | None
    trajectories: list[OracleTrajectory]


def _restricted_lp(
    problem: PlanningProblem,
    alpha_by_stage: dict[int, dict[int, int]],
    delta_by_stage: dict[int, dict[int, int]],
    sites: dict[int, CvsrCandidate],
    signs: dict[tuple[int, int, int, int], int],
) -> MilpModel:
    """Exact dispatch LP for fixed builds and fixed device angle signs.

    Independent of the big-M reformulation: outaged elements are omitted,
    device-equipped lines get direct envelope cones
    (b_k + b_v_min) theta <= flow <= (b_k + b_v_max) theta on the chosen
    angle-sign branch.
    """
    m = MilpModel("oracle_lp")
    p = problem
    base = p.case.base_mva
    cm = CostModel.from_problem(p)
    cands = derive_candidate_lines(p)
    gens = [g for g in p.case.generators if g.in_service]
    slack_bus = p.case.slack_bus()

    for c, b, t in p.state_tuples():
        balance: dict[int, dict[str, float]] = {i: {} for i in p.case.bus_ids()}
        for bus in p.case.buses:
            lb, ub = (0.0, 0.0) if bus.id == slack_bus else (-math.inf, math.inf)
            m.add_var(theta_name(bus.id, c, b, t), lb=lb, ub=ub)
        for g in gens:
            name = m.add_var(
                pg_name(g.id, c, b, t), lb=g.p_min / base, ub=g.p_max / base
            )
            balance[g.bus][name] = 1.0
        for k in p.case.in_service_branches():
            if not p.line_status(k.id, c):
                continue
            s_pu = p.branch_rating_mw(k, c) / base
            name = m.add_var(pe_name(k.id, c, b, t), lb=-s_pu, ub=s_pu)
            th_f = theta_name(k.from_bus, c, b, t)
            th_t = theta_name(k.to_bus, c, b, t)
            suffix = f"k{k.id}_c{c}_b{b}_t{t}"
            if k.id in sites:
                # device lines always carry the angle-spread cap when in service
                m.add_row(f"oth_lo_{suffix}", {th_f: 1.0, th_t: -1.0}, ">=", -p.theta_max)
                m.add_row(f"oth_hi_{suffix}", {th_f: 1.0, th_t: -1.0}, "<=", p.theta_max)
            if k.id in sites and delta_by_stage.get(t, {}).get(k.id):
                site = sites[k.id]
                sigma = signs[(k.id, c, b, t)]
                b_lo = k.susceptance + site.b_v_min
                b_hi = k.susceptance + site.b_v_max
                if sigma > 0:
                    m.add_row(f"osig_{suffix}", {th_f: 1.0, th_t: -1.0}, ">=", 0.0)
                    m.add_row(f"oenv_lo_{suffix}", {name: 1.0, th_f: -b_lo, th_t: b_lo}, ">=", 0.0)
                    m.add_row(f"oenv_hi_{suffix}", {name: 1.0, th_f: -b_hi, th_t: b_hi}, "<=", 0.0)
                else:
                    m.add_row(f"osig_{suffix}", {th_f: 1.0, th_t: -1.0}, "<=", 0.0)
                    m.add_row(f"oenv_lo_{suffix}", {name: 1.0, th_f: -b_hi, th_t: b_hi}, ">=", 0.0)
                    m.add_row(f"oenv_hi_{suffix}", {name: 1.0, th_f: -b_lo, th_t: b_lo}, "<=", 0.0)
            else:
                m.add_row(
                    f"oflow_{suffix}",
                    {name: 1.0, th_f: -k.susceptance, th_t: k.susceptance},
                    "==",
                    0.0,
                )
            balance[k.from_bus][name] = balance[k.from_bus].get(name, 0.0) - 1.0
            balance[k.to_bus][name] = balance[k.to_bus].get(name, 0.0) + 1.0
        for cand in cands:
            if not alpha_by_stage.get(t, {}).get(cand.id):
                continue
            s_mw = cand.rating if c == 0 else cand.rating_short
            s_pu = s_mw * p.rating_multiplier / base
            name = m.add_var(pc_name(cand.id, c, b, t), lb=-s_pu, ub=s_pu)
            th_f = theta_name(cand.from_bus, c, b, t)
            th_t = theta_name(cand.to_bus, c, b, t)
            m.add_row(
                f"oflow_k{cand.id}_c{c}_b{b}_t{t}",
                {name: 1.0, th_f: -cand.susceptance, th_t: cand.susceptance},
                "==",
                0.0,
            )
            balance[cand.from_bus][name] = balance[cand.from_bus].get(name, 0.0) - 1.0
            balance[cand.to_bus][name] = balance[cand.to_bus].get(name, 0.0) + 1.0
        for bus_id, coeffs in balance.items():
            m.add_row(
                f"obal_i{bus_id}_c{c}_b{b}_t{t}",
                coeffs,
                "==",
                p.bus_demand_mw(bus_id, b, t) / base,
            )
        if c != 0:
            for g in gens:
                if g.id in p.fixed_generators:
                    m.add_row(
                        f"ogfix_n{g.id}_c{c}_b{b}_t{t}",
                        {pg_name(g.id, c, b, t): 1.0, pg_name(g.id, 0, b, t): -1.0},
                        "==",
                        0.0,
                    )
        if c == 0:
            factor = p.blocks[b].hours_per_year * cm.operating_factor(t)
            for g in gens:
                if g.cost_coeff:
                    m.add_objective({pg_name(g.id, c, b, t): g.cost_coeff * base * factor})
    return m


def enumerate_plans_oracle(
    problem: PlanningProblem,
    backend=None,
    trajectory_cap: int = 4096,
    sign_cap: int = 64,
) -> OracleResult:
    """Brute force over every monotone build trajectory.

    Each candidate element is built at some stage or never; for each
    trajectory the remaining dispatch problem is solved exactly by
    enumerating the angle sign of every active device tuple and taking the
    best pure LP. No big-M constant enters this path.
    """
    n_elems = len(problem.candidates) + len(problem.cvsr_sites)
    n_traj = (problem.n_stages + 1) ** n_elems
    if n_traj > trajectory_cap:
        raise OracleCapError(
            f"{n_traj} trajectories exceed the cap ({trajectory_cap}); "
            "shrink the fixture's candidate sets or stages"
        )
    sites = {s.branch_id: s for s in derive_cvsr_candidates(problem)}
    cands = derive_candidate_lines(problem)
    cm = CostModel.from_problem(problem)
    cand_ids = [c.id for c in cands]
    site_ids = [s.branch for s in problem.cvsr_sites]
    stage_options = list(range(0, problem.n_stages + 1))  # 0 = never

    trajectories: list[OracleTrajectory] = []
    best: OracleTrajectory | None = None

    for combo in itertools.product(stage_options, repeat=n_elems):
        line_stage = dict(zip(cand_ids, combo[: len(cand_ids)]))
        cvsr_stage = dict(zip(site_ids, combo[len(cand_ids):]))
        alpha_by_stage = {
            t: {k: 1 if s and s <= t else 0 for k, s in line_stage.items()}
            for t in range(1, problem.n_stages + 1)
        }
        delta_by_stage = {
            t: {k: 1 if s and s <= t else 0 for k, s in cvsr_stage.items()}
            for t in range(1, problem.n_stages + 1)
        }
        invest = 0.0
        for k, s in line_stage.items():
            if s:
                invest += next(c.cost for c in cands if c.id == k) * cm.investment_discount(s)
        for k, s in cvsr_stage.items():
            if s:
                invest += sites[k].cost * cm.investment_discount(s)

        active = [
            (k, c, b, t)
            for k in site_ids
            for (c, b, t) in problem.state_tuples()
            if delta_by_stage[t][k] and problem.line_status(k, c)
        ]
        if 2 ** len(active) > sign_cap:
            raise OracleCapError(
                f"{2 ** len(active)} device sign patterns exceed the cap ({sign_cap}); "
                "shrink the fixture"
            )
        best_lp = None
        for pattern in itertools.product((1, -1), repeat=len(active)):
            signs = dict(zip(active, pattern))
            lp = _restricted_lp(problem, alpha_by_stage, delta_by_stage, sites, signs)
            res = solve(SolveRequest(lp, relative_gap=1e-9), backend)
            if res.ok and (best_lp is None or res.objective < best_lp):
                best_lp = res.objective
        if best_lp is None:
            traj = OracleTrajectory(line_stage, cvsr_stage, False, None)
        else:
            traj = OracleTrajectory(line_stage, cvsr_stage, True, invest + best_lp)
            if best is None or traj.objective < best.objective:
                best = traj
        trajectories.append(traj)

    return OracleResult(
        best_objective=best.objective if best else None,
        best=best,
        trajectories=trajectories,
    )
