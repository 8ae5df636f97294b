"""MILP formulation of the security-constrained multi-stage expansion problem.

Conventions: flows, flow deviations and violation slacks are per-unit on the
system base inside the model (so the disjunctive constants are |b_k|*pi and
|b_v_min|*theta_max verbatim); bus angles are radians; investment and
generation cost coefficients are dollars. Reports convert back to MW.

Variable naming is the wire format shared with solvers and reports:
``Pg_n{n}_c{c}_b{b}_t{t}``, ``PE_k{k}_...``, ``PC_k{k}_...``, ``w_k{k}_...``,
``z_k{k}_...``, ``y_k{k}_...``, ``th_i{i}_...``, ``alpha_k{k}_t{t}``,
``delta_k{k}_t{t}`` and subproblem slacks ``uE1_k{k}_...`` etc.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .model import BINARY, Disjunction, MilpModel
from .netcase import Branch
from .problem import Block, PlanningProblem, Stage

THETA_MAX = math.pi / 3  # maximum angle spread across a device-equipped branch


class FormulationError(Exception):
    """The problem instance cannot be turned into a well-posed model."""


class IntegralityError(Exception):
    """A solver returned a binary too far from an integer."""


class BigMViolationError(Exception):
    """A solved model used a big-M relaxation it was not entitled to."""


# -- variable naming ---------------------------------------------------------


def pg_name(n: int, c: int, b: int, t: int) -> str:
    return f"Pg_n{n}_c{c}_b{b}_t{t}"


def pe_name(k: int, c: int, b: int, t: int) -> str:
    return f"PE_k{k}_c{c}_b{b}_t{t}"


def pc_name(k: int, c: int, b: int, t: int) -> str:
    return f"PC_k{k}_c{c}_b{b}_t{t}"


def w_name(k: int, c: int, b: int, t: int) -> str:
    return f"w_k{k}_c{c}_b{b}_t{t}"


def z_name(k: int, c: int, b: int, t: int) -> str:
    return f"z_k{k}_c{c}_b{b}_t{t}"


def y_name(k: int, c: int, b: int, t: int) -> str:
    return f"y_k{k}_c{c}_b{b}_t{t}"


def theta_name(i: int, c: int, b: int, t: int) -> str:
    return f"th_i{i}_c{c}_b{b}_t{t}"


def alpha_name(k: int, t: int) -> str:
    return f"alpha_k{k}_t{t}"


def delta_name(k: int, t: int) -> str:
    return f"delta_k{k}_t{t}"


def slack_name(kind: str, side: int, k: int, c: int, b: int, t: int) -> str:
    return f"u{kind}{side}_k{k}_c{c}_b{b}_t{t}"


# -- device susceptance model -------------------------------------------------


def cvsr_susceptance_bounds(
    x_k: float, x_v_min: float, x_v_max: float
) -> tuple[float, float]:
    """Susceptance-deviation range of a series reactor on a line of reactance x_k.

    A device adding x_v to the line shifts the line susceptance by
    b_v = -x_v / (x_k (x_k + x_v)); the reachable interval is
    [b_v_min, b_v_max] <= 0 for x_v in [x_v_min, x_v_max].
    """
    if x_k <= 0:
        raise FormulationError(
            f"series-capacitor overcompensated line (x_k = {x_k}) is unsupported"
        )
    if not 0 <= x_v_min <= x_v_max:
        raise FormulationError(
            f"invalid device reactance range [{x_v_min}, {x_v_max}]"
        )
    b_v_min = -x_v_max / (x_k * (x_k + x_v_max))
    b_v_max = -x_v_min / (x_k * (x_k + x_v_min))
    return b_v_min, b_v_max


def big_m_values(b_k: float, b_v_min: float = 0.0) -> tuple[float, float]:
    """(M_k, M_prime): |b_v_min| * theta_max for the deviation-flow gates and
    |b_k| * pi for the line-flow disjunctions."""
    return abs(b_v_min) * THETA_MAX, abs(b_k) * math.pi


# -- derived candidate data ----------------------------------------------------


@dataclass
class CvsrCandidate:
    branch: Branch
    x_v_min: float
    x_v_max: float
    b_v_min: float
    b_v_max: float
    cost: float
    big_m: float

    @property
    def branch_id(self) -> int:
        return self.branch.id


@dataclass
class CandidateLine:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    susceptance: float
    rating: float
    rating_short: float
    cost: float
    big_m_prime: float


def derive_cvsr_candidates(
    problem: PlanningProblem, override_bigm: float | None = None
) -> list[CvsrCandidate]:
    out = []
    for spec in problem.cvsr_sites:
        branch = problem.case.branch_by_id(spec.branch)
        x_v_max = spec.range_fraction * branch.reactance
        b_v_min, b_v_max = cvsr_susceptance_bounds(branch.reactance, 0.0, x_v_max)
        big_m = big_m_values(branch.susceptance, b_v_min)[0]
        if override_bigm is not None:
            big_m = override_bigm
        out.append(
            CvsrCandidate(
                branch=branch,
                x_v_min=0.0,
                x_v_max=x_v_max,
                b_v_min=b_v_min,
                b_v_max=b_v_max,
                cost=spec.cost,
                big_m=big_m,
            )
        )
    return out


def derive_candidate_lines(problem: PlanningProblem) -> list[CandidateLine]:
    out = []
    for spec in problem.candidates:
        b_k = 1.0 / spec.reactance
        out.append(
            CandidateLine(
                id=spec.id,
                from_bus=spec.from_bus,
                to_bus=spec.to_bus,
                reactance=spec.reactance,
                susceptance=b_k,
                rating=spec.rating,
                rating_short=spec.rating_short,
                cost=spec.cost,
                big_m_prime=big_m_values(b_k)[1],
            )
        )
    return out


# -- cost model ----------------------------------------------------------------


def discounted_cost(cost: float, year: int, discount_rate: float) -> float:
    """Present value of a cost incurred in the given (1-based) year."""
    return cost / (1.0 + discount_rate) ** (year - 1)


@dataclass
class CostModel:
    discount_rate: float
    stages: list[Stage]
    blocks: list[Block]
    operating_cost_mode: str = "stage"

    @classmethod
    def from_problem(cls, problem: PlanningProblem) -> "CostModel":
        return cls(
            problem.discount_rate,
            problem.stages,
            problem.blocks,
            problem.operating_cost_mode,
        )

    def stage_first_year(self, t: int) -> int:
        return 1 + sum(s.years for s in self.stages[: t - 1])

    def investment_discount(self, t: int) -> float:
        """Discount factor charged to a build committed at the start of stage t."""
        return discounted_cost(1.0, self.stage_first_year(t), self.discount_rate)

    def operating_factor(self, t: int) -> float:
        """Multiplier turning (hourly cost x hours per year) into the stage's
        discounted operating cost.

        In "stage" mode the whole stage is charged at its first year's
        discount (the block duration covers all stage years); "per_year"
        discounts each year of the stage separately.
        """
        years = self.stages[t - 1].years
        fy = self.stage_first_year(t)
        if self.operating_cost_mode == "stage":
            return years * discounted_cost(1.0, fy, self.discount_rate)
        return sum(
            discounted_cost(1.0, fy + j, self.discount_rate) for j in range(years)
        )

    def block_stage_hours(self, b: int, t: int) -> float:
        return self.blocks[b].hours_per_year * self.stages[t - 1].years


# -- reformulation emitter -------------------------------------------------------


def emit_reformulation(
    model: MilpModel,
    site: CvsrCandidate,
    key: tuple[int, int, int],
    n_status: int,
    delta_ref,
    theta_max: float = THETA_MAX,
) -> list[str]:
    """Emit the exact linearization of the deviation flow w = delta * b_v * theta.

    Adds the two big-M sign-selection pairs on w, the deviation envelope on z
    scaled by the line-status indicator, and the theta-linking pair. With the
    line out of service (n_status = 0) the constraints force z = w = 0.
    ``delta_ref`` is either the name of the build binary or its fixed value.
    """
    k = site.branch_id
    c, b, t = key
    w = w_name(k, c, b, t)
    z = z_name(k, c, b, t)
    y = y_name(k, c, b, t)
    th_f = theta_name(site.branch.from_bus, c, b, t)
    th_t = theta_name(site.branch.to_bus, c, b, t)
    for required in (w, z, th_f, th_t):
        if not model.has_var(required):
            raise FormulationError(f"reformulation for {w} missing variable {required}")
    if isinstance(delta_ref, str) and not model.has_var(delta_ref):
        raise FormulationError(f"reformulation for {w} missing variable {delta_ref}")
    if not model.has_var(y):
        raise FormulationError(f"reformulation for {w} missing variable {y}")
    m_k = site.big_m
    n = n_status
    suffix = f"k{k}_c{c}_b{b}_t{t}"
    names = []

    def lin(name, coeffs, const, sense, rhs):
        # fold fixed delta into the rhs
        row = dict(coeffs)
        rhs_val = rhs - const
        names.append(model.add_row(name, row, sense, rhs_val))

    def with_delta(coeffs, coef):
        out = dict(coeffs)
        if isinstance(delta_ref, str):
            out[delta_ref] = out.get(delta_ref, 0.0) + coef
            return out, 0.0
        return out, coef * float(delta_ref)

    # w sign-selection pair (active side depends on y)
    lin(f"r22l_{suffix}", {w: 1.0, z: -site.b_v_min, y: m_k}, 0.0, ">=", 0.0)
    lin(f"r22u_{suffix}", {w: 1.0, z: -site.b_v_max, y: -m_k}, 0.0, "<=", 0.0)
    lin(f"r23l_{suffix}", {w: 1.0, z: -site.b_v_max, y: -m_k}, 0.0, ">=", -m_k)
    lin(f"r23u_{suffix}", {w: 1.0, z: -site.b_v_min, y: m_k}, 0.0, "<=", m_k)
    model.add_disjunction(
        Disjunction(f"r22l_{suffix}", "cvsr_w", {w: 1.0, z: -site.b_v_min}, ">=", m_k, {y: 1.0}, 0.0)
    )
    model.add_disjunction(
        Disjunction(f"r22u_{suffix}", "cvsr_w", {w: 1.0, z: -site.b_v_max}, "<=", m_k, {y: 1.0}, 0.0)
    )
    model.add_disjunction(
        Disjunction(f"r23l_{suffix}", "cvsr_w", {w: 1.0, z: -site.b_v_max}, ">=", m_k, {y: -1.0}, 1.0)
    )
    model.add_disjunction(
        Disjunction(f"r23u_{suffix}", "cvsr_w", {w: 1.0, z: -site.b_v_min}, "<=", m_k, {y: -1.0}, 1.0)
    )

    # z envelope: -N delta theta_max <= z <= N delta theta_max
    coeffs, const = with_delta({z: 1.0}, n * theta_max)
    lin(f"r24l_{suffix}", coeffs, const, ">=", 0.0)
    coeffs, const = with_delta({z: 1.0}, -n * theta_max)
    lin(f"r24u_{suffix}", coeffs, const, "<=", 0.0)

    # theta linking: N(theta - (1-delta)theta_max) <= z <= N(theta + (1-delta)theta_max)
    base = {z: 1.0, th_f: -n, th_t: n}
    coeffs, const = with_delta(dict(base), -n * theta_max)
    lin(f"r25l_{suffix}", coeffs, const, ">=", -n * theta_max)
    coeffs, const = with_delta(dict(base), n * theta_max)
    lin(f"r25u_{suffix}", coeffs, const, "<=", n * theta_max)
    return names


# -- assembler -------------------------------------------------------------------


class ModelAssembler:
    """Shared emitter for the integrated, master, security and repair models."""

    def __init__(
        self,
        problem: PlanningProblem,
        name: str = "tep",
        override_bigm: float | None = None,
        include_cvsr: bool = True,
    ):
        self.p = problem
        self.base = problem.case.base_mva
        self.model = MilpModel(name)
        self.cost_model = CostModel.from_problem(problem)
        self.cands = derive_candidate_lines(problem)
        self.sites = (
            {s.branch_id: s for s in derive_cvsr_candidates(problem, override_bigm)}
            if include_cvsr
            else {}
        )
        self.existing = problem.case.in_service_branches()
        self.gens = [g for g in problem.case.generators if g.in_service]
        self.alpha_ref: dict[tuple[int, int], object] = {}
        self.delta_ref: dict[tuple[int, int], object] = {}
        self.tuples: list[tuple[int, int, int]] = []
        self.slack_vars: dict[tuple[int, int, int], list[str]] = {}

    # build decisions ------------------------------------------------------

    def add_build_vars(self, t: int, alpha_lb: dict[int, int], delta_lb: dict[int, int]):
        for cand in self.cands:
            lb = float(alpha_lb.get(cand.id, 0))
            self.alpha_ref[(cand.id, t)] = self.model.add_var(
                alpha_name(cand.id, t), BINARY, lb=lb
            )
        for k, site in self.sites.items():
            lb = float(delta_lb.get(k, 0))
            self.delta_ref[(k, t)] = self.model.add_var(
                delta_name(k, t), BINARY, lb=lb
            )

    def set_build_constants(self, t: int, alpha: dict[int, int], delta: dict[int, int]):
        for cand in self.cands:
            self.alpha_ref[(cand.id, t)] = float(alpha.get(cand.id, 0))
        for k in self.sites:
            self.delta_ref[(k, t)] = float(delta.get(k, 0))

    def add_monotonic_rows(self):
        """Stage coupling: builds persist into later stages."""
        stages = sorted({t for (_, t) in self.alpha_ref} | {t for (_, t) in self.delta_ref})
        for prev, cur in zip(stages, stages[1:]):
            for cand in self.cands:
                self.model.add_row(
                    f"mono_a_k{cand.id}_t{cur}",
                    {alpha_name(cand.id, cur): 1.0, alpha_name(cand.id, prev): -1.0},
                    ">=",
                    0.0,
                )
            for k in self.sites:
                self.model.add_row(
                    f"mono_d_k{k}_t{cur}",
                    {delta_name(k, cur): 1.0, delta_name(k, prev): -1.0},
                    ">=",
                    0.0,
                )

    # per-state emission -----------------------------------------------------

    def _check_adequacy(self, b: int, t: int):
        supply = sum(g.p_max for g in self.gens)
        demand = self.p.total_demand_mw(b, t)
        if supply + 1e-9 < demand:
            raise FormulationError(
                f"block {b} stage {t}: generation capacity {supply} MW cannot "
                f"cover demand {demand} MW"
            )

    def add_state(
        self,
        key: tuple[int, int, int],
        thermal: str = "hard",
        fixed_dispatch: dict[int, float] | None = None,
        fix_all_gens: bool = False,
    ):
        """Emit all variables and constraints of one (state, block, stage) tuple.

        thermal="hard" applies the binding limits of the planning model;
        "slack" adds the nonnegative violation variables of the security
        check. ``fixed_dispatch`` (MW by generator id) pins the
        non-redispatchable set, or every unit when ``fix_all_gens`` is set.
        """
        c, b, t = key
        p = self.p
        m = self.model
        self._check_adequacy(b, t)
        self.tuples.append(key)
        slack_bus = p.case.slack_bus()
        balance: dict[int, dict[str, float]] = {i: {} for i in p.case.bus_ids()}

        for bus in p.case.buses:
            lb, ub = (0.0, 0.0) if bus.id == slack_bus else (-math.inf, math.inf)
            m.add_var(theta_name(bus.id, c, b, t), lb=lb, ub=ub)

        for g in self.gens:
            name = pg_name(g.id, c, b, t)
            pinned = fix_all_gens or (fixed_dispatch is not None and g.id in p.fixed_generators)
            if pinned:
                if fixed_dispatch is None or g.id not in fixed_dispatch:
                    raise FormulationError(f"no fixed dispatch value for generator {g.id}")
                v = fixed_dispatch[g.id] / self.base
                m.add_var(name, lb=v, ub=v)
            else:
                m.add_var(name, lb=g.p_min / self.base, ub=g.p_max / self.base)
            balance[g.bus][name] = balance[g.bus].get(name, 0.0) + 1.0

        slack_list: list[str] = []

        for k in self.existing:
            n = p.line_status(k.id, c)
            s_pu = p.branch_rating_mw(k, c) / self.base
            name = pe_name(k.id, c, b, t)
            if thermal == "hard":
                m.add_var(name, lb=-n * s_pu, ub=n * s_pu)
            else:
                m.add_var(name)
                u1 = m.add_var(slack_name("E", 1, k.id, c, b, t), lb=0.0)
                u2 = m.add_var(slack_name("E", 2, k.id, c, b, t), lb=0.0)
                m.add_row(f"stel_k{k.id}_c{c}_b{b}_t{t}", {name: 1.0, u1: float(n)}, ">=", -n * s_pu)
                m.add_row(f"steu_k{k.id}_c{c}_b{b}_t{t}", {name: 1.0, u2: -float(n)}, "<=", n * s_pu)
                slack_list += [u1, u2]
            balance[k.from_bus][name] = balance[k.from_bus].get(name, 0.0) - 1.0
            balance[k.to_bus][name] = balance[k.to_bus].get(name, 0.0) + 1.0

        # device deviation variables first (flow rows reference w)
        for k_id, site in self.sites.items():
            n = p.line_status(k_id, c)
            m.add_var(w_name(k_id, c, b, t), lb=-site.big_m, ub=site.big_m)
            m.add_var(z_name(k_id, c, b, t), lb=-p.theta_max, ub=p.theta_max)
            delta_ref = self.delta_ref[(k_id, t)]
            emit_y = isinstance(delta_ref, str) or (float(delta_ref) > 0.5 and n == 1)
            if emit_y:
                m.add_var(y_name(k_id, c, b, t), BINARY)
            else:
                m.add_var(y_name(k_id, c, b, t), lb=0.0, ub=0.0)
            emit_reformulation(m, site, key, n, delta_ref, p.theta_max)

        for k in self.existing:
            n = p.line_status(k.id, c)
            name = pe_name(k.id, c, b, t)
            th_f = theta_name(k.from_bus, c, b, t)
            th_t = theta_name(k.to_bus, c, b, t)
            m_prime = big_m_values(k.susceptance)[1]
            body = {name: 1.0}
            body[th_f] = body.get(th_f, 0.0) - k.susceptance
            body[th_t] = body.get(th_t, 0.0) + k.susceptance
            if k.id in self.sites:
                body[w_name(k.id, c, b, t)] = -1.0
            rhs = m_prime * (1 - n)
            lo = m.add_row(f"efl_k{k.id}_c{c}_b{b}_t{t}", body, ">=", -rhs)
            hi = m.add_row(f"efu_k{k.id}_c{c}_b{b}_t{t}", body, "<=", rhs)
            m.add_disjunction(Disjunction(lo, "line_flow", dict(body), ">=", m_prime, {}, float(1 - n)))
            m.add_disjunction(Disjunction(hi, "line_flow", dict(body), "<=", m_prime, {}, float(1 - n)))

        for cand in self.cands:
            n = 1  # only existing branches are outaged
            s_pu = (cand.rating if c == 0 else cand.rating_short) * p.rating_multiplier / self.base
            name = pc_name(cand.id, c, b, t)
            alpha_ref = self.alpha_ref[(cand.id, t)]
            if thermal == "hard":
                m.add_var(name, lb=-n * s_pu, ub=n * s_pu)
            else:
                m.add_var(name)
            th_f = theta_name(cand.from_bus, c, b, t)
            th_t = theta_name(cand.to_bus, c, b, t)
            body = {name: 1.0}
            body[th_f] = body.get(th_f, 0.0) - cand.susceptance
            body[th_t] = body.get(th_t, 0.0) + cand.susceptance
            mp = cand.big_m_prime
            if isinstance(alpha_ref, str):
                lo_c = dict(body)
                lo_c[alpha_ref] = lo_c.get(alpha_ref, 0.0) - mp
                hi_c = dict(body)
                hi_c[alpha_ref] = hi_c.get(alpha_ref, 0.0) + mp
                lo = m.add_row(f"cfl_k{cand.id}_c{c}_b{b}_t{t}", lo_c, ">=", -mp * (2 - n))
                hi = m.add_row(f"cfu_k{cand.id}_c{c}_b{b}_t{t}", hi_c, "<=", mp * (2 - n))
                gate = ({alpha_ref: -1.0}, float(2 - n))
            else:
                a = float(alpha_ref)
                rhs = mp * (2 - n - a)
                lo = m.add_row(f"cfl_k{cand.id}_c{c}_b{b}_t{t}", body, ">=", -rhs)
                hi = m.add_row(f"cfu_k{cand.id}_c{c}_b{b}_t{t}", body, "<=", rhs)
                gate = ({}, float(2 - n - a))
            m.add_disjunction(Disjunction(lo, "candidate_flow", dict(body), ">=", mp, gate[0], gate[1]))
            m.add_disjunction(Disjunction(hi, "candidate_flow", dict(body), "<=", mp, gate[0], gate[1]))

            if thermal == "hard":
                if isinstance(alpha_ref, str):
                    m.add_row(
                        f"ctl_k{cand.id}_c{c}_b{b}_t{t}",
                        {name: 1.0, alpha_ref: n * s_pu},
                        ">=",
                        0.0,
                    )
                    m.add_row(
                        f"ctu_k{cand.id}_c{c}_b{b}_t{t}",
                        {name: 1.0, alpha_ref: -n * s_pu},
                        "<=",
                        0.0,
                    )
                else:
                    a = float(alpha_ref)
                    m.add_row(f"ctl_k{cand.id}_c{c}_b{b}_t{t}", {name: 1.0}, ">=", -a * n * s_pu)
                    m.add_row(f"ctu_k{cand.id}_c{c}_b{b}_t{t}", {name: 1.0}, "<=", a * n * s_pu)
            else:
                a = float(alpha_ref)
                u1 = m.add_var(slack_name("C", 1, cand.id, c, b, t), lb=0.0)
                u2 = m.add_var(slack_name("C", 2, cand.id, c, b, t), lb=0.0)
                m.add_row(
                    f"stcl_k{cand.id}_c{c}_b{b}_t{t}",
                    {name: 1.0, u1: a * n},
                    ">=",
                    -a * n * s_pu,
                )
                m.add_row(
                    f"stcu_k{cand.id}_c{c}_b{b}_t{t}",
                    {name: 1.0, u2: -a * n},
                    "<=",
                    a * n * s_pu,
                )
                slack_list += [u1, u2]
            balance[cand.from_bus][name] = balance[cand.from_bus].get(name, 0.0) - 1.0
            balance[cand.to_bus][name] = balance[cand.to_bus].get(name, 0.0) + 1.0

        for bus_id, coeffs in balance.items():
            demand_pu = p.bus_demand_mw(bus_id, b, t) / self.base
            m.add_row(f"bal_i{bus_id}_c{c}_b{b}_t{t}", coeffs, "==", demand_pu)

        if slack_list:
            self.slack_vars[key] = slack_list

    def add_gen_fix_rows(self):
        """Pin the non-redispatchable units to their base-state output."""
        base_present = {(b, t) for (c, b, t) in self.tuples if c == 0}
        for c, b, t in self.tuples:
            if c == 0 or not self.p.fixed_generators:
                continue
            if (b, t) not in base_present:
                raise FormulationError(
                    f"state ({c},{b},{t}) needs the base tuple for dispatch fixing"
                )
            for g in self.gens:
                if g.id in self.p.fixed_generators:
                    self.model.add_row(
                        f"gfix_n{g.id}_c{c}_b{b}_t{t}",
                        {pg_name(g.id, c, b, t): 1.0, pg_name(g.id, 0, b, t): -1.0},
                        "==",
                        0.0,
                    )

    # objectives ----------------------------------------------------------------

    def add_investment_objective(
        self, stage_list: list[int], prior_alpha: dict[int, int], prior_delta: dict[int, int]
    ):
        """Discounted one-time investment, charged incrementally per stage."""
        cm = self.cost_model
        disc = {t: cm.investment_discount(t) for t in stage_list}
        for i, t in enumerate(stage_list):
            nxt = disc[stage_list[i + 1]] if i + 1 < len(stage_list) else 0.0
            for cand in self.cands:
                ref = self.alpha_ref[(cand.id, t)]
                coef = cand.cost * (disc[t] - nxt)
                if isinstance(ref, str):
                    self.model.add_objective({ref: coef})
                else:
                    self.model.add_objective({}, offset=coef * float(ref))
            for k, site in self.sites.items():
                ref = self.delta_ref[(k, t)]
                coef = site.cost * (disc[t] - nxt)
                if isinstance(ref, str):
                    self.model.add_objective({ref: coef})
                else:
                    self.model.add_objective({}, offset=coef * float(ref))
        first = stage_list[0]
        for cand in self.cands:
            self.model.add_objective(
                {}, offset=-cand.cost * disc[first] * float(prior_alpha.get(cand.id, 0))
            )
        for k, site in self.sites.items():
            self.model.add_objective(
                {}, offset=-site.cost * disc[first] * float(prior_delta.get(k, 0))
            )

    def add_operating_objective(self):
        """Base-state generation cost over blocks and stages, discounted."""
        cm = self.cost_model
        for c, b, t in self.tuples:
            if c != 0:
                continue
            factor = self.p.blocks[b].hours_per_year * cm.operating_factor(t)
            for g in self.gens:
                coef = g.cost_coeff * self.base * factor
                if coef:
                    self.model.add_objective({pg_name(g.id, c, b, t): coef})

    def add_slack_objective(self):
        for names in self.slack_vars.values():
            self.model.add_objective({n: 1.0 for n in names})


# -- public builders -----------------------------------------------------------


def build_integrated_model(
    problem: PlanningProblem, override_bigm: float | None = None
) -> MilpModel:
    """One MILP covering every stage, load block and contingency state."""
    asm = ModelAssembler(problem, "tep_integrated", override_bigm)
    stage_list = list(range(1, problem.n_stages + 1))
    for t in stage_list:
        asm.add_build_vars(t, {}, {})
    for c, b, t in problem.state_tuples():
        asm.add_state((c, b, t))
    asm.add_gen_fix_rows()
    asm.add_monotonic_rows()
    asm.add_investment_objective(stage_list, {}, {})
    asm.add_operating_objective()
    return asm.model


# -- plan extraction -------------------------------------------------------------


@dataclass
class StagePlan:
    stage: int
    built_lines: list[int]
    installed_cvsrs: list[int]


@dataclass
class CostBreakdown:
    investment_lines: float = 0.0
    investment_cvsr: float = 0.0
    operating: float = 0.0
    investment_lines_undiscounted: float = 0.0
    investment_cvsr_undiscounted: float = 0.0
    operating_undiscounted: float = 0.0

    @property
    def total(self) -> float:
        return self.investment_lines + self.investment_cvsr + self.operating

    @property
    def investment(self) -> float:
        return self.investment_lines + self.investment_cvsr


@dataclass
class ExpansionPlan:
    stages: list[StagePlan]
    alpha: dict[int, dict[int, int]]  # stage -> candidate id -> 0/1
    delta: dict[int, dict[int, int]]  # stage -> site branch id -> 0/1
    costs: CostBreakdown
    base_dispatch_mw: dict[tuple[int, int], dict[int, float]]
    hourly_cost: dict[tuple[int, int], float]
    flows_mw: dict[tuple[int, int, int], dict[str, float]]
    audit: dict

    def builds_at(self, t: int) -> tuple[dict[int, int], dict[int, int]]:
        return self.alpha.get(t, {}), self.delta.get(t, {})

    def n_lines_built(self) -> int:
        return sum(len(s.built_lines) for s in self.stages)

    def n_cvsrs_installed(self) -> int:
        return sum(len(s.installed_cvsrs) for s in self.stages)


def _binary_value(raw: float, name: str) -> int:
    rounded = round(raw)
    if abs(raw - rounded) > 1e-4:
        raise IntegralityError(f"{name} = {raw} is not integral")
    return int(rounded)


def extract_plan(
    model: MilpModel, values: dict[str, float], problem: PlanningProblem
) -> ExpansionPlan:
    """Turn a solved planning model into an :class:`ExpansionPlan`.

    Rounds the build binaries, audits the recovered device susceptances
    against their physical range, and assembles the discounted cost
    breakdown from the solution.
    """
    cands = derive_candidate_lines(problem)
    sites = derive_cvsr_candidates(problem)
    cm = CostModel.from_problem(problem)
    base = problem.case.base_mva
    stage_list = list(range(1, problem.n_stages + 1))

    alpha: dict[int, dict[int, int]] = {}
    delta: dict[int, dict[int, int]] = {}
    for t in stage_list:
        alpha[t] = {}
        delta[t] = {}
        for cand in cands:
            name = alpha_name(cand.id, t)
            if name in values:
                alpha[t][cand.id] = _binary_value(values[name], name)
            elif model.has_var(name):
                v = model.var(name)
                if v.lb == v.ub:
                    alpha[t][cand.id] = _binary_value(v.lb, name)
        for site in sites:
            name = delta_name(site.branch_id, t)
            if name in values:
                delta[t][site.branch_id] = _binary_value(values[name], name)
            elif model.has_var(name):
                v = model.var(name)
                if v.lb == v.ub:
                    delta[t][site.branch_id] = _binary_value(v.lb, name)

    stages = []
    costs = CostBreakdown()
    for t in stage_list:
        disc = cm.investment_discount(t)
        prev_a = alpha.get(t - 1, {})
        prev_d = delta.get(t - 1, {})
        built = [k for k, v in sorted(alpha[t].items()) if v and not prev_a.get(k)]
        installed = [k for k, v in sorted(delta[t].items()) if v and not prev_d.get(k)]
        stages.append(StagePlan(t, built, installed))
        for cand in cands:
            if cand.id in built:
                costs.investment_lines += cand.cost * disc
                costs.investment_lines_undiscounted += cand.cost
        for site in sites:
            if site.branch_id in installed:
                costs.investment_cvsr += site.cost * disc
                costs.investment_cvsr_undiscounted += site.cost

    gens = [g for g in problem.case.generators if g.in_service]
    base_dispatch: dict[tuple[int, int], dict[int, float]] = {}
    hourly: dict[tuple[int, int], float] = {}
    flows: dict[tuple[int, int, int], dict[str, float]] = {}
    seen_tuples = set()
    for t in stage_list:
        for b in range(problem.n_blocks):
            for c in range(problem.n_states):
                first_bus = problem.case.bus_ids()[0]
                if not model.has_var(theta_name(first_bus, c, b, t)):
                    continue
                seen_tuples.add((c, b, t))
                snap: dict[str, float] = {}
                for k in problem.case.in_service_branches():
                    name = pe_name(k.id, c, b, t)
                    if name in values:
                        snap[name] = values[name] * base
                for cand in cands:
                    name = pc_name(cand.id, c, b, t)
                    if name in values:
                        snap[name] = values[name] * base
                flows[(c, b, t)] = snap
                if c == 0:
                    dispatch = {
                        g.id: values.get(pg_name(g.id, 0, b, t), 0.0) * base for g in gens
                    }
                    base_dispatch[(b, t)] = dispatch
                    hourly[(b, t)] = sum(
                        g.cost_coeff * dispatch[g.id] for g in gens
                    )
    for (b, t), cost in hourly.items():
        costs.operating += problem.blocks[b].hours_per_year * cm.operating_factor(t) * cost
        costs.operating_undiscounted += cm.block_stage_hours(b, t) * cost

    audit = linearization_audit(values, problem, sites, delta, seen_tuples)

    return ExpansionPlan(
        stages=stages,
        alpha=alpha,
        delta=delta,
        costs=costs,
        base_dispatch_mw=base_dispatch,
        hourly_cost=hourly,
        flows_mw=flows,
        audit=audit,
    )


def linearization_audit(values, problem, sites, delta, tuples) -> dict:
    """Check every active device tuple recovers b_v = w / theta inside range."""
    checked = 0
    worst = 0.0
    for site in sites:
        k = site.branch_id
        for c, b, t in tuples:
            w = values.get(w_name(k, c, b, t))
            if w is None:
                continue
            n = problem.line_status(k, c)
            installed = delta.get(t, {}).get(k, 0)
            if not installed or n == 0:
                if abs(w) > 1e-7:
                    raise BigMViolationError(
                        f"w_k{k} = {w} must vanish with delta={installed}, N={n} "
                        f"in state ({c},{b},{t})"
                    )
                continue
            th_f = values[theta_name(site.branch.from_bus, c, b, t)]
            th_t = values[theta_name(site.branch.to_bus, c, b, t)]
            theta = th_f - th_t
            if abs(theta) <= 1e-9:
                continue
            b_v = w / theta
            checked += 1
            dev = max(site.b_v_min - b_v, b_v - site.b_v_max, 0.0)
            worst = max(worst, dev)
            if b_v < site.b_v_min - 1e-6 or b_v > site.b_v_max + 1e-6:
                raise BigMViolationError(
                    f"recovered b_v = {b_v} outside [{site.b_v_min}, {site.b_v_max}] "
                    f"for device on branch {k} in state ({c},{b},{t})"
                )
    return {"device_tuples_checked": checked, "worst_bv_excess": worst}


def audit_big_m(model: MilpModel, values: dict[str, float], margin: float = 1e-6) -> list[str]:
    """Check no deactivated disjunctive constraint leans on its big-M bound.

    Returns a list of violation descriptions (empty when the audit passes).
    A constraint is deactivated when its gate expression reaches 1; it must
    then hold with at least ``margin`` of slack below the big-M bound.
    """
    violations = []
    for dis in model.disjunctions:
        gate = dis.gate_value(values)
        if gate < 1.0 - 1e-6:
            continue
        if dis.relaxed_slack(values) < margin:
            violations.append(
                f"{dis.constraint} ({dis.family}): relaxed slack "
                f"{dis.relaxed_slack(values):.3e} below margin with gate {gate:.3f}"
            )
    return violations
