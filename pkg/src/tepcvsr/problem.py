"""Planning problem assembly: stages, load blocks, candidates, contingencies."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .netcase import NetworkCase, ValidationError, islanding_contingencies

HOURS_PER_YEAR = 8760.0

DEFAULT_BLOCKS = [
    {"name": "peak", "scale": 1.0, "hours_per_year": 760.0},
    {"name": "normal", "scale": 0.85, "hours_per_year": 5000.0},
    {"name": "low", "scale": 0.6, "hours_per_year": 3000.0},
]


class ProblemError(ValidationError):
    """Invalid planning configuration."""


@dataclass
class Stage:
    years: int = 5
    load_multiplier: float = 1.0


@dataclass
class Block:
    name: str
    scale: float
    hours_per_year: float


@dataclass
class CandidateLineSpec:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    rating: float
    cost: float
    rating_short: float = 0.0

    def __post_init__(self):
        if self.rating_short <= 0:
            self.rating_short = self.rating


@dataclass
class CvsrSiteSpec:
    branch: int
    range_fraction: float = 0.2
    cost: float = 0.0  # resolved at load time when left at 0


@dataclass
class CriticalContingencySpec:
    count: int = 2
    blocks: list[list[int]] = field(default_factory=list)  # per stage
    branches: list[int] | None = None  # explicit override of the ranking


@dataclass
class PlanningProblem:
    case: NetworkCase
    stages: list[Stage]
    blocks: list[Block]
    candidates: list[CandidateLineSpec]
    cvsr_sites: list[CvsrSiteSpec]
    contingencies: list[int]  # outaged existing branch id per state c = 1..n
    cc: CriticalContingencySpec
    discount_rate: float = 0.05
    rating_multiplier: float = 1.0
    operating_cost_mode: str = "stage"  # "stage" (one term per stage) | "per_year"
    fixed_generators: set[int] = field(default_factory=set)
    slack_tolerance_mw: float = 1e-4
    repair_iteration_cap: int = 50
    theta_max: float = math.pi / 3

    # -- index helpers ------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.contingencies) + 1

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def n_state_tuples(self) -> int:
        return self.n_states * self.n_blocks * self.n_stages

    def state_tuples(self):
        for t in range(1, self.n_stages + 1):
            for b in range(self.n_blocks):
                for c in range(self.n_states):
                    yield (c, b, t)

    def outaged_branch(self, c: int) -> int | None:
        return None if c == 0 else self.contingencies[c - 1]

    def line_status(self, branch_id: int, c: int) -> int:
        """The N indicator: 0 iff state c outages this existing branch."""
        return 0 if (c > 0 and self.contingencies[c - 1] == branch_id) else 1

    def state_of_branch(self, branch_id: int) -> int:
        return self.contingencies.index(branch_id) + 1

    # -- physical data ------------------------------------------------------

    def demand_mw(self, load, b: int, t: int) -> float:
        return load.p_demand * self.blocks[b].scale * self.stages[t - 1].load_multiplier

    def bus_demand_mw(self, bus_id: int, b: int, t: int) -> float:
        return sum(self.demand_mw(d, b, t) for d in self.case.loads if d.bus == bus_id)

    def total_demand_mw(self, b: int, t: int) -> float:
        return sum(self.demand_mw(d, b, t) for d in self.case.loads)

    def branch_rating_mw(self, branch, c: int) -> float:
        base = branch.rating if c == 0 else branch.rating_short
        return base * self.rating_multiplier

    def stage_first_year(self, t: int) -> int:
        return 1 + sum(s.years for s in self.stages[: t - 1])

    def cc_blocks_for_stage(self, t: int) -> list[int]:
        if not self.cc.blocks:
            return [0, 1] if self.n_blocks > 1 else [0]
        spec = self.cc.blocks
        entry = spec[min(t - 1, len(spec) - 1)]
        return list(entry)

    def without_cvsr(self) -> "PlanningProblem":
        from dataclasses import replace

        return replace(self, cvsr_sites=[])


def load_problem(case: NetworkCase, config: dict) -> PlanningProblem:
    """Build and validate a :class:`PlanningProblem` from a config mapping."""
    stages = [
        Stage(int(s.get("years", 5)), float(s.get("load_multiplier", 1.0)))
        for s in (config.get("stages") or [{}])
    ]
    blocks = [
        Block(str(b.get("name", f"block{i}")), float(b["scale"]), float(b["hours_per_year"]))
        for i, b in enumerate(config.get("blocks") or DEFAULT_BLOCKS)
    ]
    hours = sum(b.hours_per_year for b in blocks)
    if abs(hours - HOURS_PER_YEAR) > 1e-6:
        stage = stages[0]
        raise ProblemError(
            f"stage 1: block durations cover {hours * stage.years} h, "
            f"expected {HOURS_PER_YEAR * stage.years} h"
        )

    known_buses = set(case.bus_ids())
    branch_ids = {k.id: k for k in case.branches}

    candidates = []
    seen_cand = set()
    for raw in config.get("candidate_lines", []):
        cand = CandidateLineSpec(
            id=int(raw["id"]),
            from_bus=int(raw["from_bus"]),
            to_bus=int(raw["to_bus"]),
            reactance=float(raw["reactance"]),
            rating=float(raw["rating_mw"]),
            cost=float(raw["cost"]),
            rating_short=float(raw.get("rating_short_mw", 0.0)),
        )
        if cand.id in seen_cand:
            raise ProblemError(f"duplicate candidate line id {cand.id}")
        seen_cand.add(cand.id)
        if cand.from_bus not in known_buses or cand.to_bus not in known_buses:
            raise ProblemError(
                f"candidate line {cand.id} references unknown bus "
                f"({cand.from_bus}-{cand.to_bus})"
            )
        if cand.reactance <= 0:
            raise ProblemError(f"candidate line {cand.id}: reactance must be positive")
        if cand.cost <= 0:
            raise ProblemError(f"candidate line {cand.id}: cost must be positive")
        candidates.append(cand)

    cost_per_kva = float(config.get("cvsr_cost_per_kva", 10.0))
    sites = []
    seen_sites = set()
    for raw in config.get("cvsr_sites", []):
        site = CvsrSiteSpec(
            branch=int(raw["branch"]),
            range_fraction=float(raw.get("range_fraction", 0.2)),
            cost=float(raw.get("cost", 0.0)),
        )
        branch = branch_ids.get(site.branch)
        if branch is None:
            raise ProblemError(f"CVSR site on unknown branch {site.branch}")
        if not branch.in_service:
            raise ProblemError(f"CVSR site on out-of-service branch {site.branch}")
        if site.branch in seen_sites:
            raise ProblemError(f"duplicate CVSR site on branch {site.branch}")
        seen_sites.add(site.branch)
        if not 0.0 < site.range_fraction:
            raise ProblemError(f"CVSR site {site.branch}: range_fraction must be > 0")
        if site.cost <= 0.0:
            # default: $/kVA times the device rating (line MVA times range)
            site.cost = cost_per_kva * 1000.0 * branch.rating * site.range_fraction
        sites.append(site)

    contingencies_cfg = config.get("contingencies", "auto")
    islanding = islanding_contingencies(case)
    if contingencies_cfg == "auto":
        contingencies = [
            k.id for k in case.in_service_branches() if k.id not in islanding
        ]
    elif contingencies_cfg in ("none", None):
        contingencies = []
    else:
        contingencies = [int(k) for k in contingencies_cfg]
        for k in contingencies:
            branch = branch_ids.get(k)
            if branch is None or not branch.in_service:
                raise ProblemError(f"contingency on unknown or out-of-service branch {k}")
            if k in islanding:
                raise ProblemError(f"contingency on branch {k} would island the network")
        if len(set(contingencies)) != len(contingencies):
            raise ProblemError("duplicate contingency branches")

    cc_raw = config.get("critical_contingencies", {})
    cc_blocks = cc_raw.get("blocks", [])
    if cc_blocks and cc_blocks and not isinstance(cc_blocks[0], list):
        cc_blocks = [list(cc_blocks)]
    cc = CriticalContingencySpec(
        count=int(cc_raw.get("count", 2)),
        blocks=[list(map(int, e)) for e in cc_blocks],
        branches=[int(k) for k in cc_raw["branches"]] if cc_raw.get("branches") else None,
    )
    if cc.branches:
        for k in cc.branches:
            if k not in contingencies:
                raise ProblemError(
                    f"critical contingency {k} is not in the contingency set"
                )
    for entry in cc.blocks:
        for b in entry:
            if not 0 <= b < len(blocks):
                raise ProblemError(f"critical contingency block {b} out of range")

    fixed_gens = {int(n) for n in config.get("fixed_generators", [])}
    gen_ids = {g.id for g in case.generators}
    unknown = fixed_gens - gen_ids
    if unknown:
        raise ProblemError(f"fixed_generators references unknown ids {sorted(unknown)}")

    mode = config.get("operating_cost_mode", "stage")
    if mode not in ("stage", "per_year"):
        raise ProblemError(f"unknown operating_cost_mode {mode!r}")

    return PlanningProblem(
        case=case,
        stages=stages,
        blocks=blocks,
        candidates=candidates,
        cvsr_sites=sites,
        contingencies=contingencies,
        cc=cc,
        discount_rate=float(config.get("discount_rate", 0.05)),
        rating_multiplier=float(config.get("rating_multiplier", 1.0)),
        operating_cost_mode=mode,
        fixed_generators=fixed_gens,
        slack_tolerance_mw=float(config.get("slack_tolerance_mw", 1e-4)),
        repair_iteration_cap=int(config.get("repair_iteration_cap", 50)),
    )


def load_problem_file(case: NetworkCase, path) -> PlanningProblem:
    with open(path, encoding="utf-8") as fh:
        return load_problem(case, json.load(fh))
