from __future__ import annotations

import pytest

from tepcvsr.problem import ProblemError, load_problem

from conftest import read_config


BASE_CONFIG = {
    "stages": [{"years": 5, "load_multiplier": 1.0}],
    "blocks": [{"name": "flat", "scale": 1.0, "hours_per_year": 8760}],
    "contingencies": "none",
}


def cfg(**overrides) -> dict:
    out = {k: (list(v) if isinstance(v, list) else v) for k, v in BASE_CONFIG.items()}
    out.update(overrides)
    return out


def test_state_tuple_count(case3):
    config = cfg(
        stages=[{"years": 5}, {"years": 5, "load_multiplier": 1.25}],
        blocks=[
            {"name": "peak", "scale": 1.0, "hours_per_year": 760},
            {"name": "normal", "scale": 0.85, "hours_per_year": 5000},
            {"name": "low", "scale": 0.6, "hours_per_year": 3000},
        ],
        contingencies=[1, 3],
    )
    prob = load_problem(case3, config)
    assert prob.n_states == 3
    assert prob.n_state_tuples() == 18  # 3 states x 3 blocks x 2 stages
    assert len(list(prob.state_tuples())) == 18


def test_block_scaling(case3):
    config = cfg(
        blocks=[
            {"name": "peak", "scale": 1.0, "hours_per_year": 760},
            {"name": "normal", "scale": 0.85, "hours_per_year": 5000},
            {"name": "low", "scale": 0.6, "hours_per_year": 3000},
        ],
    )
    prob = load_problem(case3, config)
    load = prob.case.loads[0]
    load.p_demand = 100.0
    assert [prob.demand_mw(load, b, 1) for b in range(3)] == [100.0, 85.0, 60.0]


def test_stage_growth(case3):
    config = cfg(stages=[{"years": 5}, {"years": 5, "load_multiplier": 1.25}])
    prob = load_problem(case3, config)
    load = prob.case.loads[0]
    load.p_demand = 100.0
    assert prob.demand_mw(load, 0, 2) == pytest.approx(125.0)


def test_block_hours_must_cover_the_year(case3):
    config = cfg(blocks=[{"name": "flat", "scale": 1.0, "hours_per_year": 8000}])
    with pytest.raises(ProblemError, match="durations"):
        load_problem(case3, config)


def test_default_blocks_cover_the_year(case3):
    prob = load_problem(case3, cfg(blocks=None))
    del prob  # config falls back to defaults when blocks is omitted


def test_cvsr_default_cost_rule(case3):
    config = cfg(cvsr_sites=[{"branch": 2, "range_fraction": 0.5}])
    prob = load_problem(case3, config)
    # $10/kVA on a device rated at range fraction x line rating (125 MW)
    assert prob.cvsr_sites[0].cost == pytest.approx(10.0 * 1000 * 125 * 0.5)


def test_cvsr_site_on_unknown_branch(case3):
    with pytest.raises(ProblemError, match="unknown branch"):
        load_problem(case3, cfg(cvsr_sites=[{"branch": 99}]))


def test_cvsr_site_on_out_of_service_branch():
    from tepcvsr.netcase import parse_matpower

    from conftest import CASES

    text = (CASES / "case3.m").read_text()
    text = text.replace("2\t3\t0\t0.1\t0\t190\t250\t0\t0\t0\t1", "2\t3\t0\t0.1\t0\t190\t250\t0\t0\t0\t0")
    case = parse_matpower(text)
    with pytest.raises(ProblemError, match="out-of-service"):
        load_problem(case, cfg(cvsr_sites=[{"branch": 3}]))


def test_candidate_validation(case3):
    bad = cfg(candidate_lines=[{"id": 1, "from_bus": 1, "to_bus": 9,
                                "reactance": 0.1, "rating_mw": 100, "cost": 1e6}])
    with pytest.raises(ProblemError, match="unknown bus"):
        load_problem(case3, bad)
    dup = cfg(candidate_lines=[
        {"id": 1, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "rating_mw": 100, "cost": 1e6},
        {"id": 1, "from_bus": 1, "to_bus": 3, "reactance": 0.1, "rating_mw": 100, "cost": 1e6},
    ])
    with pytest.raises(ProblemError, match="duplicate"):
        load_problem(case3, dup)


def test_contingency_validation(case3, case3_radial):
    prob = load_problem(case3, cfg(contingencies="auto"))
    assert prob.contingencies == [1, 2, 3]
    with pytest.raises(ProblemError, match="island"):
        load_problem(case3_radial, cfg(contingencies=[1]))
    with pytest.raises(ProblemError, match="unknown"):
        load_problem(case3, cfg(contingencies=[77]))


def test_line_status_indicator(case3):
    prob = load_problem(case3, cfg(contingencies=[2, 3]))
    # base state keeps everything in; each contingency outages exactly one branch
    assert [prob.line_status(k, 0) for k in (1, 2, 3)] == [1, 1, 1]
    assert [prob.line_status(k, 1) for k in (1, 2, 3)] == [1, 0, 1]
    assert [prob.line_status(k, 2) for k in (1, 2, 3)] == [1, 1, 0]
    assert prob.outaged_branch(2) == 3
    assert prob.state_of_branch(2) == 1


def test_rating_multiplier_and_short_term(case3):
    prob = load_problem(case3, cfg(contingencies=[1], rating_multiplier=0.8))
    branch = prob.case.branch_by_id(2)
    assert prob.branch_rating_mw(branch, 0) == pytest.approx(125 * 0.8)
    assert prob.branch_rating_mw(branch, 1) == pytest.approx(185 * 0.8)


def test_cc_blocks_per_stage(case24):
    config = read_config("plan24_2stage.json")
    prob = load_problem(case24, config)
    assert prob.cc_blocks_for_stage(1) == [0, 1]
    assert prob.cc_blocks_for_stage(2) == [0, 1, 2]
    assert prob.cc.branches == [5, 10]


def test_fixed_generators_unknown_id(case3):
    with pytest.raises(ProblemError, match="unknown ids"):
        load_problem(case3, cfg(fixed_generators=[9]))


def test_stage_first_year(case3):
    prob = load_problem(case3, cfg(stages=[{"years": 5}, {"years": 5}, {"years": 10}]))
    assert [prob.stage_first_year(t) for t in (1, 2, 3)] == [1, 6, 11]
