from __future__ import annotations

import json
from pathlib import Path

import pytest

from tepcvsr import load_problem, parse_matpower

CASES = Path(__file__).resolve().parent.parent / "cases"


def read_case(name: str):
    return parse_matpower((CASES / name).read_text())


def read_config(name: str) -> dict:
    return json.loads((CASES / name).read_text())


def read_problem(case_name: str, config_name: str):
    return load_problem(read_case(case_name), read_config(config_name))


@pytest.fixture(scope="session")
def case3():
    return read_case("case3.m")


@pytest.fixture(scope="session")
def case3_radial():
    return read_case("case3_radial.m")


@pytest.fixture(scope="session")
def case4():
    return read_case("case4_par.m")


@pytest.fixture(scope="session")
def case24():
    return read_case("case24_like.m")


@pytest.fixture()
def prob3_base(case3):
    return load_problem(case3, read_config("plan3_base.json"))


@pytest.fixture()
def prob3_n1(case3):
    return load_problem(case3, read_config("plan3_n1.json"))


@pytest.fixture()
def prob3_2stage(case3):
    return load_problem(case3, read_config("plan3_2stage.json"))


@pytest.fixture()
def prob4_n1(case4):
    return load_problem(case4, read_config("plan4_n1.json"))


def brute_force_bridges(case) -> set[int]:
    """Independent islanding oracle: remove each branch, check connectivity."""
    from tepcvsr.netcase import connected_components

    if len(connected_components(case)) > 1:
        raise AssertionError("oracle expects a connected case")
    out = set()
    for k in case.in_service_branches():
        if len(connected_components(case, exclude_branch=k.id)) > 1:
            out.add(k.id)
    return out
