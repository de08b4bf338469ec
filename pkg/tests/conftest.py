import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dualdecomp import apps
from dualdecomp.builtin import dcopf_toy, eq_toy, ineq_toy, num_toy
from dualdecomp.reference import reference_solve

DATA = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")


def case_path(name):
    return os.path.join(DATA, f"{name}.m")


def load_case(name):
    with open(case_path(name)) as fh:
        return apps.parse_matpower(fh.read())


@pytest.fixture(scope="session")
def case9_instance():
    return apps.build_dcopf(load_case("case9"))


@pytest.fixture(scope="session")
def case9_reference(case9_instance):
    return reference_solve(case9_instance)


@pytest.fixture(scope="session")
def toys():
    """name -> (instance, analytic info) for the small built-in instances."""
    return {
        "eq": eq_toy(),
        "ineq": ineq_toy(),
        "num": num_toy(),
        "dcopf2": dcopf_toy(),
    }
