import pytest

from dcmg.scenario import load_scenario, parse_scenario
from dcmg.topology import parse_netlist

TWO_NODE = """
node g1 kind=pgm
node m1 kind=pmm
edge l1 from=g1 to=m1 R=2m L=10u
"""

RING3 = """
node a kind=pgm
node b kind=pcm
node c kind=pmm
edge e1 from=a to=b R=2m L=10u
edge e2 from=b to=c R=2m L=10u
edge e3 from=c to=a R=2m L=10u
"""


@pytest.fixture
def two_node():
    return parse_netlist(TWO_NODE)


@pytest.fixture
def ring3():
    return parse_netlist(RING3)


@pytest.fixture(scope="session")
def sps4zone():
    return load_scenario("sps4zone")


@pytest.fixture
def const_load_scenario():
    """One PGM feeding one constant 1 MW PMM load."""
    return parse_scenario(TWO_NODE + "profile m1 0:step:1M\ndroop main_bus=m1\n"
                          "solver t_end=0.2\n")
