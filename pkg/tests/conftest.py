import math

import numpy as np
import pytest

from dvocstab import (
    Branch,
    Bus,
    DvocParams,
    PlantTopology,
    SystemBase,
    build_reduced_network,
    load_scenario,
    bundled_scenario_path,
)

BASE = SystemBase(s_va=10e6, v_volt=33e3, f0_hz=50.0)
Z_GRID = complex(0.05, 0.15)
PHI_Z = math.atan2(0.15, 0.05)


@pytest.fixture(scope="session")
def single_topology():
    return PlantTopology(
        (Bus("c1", "converter"), Bus("grid", "grid")),
        (Branch("c1", "grid", Z_GRID),),
        BASE,
    )


@pytest.fixture(scope="session")
def single_net(single_topology):
    """Single converter behind the reference grid impedance, phi matched."""
    return build_reduced_network(single_topology, phi=PHI_Z)


@pytest.fixture(scope="session")
def star2_topology():
    # two converters via j0.1 to a hub, hub via j0.1 to the grid
    return PlantTopology(
        (
            Bus("c1", "converter"),
            Bus("c2", "converter"),
            Bus("hub", "interior"),
            Bus("grid", "grid"),
        ),
        (
            Branch("c1", "hub", 0.1j),
            Branch("c2", "hub", 0.1j),
            Branch("hub", "grid", 0.1j),
        ),
        BASE,
    )


def reference_params(phi=PHI_Z, **kw):
    defaults = dict(eta=0.04 * 100 * math.pi, alpha=2.0, phi=phi, p_star=1.0, q_star=0.0)
    defaults.update(kw)
    return DvocParams(**defaults)


@pytest.fixture(scope="session")
def dip_scenario():
    return load_scenario(bundled_scenario_path("single_converter_dip"))


@pytest.fixture(scope="session")
def wpp_scenario():
    return load_scenario(bundled_scenario_path("wpp9"))


@pytest.fixture(scope="session")
def wpp_dip_scenario():
    return load_scenario(bundled_scenario_path("wpp9_dip"))
