"""Transient stability certification and simulation for dVOC grid-forming plants.

The package certifies the large-signal stability of multi-converter
grid-connected systems under dispatchable virtual oscillator control by a
decentralized passivity test (node index delta_k against network index
epsilon_net), and validates certificates with event-driven time-domain
simulation.
"""

from .certifier import CertificationReport, certify, margin_sweep
from .equilibrium import EquilibriumPoint, solve_equilibrium, verify_equilibrium
from .network import (
    Branch,
    Bus,
    NetworkNotPassiveError,
    PlantTopology,
    ReducedNetwork,
    ReductionError,
    SystemBase,
    TopologyError,
    assemble_admittance,
    augment_virtual_impedance,
    build_reduced_network,
    gscr,
    kron_reduce,
    network_current,
    network_current_unrotated,
    network_passivity_index,
)
from .node import (
    DvocParams,
    cubic_inequality_check,
    dissipation_residual,
    dvoc_rhs_rotated,
    dvoc_rhs_unrotated,
    node_passivity_index,
    rotated_setpoint_constants,
    steady_state_current,
    storage_value,
    virtual_impedance,
)
from .numerics import (
    hermitian_real_part,
    integrate,
    jacobi_eigenvalues,
    min_eigenvalue,
    newton_solve,
)
from .scenario_io import (
    ScenarioError,
    bundled_scenario_path,
    load_scenario,
    random_setpoints,
    read_report,
    scenario_to_dict,
    write_report,
    write_trajectory_csv,
)
from .simulator import (
    Event,
    Scenario,
    SolverSettings,
    Trajectory,
    lyapunov_monitor,
    overcurrent_scan,
    scenario_network,
    simulate,
    simulate_unrotated,
)

__version__ = "0.1.0"
