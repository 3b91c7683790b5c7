"""Complex-frequency coherency analysis for power-system devices.

The package simulates transient-stability scenarios (classical machines, ZIP
loads, grid-following and grid-forming converters on an algebraic network)
and evaluates coherency between arbitrary devices through the complex
frequency of their injected currents.
"""

from .coherency import (
    CfSeries,
    ClusterTree,
    CoherencyClustering,
    CoherencyDistanceMatrix,
    ObservationPoint,
    alpha_beta_sweep,
    average_linkage,
    build_two_machine_scenario,
    coherency_distance,
    coherency_function,
    cluster_trajectory,
    device_cf_analytic,
    device_cf_numerical,
    distance_matrix,
    numerical_cf,
    observer_independence_check,
    upgma_tree,
)
from .devices import (
    GridFollowingConverter,
    GridFormingConverter,
    IbrFilter,
    SynchronousMachine,
    ZipLoad,
    ibr_current_cf,
    s_load_cf,
    sm_coherency_residual,
    sm_current_cf,
    z_load_cf,
)
from .network import Branch, Bus, Network, Shunt, build_admittance, impedance_matrix
from .primitives import ComplexFrequency, cf_from_value_and_derivative, polar, unwrap_phase
from .simulation import (
    AnalysisOptions,
    Event,
    Scenario,
    Trajectory,
    initialize,
    power_flow,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisOptions",
    "Branch",
    "Bus",
    "CfSeries",
    "ClusterTree",
    "CoherencyClustering",
    "CoherencyDistanceMatrix",
    "ComplexFrequency",
    "Event",
    "GridFollowingConverter",
    "GridFormingConverter",
    "IbrFilter",
    "Network",
    "ObservationPoint",
    "Scenario",
    "Shunt",
    "SynchronousMachine",
    "Trajectory",
    "ZipLoad",
    "alpha_beta_sweep",
    "average_linkage",
    "build_admittance",
    "build_two_machine_scenario",
    "cf_from_value_and_derivative",
    "cluster_trajectory",
    "coherency_distance",
    "coherency_function",
    "device_cf_analytic",
    "device_cf_numerical",
    "distance_matrix",
    "ibr_current_cf",
    "impedance_matrix",
    "initialize",
    "numerical_cf",
    "observer_independence_check",
    "polar",
    "power_flow",
    "run",
    "s_load_cf",
    "sm_coherency_residual",
    "sm_current_cf",
    "unwrap_phase",
    "upgma_tree",
    "z_load_cf",
]
