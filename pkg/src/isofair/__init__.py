"""Alpha-fair network utility maximization and scaling-law checks."""

from .formats import InputError, fixture_path, load_network, parse_network
from .scaling import (
    CheckReport,
    Property,
    SampleConfig,
    Verdict,
    check_access_scalability,
    check_capacity_scaling,
    check_flow_scalability,
    check_homogeneity,
    check_iso_elastic,
    SweepCase,
    conjecture_sweep,
    default_counterexamples,
    homogeneity_coefficients,
    rra_profile,
)
from .solver import (
    NotConverged,
    SolverConfig,
    SolveResult,
    brute_force,
    solve_linear_network,
    solve_max_min,
    solve_num,
)
from .topology import (
    Link,
    Route,
    Topology,
    build_topology,
    classify_linear,
    has_local_traffic,
    is_connected,
    is_feasible,
    scale_capacity,
)
from .utility import (
    AlphaFair,
    CustomUtility,
    Exponential,
    LogShifted,
    Mode,
    NetworkUtilityProfile,
    network_utility,
)

__all__ = [name for name in dir() if not name.startswith("_")]
