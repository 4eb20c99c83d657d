"""Token-based dynamic load balancing in server pools.

Exact product-form analysis, discrete-event simulation, and brute-force
Markov chain certification of the token mechanism over a tripartite
compatibility graph (types, classes, servers).
"""
from .model import (
    CompatModel,
    JobClass,
    JobType,
    SizeDistribution,
    ValidationReport,
    is_valid_ordering,
    separability_ordering,
    validate,
)
from .exact import (
    BalanceTables,
    PerfReport,
    StateSpaceTooLarge,
    best_static_assignment,
    build_tables,
    ideal_blocking,
    per_type_blocking_bounds,
    performance_report,
    proportional_static_assignment,
    static_report,
    stationary_distribution,
    uniform_static_assignment,
)
from .simulate import (
    RunResult,
    SimEstimate,
    replicate,
    run_dynamic,
    run_randomized,
    run_static,
)
from .verify import (
    CertificateReport,
    Generator,
    build_generator,
    certify,
    check_irreducible,
    compare_product_form,
    enumerate_detailed_states,
    solve_ctmc,
)
from .cli import ExperimentConfig, load_config, sweep

__all__ = [
    "BalanceTables",
    "CertificateReport",
    "CompatModel",
    "ExperimentConfig",
    "Generator",
    "JobClass",
    "JobType",
    "PerfReport",
    "RunResult",
    "SimEstimate",
    "SizeDistribution",
    "StateSpaceTooLarge",
    "ValidationReport",
    "best_static_assignment",
    "build_generator",
    "build_tables",
    "certify",
    "check_irreducible",
    "compare_product_form",
    "enumerate_detailed_states",
    "ideal_blocking",
    "is_valid_ordering",
    "load_config",
    "per_type_blocking_bounds",
    "performance_report",
    "proportional_static_assignment",
    "replicate",
    "run_dynamic",
    "run_randomized",
    "run_static",
    "separability_ordering",
    "solve_ctmc",
    "static_report",
    "stationary_distribution",
    "sweep",
    "uniform_static_assignment",
    "validate",
]
