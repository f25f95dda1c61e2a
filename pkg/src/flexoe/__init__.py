"""Grid-safe participation of distribution-level flexibility in balancing markets.

The package clears a transmission-level balancing market under three regimes
-- ignoring feeder grids entirely, co-optimizing every feeder constraint, or
restricting feeder resources to pre-computed operating envelopes -- and
provides the envelope calculations, linear power-flow audits and Monte Carlo
harness needed to compare them.
"""

from .caseio import (
    ScenarioConfig,
    load_case,
    load_config,
    parse_matpower_case,
    read_results_csv,
    resolve_case,
    save_config,
    to_distribution_network,
    to_transmission_network,
    write_results_csv,
)
from .clearing import (
    REGIMES,
    MarketSolution,
    clear_full_dn,
    clear_no_dn,
    clear_oe,
)
from .envelopes import (
    ENVELOPE_METHODS,
    WEIGHT_RULES,
    Envelope,
    WeightAssignment,
    envelopes_for_method,
    oe_one_step,
    oe_two_step,
    weights,
)
from .errors import (
    CaseFormatError,
    InfeasibleScenarioError,
    ModelError,
    RadialityError,
    ScenarioError,
    SolverError,
)
from .metrics import (
    InstanceReport,
    VariantOutcome,
    inefficiency,
    unqualified_flex,
)
from .montecarlo import (
    ScenarioInstance,
    build_instance,
    instance_envelopes,
    run_instance,
    run_plan,
    summarize,
    write_outputs,
)
from .network import (
    S_BASE_MVA,
    Direction,
    DistributionLine,
    DistributionNetwork,
    FlexResource,
    PolygonApprox,
    TransmissionLine,
    TransmissionNetwork,
    build_ptdf,
    make_polygon,
    validate_radial,
)
from .powerflow import PFState, ViolationReport, count_violations, run_linear_pf

__version__ = "0.1.0"

__all__ = [
    # network models
    "S_BASE_MVA",
    "Direction",
    "DistributionLine",
    "DistributionNetwork",
    "FlexResource",
    "PolygonApprox",
    "TransmissionLine",
    "TransmissionNetwork",
    "build_ptdf",
    "make_polygon",
    "validate_radial",
    # power flow
    "PFState",
    "ViolationReport",
    "count_violations",
    "run_linear_pf",
    # case and config I/O
    "ScenarioConfig",
    "load_case",
    "load_config",
    "parse_matpower_case",
    "read_results_csv",
    "resolve_case",
    "save_config",
    "to_distribution_network",
    "to_transmission_network",
    "write_results_csv",
    # envelopes
    "ENVELOPE_METHODS",
    "WEIGHT_RULES",
    "Envelope",
    "WeightAssignment",
    "envelopes_for_method",
    "oe_one_step",
    "oe_two_step",
    "weights",
    # market clearing
    "REGIMES",
    "MarketSolution",
    "clear_full_dn",
    "clear_no_dn",
    "clear_oe",
    # metrics
    "InstanceReport",
    "VariantOutcome",
    "inefficiency",
    "unqualified_flex",
    # experiments
    "ScenarioInstance",
    "build_instance",
    "instance_envelopes",
    "run_instance",
    "run_plan",
    "summarize",
    "write_outputs",
    # errors
    "CaseFormatError",
    "InfeasibleScenarioError",
    "ModelError",
    "RadialityError",
    "ScenarioError",
    "SolverError",
    "__version__",
]
