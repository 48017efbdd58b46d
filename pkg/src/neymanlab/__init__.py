"""neymanlab: efficient covariate-stratified treatment allocation.

Variance bounds and efficient propensities for stratified randomized
experiments, sequential design rules with a shared-randomness replay
contract, Monte Carlo estimator risk, and local likelihood-ratio
diagnostics, all behind a deterministic config-driven runner.
"""

from ._version import __version__
from .allocation import (
    AllocationMap,
    BoundValue,
    DualCertificate,
    bound_from_duals,
    eval_bound_binary,
    eval_bound_general,
    kkt_residuals,
    neyman_allocation,
    solve_constrained,
)
from .config import (
    StudyConfig,
    config_digest,
    parse_config,
    parse_scenario,
    serialize_config,
    serialize_scenario,
)
from .designs import (
    AssignmentContext,
    DesignRule,
    DeterministicAlternation,
    FullTreatment,
    IidPropensity,
    MatchedPairs,
    RealizedShares,
    StratifiedBlocks,
    TwoStageAdaptive,
    apply_rule,
    assign,
    realized_shares,
)
from .engine import (
    STREAMS,
    ExperimentLog,
    dump_logs_csv,
    rep_seed,
    run_many,
    run_one,
    stream,
)
from .errors import (
    DegenerateReps,
    DivisionByZeroPropensity,
    EmptyArm,
    InfoExceedsTarget,
    NeymanlabError,
    ParseError,
    PropensityOutOfRange,
    RuleScenarioMismatch,
    SolverDiverged,
    UnboundedDual,
    ValidationError,
)
from .estimators import (
    AipwOracle,
    AipwPlugin,
    DiffMeans,
    Estimator,
    IpwHT,
    IpwHajek,
    RiskReport,
    StratifiedMeans,
    describe_estimator,
    estimate,
    estimate_with_flags,
    risk_over_reps,
    risk_table,
)
from .lan import (
    LanReport,
    LrDecomposition,
    augment_with_z,
    lan_diagnostics,
    log_likelihood_ratio,
)
from .presets import PRESETS, binary_hetero, budget_binary
from .runner import ReportBundle, run_study, write_bundle
from .scenario import (
    CLIP_EPS,
    ConstraintSpec,
    CovariateLaw,
    OutcomeModel,
    Scenario,
    Submodel,
    TreatmentFunctional,
    ValidationReport,
    informations,
    least_favorable_submodel,
    tau_at,
    validate,
    validate_submodel,
)

__all__ = [
    "__version__",
    "AllocationMap",
    "BoundValue",
    "DualCertificate",
    "bound_from_duals",
    "eval_bound_binary",
    "eval_bound_general",
    "kkt_residuals",
    "neyman_allocation",
    "solve_constrained",
    "StudyConfig",
    "config_digest",
    "parse_config",
    "parse_scenario",
    "serialize_config",
    "serialize_scenario",
    "AssignmentContext",
    "DesignRule",
    "DeterministicAlternation",
    "FullTreatment",
    "IidPropensity",
    "MatchedPairs",
    "RealizedShares",
    "StratifiedBlocks",
    "TwoStageAdaptive",
    "apply_rule",
    "assign",
    "realized_shares",
    "STREAMS",
    "ExperimentLog",
    "dump_logs_csv",
    "rep_seed",
    "run_many",
    "run_one",
    "stream",
    "DegenerateReps",
    "DivisionByZeroPropensity",
    "EmptyArm",
    "InfoExceedsTarget",
    "NeymanlabError",
    "ParseError",
    "PropensityOutOfRange",
    "RuleScenarioMismatch",
    "SolverDiverged",
    "UnboundedDual",
    "ValidationError",
    "AipwOracle",
    "AipwPlugin",
    "DiffMeans",
    "Estimator",
    "IpwHT",
    "IpwHajek",
    "RiskReport",
    "StratifiedMeans",
    "describe_estimator",
    "estimate",
    "estimate_with_flags",
    "risk_over_reps",
    "risk_table",
    "LanReport",
    "LrDecomposition",
    "augment_with_z",
    "lan_diagnostics",
    "log_likelihood_ratio",
    "PRESETS",
    "binary_hetero",
    "budget_binary",
    "ReportBundle",
    "run_study",
    "write_bundle",
    "CLIP_EPS",
    "ConstraintSpec",
    "CovariateLaw",
    "OutcomeModel",
    "Scenario",
    "Submodel",
    "TreatmentFunctional",
    "ValidationReport",
    "informations",
    "least_favorable_submodel",
    "tau_at",
    "validate",
    "validate_submodel",
]
