"""Robust and efficient aggregation for decentralized diffusion learning."""

from .estimators import (
    DegenerateWeightsError,
    IrlsSettings,
    LocationResult,
    LossFamily,
    LossSpec,
    WeightedSample,
    b_weight,
    m_estimate,
    mm_estimate,
    trimmed_mean,
    weighted_mad,
    weighted_median,
    weiszfeld,
)
from .aggregate import (
    AggregationError,
    AggregationOutput,
    AggregationRule,
    AggregatorSpec,
    aggregate,
    effective_weight_summary,
)
from .network import (
    Assumption1Report,
    AssumptionViolationError,
    CombinationMatrix,
    ConvergenceError,
    PerronVector,
    Topology,
    TopologyKind,
    benign_reduced_matrix,
    build_topology,
    perron_vector,
    uniform_combination,
    validate_assumption1,
)
from .simulate import (
    AttackKind,
    AttackSpec,
    GradientNoiseStats,
    LinearModelTask,
    Trace,
    adapt_step,
    agent_stream,
    apply_attack,
    gradient_noise_stats,
    limit_point,
    msd,
    run_diffusion,
    sample_data,
    steady_state_msd,
    stochastic_gradient,
    task_vector_stream,
)

__version__ = "0.1.0"
