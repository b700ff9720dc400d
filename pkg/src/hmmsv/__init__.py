"""Hidden Markov stochastic-volatility models of arbitrary chain order.

The smoothing engine works entirely with bounded conditional probabilities, so
posteriors and the log-likelihood come out of a single backward pass with no
rescaling at any series length. Classic scaled forward-backward recursions and
exhaustive enumeration ship alongside as verification oracles.
"""

from .core import (
    GAUSSIAN_SV,
    InvalidParameterError,
    ModelConfig,
    ObservationSeries,
    ParameterSet,
    emission_density,
    emission_matrix,
    param_count,
    reorder_states,
    simulate,
    validate,
)
from .tensors import expand_broadcast, marginalize
from .recursion import (
    NumeratorTensor,
    PosteriorSlice,
    Prediction,
    SmoothedJoint,
    StructuralZeroError,
    backward_pass,
    forward_joint_pass,
    local_decode,
    log_likelihood,
    peel,
    predict,
    state_marginals,
    terminal_posterior,
    windowed_full_conditional,
)
from .oracle import (
    BruteForceResult,
    ForwardBackwardTables,
    brute_force_joint,
    bw_backward,
    bw_forward,
    bw_posteriors,
)
from .estimator import (
    DegenerateStateWarning,
    EMSettings,
    EstimationError,
    ExpectedCounts,
    FitResult,
    GridSearchResult,
    bic,
    e_step,
    fit,
    grid_search,
    m_step,
)
from .cli import CLIError, RunConfig, ingest, run

__version__ = "0.1.0"

__all__ = [
    "GAUSSIAN_SV",
    "InvalidParameterError",
    "ModelConfig",
    "ObservationSeries",
    "ParameterSet",
    "emission_density",
    "emission_matrix",
    "param_count",
    "reorder_states",
    "simulate",
    "validate",
    "expand_broadcast",
    "marginalize",
    "NumeratorTensor",
    "PosteriorSlice",
    "Prediction",
    "SmoothedJoint",
    "StructuralZeroError",
    "backward_pass",
    "forward_joint_pass",
    "local_decode",
    "log_likelihood",
    "peel",
    "predict",
    "state_marginals",
    "terminal_posterior",
    "windowed_full_conditional",
    "BruteForceResult",
    "ForwardBackwardTables",
    "brute_force_joint",
    "bw_backward",
    "bw_forward",
    "bw_posteriors",
    "DegenerateStateWarning",
    "EMSettings",
    "EstimationError",
    "ExpectedCounts",
    "FitResult",
    "GridSearchResult",
    "bic",
    "e_step",
    "fit",
    "grid_search",
    "m_step",
    "CLIError",
    "RunConfig",
    "ingest",
    "run",
]
