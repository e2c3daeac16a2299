"""Differentiable SGP4 toolkit.

Propagation with forward-mode jets, TLE parsing and formatting, batch
kernels, Jacobians and covariance transport, Gauss-Newton TLE fitting,
and hybrid learned correctors around the propagator.  Everything here
re-exports from the topic modules; import those directly for the
long tail.
"""

__version__ = "0.1.0"

from .jets import Jet, seed, value_of, partials_of
from .tle import (
    TleError,
    BadChecksum,
    TleRecord,
    parse_tle,
    format_tle,
    to_elements,
    record_from_elements,
    epoch_to_jd,
    datetime_to_jd,
    parse_iso_utc,
)
from .propagator import (
    PropagationError,
    DeepSpaceUnsupported,
    GravityConstants,
    WGS72,
    WGS84,
    gravity_by_name,
    ElementSet,
    StateTeme,
    initialize,
    propagate,
)
from .batch import BatchJob, BatchResult, run_batch, run_sequential, bench
from .gradients import (
    PARAM_NAMES,
    FreeParamSet,
    Jacobian,
    jacobian,
    jvp,
    fd_jacobian,
    fd_check,
    stm_tle,
)
from .covariance import (
    CovarianceError,
    Covariance,
    propagate_covariance,
    similarity_transform,
    monte_carlo_covariance,
    save_covariance,
    load_covariance,
)
from .orbit_determination import (
    OdError,
    SingularNormalMatrix,
    NonConvergence,
    HyperbolicState,
    Observation,
    FitState,
    FitConfig,
    FitReport,
    residuals,
    build_system,
    solve_normal_equations,
    normal_step,
    fit_tle,
    state_to_tle,
    initial_guess_from_tles,
    pseudo_observations,
)
from .mlp import Mlp, Adam, Sgd
from .data_io import (
    DataError,
    EphemerisSeries,
    SampleSet,
    load_tle_file,
    save_tle_file,
    load_ephemeris_csv,
    save_ephemeris_csv,
    synth_oracle,
    build_sampleset,
    save_sampleset,
    load_sampleset,
)
from .ml_hybrid import (
    DivergedLoss,
    HybridModel,
    TrainConfig,
    make_hybrid,
    make_output_only,
    hybrid_forward,
    loss_and_grads,
    train,
    evaluate,
    save_checkpoint,
    load_checkpoint,
)

__all__ = [
    "__version__",
    "Jet", "seed", "value_of", "partials_of",
    "TleError", "BadChecksum", "TleRecord", "parse_tle", "format_tle",
    "to_elements", "record_from_elements", "epoch_to_jd", "datetime_to_jd",
    "parse_iso_utc",
    "PropagationError", "DeepSpaceUnsupported", "GravityConstants",
    "WGS72", "WGS84", "gravity_by_name", "ElementSet", "StateTeme",
    "initialize", "propagate",
    "BatchJob", "BatchResult", "run_batch", "run_sequential", "bench",
    "PARAM_NAMES", "FreeParamSet", "Jacobian", "jacobian", "jvp",
    "fd_jacobian", "fd_check", "stm_tle",
    "CovarianceError", "Covariance", "propagate_covariance",
    "similarity_transform", "monte_carlo_covariance", "save_covariance",
    "load_covariance",
    "OdError", "SingularNormalMatrix", "NonConvergence", "HyperbolicState",
    "Observation", "FitState", "FitConfig", "FitReport", "residuals",
    "build_system", "solve_normal_equations", "normal_step", "fit_tle",
    "state_to_tle", "initial_guess_from_tles", "pseudo_observations",
    "Mlp", "Adam", "Sgd",
    "DataError", "EphemerisSeries", "SampleSet", "load_tle_file",
    "save_tle_file", "load_ephemeris_csv", "save_ephemeris_csv",
    "synth_oracle", "build_sampleset", "save_sampleset", "load_sampleset",
    "DivergedLoss", "HybridModel", "TrainConfig", "make_hybrid",
    "make_output_only", "hybrid_forward", "loss_and_grads", "train",
    "evaluate", "save_checkpoint", "load_checkpoint",
]
