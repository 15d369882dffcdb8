"""Distributional traffic flow for the stochastic LWR model.

The package follows the one-point law of the traffic density through four
stages: Monte Carlo simulation of the stochastic conservation law
(:py:func:`~stochastic_lwr.simulate_ensemble`), the Fokker–Planck equation of
the marginal (:py:func:`~stochastic_lwr.solve_fpe`), the probability-flow ODE
(:py:func:`~stochastic_lwr.transport_particles`) and physics-informed score
matching from sparse observations (:py:func:`~stochastic_lwr.train`), followed
by inference of summary statistics (:py:func:`~stochastic_lwr.recover_density`,
:py:func:`~stochastic_lwr.summary_stats`). Models are built with factory
functions such as :py:func:`~stochastic_lwr.greenshields` or read with
:py:func:`~stochastic_lwr.load_model`; distances between laws live in
:py:mod:`stochastic_lwr.operations`.
"""

import importlib.metadata

from stochastic_lwr._config import load_model, model_from_dict, model_to_dict
from stochastic_lwr._errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    SimulationDivergedError,
    SolverIntegrityError,
    TrainingDivergedError,
    TransportError,
    UnsupportedFluxError,
    ValidationFailure,
)
from stochastic_lwr._factory import constant_diffusion, drake, greenshields, quadratic_noise, traffic_model
from stochastic_lwr._fpe import (
    Closure,
    ClosureKind,
    DensityGrid,
    DensityMesh,
    MeanFieldClosure,
    OracleTabulatedClosure,
    ZeroClosure,
    cosine_series_solution,
    mollified_delta,
    numerical_score,
    probability_flux,
    solve_fpe,
    stability_bound,
)
from stochastic_lwr._inference import (
    FlowDensity,
    RecoveredDensity,
    SummaryStats,
    congestion_risk,
    flow_expectation,
    flow_pushforward,
    flow_summary,
    gauss_legendre,
    recover_density,
    summary_stats,
)
from stochastic_lwr._manifest import RunManifest
from stochastic_lwr._model import (
    BasisKind,
    ConstantDiffusion,
    FluxFunction,
    FluxKind,
    InitialKind,
    InitialProfile,
    NoiseMode,
    NoiseStructure,
    SpatialBasis,
    TrafficModel,
    ValidationReport,
    capacity,
    flux_prime,
    flux_third,
    flux_value,
    ito_drift,
    sigma_squared,
    sigma_squared_derivatives,
    speed_inverse,
    speed_value,
    validate_assumptions,
)
from stochastic_lwr._pfode import (
    FunctionScore,
    ParticleSet,
    TabulatedScore,
    VelocityField,
    assemble_velocity,
    check_boundary_compatibility,
    sample_particles,
    transport_particles,
    velocity_decomposition,
)
from stochastic_lwr._score import (
    AnalyticScore,
    ClosureModel,
    ClosureNetKind,
    GridScore,
    LearnedClosure,
    LearnedScore,
    ScoreModel,
    bc_loss,
    closed_velocity,
    dsm_loss,
    eval_with_derivatives,
    fpe_residual,
    lhs_sample,
    physics_loss,
)
from stochastic_lwr._simulation import (
    BoundaryKind,
    EmpiricalMarginal,
    Ensemble,
    OracleClosure,
    SpaceTimeGrid,
    deterministic_lwr,
    empirical_marginal,
    estimate_conditional_drift,
    load_ensemble,
    make_grid,
    mass_balance,
    simulate_ensemble,
)
from stochastic_lwr._training import (
    ObservationSet,
    TrainConfig,
    TrainedModels,
    learn_noise,
    load_checkpoint,
    load_train_config,
    observations_from_ensemble,
    save_checkpoint,
    train,
)
from stochastic_lwr._triangle import TriangleReport, triangle

from . import operations

__version__ = importlib.metadata.version(__package__)


__all__ = [
    "AnalyticScore",
    "BasisKind",
    "BoundaryKind",
    "Closure",
    "ClosureKind",
    "ClosureModel",
    "ClosureNetKind",
    "ConfigurationError",
    "ConstantDiffusion",
    "DensityGrid",
    "DensityMesh",
    "DomainError",
    "EmpiricalMarginal",
    "Ensemble",
    "FlowDensity",
    "FluxFunction",
    "FluxKind",
    "FunctionScore",
    "GridScore",
    "InitialKind",
    "InitialProfile",
    "LearnedClosure",
    "LearnedScore",
    "MeanFieldClosure",
    "NoiseMode",
    "NoiseStructure",
    "NumericalError",
    "ObservationSet",
    "OracleClosure",
    "OracleTabulatedClosure",
    "ParticleSet",
    "RecoveredDensity",
    "RunManifest",
    "ScoreModel",
    "SimulationDivergedError",
    "SolverIntegrityError",
    "SpaceTimeGrid",
    "SpatialBasis",
    "SummaryStats",
    "TabulatedScore",
    "TrafficModel",
    "TrainConfig",
    "TrainedModels",
    "TrainingDivergedError",
    "TransportError",
    "TriangleReport",
    "UnsupportedFluxError",
    "ValidationFailure",
    "ValidationReport",
    "VelocityField",
    "ZeroClosure",
    "assemble_velocity",
    "bc_loss",
    "capacity",
    "check_boundary_compatibility",
    "closed_velocity",
    "congestion_risk",
    "constant_diffusion",
    "cosine_series_solution",
    "deterministic_lwr",
    "drake",
    "dsm_loss",
    "empirical_marginal",
    "estimate_conditional_drift",
    "eval_with_derivatives",
    "flow_expectation",
    "flow_pushforward",
    "flow_summary",
    "flux_prime",
    "flux_third",
    "flux_value",
    "fpe_residual",
    "gauss_legendre",
    "greenshields",
    "ito_drift",
    "learn_noise",
    "lhs_sample",
    "load_checkpoint",
    "load_ensemble",
    "load_model",
    "load_train_config",
    "make_grid",
    "mass_balance",
    "model_from_dict",
    "model_to_dict",
    "mollified_delta",
    "numerical_score",
    "observations_from_ensemble",
    "operations",
    "physics_loss",
    "probability_flux",
    "quadratic_noise",
    "recover_density",
    "sample_particles",
    "save_checkpoint",
    "sigma_squared",
    "sigma_squared_derivatives",
    "simulate_ensemble",
    "solve_fpe",
    "speed_inverse",
    "speed_value",
    "stability_bound",
    "summary_stats",
    "traffic_model",
    "train",
    "transport_particles",
    "triangle",
    "validate_assumptions",
    "velocity_decomposition",
]
