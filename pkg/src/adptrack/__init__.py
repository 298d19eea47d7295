"""Model-free trajectory tracking by least-squares policy iteration.

A quadratic Q-function over ``[u; x; p; 1]`` is learned from recorded
plant transitions, where ``p`` are the parameters of a local polynomial
approximation of the desired trajectory and the constant entry lets the
controller learn a static offset current.
"""

from .baseline import LinearModel, RiccatiSolution, augment, solve_discounted_lqt
from .config import ExperimentConfig, load_config, save_config
from .controllers import ADPTrackingController, ModelBasedTrackingController
from .exceptions import (
    AdpTrackError,
    AmplitudeError,
    ConfigError,
    DimensionError,
    InvalidCost,
    NonConvexInControl,
    NotConverged,
    NumericalFailure,
    PlateEdgeContact,
    RankDeficiencyError,
    SingularEvaluation,
)
from .lspi import (
    TrainConfig,
    TupleBatch,
    assemble_tuples,
    lstdq_evaluate,
    normalize,
    policy_iterate,
    renormalize_gain,
    stage_cost,
)
from .plant import ExcitationConfig, PlantData, PlantParams, collect_data, discretize
from .qfunc import GainMatrix, features, greedy_gain, load_gain, save_gain
from .reference import BasisSpec, FitConfig, ReferenceApproximator, ReferenceSignal

__version__ = "0.1.0"

__all__ = [
    "AdpTrackError",
    "AmplitudeError",
    "ConfigError",
    "DimensionError",
    "InvalidCost",
    "NonConvexInControl",
    "NotConverged",
    "NumericalFailure",
    "PlateEdgeContact",
    "RankDeficiencyError",
    "SingularEvaluation",
    "TrainConfig",
    "TupleBatch",
    "assemble_tuples",
    "lstdq_evaluate",
    "normalize",
    "policy_iterate",
    "renormalize_gain",
    "stage_cost",
    "LinearModel",
    "RiccatiSolution",
    "augment",
    "solve_discounted_lqt",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "ADPTrackingController",
    "ModelBasedTrackingController",
    "ExcitationConfig",
    "PlantData",
    "PlantParams",
    "collect_data",
    "discretize",
    "GainMatrix",
    "features",
    "greedy_gain",
    "load_gain",
    "save_gain",
    "BasisSpec",
    "FitConfig",
    "ReferenceApproximator",
    "ReferenceSignal",
]
