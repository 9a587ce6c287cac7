"""Fitted Q-iteration with principal-component features for mixed-frequency states."""

__version__ = "0.1.0"

from .dataset import (
    MixedState,
    Transition,
    TrajectoryDataset,
    TrajectorySchema,
    load_trajectories,
    save_trajectories,
    to_transitions,
    transition_arrays,
)
from .envsim import FiniteMDP, MixedFrequencyEnv, SimConfig, make_covariance, rollout
from .errors import *  # noqa: F401,F403
from .evaluation import (
    ComparisonReport,
    EvalReport,
    compare_policies,
    fitted_q_evaluation,
    monte_carlo_value,
)
from .forest import ForestConfig, TreeEnsembleRegressor, fit_tree_ensemble
from .fqi import (
    FeatureVariant,
    FqiConfig,
    GreedyPolicy,
    QEnsemble,
    architecture_for,
    bellman_targets,
    build_features,
    greedy_action,
    load_policy,
    save_policy,
    spectral_fqi,
)
from .neuralnet import (
    NetworkArchitecture,
    NetworkParameters,
    TrainConfig,
    forward,
    gradient,
    gradient_check,
    init_network,
    train_regression,
)
from .spectral import (
    SpectralBasis,
    eigendecompose,
    estimate_covariance,
    fit_basis,
    pc_scores,
    reconstruct,
    reconstruction_error_curve,
    select_kappa,
)
