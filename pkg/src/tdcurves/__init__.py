"""Learning-curve theory and simulation for batched linear TD(0).

The package splits into feature ensembles (exact second-moment containers
plus matching samplers), a Monte Carlo simulator, deterministic mean-field
recursions for the expected value error, spectral/fixed-point analysis, and
an experiment layer that writes CSV artifacts for downstream plotting.
"""

from .config import ExperimentConfig, load_config
from .ensembles import (
    DecoupledEnsemble,
    DenseEnsemble,
    ReducedMatrices,
    build_powerlaw_ensemble,
    estimate_ensemble,
    hypercube_ensemble,
    load_ensemble,
    reduced_matrices,
    save_ensemble,
)
from .errors import ConfigurationError, NumericalError
from .experiments import build_problem, figure_preset, run_preset, run_single, run_sweep
from .gridworld import GridWorldSpec, MarkovChainEnsemble, chain_ensemble
from .seeding import seed_for, seeds_for
from .simulator import (
    EtaSchedule,
    LearnerConfig,
    LearningCurve,
    RunResult,
    eta_at,
    reshape_rewards,
    run_td,
    td_update_step,
    value_error,
)
from .sources import GaussianSurrogate, GridDiffusion, HypercubeIID, PowerLawOU
from .spectral import (
    SpectralReport,
    TabularMDP,
    TabularSolution,
    mean_weight_modes,
    spectral_report,
    tabular_fixed_point,
    td_fixed_point,
)
from .theory import (
    FourthMomentModel,
    MomentState,
    dmft_curve,
    dmft_step,
    direct_recurrence_curve,
    fixed_point_plateau,
    gaussian_fourth_tensor,
    hypercube_closed_form,
    hypercube_fourth_tensor,
    nongaussian_curve,
    td_error_correlation,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "NumericalError",
    "ExperimentConfig",
    "load_config",
    "DenseEnsemble",
    "DecoupledEnsemble",
    "MarkovChainEnsemble",
    "ReducedMatrices",
    "reduced_matrices",
    "build_powerlaw_ensemble",
    "hypercube_ensemble",
    "estimate_ensemble",
    "save_ensemble",
    "load_ensemble",
    "GridWorldSpec",
    "chain_ensemble",
    "EtaSchedule",
    "LearnerConfig",
    "LearningCurve",
    "RunResult",
    "eta_at",
    "td_update_step",
    "reshape_rewards",
    "run_td",
    "value_error",
    "HypercubeIID",
    "PowerLawOU",
    "GridDiffusion",
    "GaussianSurrogate",
    "MomentState",
    "FourthMomentModel",
    "dmft_step",
    "dmft_curve",
    "direct_recurrence_curve",
    "nongaussian_curve",
    "gaussian_fourth_tensor",
    "hypercube_fourth_tensor",
    "hypercube_closed_form",
    "fixed_point_plateau",
    "td_error_correlation",
    "SpectralReport",
    "spectral_report",
    "mean_weight_modes",
    "td_fixed_point",
    "TabularMDP",
    "TabularSolution",
    "tabular_fixed_point",
    "seed_for",
    "seeds_for",
    "build_problem",
    "run_single",
    "run_sweep",
    "run_preset",
    "figure_preset",
]
