"""Adversarial variable importance across heterogeneous data sources.

The package estimates the maximin predictive reward of an exposure
block over a family of source mixtures: the importance of X is the
worst-case (over sources) gain in expected loss of a shared model
f(X, Z) plus per-source adjustments g(Z) over baselines fit on Z
alone. Point estimates are cross-fitted, standard errors respect
independent or time-paired designs, and the saddle problem is solved
by projected two-timescale gradient descent ascent.
"""

from .config import ProblemSpec
from .data import (FoldAssignment, MultiSourceDataset, SourceDataset,
                   load_multisource_csv, split_kfolds, write_multisource_csv)
from .errors import (DataError, FoldError, InputError, MimalError,
                     NumericError, OptimizerError, PairingError, ParseError,
                     ShapeError, UsageError, VarianceError)
from .inference import (FoldArtifacts, ImportanceEstimate, confidence_interval,
                        estimate_importance, inflate_variance, loco_scan,
                        source_specific_importance, standard_error_independent,
                        standard_error_paired)
from .learners import (FittedModel, LearnerSpec, ModelBundle, bundle_predict,
                       design_matrix, fit_all_baselines, fit_baseline, predict,
                       reward_param_grad)
from .losses import baseline_link, loss_grad_u, loss_value
from .optimizer import (OptimizerSchedule, SaddlePoint, default_schedule,
                        project_simplex, q_ascent_direction, solve_saddle,
                        trajectory_csv)
from .oracles import (OracleSolution, QuadraticReward, TruthEstimate,
                      brute_force_simplex_min, finite_diff_check,
                      linear_l2_saddle_oracle, minimax_gap_audit,
                      monte_carlo_truth, quadratic_moments_from_data)
from .rewards import RewardBreakdown, empirical_reward, reward_samples
from .rng import derive_seed, make_rng, resolve_seed
from .simulate import (SCENARIOS, CoverageReport, SimulationScenario,
                       emit_report, generate_scenario, load_report,
                       run_replications)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
